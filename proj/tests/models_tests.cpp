#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "partialfl/gradcheck.hpp"
#include "partialfl/losses.hpp"
#include "partialfl/models.hpp"
#include "test_util.hpp"

using namespace partialfl;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.non_shareable_dim = 5;
    cfg.shareable_raw_dim = 4;
    cfg.shareable_rep_dim = 4;
    cfg.embedding_dim = 6;
    cfg.server_hidden = 8;
    cfg.edge_hidden = 7;
    cfg.classifier_hidden = 5;
    return cfg;
}

std::vector<std::int64_t> ids_upto(std::size_t n) {
    std::vector<std::int64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int64_t>(i);
    return ids;
}

}  // namespace

TEST(FrozenExtractorTest, DeterministicAndImmutable) {
    Rng rng(5);
    FrozenExtractor ex(4, 6, rng);
    Rng input_rng(6);
    Tensor raw = pfl_test::random_tensor(3, 4, input_rng);
    Tensor a = ex.apply(raw);
    Tensor b = ex.apply(raw);
    EXPECT_EQ(a.data, b.data);
    for (double v : a.data) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(FrozenExtractorTest, RejectsWrongInputDim) {
    Rng rng(5);
    FrozenExtractor ex(4, 6, rng);
    EXPECT_THROW(ex.apply(Tensor(2, 5)), ShapeError);
}

TEST(ServerModelTest, ZeroWeightsGiveZeroEmbeddings) {
    Rng rng(7);
    ServerModel server(small_config(), rng);
    ModelParams zeros = server.params();
    std::fill(zeros.values.begin(), zeros.values.end(), 0.0);
    server.set_params(zeros);
    Tensor features = pfl_test::random_tensor(4, 4, rng);
    EmbeddingBatch emb = server.encode(features, ids_upto(4));
    for (double v : emb.vectors.data) EXPECT_EQ(v, 0.0);
}

TEST(ServerModelTest, EncodeIsDeterministic) {
    Rng rng(9);
    ServerModel server(small_config(), rng);
    Tensor features = pfl_test::random_tensor(5, 4, rng);
    EmbeddingBatch a = server.encode(features, ids_upto(5));
    EmbeddingBatch b = server.encode(features, ids_upto(5));
    EXPECT_EQ(a.vectors.data, b.vectors.data);
}

// Seeded model + seeded input, values pinned from the first run. Guards
// against platform or refactoring drift in the whole forward stack.
TEST(ServerModelTest, GoldenEmbeddingValues) {
    ModelConfig cfg = small_config();
    Rng model_rng(derive_seed(2024, "init", 2));
    ServerModel server(cfg, model_rng);
    Rng input_rng(derive_seed(2024, "data"));
    Tensor features = pfl_test::random_tensor(2, 4, input_rng);
    EmbeddingBatch emb = server.encode(features, ids_upto(2));
    const double expected[2][6] = {
        {0.2941071105745125, 1.0975372650840118, -0.27483896195880658, 0.68443679451961181,
         -0.44122187663253409, 0.6819431424324911},
        {-0.047815419642920728, -0.69129017226473632, -0.44019983141832431, -0.5614171879671308,
         0.18378015442393039, -0.17795092415598776},
    };
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            EXPECT_NEAR(emb.vectors.at(i, j), expected[i][j], 1e-12);
}

TEST(GlobalModelTest, UniModalIgnoresShareableInput) {
    Rng rng(11);
    GlobalModel model(small_config(), ModalityMode::uni_modal, rng);
    Tensor ns = pfl_test::random_tensor(3, 5, rng);
    Tensor sh = pfl_test::random_tensor(3, 4, rng);
    auto with = model.forward(ns, sh, ids_upto(3));
    auto without = model.forward(ns, std::nullopt, ids_upto(3));
    EXPECT_EQ(with.logits.data, without.logits.data);
    EXPECT_EQ(with.emb.vectors.data, without.emb.vectors.data);
}

TEST(GlobalModelTest, ZeroImputationEqualsExplicitZeros) {
    Rng rng(13);
    GlobalModel model(small_config(), ModalityMode::multi_modal, rng);
    Tensor ns = pfl_test::random_tensor(3, 5, rng);
    auto imputed = model.forward(ns, std::nullopt, ids_upto(3), /*impute_missing=*/true);
    auto explicit_zero = model.forward(ns, Tensor(3, 4), ids_upto(3));
    EXPECT_EQ(imputed.logits.data, explicit_zero.logits.data);
    EXPECT_EQ(imputed.emb.vectors.data, explicit_zero.emb.vectors.data);
}

TEST(GlobalModelTest, MissingShareableWithoutImputationThrows) {
    Rng rng(17);
    GlobalModel model(small_config(), ModalityMode::multi_modal, rng);
    Tensor ns = pfl_test::random_tensor(3, 5, rng);
    EXPECT_THROW(model.forward(ns, std::nullopt, ids_upto(3)), ModalityError);
}

TEST(GlobalModelTest, LogitShapeAcrossRandomConfigs) {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        ModelConfig cfg;
        cfg.num_classes = 2 + rng.uniform_index(5);
        cfg.non_shareable_dim = 1 + rng.uniform_index(8);
        cfg.shareable_raw_dim = 1 + rng.uniform_index(8);
        cfg.shareable_rep_dim = 1 + rng.uniform_index(8);
        cfg.embedding_dim = 1 + rng.uniform_index(8);
        cfg.edge_hidden = 1 + rng.uniform_index(8);
        cfg.classifier_hidden = 1 + rng.uniform_index(8);
        const auto mode =
            trial % 2 == 0 ? ModalityMode::uni_modal : ModalityMode::multi_modal;
        GlobalModel model(cfg, mode, rng);
        const std::size_t batch = 1 + rng.uniform_index(5);
        Tensor ns = pfl_test::random_tensor(batch, cfg.non_shareable_dim, rng);
        std::optional<Tensor> sh;
        if (mode == ModalityMode::multi_modal)
            sh = pfl_test::random_tensor(batch, cfg.shareable_rep_dim, rng);
        auto f = model.forward(ns, sh, ids_upto(batch));
        EXPECT_EQ(f.logits.rows(), batch);
        EXPECT_EQ(f.logits.cols(), cfg.num_classes);
        EXPECT_EQ(f.emb.vectors.cols(), cfg.embedding_dim);
    }
}

TEST(GlobalModelTest, ParamsRoundTrip) {
    Rng rng(23);
    for (auto mode : {ModalityMode::uni_modal, ModalityMode::multi_modal}) {
        GlobalModel model(small_config(), mode, rng);
        ModelParams p = model.params();
        GlobalModel other(small_config(), mode, rng);
        other.set_params(p);
        EXPECT_EQ(other.params().values, p.values);
        EXPECT_EQ(p.values.size(), model.param_count());
    }
}

TEST(LocalModelTest, ZeroModelGivesUniformSoftmax) {
    Rng rng(29);
    ModelConfig cfg = small_config();
    LocalModel model(cfg, rng);
    ModelParams zeros = model.params();
    std::fill(zeros.values.begin(), zeros.values.end(), 0.0);
    model.set_params(zeros);
    Tensor features = pfl_test::random_tensor(4, 4, rng);
    auto f = model.forward(features, ids_upto(4));
    auto ce = softmax_cross_entropy(f.logits, {0, 1, 2, 0});
    EXPECT_NEAR(ce.loss, std::log(static_cast<double>(cfg.num_classes)), 1e-12);
}

TEST(LocalModelTest, EmbeddingDimsMatchAcrossComponents) {
    Rng rng(31);
    ModelConfig cfg = small_config();
    ServerModel server(cfg, rng);
    LocalModel local(cfg, rng);
    GlobalModel global_uni(cfg, ModalityMode::uni_modal, rng);
    GlobalModel global_multi(cfg, ModalityMode::multi_modal, rng);
    EXPECT_EQ(server.embedding_dim(), cfg.embedding_dim);
    EXPECT_EQ(local.embedding_dim(), cfg.embedding_dim);
    EXPECT_EQ(global_uni.embedding_dim(), cfg.embedding_dim);
    EXPECT_EQ(global_multi.embedding_dim(), cfg.embedding_dim);
}

TEST(LocalModelTest, ForwardMatchesComposition) {
    Rng rng(37);
    ModelConfig cfg = small_config();
    LocalModel model(cfg, rng);
    Tensor features = pfl_test::random_tensor(3, 4, rng);
    auto f = model.forward(features, ids_upto(3));
    EmbeddingBatch emb = model.encode(features, ids_upto(3));
    EXPECT_EQ(f.emb.vectors.data, emb.vectors.data);
}

TEST(LocalModelTest, CompositeBackwardPassesFiniteDifferences) {
    Rng rng(41);
    ModelConfig cfg = small_config();
    LocalModel model(cfg, rng);
    Tensor features = pfl_test::random_tensor(4, 4, rng);
    auto ids = ids_upto(4);
    std::vector<int> labels{0, 2, 1, 0};
    auto server_emb = pfl_test::random_batch(4, cfg.embedding_dim, rng);
    ContrastiveConfig ccfg;
    ccfg.beta = 0.01;

    auto f = model.forward_cached(features, ids);
    auto obj = local_objective(f.logits, labels, f.emb, server_emb, ccfg);
    ModelParams analytic = model.backward(obj.logit_grad, obj.model_emb_grad);

    LocalModel probe = model;
    auto loss_fn = [&](const ModelParams& p) {
        probe.set_params(p);
        auto pf = probe.forward(features, ids);
        return local_objective(pf.logits, labels, pf.emb, server_emb, ccfg).loss;
    };
    ModelParams numeric = finite_diff_gradient(loss_fn, model.params(), 1e-5);
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-4);
}

TEST(GlobalModelTest, CompositeBackwardPassesFiniteDifferences) {
    Rng rng(43);
    ModelConfig cfg = small_config();
    for (auto mode : {ModalityMode::uni_modal, ModalityMode::multi_modal}) {
        GlobalModel model(cfg, mode, rng);
        Tensor ns = pfl_test::random_tensor(4, 5, rng);
        std::optional<Tensor> sh;
        if (mode == ModalityMode::multi_modal)
            sh = pfl_test::random_tensor(4, 4, rng);
        auto ids = ids_upto(4);
        std::vector<int> labels{1, 0, 2, 1};
        auto server_emb = pfl_test::random_batch(4, cfg.embedding_dim, rng);
        ContrastiveConfig ccfg;
        ccfg.beta = 0.01;

        auto f = model.forward_cached(ns, sh, ids);
        auto obj = global_objective(f.logits, labels, f.emb, server_emb, ccfg);
        ModelParams analytic = model.backward(obj.logit_grad, obj.model_emb_grad);

        GlobalModel probe = model;
        auto loss_fn = [&](const ModelParams& p) {
            probe.set_params(p);
            auto pf = probe.forward(ns, sh, ids);
            return global_objective(pf.logits, labels, pf.emb, server_emb, ccfg).loss;
        };
        ModelParams numeric = finite_diff_gradient(loss_fn, model.params(), 1e-5);
        EXPECT_LT(max_relative_error(analytic, numeric), 1e-4)
            << "mode=" << to_string(mode);
    }
}
