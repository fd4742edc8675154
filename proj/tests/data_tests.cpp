#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "partialfl/data.hpp"
#include "partialfl/metrics.hpp"
#include "partialfl/nn.hpp"
#include "test_util.hpp"

using namespace partialfl;

namespace {

SyntheticSpec tiny_spec(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.num_samples = 400;
    spec.latent_dim = 6;
    spec.non_shareable_dim = 10;
    spec.shareable_dim = 8;
    spec.seed = seed;
    return spec;
}

// Label distribution of a shard as a probability vector.
std::vector<double> class_distribution(const std::vector<int>& labels, std::size_t classes) {
    std::vector<double> p(classes, 0.0);
    for (int y : labels) p[static_cast<std::size_t>(y)] += 1.0;
    for (double& v : p) v /= static_cast<double>(labels.size());
    return p;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    double tv = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
    return 0.5 * tv;
}

// Plain centralized trainer over a dataset; returns test accuracy. Used for
// the chance-level and calibration checks.
double train_and_score(const SyntheticDataset& train, const SyntheticDataset& test,
                       std::uint64_t seed, int steps) {
    Rng init_rng(seed);
    Network net = make_mlp({train.non_shareable.cols(), 32, 4}, Activation::tanh,
                           Network::Role::classifier);
    init_weights(net, init_rng);
    AdamState adam(net.param_count(), 1e-3);
    Rng batch_rng(seed + 1);
    const std::size_t batch = 32;
    for (int s = 0; s < steps; ++s) {
        std::vector<std::size_t> rows(batch);
        std::vector<int> labels(batch);
        Tensor x(batch, train.non_shareable.cols());
        for (std::size_t r = 0; r < batch; ++r) {
            rows[r] = batch_rng.uniform_index(train.size());
            labels[r] = train.labels[rows[r]];
            for (std::size_t c = 0; c < x.cols(); ++c)
                x.at(r, c) = train.non_shareable.at(rows[r], c);
        }
        Tensor logits = net.forward_cached(x);
        auto ce = softmax_cross_entropy(logits, labels);
        auto grads = net.backward(ce.logit_grad);
        ModelParams params = flatten(net);
        adam_step(adam, params, grads.params);
        load_params(net, params);
    }
    Tensor logits = net.forward(test.non_shareable);
    std::vector<int> preds = argmax_predictions(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == test.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

TEST(Generate, DeterministicPerSeed) {
    SyntheticSpec spec = tiny_spec(7);
    SyntheticDataset a = generate_synthetic(spec);
    SyntheticDataset b = generate_synthetic(spec);
    EXPECT_EQ(a.non_shareable.data, b.non_shareable.data);
    EXPECT_EQ(a.shareable.data, b.shareable.data);
    EXPECT_EQ(a.labels, b.labels);
    spec.seed = 8;
    SyntheticDataset c = generate_synthetic(spec);
    EXPECT_NE(a.non_shareable.data, c.non_shareable.data);
}

TEST(Generate, BalancedLabelsAndSequentialIds) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(3));
    std::vector<int> counts(4, 0);
    for (int y : ds.labels) counts[static_cast<std::size_t>(y)]++;
    for (int c : counts) EXPECT_EQ(c, 100);
    for (std::size_t i = 0; i < ds.size(); ++i)
        EXPECT_EQ(ds.sample_ids[i], static_cast<std::int64_t>(i));
}

TEST(Generate, SameLatentGivesIdenticalFeaturesAtZeroNoise) {
    Rng rng(11);
    Tensor view = make_view_matrix(6, 10, rng);
    std::vector<double> u(6);
    for (double& v : u) v = rng.normal();
    Rng noise_rng(0);
    Tensor features = render_view({u, u}, view, 0.0, noise_rng);
    for (std::size_t c = 0; c < 10; ++c)
        EXPECT_EQ(features.at(0, c), features.at(1, c));
}

TEST(Generate, ZeroSeparationIsChanceLevel) {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        SyntheticSpec spec = tiny_spec(seed);
        spec.num_samples = 800;
        spec.class_separation = 0.0;
        SyntheticDataset full = generate_synthetic(spec);
        Rng split_rng(seed);
        TrainTestSplit split = stratified_split(full, 0.25, split_rng);
        const double acc = train_and_score(split.train, split.test, seed, 300);
        EXPECT_NEAR(acc, 0.25, 0.05) << "seed " << seed;
    }
}

// Calibration of the default spec: a small centralized classifier must be
// able to solve the task comfortably.
TEST(Generate, DefaultSpecIsLearnable) {
    SyntheticSpec spec;  // defaults: C=4, N=4000, separation 3.0, noise 0.5
    spec.seed = 99;
    SyntheticDataset full = generate_synthetic(spec);
    Rng split_rng(99);
    TrainTestSplit split = stratified_split(full, 0.2, split_rng);
    const double acc = train_and_score(split.train, split.test, 99, 1200);
    EXPECT_GE(acc, 0.85);
}

TEST(StratifiedSplit, PreservesClassBalanceAndPartitions) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(13));
    Rng rng(13);
    TrainTestSplit split = stratified_split(ds, 0.2, rng);
    EXPECT_EQ(split.train.size() + split.test.size(), ds.size());
    std::vector<int> test_counts(4, 0);
    for (int y : split.test.labels) test_counts[static_cast<std::size_t>(y)]++;
    for (int c : test_counts) EXPECT_EQ(c, 20);  // 20% of 100 per class
    std::set<std::int64_t> seen(split.train.sample_ids.begin(), split.train.sample_ids.end());
    for (auto id : split.test.sample_ids) EXPECT_TRUE(seen.insert(id).second);
    EXPECT_EQ(seen.size(), ds.size());
}

TEST(Dirichlet, SingleClientGetsEverything) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(17));
    Rng rng(17);
    auto shards = dirichlet_partition(ds, 1, 0.5, rng);
    ASSERT_EQ(shards.size(), 1u);
    EXPECT_EQ(shards[0].size(), ds.size());
}

TEST(Dirichlet, PartitionLaws) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(19));
    Rng rng(19);
    auto shards = dirichlet_partition(ds, 8, 0.3, rng);
    std::set<std::int64_t> seen;
    std::vector<int> class_counts(4, 0);
    for (const auto& shard : shards) {
        EXPECT_GT(shard.size(), 0u);
        EXPECT_EQ(shard.labels.size(), shard.sample_ids.size());
        EXPECT_EQ(shard.non_shareable.rows(), shard.size());
        for (std::size_t i = 0; i < shard.size(); ++i) {
            EXPECT_TRUE(seen.insert(shard.sample_ids[i]).second) << "duplicate sample";
            class_counts[static_cast<std::size_t>(shard.labels[i])]++;
        }
    }
    EXPECT_EQ(seen.size(), ds.size());
    for (int c : class_counts) EXPECT_EQ(c, 100);  // per-class counts preserved
}

TEST(Dirichlet, HighAlphaMatchesGlobalDistribution) {
    for (std::uint64_t seed : {31u, 32u, 33u, 34u, 35u}) {
        SyntheticDataset ds = generate_synthetic(tiny_spec(seed));
        const auto global_dist = class_distribution(ds.labels, 4);
        Rng rng(seed);
        auto shards = dirichlet_partition(ds, 10, 10000.0, rng);
        for (const auto& shard : shards) {
            const double tv = total_variation(class_distribution(shard.labels, 4), global_dist);
            EXPECT_LE(tv, 0.05) << "seed " << seed << " client " << shard.client_id;
        }
    }
}

TEST(Dirichlet, SmallerAlphaIsMoreConcentrated) {
    for (std::uint64_t seed : {41u, 42u, 43u, 44u, 45u}) {
        SyntheticDataset ds = generate_synthetic(tiny_spec(seed));
        auto mean_max_share = [&](double alpha, std::uint64_t s) {
            Rng rng(s);
            auto shards = dirichlet_partition(ds, 8, alpha, rng);
            double sum = 0.0;
            for (const auto& shard : shards) {
                auto dist = class_distribution(shard.labels, 4);
                sum += *std::max_element(dist.begin(), dist.end());
            }
            return sum / static_cast<double>(shards.size());
        };
        EXPECT_GT(mean_max_share(0.1, seed), mean_max_share(1.0, seed)) << "seed " << seed;
    }
}

TEST(Dirichlet, MoreClientsThanSamplesThrows) {
    SyntheticSpec spec = tiny_spec(47);
    spec.num_samples = 8;
    spec.num_classes = 2;
    SyntheticDataset ds = generate_synthetic(spec);
    Rng rng(47);
    EXPECT_THROW(dirichlet_partition(ds, 9, 1.0, rng), ValueError);
}

TEST(SpeakerEqual, EqualSizes) {
    SyntheticSpec spec = tiny_spec(53);
    spec.num_samples = 100;
    SyntheticDataset ds = generate_synthetic(spec);
    Rng rng(53);
    auto shards = speaker_equal_partition(ds, 10, rng);
    ASSERT_EQ(shards.size(), 10u);
    for (const auto& shard : shards) EXPECT_EQ(shard.size(), 10u);
}

TEST(SpeakerEqual, UnionIsDatasetNoDuplicates) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(59));
    Rng rng(59);
    auto shards = speaker_equal_partition(ds, 7, rng);
    std::set<std::int64_t> seen;
    std::size_t total = 0;
    for (const auto& shard : shards) {
        total += shard.size();
        for (auto id : shard.sample_ids) EXPECT_TRUE(seen.insert(id).second);
    }
    EXPECT_EQ(total, ds.size());
    // +-1 sizes
    for (const auto& shard : shards) {
        EXPECT_GE(shard.size(), ds.size() / 7);
        EXPECT_LE(shard.size(), ds.size() / 7 + 1);
    }
}

TEST(SpeakerEqual, DeterministicPerSeed) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(61));
    Rng a(61), b(61);
    auto s1 = speaker_equal_partition(ds, 5, a);
    auto s2 = speaker_equal_partition(ds, 5, b);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(s1[k].sample_ids, s2[k].sample_ids);
}

TEST(MissingModality, AllKeptAtFullQ) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(67));
    Rng rng(67);
    auto shards = speaker_equal_partition(ds, 10, rng);
    apply_missing_modality(shards, 1.0, rng);
    for (const auto& shard : shards) EXPECT_TRUE(shard.has_shareable);
}

TEST(MissingModality, NoneKeptAtZeroQ) {
    SyntheticDataset ds = generate_synthetic(tiny_spec(71));
    Rng rng(71);
    auto shards = speaker_equal_partition(ds, 10, rng);
    apply_missing_modality(shards, 0.0, rng);
    for (const auto& shard : shards) {
        EXPECT_FALSE(shard.has_shareable);
        EXPECT_EQ(shard.shareable.numel(), 0u);
    }
}

TEST(MissingModality, ExactCountAndDeterminism) {
    SyntheticSpec spec = tiny_spec(73);
    spec.num_samples = 1000;
    SyntheticDataset ds = generate_synthetic(spec);
    Rng part_rng(73);
    auto shards = speaker_equal_partition(ds, 200, part_rng);
    Rng mask_a(99), mask_b(99);
    auto shards_a = shards;
    auto shards_b = shards;
    apply_missing_modality(shards_a, 0.5, mask_a);
    apply_missing_modality(shards_b, 0.5, mask_b);
    std::size_t kept = 0;
    for (std::size_t k = 0; k < shards_a.size(); ++k) {
        EXPECT_EQ(shards_a[k].has_shareable, shards_b[k].has_shareable);
        if (shards_a[k].has_shareable) ++kept;
    }
    EXPECT_EQ(kept, 100u);
}

TEST(DatasetCsv, RoundTripIsExact) {
    SyntheticSpec spec = tiny_spec(79);
    spec.num_samples = 40;
    SyntheticDataset ds = generate_synthetic(spec);
    std::stringstream buffer;
    write_dataset_csv(ds, buffer);
    SyntheticDataset back = read_dataset_csv(buffer);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.sample_ids, ds.sample_ids);
    ASSERT_EQ(back.non_shareable.shape, ds.non_shareable.shape);
    ASSERT_EQ(back.shareable.shape, ds.shareable.shape);
    EXPECT_EQ(back.non_shareable.data, ds.non_shareable.data);
    EXPECT_EQ(back.shareable.data, ds.shareable.data);
}

TEST(DatasetCsv, RejectsBadHeader) {
    std::stringstream buffer("label,id\n");
    EXPECT_THROW(read_dataset_csv(buffer), ValueError);
}
