#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "partialfl/errors.hpp"
#include "partialfl/losses.hpp"
#include "partialfl/nn.hpp"
#include "partialfl/rng.hpp"
#include "partialfl/tensor.hpp"

namespace partialfl {

// Architecture knobs. The server encoder is wider than the edge ones; actual
// depths/widths are configuration, not constants.
struct ModelConfig {
    std::size_t num_classes = 4;
    std::size_t non_shareable_dim = 32;  // raw feature dim of the on-device modality
    std::size_t shareable_raw_dim = 32;  // raw feature dim of the shareable modality
    std::size_t shareable_rep_dim = 32;  // frozen-extractor output dim
    std::size_t embedding_dim = 16;      // shared embedding dim d
    std::size_t server_hidden = 64;
    std::size_t edge_hidden = 32;
    std::size_t classifier_hidden = 16;

    bool operator==(const ModelConfig&) const = default;
};

enum class ModalityMode { uni_modal, multi_modal };

inline const char* to_string(ModalityMode m) {
    return m == ModalityMode::uni_modal ? "uni_modal" : "multi_modal";
}

// Stand-in for a frozen pretrained representation model: a fixed seeded
// projection followed by tanh. Its output is what edge devices may upload,
// never the raw shareable features.
class FrozenExtractor {
public:
    FrozenExtractor() = default;

    FrozenExtractor(std::size_t raw_dim, std::size_t rep_dim, Rng& rng)
        : projection_(raw_dim, rep_dim) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(raw_dim));
        for (double& v : projection_.data) v = scale * rng.normal();
    }

    std::size_t raw_dim() const { return projection_.shape[0]; }
    std::size_t rep_dim() const { return projection_.shape[1]; }

    Tensor apply(const Tensor& raw) const {
        if (raw.rank() != 2 || raw.cols() != raw_dim())
            throw ShapeError("FrozenExtractor: input shape " + raw.shape_str() +
                             " does not match raw dim " + std::to_string(raw_dim()));
        Tensor out(raw.rows(), rep_dim());
        for (std::size_t i = 0; i < raw.rows(); ++i)
            for (std::size_t c = 0; c < rep_dim(); ++c) {
                double z = 0.0;
                for (std::size_t k = 0; k < raw_dim(); ++k)
                    z += raw.at(i, k) * projection_.at(k, c);
                out.at(i, c) = std::tanh(z);
            }
        return out;
    }

private:
    Tensor projection_;
};

namespace detail {

inline EmbeddingBatch make_embedding_batch(Tensor vectors,
                                           const std::vector<std::int64_t>& ids) {
    EmbeddingBatch eb;
    eb.sample_ids = ids;
    eb.vectors = std::move(vectors);
    eb.validate("make_embedding_batch");
    return eb;
}

// Concatenates per-network parameter blocks into one flat vector.
inline ModelParams concat_params(std::initializer_list<const Network*> nets) {
    ModelParams out;
    std::size_t offset = 0;
    for (const Network* net : nets) {
        ModelParams p = flatten(*net);
        for (std::size_t off : p.layout) out.layout.push_back(offset + off);
        out.values.insert(out.values.end(), p.values.begin(), p.values.end());
        offset += p.values.size();
    }
    return out;
}

inline void split_params(const ModelParams& params, std::initializer_list<Network*> nets) {
    std::size_t expected = 0;
    for (Network* net : nets) expected += net->param_count();
    if (params.values.size() != expected)
        throw ShapeError("set_params: got " + std::to_string(params.values.size()) +
                         " values, model has " + std::to_string(expected));
    std::size_t offset = 0;
    for (Network* net : nets) {
        ModelParams p = net->zeros_like_params();
        std::copy(params.values.begin() + offset,
                  params.values.begin() + offset + p.values.size(), p.values.begin());
        load_params(*net, p);
        offset += p.values.size();
    }
}

}  // namespace detail

// Server-side encoder over the shareable modality. Trained with the alignment
// loss only; it never sees labels.
class ServerModel {
public:
    ServerModel() = default;
    ServerModel(const ModelConfig& cfg, Rng& rng)
        : encoder_(make_mlp({cfg.shareable_rep_dim, cfg.server_hidden, cfg.embedding_dim},
                            Activation::tanh, Network::Role::encoder)) {
        init_weights(encoder_, rng);
    }

    std::size_t embedding_dim() const { return encoder_.output_dim(); }
    std::size_t param_count() const { return encoder_.param_count(); }

    EmbeddingBatch encode(const Tensor& features, const std::vector<std::int64_t>& ids) const {
        return detail::make_embedding_batch(encoder_.forward(features), ids);
    }

    EmbeddingBatch encode_cached(const Tensor& features, const std::vector<std::int64_t>& ids) {
        return detail::make_embedding_batch(encoder_.forward_cached(features), ids);
    }

    ModelParams backward(const Tensor& emb_grad) const { return encoder_.backward(emb_grad).params; }

    ModelParams params() const { return flatten(encoder_); }
    void set_params(const ModelParams& p) { load_params(encoder_, p); }

private:
    Network encoder_;
};

// Per-device model over the shareable modality: encoder plus classifier. The
// classifier stays on the edge; only encoder outputs (z'_T) ever leave.
class LocalModel {
public:
    LocalModel() = default;
    LocalModel(const ModelConfig& cfg, Rng& rng)
        : encoder_(make_mlp({cfg.shareable_rep_dim, cfg.edge_hidden, cfg.embedding_dim},
                            Activation::tanh, Network::Role::encoder)),
          classifier_(make_mlp({cfg.embedding_dim, cfg.classifier_hidden, cfg.num_classes},
                               Activation::tanh, Network::Role::classifier)) {
        init_weights(encoder_, rng);
        init_weights(classifier_, rng);
    }

    std::size_t embedding_dim() const { return encoder_.output_dim(); }
    std::size_t param_count() const { return encoder_.param_count() + classifier_.param_count(); }

    EmbeddingBatch encode(const Tensor& features, const std::vector<std::int64_t>& ids) const {
        return detail::make_embedding_batch(encoder_.forward(features), ids);
    }

    struct Forward {
        EmbeddingBatch emb;
        Tensor logits;
    };

    Forward forward(const Tensor& features, const std::vector<std::int64_t>& ids) const {
        Forward f;
        f.emb = encode(features, ids);
        f.logits = classifier_.forward(f.emb.vectors);
        return f;
    }

    Forward forward_cached(const Tensor& features, const std::vector<std::int64_t>& ids) {
        Forward f;
        f.emb = detail::make_embedding_batch(encoder_.forward_cached(features), ids);
        f.logits = classifier_.forward_cached(f.emb.vectors);
        return f;
    }

    // emb_grad is the extra gradient hitting the embedding directly (from the
    // alignment loss), on top of what flows back from the classifier.
    ModelParams backward(const Tensor& logit_grad, const Tensor& emb_grad) const {
        Network::Gradients cls = classifier_.backward(logit_grad);
        Tensor total_emb_grad = cls.input;
        require_same_shape(total_emb_grad, emb_grad, "LocalModel::backward");
        for (std::size_t i = 0; i < total_emb_grad.numel(); ++i)
            total_emb_grad.data[i] += emb_grad.data[i];
        Network::Gradients enc = encoder_.backward(total_emb_grad);
        ModelParams out;
        out.values = enc.params.values;
        out.values.insert(out.values.end(), cls.params.values.begin(), cls.params.values.end());
        return out;
    }

    ModelParams params() const { return detail::concat_params({&encoder_, &classifier_}); }
    void set_params(const ModelParams& p) { detail::split_params(p, {&encoder_, &classifier_}); }

private:
    Network encoder_;
    Network classifier_;
};

// The federated model over the non-shareable modality, optionally fused with
// the shareable representation (multi-modal mode).
class GlobalModel {
public:
    GlobalModel() = default;

    GlobalModel(const ModelConfig& cfg, ModalityMode mode, Rng& rng) : mode_(mode) {
        encoder_ = make_mlp({cfg.non_shareable_dim, cfg.edge_hidden, cfg.embedding_dim},
                            Activation::tanh, Network::Role::encoder);
        init_weights(encoder_, rng);
        if (mode_ == ModalityMode::multi_modal) {
            fusion_ = make_mlp({cfg.embedding_dim + cfg.shareable_rep_dim, cfg.embedding_dim},
                               Activation::linear, Network::Role::projection);
            init_weights(fusion_, rng);
        }
        classifier_ = make_mlp({cfg.embedding_dim, cfg.classifier_hidden, cfg.num_classes},
                               Activation::tanh, Network::Role::classifier);
        init_weights(classifier_, rng);
        shareable_rep_dim_ = cfg.shareable_rep_dim;
    }

    ModalityMode mode() const { return mode_; }
    std::size_t embedding_dim() const { return encoder_.output_dim(); }
    std::size_t num_classes() const { return classifier_.output_dim(); }

    std::size_t param_count() const {
        std::size_t n = encoder_.param_count() + classifier_.param_count();
        if (mode_ == ModalityMode::multi_modal) n += fusion_.param_count();
        return n;
    }

    struct Forward {
        EmbeddingBatch emb;  // z_A in uni-modal mode, z_M in multi-modal mode
        Tensor logits;
    };

    // Uni-modal mode ignores `shareable` entirely. Multi-modal mode requires
    // it unless `impute_missing` allows substituting a zero vector.
    Forward forward(const Tensor& non_shareable, const std::optional<Tensor>& shareable,
                    const std::vector<std::int64_t>& ids, bool impute_missing = false) const {
        return forward_impl(non_shareable, shareable, ids, impute_missing, nullptr);
    }

    Forward forward_cached(const Tensor& non_shareable, const std::optional<Tensor>& shareable,
                           const std::vector<std::int64_t>& ids, bool impute_missing = false) {
        return forward_impl(non_shareable, shareable, ids, impute_missing, this);
    }

    ModelParams backward(const Tensor& logit_grad, const Tensor& emb_grad) const {
        Network::Gradients cls = classifier_.backward(logit_grad);
        Tensor total_emb_grad = cls.input;
        require_same_shape(total_emb_grad, emb_grad, "GlobalModel::backward");
        for (std::size_t i = 0; i < total_emb_grad.numel(); ++i)
            total_emb_grad.data[i] += emb_grad.data[i];

        ModelParams fusion_grads;
        Tensor enc_out_grad;
        if (mode_ == ModalityMode::multi_modal) {
            Network::Gradients fus = fusion_.backward(total_emb_grad);
            fusion_grads = std::move(fus.params);
            // First embedding_dim columns of the fused input came from the
            // non-shareable encoder.
            enc_out_grad = Tensor(fus.input.rows(), encoder_.output_dim());
            for (std::size_t i = 0; i < enc_out_grad.rows(); ++i)
                for (std::size_t j = 0; j < enc_out_grad.cols(); ++j)
                    enc_out_grad.at(i, j) = fus.input.at(i, j);
        } else {
            enc_out_grad = std::move(total_emb_grad);
        }
        Network::Gradients enc = encoder_.backward(enc_out_grad);

        ModelParams out;
        out.values = enc.params.values;
        if (mode_ == ModalityMode::multi_modal)
            out.values.insert(out.values.end(), fusion_grads.values.begin(),
                              fusion_grads.values.end());
        out.values.insert(out.values.end(), cls.params.values.begin(), cls.params.values.end());
        return out;
    }

    ModelParams params() const {
        if (mode_ == ModalityMode::multi_modal)
            return detail::concat_params({&encoder_, &fusion_, &classifier_});
        return detail::concat_params({&encoder_, &classifier_});
    }

    void set_params(const ModelParams& p) {
        if (mode_ == ModalityMode::multi_modal)
            detail::split_params(p, {&encoder_, &fusion_, &classifier_});
        else
            detail::split_params(p, {&encoder_, &classifier_});
    }

private:
    Forward forward_impl(const Tensor& non_shareable, const std::optional<Tensor>& shareable,
                         const std::vector<std::int64_t>& ids, bool impute_missing,
                         GlobalModel* cached) const {
        Tensor enc_out = cached ? cached->encoder_.forward_cached(non_shareable)
                                : encoder_.forward(non_shareable);
        Tensor emb;
        if (mode_ == ModalityMode::multi_modal) {
            Tensor rep;
            if (shareable.has_value()) {
                rep = *shareable;
                if (rep.rank() != 2 || rep.rows() != non_shareable.rows() ||
                    rep.cols() != shareable_rep_dim_)
                    throw ShapeError("GlobalModel: shareable rep shape " + rep.shape_str() +
                                     " does not match batch");
            } else if (impute_missing) {
                rep = Tensor(non_shareable.rows(), shareable_rep_dim_);
            } else {
                throw ModalityError(
                    "GlobalModel: multi-modal forward without shareable features "
                    "and imputation disabled");
            }
            Tensor fused(non_shareable.rows(), encoder_.output_dim() + shareable_rep_dim_);
            for (std::size_t i = 0; i < fused.rows(); ++i) {
                for (std::size_t j = 0; j < encoder_.output_dim(); ++j)
                    fused.at(i, j) = enc_out.at(i, j);
                for (std::size_t j = 0; j < shareable_rep_dim_; ++j)
                    fused.at(i, encoder_.output_dim() + j) = rep.at(i, j);
            }
            emb = cached ? cached->fusion_.forward_cached(fused) : fusion_.forward(fused);
        } else {
            emb = std::move(enc_out);
        }
        Forward f;
        f.logits = cached ? cached->classifier_.forward_cached(emb) : classifier_.forward(emb);
        f.emb = detail::make_embedding_batch(std::move(emb), ids);
        return f;
    }

    ModalityMode mode_ = ModalityMode::uni_modal;
    Network encoder_;
    Network fusion_;
    Network classifier_;
    std::size_t shareable_rep_dim_ = 0;
};

}  // namespace partialfl
