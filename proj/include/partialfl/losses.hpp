#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "partialfl/errors.hpp"
#include "partialfl/nn.hpp"
#include "partialfl/tensor.hpp"

namespace partialfl {

// Per-sample embeddings keyed by global sample ids. The ids are what pairs
// positives across server / edge batches; positional indices are never used
// for pairing.
struct EmbeddingBatch {
    std::vector<std::int64_t> sample_ids;
    Tensor vectors;  // [B x d]

    std::size_t size() const { return sample_ids.size(); }
    std::size_t dim() const { return vectors.rank() == 2 ? vectors.cols() : 0; }

    void validate(const char* where) const {
        if (vectors.rank() != 2 || vectors.rows() != sample_ids.size())
            throw ShapeError(std::string(where) + ": embedding batch has " +
                             std::to_string(sample_ids.size()) + " ids but vectors " +
                             vectors.shape_str());
        std::unordered_set<std::int64_t> seen;
        for (auto id : sample_ids)
            if (!seen.insert(id).second)
                throw PairingError(std::string(where) + ": duplicate sample id " +
                                   std::to_string(id) + " in batch");
    }
};

inline void require_paired(const EmbeddingBatch& a, const EmbeddingBatch& b, const char* where) {
    a.validate(where);
    b.validate(where);
    if (a.size() != b.size() || a.dim() != b.dim())
        throw PairingError(std::string(where) + ": batch shapes differ, " +
                           a.vectors.shape_str() + " vs " + b.vectors.shape_str());
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.sample_ids[i] != b.sample_ids[i])
            throw PairingError(std::string(where) + ": sample id mismatch at position " +
                               std::to_string(i) + " (" + std::to_string(a.sample_ids[i]) +
                               " vs " + std::to_string(b.sample_ids[i]) + ")");
}

struct ContrastiveConfig {
    double temperature = 0.1;  // tau
    double beta = 0.01;
    bool include_inter_modal_negatives = false;
    bool normalize_embeddings = false;
};

struct ContrastiveResult {
    double loss = 0.0;
    Tensor anchor_grad;    // [B x d], gradient of the batch-mean loss
    Tensor positive_grad;  // [B x d]
};

namespace detail {

// Row-wise L2 normalization; zero rows pass through unchanged.
inline Tensor l2_normalize_rows(const Tensor& x, std::vector<double>& norms) {
    Tensor out = x;
    norms.assign(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) sq += x.at(i, j) * x.at(i, j);
        const double n = std::sqrt(sq);
        norms[i] = n;
        if (n > 0.0)
            for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= n;
    }
    return out;
}

// Chain rule through u = x / ||x||: dx = (du - (u . du) u) / ||x||.
inline Tensor l2_normalize_backward(const Tensor& normalized, const std::vector<double>& norms,
                                    const Tensor& grad_normalized) {
    Tensor out(grad_normalized.rows(), grad_normalized.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        if (norms[i] == 0.0) {
            for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) = grad_normalized.at(i, j);
            continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < out.cols(); ++j)
            dot += normalized.at(i, j) * grad_normalized.at(i, j);
        for (std::size_t j = 0; j < out.cols(); ++j)
            out.at(i, j) = (grad_normalized.at(i, j) - dot * normalized.at(i, j)) / norms[i];
    }
    return out;
}

inline double dot_row(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    const double* ar = a.row_ptr(i);
    const double* br = b.row_ptr(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
    return s;
}

}  // namespace detail

// Contrastive loss with the positive pair in the denominator alongside the
// intra-anchor-modal negatives:
//
//   L_i = -log( e^{a_i.p_i/tau} / ( sum_{j!=i} e^{a_i.a_j/tau} + e^{a_i.p_i/tau} ) )
//
// averaged over the batch, evaluated in log-sum-exp form. Cross-modal
// (anchor, positive) negatives can be added to the denominator via
// `inter_modal_negatives`; the default follows the form above.
inline ContrastiveResult cross_modal_contrastive(const EmbeddingBatch& anchors,
                                                 const EmbeddingBatch& positives, double tau,
                                                 bool inter_modal_negatives = false,
                                                 bool normalize = false) {
    require_paired(anchors, positives, "cross_modal_contrastive");
    const std::size_t batch = anchors.size();
    const std::size_t dim = anchors.dim();
    if (batch < 2)
        throw ValueError("cross_modal_contrastive: batch of " + std::to_string(batch) +
                         " has no negatives; need B >= 2");
    if (!(tau > 0.0))
        throw ValueError("cross_modal_contrastive: temperature must be positive, got " +
                         std::to_string(tau));

    std::vector<double> anchor_norms, positive_norms;
    const Tensor a = normalize ? detail::l2_normalize_rows(anchors.vectors, anchor_norms)
                               : anchors.vectors;
    const Tensor p = normalize ? detail::l2_normalize_rows(positives.vectors, positive_norms)
                               : positives.vectors;

    Tensor da(batch, dim);
    Tensor dp(batch, dim);
    double total = 0.0;
    const double inv_tau = 1.0 / tau;
    const double inv_batch = 1.0 / static_cast<double>(batch);

    std::vector<double> s_intra(batch), s_inter(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const double s_pos = detail::dot_row(a, i, p, i) * inv_tau;
        double mx = s_pos;
        for (std::size_t j = 0; j < batch; ++j) {
            if (j == i) continue;
            s_intra[j] = detail::dot_row(a, i, a, j) * inv_tau;
            mx = std::max(mx, s_intra[j]);
            if (inter_modal_negatives) {
                s_inter[j] = detail::dot_row(a, i, p, j) * inv_tau;
                mx = std::max(mx, s_inter[j]);
            }
        }
        double neg_sum = 0.0;  // denominator terms other than the positive
        for (std::size_t j = 0; j < batch; ++j) {
            if (j == i) continue;
            neg_sum += std::exp(s_intra[j] - mx);
            if (inter_modal_negatives) neg_sum += std::exp(s_inter[j] - mx);
        }
        const double denom = neg_sum + std::exp(s_pos - mx);
        const double lse = mx + std::log(denom);
        // L_i = lse - s_pos, but evaluated so that a dominant positive term
        // yields a tiny positive value instead of underflowing to zero.
        if (mx == s_pos)
            total += std::log1p(neg_sum);
        else
            total += (mx - s_pos) + std::log(denom);

        // Softmax weights over the denominator terms drive the gradient:
        // dL_i/ds_pos = w_pos - 1, dL_i/ds_neg = w_neg.
        const double w_pos = std::exp(s_pos - lse);
        const double coef_pos = (w_pos - 1.0) * inv_tau * inv_batch;
        for (std::size_t k = 0; k < dim; ++k) {
            da.at(i, k) += coef_pos * p.at(i, k);
            dp.at(i, k) += coef_pos * a.at(i, k);
        }
        for (std::size_t j = 0; j < batch; ++j) {
            if (j == i) continue;
            const double w = std::exp(s_intra[j] - lse) * inv_tau * inv_batch;
            for (std::size_t k = 0; k < dim; ++k) {
                da.at(i, k) += w * a.at(j, k);
                da.at(j, k) += w * a.at(i, k);
            }
            if (inter_modal_negatives) {
                const double wi = std::exp(s_inter[j] - lse) * inv_tau * inv_batch;
                for (std::size_t k = 0; k < dim; ++k) {
                    da.at(i, k) += wi * p.at(j, k);
                    dp.at(j, k) += wi * a.at(i, k);
                }
            }
        }
    }

    ContrastiveResult res;
    res.loss = total * inv_batch;
    if (normalize) {
        res.anchor_grad = detail::l2_normalize_backward(a, anchor_norms, da);
        res.positive_grad = detail::l2_normalize_backward(p, positive_norms, dp);
    } else {
        res.anchor_grad = std::move(da);
        res.positive_grad = std::move(dp);
    }
    return res;
}

// Which side anchors the server/local embedding alignment. LocalToServer is
// the server-side objective (server embeddings anchor, local embeddings are
// the positives); ServerToLocal mirrors it for edge training.
enum class AlignDirection { local_to_server, server_to_local };

struct AlignmentResult {
    double loss = 0.0;
    Tensor server_grad;
    Tensor local_grad;
};

// Same functional form as the cross-modal loss with (server z_T, local z'_T)
// as the two modalities; the direction only swaps which batch is the anchor.
inline AlignmentResult embedding_alignment(const EmbeddingBatch& server_emb,
                                           const EmbeddingBatch& local_emb, double tau,
                                           AlignDirection direction,
                                           bool inter_modal_negatives = false,
                                           bool normalize = false) {
    AlignmentResult res;
    if (direction == AlignDirection::local_to_server) {
        ContrastiveResult c = cross_modal_contrastive(server_emb, local_emb, tau,
                                                      inter_modal_negatives, normalize);
        res.loss = c.loss;
        res.server_grad = std::move(c.anchor_grad);
        res.local_grad = std::move(c.positive_grad);
    } else {
        ContrastiveResult c = cross_modal_contrastive(local_emb, server_emb, tau,
                                                      inter_modal_negatives, normalize);
        res.loss = c.loss;
        res.local_grad = std::move(c.anchor_grad);
        res.server_grad = std::move(c.positive_grad);
    }
    return res;
}

struct ObjectiveResult {
    double loss = 0.0;
    double ce_loss = 0.0;
    double contrastive_loss = 0.0;
    Tensor logit_grad;
    Tensor model_emb_grad;   // wrt the trained model's embeddings
    Tensor server_emb_grad;  // wrt the server-provided embeddings
};

// Global-model objective: L_glob = L_CE + beta * L^{T->modality}, where the
// contrastive term pulls the modal embedding toward the server text embedding
// of the same sample. beta == 0 reduces exactly to cross-entropy.
inline ObjectiveResult global_objective(const Tensor& logits, const std::vector<int>& labels,
                                        const EmbeddingBatch& modal_emb,
                                        const EmbeddingBatch& server_text_emb,
                                        const ContrastiveConfig& cfg) {
    ObjectiveResult res;
    CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
    res.ce_loss = ce.loss;
    res.logit_grad = std::move(ce.logit_grad);
    if (cfg.beta != 0.0) {
        ContrastiveResult c =
            cross_modal_contrastive(modal_emb, server_text_emb, cfg.temperature,
                                    cfg.include_inter_modal_negatives, cfg.normalize_embeddings);
        res.contrastive_loss = c.loss;
        res.model_emb_grad = std::move(c.anchor_grad);
        res.server_emb_grad = std::move(c.positive_grad);
        for (double& g : res.model_emb_grad.data) g *= cfg.beta;
        for (double& g : res.server_emb_grad.data) g *= cfg.beta;
    } else {
        res.model_emb_grad = Tensor(modal_emb.vectors.rows(), modal_emb.vectors.cols());
        res.server_emb_grad = Tensor(server_text_emb.vectors.rows(),
                                     server_text_emb.vectors.cols());
    }
    res.loss = res.ce_loss + cfg.beta * res.contrastive_loss;
    return res;
}

// Local-model objective: L_loc = L_CE + beta * L^{S->L}, the edge-side
// alignment anchored at the local text embedding.
inline ObjectiveResult local_objective(const Tensor& logits, const std::vector<int>& labels,
                                       const EmbeddingBatch& local_text_emb,
                                       const EmbeddingBatch& server_text_emb,
                                       const ContrastiveConfig& cfg) {
    ObjectiveResult res;
    CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
    res.ce_loss = ce.loss;
    res.logit_grad = std::move(ce.logit_grad);
    if (cfg.beta != 0.0) {
        AlignmentResult c = embedding_alignment(server_text_emb, local_text_emb, cfg.temperature,
                                                AlignDirection::server_to_local,
                                                cfg.include_inter_modal_negatives,
                                                cfg.normalize_embeddings);
        res.contrastive_loss = c.loss;
        res.model_emb_grad = std::move(c.local_grad);
        res.server_emb_grad = std::move(c.server_grad);
        for (double& g : res.model_emb_grad.data) g *= cfg.beta;
        for (double& g : res.server_emb_grad.data) g *= cfg.beta;
    } else {
        res.model_emb_grad = Tensor(local_text_emb.vectors.rows(), local_text_emb.vectors.cols());
        res.server_emb_grad = Tensor(server_text_emb.vectors.rows(),
                                     server_text_emb.vectors.cols());
    }
    res.loss = res.ce_loss + cfg.beta * res.contrastive_loss;
    return res;
}

struct ProximalResult {
    double loss = 0.0;
    ModelParams grad;
};

// FedProx proximal penalty (mu/2) ||theta - theta_g||^2.
inline ProximalResult fedprox_term(const ModelParams& params, const ModelParams& global_params,
                                   double mu) {
    require_same_size(params, global_params, "fedprox_term");
    ProximalResult res;
    res.grad = params;
    double sq = 0.0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        const double d = params.values[i] - global_params.values[i];
        sq += d * d;
        res.grad.values[i] = mu * d;
    }
    res.loss = 0.5 * mu * sq;
    return res;
}

}  // namespace partialfl
