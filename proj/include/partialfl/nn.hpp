#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "partialfl/errors.hpp"
#include "partialfl/rng.hpp"
#include "partialfl/tensor.hpp"

namespace partialfl {

enum class Activation { linear, relu, tanh };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline double apply_activation(Activation a, double z) {
    switch (a) {
        case Activation::linear: return z;
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
    }
    return z;
}

// Derivative as a function of the pre-activation z.
inline double activation_grad(Activation a, double z) {
    switch (a) {
        case Activation::linear: return 1.0;
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

struct DenseLayer {
    Tensor weights;  // [in_dim x out_dim]
    Tensor bias;     // [out_dim]
    Activation activation = Activation::linear;

    DenseLayer() = default;
    DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act)
        : weights(in_dim, out_dim), bias(std::vector<std::size_t>{out_dim}), activation(act) {}

    std::size_t in_dim() const { return weights.shape[0]; }
    std::size_t out_dim() const { return weights.shape[1]; }
    std::size_t param_count() const { return weights.numel() + bias.numel(); }
};

// Flat ordered view of a network's parameters: per layer, weights row-major
// then bias. layout[l] is the offset of layer l's block.
struct ModelParams {
    std::vector<double> values;
    std::vector<std::size_t> layout;

    std::size_t size() const { return values.size(); }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_same_size(const ModelParams& a, const ModelParams& b, const char* where) {
    if (a.values.size() != b.values.size())
        throw ShapeError(std::string(where) + ": parameter length mismatch " +
                         std::to_string(a.values.size()) + " vs " +
                         std::to_string(b.values.size()));
}

// Fixed-topology MLP with explicit backprop. forward() is pure; training code
// uses forward_cached() + backward(), which share per-layer caches.
class Network {
public:
    enum class Role { encoder, projection, classifier };

    Network() = default;

    Network(std::vector<DenseLayer> layers, Role role) : layers_(std::move(layers)), role_(role) {
        for (std::size_t l = 1; l < layers_.size(); ++l) {
            if (layers_[l].in_dim() != layers_[l - 1].out_dim())
                throw ShapeError("Network: layer " + std::to_string(l) + " input dim " +
                                 std::to_string(layers_[l].in_dim()) +
                                 " does not chain from previous output dim " +
                                 std::to_string(layers_[l - 1].out_dim()));
        }
    }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    Role role() const { return role_; }
    bool empty() const { return layers_.empty(); }

    std::size_t input_dim() const { return layers_.front().in_dim(); }
    std::size_t output_dim() const { return layers_.back().out_dim(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.param_count();
        return n;
    }

    Tensor forward(const Tensor& input) const {
        Tensor x = input;
        for (const auto& layer : layers_) x = layer_forward(layer, x, nullptr);
        return x;
    }

    // Caches per-layer inputs and pre-activations for a subsequent backward().
    Tensor forward_cached(const Tensor& input) {
        cache_inputs_.clear();
        cache_preacts_.clear();
        cache_inputs_.reserve(layers_.size());
        cache_preacts_.reserve(layers_.size());
        Tensor x = input;
        for (const auto& layer : layers_) {
            cache_inputs_.push_back(x);
            Tensor preact;
            x = layer_forward(layer, x, &preact);
            cache_preacts_.push_back(std::move(preact));
        }
        has_cache_ = true;
        return x;
    }

    struct Gradients {
        ModelParams params;
        Tensor input;
    };

    // upstream_grad: dLoss/dOutput for the batch of the last forward_cached().
    Gradients backward(const Tensor& upstream_grad) const {
        if (!has_cache_) throw StateError("Network::backward: no cached forward pass");
        if (upstream_grad.rank() != 2 || upstream_grad.rows() != cache_inputs_.front().rows() ||
            upstream_grad.cols() != output_dim())
            throw ShapeError("Network::backward: upstream grad shape " +
                             upstream_grad.shape_str() + " does not match cached output");

        Gradients out;
        out.params = zeros_like_params();

        Tensor delta = upstream_grad;
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const DenseLayer& layer = layers_[li];
            const Tensor& x = cache_inputs_[li];
            const Tensor& z = cache_preacts_[li];
            const std::size_t batch = x.rows();
            const std::size_t in = layer.in_dim();
            const std::size_t nout = layer.out_dim();

            // dz = delta (.) act'(z)
            Tensor dz(batch, nout);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t j = 0; j < nout; ++j)
                    dz.at(i, j) = delta.at(i, j) * activation_grad(layer.activation, z.at(i, j));

            double* wgrad = out.params.values.data() + out.params.layout[li];
            double* bgrad = wgrad + layer.weights.numel();

            // dW = x^T dz, db = colsum(dz)
            for (std::size_t i = 0; i < batch; ++i) {
                const double* xr = x.row_ptr(i);
                const double* dzr = dz.row_ptr(i);
                for (std::size_t r = 0; r < in; ++r) {
                    const double xv = xr[r];
                    double* wrow = wgrad + r * nout;
                    for (std::size_t c = 0; c < nout; ++c) wrow[c] += xv * dzr[c];
                }
                for (std::size_t c = 0; c < nout; ++c) bgrad[c] += dzr[c];
            }

            // dx = dz W^T
            Tensor dx(batch, in);
            for (std::size_t i = 0; i < batch; ++i) {
                const double* dzr = dz.row_ptr(i);
                double* dxr = dx.row_ptr(i);
                for (std::size_t r = 0; r < in; ++r) {
                    const double* wrow = layer.weights.row_ptr(r);
                    double acc = 0.0;
                    for (std::size_t c = 0; c < nout; ++c) acc += dzr[c] * wrow[c];
                    dxr[r] = acc;
                }
            }
            delta = std::move(dx);
        }
        out.input = std::move(delta);
        return out;
    }

    ModelParams zeros_like_params() const {
        ModelParams p;
        p.layout.reserve(layers_.size());
        std::size_t offset = 0;
        for (const auto& l : layers_) {
            p.layout.push_back(offset);
            offset += l.param_count();
        }
        p.values.assign(offset, 0.0);
        return p;
    }

private:
    static Tensor layer_forward(const DenseLayer& layer, const Tensor& x, Tensor* preact_out) {
        if (x.rank() != 2 || x.cols() != layer.in_dim())
            throw ShapeError("Network::forward: input shape " + x.shape_str() +
                             " does not match layer input dim " + std::to_string(layer.in_dim()));
        const std::size_t batch = x.rows();
        const std::size_t in = layer.in_dim();
        const std::size_t nout = layer.out_dim();
        Tensor z(batch, nout);
        for (std::size_t i = 0; i < batch; ++i) {
            const double* xr = x.row_ptr(i);
            double* zr = z.row_ptr(i);
            for (std::size_t c = 0; c < nout; ++c) zr[c] = layer.bias.data[c];
            for (std::size_t r = 0; r < in; ++r) {
                const double xv = xr[r];
                const double* wrow = layer.weights.row_ptr(r);
                for (std::size_t c = 0; c < nout; ++c) zr[c] += xv * wrow[c];
            }
        }
        Tensor a(batch, nout);
        for (std::size_t i = 0; i < batch * nout; ++i)
            a.data[i] = apply_activation(layer.activation, z.data[i]);
        if (preact_out) *preact_out = std::move(z);
        return a;
    }

    std::vector<DenseLayer> layers_;
    Role role_ = Role::encoder;
    std::vector<Tensor> cache_inputs_;
    std::vector<Tensor> cache_preacts_;
    bool has_cache_ = false;
};

inline ModelParams flatten(const Network& net) {
    ModelParams p = net.zeros_like_params();
    std::size_t k = 0;
    for (const auto& l : net.layers()) {
        for (double v : l.weights.data) p.values[k++] = v;
        for (double v : l.bias.data) p.values[k++] = v;
    }
    return p;
}

inline void load_params(Network& net, const ModelParams& params) {
    std::size_t expected = net.param_count();
    if (params.values.size() != expected)
        throw ShapeError("load_params: got " + std::to_string(params.values.size()) +
                         " values, network has " + std::to_string(expected) + " parameters");
    std::size_t k = 0;
    for (auto& l : net.layers()) {
        for (double& v : l.weights.data) v = params.values[k++];
        for (double& v : l.bias.data) v = params.values[k++];
    }
}

// Glorot-style uniform init, bias zero. Draw order is fixed (per layer,
// weights row-major) so seeded runs are reproducible.
inline void init_weights(Network& net, Rng& rng) {
    for (auto& l : net.layers()) {
        const double a =
            std::sqrt(6.0 / static_cast<double>(l.in_dim() + l.out_dim()));
        for (double& v : l.weights.data) v = rng.uniform(-a, a);
        l.bias.fill(0.0);
    }
}

// Convenience builder: dims = {in, hidden..., out}; hidden layers use
// `hidden_act`, the output layer is linear.
inline Network make_mlp(const std::vector<std::size_t>& dims, Activation hidden_act,
                        Network::Role role) {
    if (dims.size() < 2) throw ValueError("make_mlp: need at least input and output dims");
    std::vector<DenseLayer> layers;
    layers.reserve(dims.size() - 1);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool last = (i + 2 == dims.size());
        layers.emplace_back(dims[i], dims[i + 1], last ? Activation::linear : hidden_act);
    }
    return Network(std::move(layers), role);
}

struct CrossEntropyResult {
    double loss = 0.0;
    Tensor logit_grad;  // gradient of the batch-mean loss
};

// Mean softmax cross-entropy over the batch, computed via log-sum-exp with
// max subtraction.
inline CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                                const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be rank 2");
    const std::size_t batch = logits.rows();
    const std::size_t classes = logits.cols();
    if (batch == 0) throw ValueError("softmax_cross_entropy: empty batch");
    if (labels.size() != batch)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));

    CrossEntropyResult res;
    res.logit_grad = Tensor(batch, classes);
    double total = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw ValueError("softmax_cross_entropy: label " + std::to_string(y) +
                             " out of range [0, " + std::to_string(classes) + ")");
        const double* row = logits.row_ptr(i);
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[static_cast<std::size_t>(y)];
        double* grow = res.logit_grad.row_ptr(i);
        for (std::size_t c = 0; c < classes; ++c)
            grow[c] = std::exp(row[c] - lse) * inv_batch;
        grow[static_cast<std::size_t>(y)] -= inv_batch;
    }
    res.loss = total * inv_batch;
    return res;
}

// Adam with bias correction.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
    double lr;
    double beta1;
    double beta2;
    double eps;

    explicit AdamState(std::size_t n, double lr_, double beta1_ = 0.9, double beta2_ = 0.999,
                       double eps_ = 1e-8)
        : m(n, 0.0), v(n, 0.0), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}
};

inline void adam_step(AdamState& state, ModelParams& params, const ModelParams& grads) {
    require_same_size(params, grads, "adam_step");
    if (state.m.size() != params.values.size())
        throw ShapeError("adam_step: optimizer state sized for " +
                         std::to_string(state.m.size()) + " params, got " +
                         std::to_string(params.values.size()));
    if (!grads.all_finite()) throw ValueError("adam_step: non-finite gradient");

    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        const double g = grads.values[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace partialfl
