#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "partialfl/gradcheck.hpp"
#include "partialfl/nn.hpp"
#include "partialfl/rng.hpp"
#include "test_util.hpp"

using namespace partialfl;

namespace {

// Independent straight-line forward: per row, neuron by neuron, accumulating
// in a different loop order than Network::forward.
std::vector<double> reference_forward_row(const Network& net, std::vector<double> x) {
    for (const auto& layer : net.layers()) {
        std::vector<double> out(layer.out_dim());
        for (std::size_t j = 0; j < layer.out_dim(); ++j) {
            double z = layer.bias.data[j];
            for (std::size_t k = 0; k < layer.in_dim(); ++k)
                z += x[k] * layer.weights.at(k, j);
            out[j] = apply_activation(layer.activation, z);
        }
        x = std::move(out);
    }
    return x;
}

Network single_linear_layer(const Tensor& weights) {
    DenseLayer layer(weights.rows(), weights.cols(), Activation::linear);
    layer.weights = weights;
    return Network({layer}, Network::Role::encoder);
}

}  // namespace

TEST(Forward, IdentityWeights) {
    Network net = single_linear_layer(Tensor{{1.0, 0.0}, {0.0, 1.0}});
    Tensor out = net.forward(Tensor{{1.0, 2.0}});
    EXPECT_EQ(out.at(0, 0), 1.0);
    EXPECT_EQ(out.at(0, 1), 2.0);
}

TEST(Forward, HandMatrixProduct) {
    Network net = single_linear_layer(Tensor{{1.0, 2.0}, {3.0, 4.0}});
    Tensor out = net.forward(Tensor{{1.0, 1.0}});
    EXPECT_EQ(out.at(0, 0), 4.0);
    EXPECT_EQ(out.at(0, 1), 6.0);
}

TEST(Forward, MatchesIndependentReevaluation) {
    Rng rng(42);
    Network net = pfl_test::random_net({5, 7, 6, 3}, Activation::tanh, rng);
    Tensor input = pfl_test::random_tensor(4, 5, rng);
    Tensor out = net.forward(input);
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> row(input.row_ptr(i), input.row_ptr(i) + 5);
        std::vector<double> ref = reference_forward_row(net, row);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.at(i, j), ref[j], 1e-12);
    }
}

TEST(Forward, IsPure) {
    Rng rng(7);
    Network net = pfl_test::random_net({4, 8, 2}, Activation::relu, rng);
    Tensor input = pfl_test::random_tensor(3, 4, rng);
    Tensor a = net.forward(input);
    Tensor b = net.forward(input);
    EXPECT_EQ(a.data, b.data);
}

TEST(Forward, ShapeMismatchThrows) {
    Network net = single_linear_layer(Tensor{{1.0, 0.0}, {0.0, 1.0}});
    EXPECT_THROW(net.forward(Tensor(1, 3)), ShapeError);
}

TEST(Backward, LinearLayerOuterProduct) {
    Rng rng(3);
    Network net = single_linear_layer(pfl_test::random_tensor(3, 2, rng));
    Tensor x{{0.5, -1.0, 2.0}};
    net.forward_cached(x);
    auto grads = net.backward(Tensor{{1.0, 1.0}});
    // dW[k][j] = x[k] * upstream[j]
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < 2; ++j)
            EXPECT_DOUBLE_EQ(grads.params.values[k * 2 + j], x.at(0, k));
}

TEST(Backward, ZeroInputGivesBiasGradOnly) {
    Rng rng(4);
    Network net = single_linear_layer(pfl_test::random_tensor(3, 2, rng));
    Tensor zero(1, 3);
    net.forward_cached(zero);
    auto grads = net.backward(Tensor{{2.0, 5.0}});
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(grads.params.values[i], 0.0);
    EXPECT_EQ(grads.params.values[6], 2.0);
    EXPECT_EQ(grads.params.values[7], 5.0);
}

TEST(Backward, WithoutForwardThrows) {
    Rng rng(5);
    Network net = pfl_test::random_net({2, 2}, Activation::linear, rng);
    EXPECT_THROW(net.backward(Tensor(1, 2)), StateError);
}

TEST(Backward, MatchesFiniteDifferences) {
    Rng rng(11);
    Network net = pfl_test::random_net({4, 6, 5, 3}, Activation::tanh, rng);
    Tensor input = pfl_test::random_tensor(5, 4, rng);
    std::vector<int> labels = pfl_test::random_labels(5, 3, rng);

    Tensor logits = net.forward_cached(input);
    auto ce = softmax_cross_entropy(logits, labels);
    auto analytic = net.backward(ce.logit_grad);

    Network probe_net = net;
    auto loss_fn = [&](const ModelParams& p) {
        load_params(probe_net, p);
        return softmax_cross_entropy(probe_net.forward(input), labels).loss;
    };
    ModelParams numeric = finite_diff_gradient(loss_fn, flatten(net), 1e-5);
    EXPECT_LT(max_relative_error(analytic.params, numeric), 1e-4);
}

TEST(Backward, InputGradMatchesFiniteDifferences) {
    Rng rng(13);
    Network net = pfl_test::random_net({3, 5, 2}, Activation::tanh, rng);
    Tensor input = pfl_test::random_tensor(2, 3, rng);
    std::vector<int> labels{0, 1};

    Tensor logits = net.forward_cached(input);
    auto ce = softmax_cross_entropy(logits, labels);
    auto analytic = net.backward(ce.logit_grad);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < input.numel(); ++i) {
        Tensor probe = input;
        probe.data[i] += eps;
        const double fp = softmax_cross_entropy(net.forward(probe), labels).loss;
        probe.data[i] -= 2 * eps;
        const double fm = softmax_cross_entropy(net.forward(probe), labels).loss;
        EXPECT_NEAR(analytic.input.data[i], (fp - fm) / (2 * eps), 1e-6);
    }
}

TEST(FiniteDiff, Quadratic) {
    ModelParams p;
    p.values = {3.0};
    auto grad = finite_diff_gradient(
        [](const ModelParams& q) { return q.values[0] * q.values[0]; }, p, 1e-5);
    EXPECT_NEAR(grad.values[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantFunction) {
    ModelParams p;
    p.values = {1.0, -2.0, 0.5};
    auto grad = finite_diff_gradient([](const ModelParams&) { return 4.2; }, p, 1e-5);
    for (double g : grad.values) EXPECT_EQ(g, 0.0);
}

TEST(FiniteDiff, RejectsBadEps) {
    ModelParams p;
    p.values = {1.0};
    EXPECT_THROW(finite_diff_gradient([](const ModelParams&) { return 0.0; }, p, 0.0),
                 ValueError);
}

TEST(FiniteDiff, NonFiniteLossThrows) {
    ModelParams p;
    p.values = {1.0};
    EXPECT_THROW(finite_diff_gradient(
                     [](const ModelParams& q) { return std::log(-q.values[0]); }, p, 1e-5),
                 ValueError);
}

TEST(CrossEntropy, UniformLogits) {
    Tensor logits(3, 4);
    auto res = softmax_cross_entropy(logits, {0, 1, 3});
    EXPECT_NEAR(res.loss, std::log(4.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTrueClass) {
    Tensor logits(1, 4);
    logits.at(0, 2) = 1000.0;
    auto res = softmax_cross_entropy(logits, {2});
    EXPECT_NEAR(res.loss, 0.0, 1e-9);
    EXPECT_TRUE(res.logit_grad.all_finite());
}

TEST(CrossEntropy, HandEvaluation) {
    Tensor logits{{1.0, 2.0, 3.0}};
    auto res = softmax_cross_entropy(logits, {2});
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(res.loss, -std::log(std::exp(3.0) / denom), 1e-12);
}

TEST(CrossEntropy, ShiftInvariance) {
    Rng rng(17);
    Tensor logits = pfl_test::random_tensor(6, 5, rng);
    std::vector<int> labels = pfl_test::random_labels(6, 5, rng);
    const double base = softmax_cross_entropy(logits, labels).loss;
    Tensor shifted = logits;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
        const double c = 10.0 * rng.normal();
        for (std::size_t j = 0; j < shifted.cols(); ++j) shifted.at(i, j) += c;
    }
    EXPECT_NEAR(softmax_cross_entropy(shifted, labels).loss, base, 1e-9);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
    Tensor logits(1, 3);
    EXPECT_THROW(softmax_cross_entropy(logits, {3}), ValueError);
    EXPECT_THROW(softmax_cross_entropy(logits, {-1}), ValueError);
}

TEST(ModelParams, RoundTripIsExact) {
    Rng rng(23);
    Network net = pfl_test::random_net({5, 9, 4}, Activation::relu, rng);
    ModelParams p = flatten(net);
    Network other = pfl_test::random_net({5, 9, 4}, Activation::relu, rng);
    load_params(other, p);
    ModelParams q = flatten(other);
    EXPECT_EQ(p.values, q.values);
    EXPECT_EQ(p.layout, q.layout);
}

TEST(ModelParams, LoadRejectsWrongLength) {
    Rng rng(29);
    Network net = pfl_test::random_net({2, 2}, Activation::linear, rng);
    ModelParams p = flatten(net);
    p.values.push_back(0.0);
    EXPECT_THROW(load_params(net, p), ShapeError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    ModelParams p;
    p.values = {1.0};
    ModelParams g;
    g.values = {2.0};
    AdamState state(1, 1e-4);
    adam_step(state, p, g);
    EXPECT_NEAR(p.values[0], 1.0 - 1e-4, 1e-8);
    EXPECT_EQ(state.t, 1);
}

TEST(Adam, ZeroGradLeavesParams) {
    ModelParams p;
    p.values = {1.0, -3.0};
    ModelParams g;
    g.values = {0.0, 0.0};
    AdamState state(2, 0.01);
    adam_step(state, p, g);
    EXPECT_EQ(p.values[0], 1.0);
    EXPECT_EQ(p.values[1], -3.0);
    EXPECT_EQ(state.t, 1);
}

TEST(Adam, NonFiniteGradThrows) {
    ModelParams p;
    p.values = {1.0};
    ModelParams g;
    g.values = {std::nan("")};
    AdamState state(1, 0.01);
    EXPECT_THROW(adam_step(state, p, g), ValueError);
}

// Independently coded Adam reference, scalar and explicit.
namespace {
struct ScalarAdamRef {
    double m = 0.0, v = 0.0;
    int t = 0;
    double step(double param, double grad, double lr, double b1, double b2, double eps) {
        t += 1;
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        return param - lr * mhat / (std::sqrt(vhat) + eps);
    }
};
}  // namespace

TEST(Adam, TrajectoryMatchesReference) {
    ModelParams p;
    p.values = {2.5};
    AdamState state(1, 0.05);
    ScalarAdamRef ref;
    double ref_param = 2.5;
    for (int step = 0; step < 3; ++step) {
        ModelParams g;
        g.values = {2.0 * p.values[0]};  // f(x) = x^2
        const double ref_grad = 2.0 * ref_param;
        adam_step(state, p, g);
        ref_param = ref.step(ref_param, ref_grad, 0.05, 0.9, 0.999, 1e-8);
        EXPECT_NEAR(p.values[0], ref_param, 1e-12);
    }
}

TEST(Network, InitWeightsWithinGlorotBound) {
    Rng rng(31);
    Network net = make_mlp({10, 20, 5}, Activation::tanh, Network::Role::encoder);
    init_weights(net, rng);
    for (const auto& layer : net.layers()) {
        const double a = std::sqrt(6.0 / double(layer.in_dim() + layer.out_dim()));
        for (double w : layer.weights.data) {
            EXPECT_GE(w, -a);
            EXPECT_LT(w, a);
        }
        for (double b : layer.bias.data) EXPECT_EQ(b, 0.0);
    }
}

TEST(Network, LayerChainingValidated) {
    std::vector<DenseLayer> layers;
    layers.emplace_back(3, 4, Activation::relu);
    layers.emplace_back(5, 2, Activation::linear);  // 4 != 5
    EXPECT_THROW(Network(std::move(layers), Network::Role::encoder), ShapeError);
}

TEST(Rng, DeterministicStreams) {
    Rng a = derive_rng(123, "data");
    Rng b = derive_rng(123, "data");
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c = derive_rng(123, "partition");
    EXPECT_NE(derive_rng(123, "data").next_u64(), c.next_u64());
}

TEST(Rng, DirichletSumsToOne) {
    Rng rng(5);
    auto p = rng.dirichlet(0.5, 8);
    double sum = 0.0;
    for (double v : p) {
        EXPECT_GE(v, 0.0);
        sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Rng, SampleWithoutReplacementSortedUnique) {
    Rng rng(9);
    auto ids = rng.sample_without_replacement(200, 20);
    ASSERT_EQ(ids.size(), 20u);
    for (std::size_t i = 1; i < ids.size(); ++i) EXPECT_LT(ids[i - 1], ids[i]);
    EXPECT_LT(ids.back(), 200u);
}
