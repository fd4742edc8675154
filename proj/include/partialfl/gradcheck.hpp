#pragma once

#include <cmath>
#include <functional>

#include "partialfl/errors.hpp"
#include "partialfl/nn.hpp"

namespace partialfl {

// Central-difference gradient of a scalar loss over a flat parameter vector:
// (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) per coordinate.
inline ModelParams finite_diff_gradient(const std::function<double(const ModelParams&)>& loss_fn,
                                        const ModelParams& params, double eps) {
    if (!(eps > 0.0)) throw ValueError("finite_diff_gradient: eps must be positive");
    ModelParams grad = params;
    ModelParams probe = params;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        const double p0 = params.values[i];
        probe.values[i] = p0 + eps;
        const double fp = loss_fn(probe);
        probe.values[i] = p0 - eps;
        const double fm = loss_fn(probe);
        probe.values[i] = p0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw ValueError("finite_diff_gradient: non-finite loss at probe point " +
                             std::to_string(i));
        grad.values[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

// Largest relative mismatch between two gradient vectors; coordinates where
// both sides are below `floor` are treated as matching.
inline double max_relative_error(const ModelParams& a, const ModelParams& b,
                                 double floor = 1e-8) {
    require_same_size(a, b, "max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double denom = std::max(std::abs(a.values[i]), std::abs(b.values[i]));
        if (denom < floor) continue;
        worst = std::max(worst, std::abs(a.values[i] - b.values[i]) / denom);
    }
    return worst;
}

}  // namespace partialfl
