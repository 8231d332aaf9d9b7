#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sintent/error.hpp"
#include "sintent/tensor.hpp"

namespace sintent {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    Eigen::Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t elements_checked = 0;
};

// Denominator floor for the relative error. Central differences in double carry
// ~1e-10 absolute noise, so gradients below this size are compared absolutely.
inline constexpr double kGradCheckFloor = 1e-4;

inline double relative_error(double analytic, double numeric, double floor = kGradCheckFloor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss(with_grad)` must be deterministic. With with_grad = true it zeroes and
// fills every parameter's grad; with false it only returns the loss.
// Returns the worst element-wise relative error between the analytic gradient
// and the central difference (f(x+eps) - f(x-eps)) / 2eps.
inline GradCheckResult grad_check(const std::function<double(bool)>& loss,
                                  const std::vector<Parameter<double>*>& params, double eps = 1e-5) {
    const double base = loss(true);
    if (!std::isfinite(base))
        throw NumericError("grad_check: non-finite loss");
    std::vector<Mat<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params)
        analytic.push_back(p->grad);

    GradCheckResult r;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double& x = p.value.data()[i];
            const double saved = x;
            x = saved + eps;
            const double up = loss(false);
            x = saved - eps;
            const double down = loss(false);
            x = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss while perturbing " + p.name);
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k].data()[i];
            const double err = relative_error(a, numeric);
            ++r.elements_checked;
            if (err > r.max_relative_error || r.worst_index < 0) {
                r.max_relative_error = err;
                r.worst_parameter = p.name;
                r.worst_index = i;
                r.analytic = a;
                r.numeric = numeric;
            }
        }
    }
    // Leave grads as the analytic result for callers that inspect them.
    for (std::size_t k = 0; k < params.size(); ++k)
        params[k]->grad = analytic[k];
    return r;
}

} // namespace sintent
