#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

using LossFunction = std::function<double(const ParameterSet&)>;

struct GradCheckResult {
    /// Worst error over parameter tensors. Relative unless the analytic
    /// gradient of that tensor is identically zero, then absolute.
    double max_error = 0.0;
    std::string worst_parameter;
    bool worst_is_absolute = false;
    /// Points where left and right one-sided slopes disagree by more than
    /// curvature can explain; central differences are meaningless there.
    std::vector<std::string> unreliable;

    bool reliable() const { return unreliable.empty(); }
};

/// Compares `analytic` against central differences of `loss`.
///
/// Error per parameter tensor is max|a - c| / (max|a| + max|c| + 1e-12), using
/// max-norms over the tensor so that individual near-zero entries do not
/// dominate through cancellation noise.
inline GradCheckResult grad_check(const LossFunction& loss, const ParameterSet& params, const Gradients& analytic,
                                  double epsilon = 1e-5) {
    detail::require(epsilon > 0.0 && epsilon <= 1e-2, "grad_check: epsilon must lie in (0, 1e-2]");
    GradCheckResult result;
    ParameterSet probe = params;
    const double base = loss(params);
    const double kink_tol = 1e3 * epsilon;
    for (const auto& [name, value] : params) {
        auto git = analytic.find(name);
        if (git == analytic.end()) throw ShapeError("grad_check: no analytic gradient for '" + name + "'");
        const Tensor& a = git->second;
        detail::require_shape(a.shape() == value.shape(), "grad_check: gradient shape mismatch for '" + name + "'");
        Tensor& p = probe.at(name);
        double max_diff = 0.0, max_a = 0.0, max_c = 0.0;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double x = value[i];
            p[i] = x + epsilon;
            const double f_plus = loss(probe);
            p[i] = x - epsilon;
            const double f_minus = loss(probe);
            p[i] = x;
            const double central = (f_plus - f_minus) / (2.0 * epsilon);
            const double right = (f_plus - base) / epsilon;
            const double left = (base - f_minus) / epsilon;
            if (std::abs(right - left) > kink_tol * std::max(1.0, std::abs(central)))
                result.unreliable.push_back(name + "[" + std::to_string(i) + "]");
            max_diff = std::max(max_diff, std::abs(a[i] - central));
            max_a = std::max(max_a, std::abs(a[i]));
            max_c = std::max(max_c, std::abs(central));
        }
        const bool degenerate = max_a == 0.0;
        const double err = degenerate ? max_diff : max_diff / (max_a + max_c + 1e-12);
        if (err > result.max_error || result.worst_parameter.empty()) {
            result.max_error = err;
            result.worst_parameter = name;
            result.worst_is_absolute = degenerate;
        }
    }
    return result;
}

}  // namespace pogdiff
