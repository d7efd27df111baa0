#pragma once

#include <cmath>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/mlp.hpp"
#include "pogdiff/rng.hpp"
#include "pogdiff/schedule.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

/// Evenly spaced timesteps from T down to 1, both ends included.
inline std::vector<int> ddim_timesteps(int num_steps, int n_steps) {
    detail::require(n_steps >= 1, "ddim: need at least one step");
    detail::require(n_steps <= num_steps, "ddim: n_steps " + std::to_string(n_steps) + " exceeds T " +
                                              std::to_string(num_steps));
    std::vector<int> ts(n_steps);
    if (n_steps == 1) {
        ts[0] = num_steps;
        return ts;
    }
    for (int i = 0; i < n_steps; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(n_steps - 1);
        ts[n_steps - 1 - i] = static_cast<int>(std::lround(1.0 + u * (num_steps - 1)));
    }
    return ts;
}

/// Deterministic (eta = 0) DDIM. `x_T` is [n, d], `y` is [n, c]; each row is
/// an independent trajectory.
inline Tensor ddim_sample(const MlpDenoiser& model, const NoiseSchedule& schedule, const Tensor& y, int n_steps,
                          const Tensor& x_T) {
    const auto ts = ddim_timesteps(schedule.num_steps(), n_steps);
    Tensor x = x_T;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
        const Tensor eps = mlp_forward(model, x, t, y);
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = schedule.alpha_bar(t_prev);
        const double sqrt_ab = std::sqrt(ab), sqrt_1m_ab = std::sqrt(1.0 - ab);
        const double sqrt_ab_prev = std::sqrt(ab_prev), sqrt_1m_ab_prev = std::sqrt(1.0 - ab_prev);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0_pred = (x[i] - sqrt_1m_ab * eps[i]) / sqrt_ab;
            x[i] = sqrt_ab_prev * x0_pred + sqrt_1m_ab_prev * eps[i];
        }
    }
    return x;
}

/// Ancestral sampling through p_theta(x_{t-1} | x_t, y) for t = T..1 with
/// variance equal to the posterior variance; no noise is added at t = 1.
inline Tensor ddpm_sample(const MlpDenoiser& model, const NoiseSchedule& schedule, const Tensor& y, const Tensor& x_T,
                          Rng& rng) {
    Tensor x = x_T;
    for (int t = schedule.num_steps(); t >= 1; --t) {
        const Tensor eps = mlp_forward(model, x, t, y);
        const double c = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
        const double inv = 1.0 / std::sqrt(schedule.alpha(t));
        const double sigma = t > 1 ? std::sqrt(schedule.posterior_variance(t)) : 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = inv * (x[i] - c * eps[i]);
            if (t > 1) x[i] += sigma * standard_normal(rng);
        }
    }
    return x;
}

enum class SamplerKind { ddim, ddpm };

}  // namespace pogdiff
