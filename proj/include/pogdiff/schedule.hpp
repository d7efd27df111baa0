#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pogdiff/errors.hpp"

namespace pogdiff {

/// Linear-beta DDPM schedule. All accessors take 1-based timesteps;
/// alpha_bar(0) == 1 by convention.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    NoiseSchedule(int num_steps, double beta_start, double beta_end) : steps_(num_steps) {
        detail::require(num_steps >= 1, "schedule: T must be >= 1");
        detail::require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
                        "schedule: need 0 < beta_start <= beta_end < 1");
        std::vector<double> betas(num_steps);
        for (int i = 0; i < num_steps; ++i) {
            const double u = num_steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(num_steps - 1);
            betas[i] = beta_start + u * (beta_end - beta_start);
        }
        init(std::move(betas));
    }

    /// Explicit betas, beta_1 first.
    static NoiseSchedule from_betas(std::vector<double> betas) {
        detail::require(!betas.empty(), "schedule: empty beta list");
        for (double b : betas) detail::require(b > 0.0 && b < 1.0, "schedule: beta outside (0, 1)");
        NoiseSchedule s;
        s.steps_ = static_cast<int>(betas.size());
        s.init(std::move(betas));
        return s;
    }

    int num_steps() const { return steps_; }
    double beta(int t) const { return beta_[check(t)]; }
    double alpha(int t) const { return alpha_[check(t)]; }
    double alpha_bar(int t) const {
        detail::require(t >= 0 && t <= steps_, "schedule: timestep " + std::to_string(t) + " out of range");
        return alpha_bar_[t];
    }
    /// Variance of q(x_{t-1} | x_t, x_0); beta_1 at t = 1.
    double posterior_variance(int t) const { return posterior_var_[check(t)]; }
    /// lambda_t = 1 / posterior_variance(t).
    double posterior_precision(int t) const { return 1.0 / posterior_var_[check(t)]; }

private:
    int check(int t) const {
        detail::require(t >= 1 && t <= steps_,
                        "schedule: timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
        return t;
    }

    void init(std::vector<double> betas) {
        beta_.assign(1, 0.0);
        beta_.insert(beta_.end(), betas.begin(), betas.end());
        alpha_.assign(steps_ + 1, 1.0);
        alpha_bar_.assign(steps_ + 1, 1.0);
        posterior_var_.assign(steps_ + 1, 0.0);
        for (int t = 1; t <= steps_; ++t) {
            alpha_[t] = 1.0 - beta_[t];
            alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
            posterior_var_[t] =
                t == 1 ? beta_[1] : beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
        }
    }

    int steps_ = 0;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
    std::vector<double> posterior_var_;
};

/// Closed-form q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline std::vector<double> q_sample(const NoiseSchedule& s, std::span<const double> x0, int t,
                                    std::span<const double> eps) {
    detail::require_shape(x0.size() == eps.size(), "q_sample: x0/eps dimension mismatch");
    detail::require(t >= 1 && t <= s.num_steps(), "q_sample: timestep " + std::to_string(t) + " out of range");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

/// One forward step q(x_t | x_{t-1}): sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps.
inline std::vector<double> q_step(const NoiseSchedule& s, std::span<const double> x_prev, int t,
                                  std::span<const double> eps) {
    detail::require_shape(x_prev.size() == eps.size(), "q_step: dimension mismatch");
    const double a = std::sqrt(s.alpha(t));
    const double b = std::sqrt(s.beta(t));
    std::vector<double> out(x_prev.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * eps[i];
    return out;
}

/// Weight turning a precision-scaled squared error between means into a
/// squared error between noise predictions:
///   A(lambda) = lambda (1 - alpha_t)^2 / (2 alpha_t (1 - abar_t)).
inline double a_coeff(const NoiseSchedule& s, int t, double lambda) {
    detail::require(lambda >= 0.0, "a_coeff: lambda must be non-negative");
    const double alpha = s.alpha(t);
    const double one_minus = 1.0 - alpha;
    return lambda * one_minus * one_minus / (2.0 * alpha * (1.0 - s.alpha_bar(t)));
}

/// Reverse-process mean implied by a noise prediction:
///   mu = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t).
inline std::vector<double> mean_from_eps(const NoiseSchedule& s, std::span<const double> x_t, int t,
                                         std::span<const double> eps) {
    detail::require_shape(x_t.size() == eps.size(), "mean_from_eps: dimension mismatch");
    const double c = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    const double inv = 1.0 / std::sqrt(s.alpha(t));
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv * (x_t[i] - c * eps[i]);
    return out;
}

}  // namespace pogdiff
