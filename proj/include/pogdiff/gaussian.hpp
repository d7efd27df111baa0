#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

/// N(mean, precision^-1 * I).
struct IsotropicGaussian {
    std::vector<double> mean;
    double precision = 1.0;

    IsotropicGaussian() = default;
    IsotropicGaussian(std::vector<double> m, double lambda) : mean(std::move(m)), precision(lambda) { validate(); }

    std::size_t dim() const { return mean.size(); }
    double variance() const { return 1.0 / precision; }

    void validate() const {
        detail::require(precision > 0.0 && std::isfinite(precision), "gaussian: precision must be positive and finite");
        for (double v : mean) detail::require(std::isfinite(v), "gaussian: mean must be finite");
    }

    double log_density(std::span<const double> x) const {
        detail::require_shape(x.size() == dim(), "gaussian: dimension mismatch");
        const double d = static_cast<double>(dim());
        return 0.5 * d * std::log(precision / (2.0 * std::numbers::pi)) - 0.5 * precision * squared_distance(x, mean);
    }
};

/// Renormalized pointwise product of two isotropic Gaussians: precisions
/// add, the mean is the precision-weighted average.
inline IsotropicGaussian pog_product(const IsotropicGaussian& a, const IsotropicGaussian& b) {
    detail::require_shape(a.dim() == b.dim(), "pog_product: dimension mismatch");
    a.validate();
    b.validate();
    const double lambda = a.precision + b.precision;
    std::vector<double> mean(a.dim());
    for (std::size_t i = 0; i < mean.size(); ++i)
        mean[i] = (a.precision * a.mean[i] + b.precision * b.mean[i]) / lambda;
    return IsotropicGaussian(std::move(mean), lambda);
}

/// KL(p || q) in closed form.
inline double kl_isotropic(const IsotropicGaussian& p, const IsotropicGaussian& q) {
    detail::require_shape(p.dim() == q.dim(), "kl_isotropic: dimension mismatch");
    p.validate();
    q.validate();
    const double d = static_cast<double>(p.dim());
    const double ratio = q.precision / p.precision;
    return 0.5 * d * (ratio - 1.0 - std::log(ratio)) + 0.5 * q.precision * squared_distance(p.mean, q.mean);
}

struct LemmaResidual {
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
    std::vector<double> pog_mean;

    /// |lhs - rhs - residual| / max(1, lhs)
    double defect() const { return std::abs(lhs - rhs - residual) / std::max(1.0, lhs); }
};

/// Both sides of the completing-the-square identity behind the PoG bound:
///
///   1/2 l_t |m - m_t|^2 + 1/2 l_n |m - m_n|^2
///     = 1/2 (l_t + l_n) |m - m_pog|^2 + l_t l_n |m_t - m_n|^2 / (2 (l_t + l_n))
///
/// where m is the model mean under y, m_t the posterior mean, m_n the model
/// mean under the neighbor y', and m_pog their precision-weighted average.
inline LemmaResidual lemma_residual(std::span<const double> model_mean, std::span<const double> posterior_mean,
                                    std::span<const double> neighbor_mean, double posterior_precision,
                                    double neighbor_precision) {
    detail::require_shape(model_mean.size() == posterior_mean.size() && model_mean.size() == neighbor_mean.size(),
                          "lemma_residual: dimension mismatch");
    detail::require(posterior_precision > 0.0 && neighbor_precision > 0.0,
                    "lemma_residual: precisions must be positive");
    const double lt = posterior_precision, ln = neighbor_precision, lsum = lt + ln;
    LemmaResidual r;
    r.pog_mean.resize(model_mean.size());
    for (std::size_t i = 0; i < model_mean.size(); ++i)
        r.pog_mean[i] = (lt * posterior_mean[i] + ln * neighbor_mean[i]) / lsum;
    r.lhs = 0.5 * lt * squared_distance(model_mean, posterior_mean) +
            0.5 * ln * squared_distance(model_mean, neighbor_mean);
    r.rhs = 0.5 * lsum * squared_distance(model_mean, r.pog_mean);
    r.residual = lt * ln * squared_distance(posterior_mean, neighbor_mean) / (2.0 * lsum);
    return r;
}

}  // namespace pogdiff
