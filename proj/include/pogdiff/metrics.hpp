#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/linalg.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

using EmbeddingSet = std::vector<std::vector<double>>;

/// Embeddings belonging to one identity; `ids` names each row (training
/// sample ids for real images, running indices for generated ones).
struct IdentityEmbeddings {
    std::string identity;
    std::vector<std::size_t> ids;
    EmbeddingSet embeddings;
};

struct IdentityCoverage {
    std::string identity;
    std::size_t training_count = 0;
    std::size_t generated_count = 0;
    std::size_t correct = 0;
    std::set<std::size_t> covered;
    double grecall = 0.0;
};

struct CoverageReport {
    double threshold = 0.7;
    std::vector<IdentityCoverage> per_identity;
};

/// A generated embedding is correct when its cosine similarity to at least one
/// training image of its target identity exceeds `threshold`; each such
/// training image is covered, counted once however often it is hit.
inline CoverageReport coverage_match(const std::vector<IdentityEmbeddings>& generated,
                                     const std::vector<IdentityEmbeddings>& training, double threshold) {
    detail::require(threshold > 0.0 && threshold < 1.0, "coverage_match: threshold must lie in (0, 1)");
    CoverageReport report;
    report.threshold = threshold;
    std::set<std::string> known;
    for (const auto& tr : training) {
        detail::require(!tr.embeddings.empty(), "coverage_match: identity '" + tr.identity + "' has no training images");
        detail::require_shape(tr.ids.size() == tr.embeddings.size(), "coverage_match: ids/embeddings size mismatch");
        known.insert(tr.identity);
        IdentityCoverage cov;
        cov.identity = tr.identity;
        cov.training_count = tr.embeddings.size();
        for (const auto& gen : generated) {
            if (gen.identity != tr.identity) continue;
            for (const auto& g : gen.embeddings) {
                ++cov.generated_count;
                bool correct = false;
                for (std::size_t j = 0; j < tr.embeddings.size(); ++j) {
                    detail::require_shape(g.size() == tr.embeddings[j].size(), "coverage_match: dimension mismatch");
                    if (cosine_similarity(g, tr.embeddings[j]) > threshold) {
                        correct = true;
                        cov.covered.insert(tr.ids[j]);
                    }
                }
                cov.correct += correct ? 1 : 0;
            }
        }
        cov.grecall = static_cast<double>(cov.covered.size()) / static_cast<double>(cov.training_count);
        report.per_identity.push_back(std::move(cov));
    }
    for (const auto& gen : generated)
        detail::require(known.count(gen.identity) == 1,
                        "coverage_match: generated images for unknown identity '" + gen.identity + "'");
    return report;
}

/// Mean over identities of covered / training count, optionally restricted
/// to identities accepted by `include`.
inline double grecall(const CoverageReport& report,
                      const std::function<bool(const IdentityCoverage&)>& include = nullptr) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : report.per_identity) {
        if (include && !include(c)) continue;
        sum += static_cast<double>(c.covered.size()) / static_cast<double>(c.training_count);
        ++n;
    }
    detail::require(n > 0, "grecall: no identities selected");
    return sum / static_cast<double>(n);
}

/// Identities with at most this many training images count as few-shot.
inline constexpr std::size_t kFewShotCutoff = 5;

inline bool is_few_shot(const IdentityCoverage& c) { return c.training_count <= kFewShotCutoff; }

struct GaussianFit {
    std::vector<double> mean;
    SquareMatrix covariance;
};

/// Sample mean and unbiased covariance plus `regularization * I`.
inline GaussianFit fit_gaussian(const EmbeddingSet& set, double regularization = 1e-8) {
    detail::require(!set.empty(), "fit_gaussian: empty set");
    const std::size_t d = set.front().size();
    detail::require(set.size() >= d + 1, "fit_gaussian: need at least dim+1 points (" + std::to_string(d + 1) +
                                             "), got " + std::to_string(set.size()));
    GaussianFit fit;
    fit.mean.assign(d, 0.0);
    for (const auto& x : set) {
        detail::require_shape(x.size() == d, "fit_gaussian: ragged set");
        for (std::size_t i = 0; i < d; ++i) fit.mean[i] += x[i];
    }
    const double n = static_cast<double>(set.size());
    for (auto& m : fit.mean) m /= n;
    fit.covariance = SquareMatrix(d);
    for (const auto& x : set)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) fit.covariance(i, j) += (x[i] - fit.mean[i]) * (x[j] - fit.mean[j]);
    for (auto& v : fit.covariance.a) v /= (n - 1.0);
    for (std::size_t i = 0; i < d; ++i) fit.covariance(i, i) += regularization;
    return fit;
}

/// Frechet distance between two Gaussian fits:
///   |m_a - m_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)),
/// with Tr((S_a S_b)^(1/2)) taken as Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)).
inline double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    detail::require_shape(a.mean.size() == b.mean.size(), "frechet_distance: dimension mismatch");
    const SquareMatrix root_a = sqrt_psd(symmetrized(a.covariance));
    const SquareMatrix inner = symmetrized(root_a * b.covariance * root_a);
    double cross = 0.0;
    for (double ev : jacobi_eigen(inner).values) cross += std::sqrt(std::max(0.0, ev));
    const double value =
        squared_distance(a.mean, b.mean) + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    return std::max(0.0, value);
}

inline double toy_fid(const EmbeddingSet& set_a, const EmbeddingSet& set_b) {
    detail::require(!set_a.empty() && !set_b.empty(), "toy_fid: empty set");
    detail::require_shape(set_a.front().size() == set_b.front().size(), "toy_fid: dimension mismatch");
    return frechet_distance(fit_gaussian(set_a), fit_gaussian(set_b));
}

}  // namespace pogdiff
