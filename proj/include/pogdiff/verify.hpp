#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pogdiff/diffusion_loss.hpp"
#include "pogdiff/gaussian.hpp"
#include "pogdiff/grad_check.hpp"
#include "pogdiff/graph.hpp"
#include "pogdiff/mlp.hpp"
#include "pogdiff/rng.hpp"
#include "pogdiff/schedule.hpp"

namespace pogdiff {

/// Outcome of one numerical self-check. `value` is the worst observed
/// statistic and passes when it is below `tolerance`.
struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double tolerance = 0.0;
    std::string detail;
    double seconds = 0.0;
};

namespace detail {

inline double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

template <class F>
CheckResult timed(std::string name, double tolerance, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    r.name = std::move(name);
    r.tolerance = tolerance;
    body(r);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace detail

/// Completing-the-square identity on random tuples with dimension 1..8:
/// worst |lhs - rhs - residual| / max(1, lhs), and the residual must never
/// be negative.
inline CheckResult check_lemma(std::size_t tuples = 10000, std::uint64_t seed = 0) {
    return detail::timed("lemma identity", 1e-9, [&](CheckResult& r) {
        Rng rng = stream_rng(seed, "verify.lemma");
        bool negative = false;
        for (std::size_t k = 0; k < tuples; ++k) {
            const std::size_t d = 1 + uniform_index(rng, 8);
            const double scale = std::exp(detail::uniform_in(rng, -3.0, 3.0));
            auto draw = [&] {
                auto v = standard_normal_vector(rng, d);
                for (auto& x : v) x *= scale;
                return v;
            };
            const auto m = draw(), mt = draw(), mn = draw();
            const double lt = std::exp(detail::uniform_in(rng, -5.0, 5.0));
            const double ln = std::exp(detail::uniform_in(rng, -5.0, 5.0));
            const auto res = lemma_residual(m, mt, mn, lt, ln);
            r.value = std::max(r.value, res.defect());
            negative = negative || res.residual < 0.0;
        }
        r.passed = r.value < r.tolerance && !negative;
        r.detail = std::to_string(tuples) + " tuples" + (negative ? ", negative residual seen" : "");
    });
}

/// Closed-form product of two 1-D Gaussians against the renormalized
/// pointwise product of their densities on a uniform grid over [-10, 10].
inline CheckResult check_pog_grid(std::size_t pairs = 100, std::size_t grid = 100000, std::uint64_t seed = 0) {
    return detail::timed("pog vs grid product", 1e-6, [&](CheckResult& r) {
        Rng rng = stream_rng(seed, "verify.pog");
        const double lo = -10.0, hi = 10.0, h = (hi - lo) / static_cast<double>(grid - 1);
        std::vector<double> product(grid);
        for (std::size_t k = 0; k < pairs; ++k) {
            const IsotropicGaussian a({detail::uniform_in(rng, -3.0, 3.0)}, detail::uniform_in(rng, 0.5, 4.0));
            const IsotropicGaussian b({detail::uniform_in(rng, -3.0, 3.0)}, detail::uniform_in(rng, 0.5, 4.0));
            const IsotropicGaussian c = pog_product(a, b);
            double mass = 0.0;
            for (std::size_t i = 0; i < grid; ++i) {
                const double x[1] = {lo + h * static_cast<double>(i)};
                product[i] = std::exp(a.log_density(x) + b.log_density(x));
                mass += (i == 0 || i + 1 == grid ? 0.5 : 1.0) * product[i];
            }
            mass *= h;
            for (std::size_t i = 0; i < grid; ++i) {
                const double x[1] = {lo + h * static_cast<double>(i)};
                r.value = std::max(r.value, std::abs(product[i] / mass - std::exp(c.log_density(x))));
            }
        }
        r.passed = r.value < r.tolerance;
        r.detail = std::to_string(pairs) + " pairs on " + std::to_string(grid) + " points";
    });
}

/// KL closed form against exact special cases and basic properties:
/// KL(p, p) = 0, the unit-offset value 0.5, and KL >= 0 on random pairs.
inline CheckResult check_kl(std::size_t pairs = 1000, std::uint64_t seed = 0) {
    return detail::timed("kl closed form", 1e-12, [&](CheckResult& r) {
        Rng rng = stream_rng(seed, "verify.kl");
        r.value = std::abs(kl_isotropic(IsotropicGaussian({0.0}, 1.0), IsotropicGaussian({1.0}, 1.0)) - 0.5);
        bool negative = false;
        for (std::size_t k = 0; k < pairs; ++k) {
            const std::size_t d = 1 + uniform_index(rng, 8);
            const IsotropicGaussian p(standard_normal_vector(rng, d), std::exp(detail::uniform_in(rng, -3.0, 3.0)));
            const IsotropicGaussian q(standard_normal_vector(rng, d), std::exp(detail::uniform_in(rng, -3.0, 3.0)));
            r.value = std::max(r.value, std::abs(kl_isotropic(p, p)));
            negative = negative || kl_isotropic(p, q) < 0.0;
        }
        r.passed = r.value < r.tolerance && !negative;
        if (negative) r.detail = "negative divergence seen";
    });
}

/// A(lambda) maps precision-weighted mean error to noise-prediction error:
///   1/2 lambda |mu(x_t, eps_a) - mu(x_t, eps_b)|^2 == A(lambda) |eps_a - eps_b|^2.
inline CheckResult check_mean_eps_chain(std::size_t instances = 1000, std::uint64_t seed = 0) {
    return detail::timed("mean/eps weighting", 1e-9, [&](CheckResult& r) {
        Rng rng = stream_rng(seed, "verify.chain");
        const NoiseSchedule s(100, 1e-4, 0.02);
        for (std::size_t k = 0; k < instances; ++k) {
            const std::size_t d = 1 + uniform_index(rng, 8);
            const int t = 1 + static_cast<int>(uniform_index(rng, 100));
            const double lambda = std::exp(detail::uniform_in(rng, -3.0, 6.0));
            const auto x_t = standard_normal_vector(rng, d);
            const auto ea = standard_normal_vector(rng, d), eb = standard_normal_vector(rng, d);
            const double lhs = 0.5 * lambda * squared_distance(mean_from_eps(s, x_t, t, ea), mean_from_eps(s, x_t, t, eb));
            const double rhs = a_coeff(s, t, lambda) * squared_distance(ea, eb);
            r.value = std::max(r.value, std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-300));
        }
        r.passed = r.value < r.tolerance;
    });
}

/// A random small denoiser and batch for gradient checks.
struct GradInstance {
    MlpDenoiser model;
    NoiseSchedule schedule;
    TrainBatch batch;
};

inline GradInstance random_grad_instance(Rng& rng) {
    const std::size_t d = 1 + uniform_index(rng, 3), c = 1 + uniform_index(rng, 4), n = 1 + uniform_index(rng, 5);
    const int T = 10;
    const std::vector<std::size_t> hidden{4 + uniform_index(rng, 5)};
    GradInstance inst{MlpDenoiser::create(d, c, T, hidden, Activation::tanh, rng), NoiseSchedule(T, 1e-3, 0.2), {}};
    auto& b = inst.batch;
    b.x0 = Tensor(Shape{n, d}, standard_normal_vector(rng, n * d));
    b.eps = Tensor(Shape{n, d}, standard_normal_vector(rng, n * d));
    b.y = Tensor(Shape{n, c}, standard_normal_vector(rng, n * c));
    b.y_prime = Tensor(Shape{n, c}, standard_normal_vector(rng, n * c));
    for (std::size_t i = 0; i < n; ++i) {
        b.t.push_back(1 + static_cast<int>(uniform_index(rng, T)));
        b.psi.push_back(detail::uniform_in(rng, 0.0, 2.0));
    }
    return inst;
}

/// Analytic loss gradients against central differences on random instances,
/// once with gradients through both forward passes and once with the
/// neighbor pass frozen. For the frozen case the finite-difference loss
/// holds eps_theta(x_t, y') at its unperturbed value.
inline CheckResult check_loss_gradients(std::size_t instances = 100, std::uint64_t seed = 0) {
    return detail::timed("loss gradients", 1e-4, [&](CheckResult& r) {
        Rng rng = stream_rng(seed, "verify.grad");
        std::size_t unreliable = 0;
        for (std::size_t k = 0; k < instances; ++k) {
            const GradInstance inst = random_grad_instance(rng);
            for (bool stop : {false, true}) {
                Graph g;
                const auto nodes = pogdiff_loss(g, inst.model, inst.schedule, inst.batch, stop);
                const Gradients analytic = g.backward(nodes.total);

                const Tensor x_t = noised_inputs(inst.schedule, inst.batch);
                const Tensor frozen = mlp_forward(inst.model, x_t, inst.batch.t, inst.batch.y_prime);
                LossFunction loss = [&](const ParameterSet& p) {
                    MlpDenoiser m = inst.model;
                    m.params = p;
                    const Tensor pred = mlp_forward(m, x_t, inst.batch.t, inst.batch.y);
                    const Tensor other = stop ? frozen : mlp_forward(m, x_t, inst.batch.t, inst.batch.y_prime);
                    double total = 0.0;
                    for (std::size_t i = 0; i < inst.batch.size(); ++i) {
                        const double t1 = squared_distance(pred.row(i), inst.batch.eps.row(i));
                        const double t2 = squared_distance(pred.row(i), other.row(i));
                        total += t1 + inst.batch.psi[i] * t2;
                    }
                    return total / static_cast<double>(inst.batch.size());
                };
                const auto res = grad_check(loss, inst.model.params, analytic, 1e-5);
                r.value = std::max(r.value, res.max_error);
                unreliable += res.unreliable.size();
            }
        }
        r.passed = r.value < r.tolerance;
        r.detail = std::to_string(instances) + " instances x 2 settings";
        if (unreliable) r.detail += ", " + std::to_string(unreliable) + " unreliable points";
    });
}

/// Every check the `verify-math` command runs.
inline std::vector<CheckResult> verify_math(std::uint64_t seed = 0) {
    return {check_lemma(10000, seed), check_pog_grid(100, 100000, seed), check_kl(1000, seed),
            check_mean_eps_chain(1000, seed), check_loss_gradients(100, seed)};
}

}  // namespace pogdiff
