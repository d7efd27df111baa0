#pragma once

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "pogdiff/dataset.hpp"
#include "pogdiff/errors.hpp"
#include "pogdiff/graph.hpp"
#include "pogdiff/mlp.hpp"
#include "pogdiff/neighbor_bank.hpp"
#include "pogdiff/optimizer.hpp"
#include "pogdiff/rng.hpp"

namespace pogdiff {

/// Gaussian VAE over condition embeddings with unit decoder variance.
/// Encoder: c -> h -> h -> 2L (mean, log-variance). Decoder: L -> h -> h -> c.
struct DensityVae {
    std::size_t input_dim = 0;
    std::size_t latent_dim = 2;
    MlpShape encoder;
    MlpShape decoder;
    ParameterSet params;

    static DensityVae create(std::size_t input_dim, std::size_t latent_dim, std::size_t hidden, Rng& rng) {
        detail::require(input_dim >= 1 && latent_dim >= 1 && hidden >= 1, "vae: dimensions must be >= 1");
        DensityVae v;
        v.input_dim = input_dim;
        v.latent_dim = latent_dim;
        v.encoder = MlpShape{{input_dim, hidden, hidden, 2 * latent_dim}, Activation::tanh};
        v.decoder = MlpShape{{latent_dim, hidden, hidden, input_dim}, Activation::tanh};
        mlp_init(v.params, v.encoder, "encoder.", rng);
        mlp_init(v.params, v.decoder, "decoder.", rng);
        return v;
    }
};

struct VaeFitConfig {
    int epochs = 1500;
    double learning_rate = 5e-3;
};

enum class ElboMode { deterministic, monte_carlo };

namespace detail {

inline double gaussian_log_norm(std::size_t d) { return 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi); }

struct VaeNodes {
    Graph::NodeId mean;
    Graph::NodeId logvar;
    Graph::NodeId elbo_rows;  // [n]
};

/// Per-row ELBO with latent z = mean + exp(logvar / 2) * noise. A null
/// `noise` uses z = mean.
inline VaeNodes vae_graph(Graph& g, const DensityVae& vae, const Tensor& y, const Tensor* noise) {
    require_shape(y.rank() == 2 && y.cols() == vae.input_dim,
                  "vae: input must be [n, " + std::to_string(vae.input_dim) + "], got " + shape_str(y.shape()));
    const auto Y = g.constant(y);
    const auto enc = mlp_apply(g, vae.encoder, vae.params, "encoder.", Y);
    const std::size_t L = vae.latent_dim;
    VaeNodes out{g.slice_cols(enc, 0, L), g.slice_cols(enc, L, 2 * L), 0};
    auto z = out.mean;
    if (noise) z = g.add(out.mean, g.mul(g.exp(g.scale(out.logvar, 0.5)), g.constant(*noise)));
    const auto recon = mlp_apply(g, vae.decoder, vae.params, "decoder.", z);
    const auto sq_err = g.row_sum(g.square(g.sub(Y, recon)));
    // KL(N(m, e^v) || N(0, 1)) = 1/2 sum(m^2 + e^v - v - 1)
    const auto kl = g.add_scalar(
        g.scale(g.row_sum(g.sub(g.add(g.square(out.mean), g.exp(out.logvar)), out.logvar)), 0.5),
        -0.5 * static_cast<double>(L));
    out.elbo_rows = g.add_scalar(g.sub(g.scale(sq_err, -0.5), kl), -gaussian_log_norm(vae.input_dim));
    return out;
}

}  // namespace detail

/// Trains by full-batch Adam on the single-sample reparameterized ELBO.
/// Returns the mean training ELBO after each epoch.
inline std::vector<double> fit(DensityVae& vae, const Tensor& conditions, const VaeFitConfig& config, Rng& rng) {
    detail::require(conditions.rank() == 2 && conditions.rows() >= 2, "vae fit: need at least 2 embeddings");
    detail::require(config.epochs >= 1, "vae fit: epochs must be >= 1");
    Optimizer opt(OptimizerConfig{config.learning_rate, OptimizerMethod::adam});
    std::vector<double> trace;
    trace.reserve(config.epochs);
    const std::size_t n = conditions.rows();
    for (int e = 0; e < config.epochs; ++e) {
        Tensor noise(Shape{n, vae.latent_dim}, standard_normal_vector(rng, n * vae.latent_dim));
        Graph g;
        const auto nodes = detail::vae_graph(g, vae, conditions, &noise);
        const auto loss = g.scale(g.mean(nodes.elbo_rows), -1.0);
        const double elbo = -g.value(loss).item();
        if (!std::isfinite(elbo)) throw NumericError("vae fit: non-finite ELBO at epoch " + std::to_string(e));
        trace.push_back(elbo);
        opt.step(vae.params, g.backward(loss));
    }
    return trace;
}

/// ELBO of each row of `y`. Deterministic mode decodes the latent mean;
/// Monte-Carlo mode averages `samples` reparameterized draws.
inline std::vector<double> elbo(const DensityVae& vae, const Tensor& y, ElboMode mode = ElboMode::deterministic,
                                int samples = 1, Rng* rng = nullptr) {
    if (mode == ElboMode::deterministic) {
        Graph g;
        const auto nodes = detail::vae_graph(g, vae, y, nullptr);
        const auto& v = g.value(nodes.elbo_rows);
        return {v.values().begin(), v.values().end()};
    }
    detail::require(samples >= 1 && rng != nullptr, "elbo: monte-carlo mode needs samples >= 1 and an rng");
    std::vector<double> acc(y.rows(), 0.0);
    for (int s = 0; s < samples; ++s) {
        Tensor noise(Shape{y.rows(), vae.latent_dim}, standard_normal_vector(*rng, y.rows() * vae.latent_dim));
        Graph g;
        const auto nodes = detail::vae_graph(g, vae, y, &noise);
        const auto& v = g.value(nodes.elbo_rows);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    }
    for (auto& a : acc) a /= static_cast<double>(samples);
    return acc;
}

inline double elbo(const DensityVae& vae, std::span<const double> y) {
    return elbo(vae, Tensor::matrix(1, y.size(), {y.begin(), y.end()}))[0];
}

/// Per-sample Monte-Carlo ELBO draws (not averaged), for standard errors.
inline std::vector<double> elbo_draws(const DensityVae& vae, std::span<const double> y, int samples, Rng& rng) {
    const Tensor Y = Tensor::matrix(1, y.size(), {y.begin(), y.end()});
    Tensor Yrep(Shape{static_cast<std::size_t>(samples), y.size()});
    for (int s = 0; s < samples; ++s) std::copy(y.begin(), y.end(), Yrep.row(s).begin());
    Tensor noise(Shape{static_cast<std::size_t>(samples), vae.latent_dim},
                 standard_normal_vector(rng, static_cast<std::size_t>(samples) * vae.latent_dim));
    Graph g;
    const auto nodes = detail::vae_graph(g, vae, Yrep, &noise);
    const auto& v = g.value(nodes.elbo_rows);
    return {v.values().begin(), v.values().end()};
}

struct PsiParams {
    double a1 = 1.0;
    double a2 = 1.0;
    double a3 = 1.0;
    double psi_max = 100.0;
};

/// Neighbor-term weight psi = img_similarity * exp(-ELBO(y)) / a3, with both
/// factors kept for inspection.
struct PsiWeight {
    double psi = 0.0;
    double img_factor = 0.0;
    double density_factor = 0.0;
    std::size_t neighbor = 0;
    bool clamped = false;
};

inline double inverse_density(double elbo_y, double a3) {
    detail::require(a3 > 0.0, "inverse_density: a3 must be positive");
    return std::exp(-elbo_y) / a3;
}

inline PsiWeight psi_weight(double s, bool same_identity, const PsiParams& p, double elbo_y, std::size_t neighbor = 0) {
    detail::require(p.a1 > 0.0 && p.a2 > 0.0 && p.a3 > 0.0, "psi_weight: a1, a2, a3 must be positive");
    detail::require(p.psi_max > 0.0, "psi_weight: psi_max must be positive");
    PsiWeight w;
    w.neighbor = neighbor;
    w.img_factor = img_similarity(s, same_identity, p.a1, p.a2);
    w.density_factor = inverse_density(elbo_y, p.a3);
    if (w.img_factor == 0.0) return w;
    w.psi = w.img_factor * w.density_factor;
    if (!std::isfinite(w.psi) || w.psi > p.psi_max) {
        w.psi = p.psi_max;
        w.clamped = true;
    }
    return w;
}

/// Frozen ELBO per sample, computed once after fitting.
inline std::vector<double> elbo_table(const DensityVae& vae, const Dataset& data) {
    std::vector<std::vector<double>> rows;
    rows.reserve(data.size());
    for (const auto& s : data.samples()) rows.push_back(s.y);
    return elbo(vae, stack_rows(rows));
}

/// CSV: sample_id,identity,elbo,inv_density.
inline void write_elbo_csv(std::ostream& os, const Dataset& data, const std::vector<double>& elbos, double a3) {
    os << "sample_id,identity,elbo,inv_density\n" << std::setprecision(17);
    for (const auto& s : data.samples())
        os << s.id << ',' << s.identity << ',' << elbos.at(s.id) << ',' << inverse_density(elbos[s.id], a3) << '\n';
}

}  // namespace pogdiff
