#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/graph.hpp"
#include "pogdiff/mlp.hpp"
#include "pogdiff/schedule.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

/// One minibatch of Algorithm-style training inputs. Rows align across fields.
struct TrainBatch {
    Tensor x0;                // [n, d]
    Tensor y;                 // [n, c]
    Tensor y_prime;           // [n, c] neighbor conditions
    std::vector<double> psi;  // [n] neighbor-term weights
    std::vector<int> t;       // [n] timesteps in [1, T]
    Tensor eps;               // [n, d] standard-normal noise

    std::size_t size() const { return t.size(); }

    void validate() const {
        const std::size_t n = t.size();
        detail::require_shape(n > 0, "batch: empty");
        detail::require_shape(x0.rank() == 2 && x0.rows() == n, "batch: x0 rows != batch size");
        detail::require_shape(eps.shape() == x0.shape(), "batch: eps shape != x0 shape");
        detail::require_shape(y.rank() == 2 && y.rows() == n, "batch: y rows != batch size");
        detail::require_shape(y_prime.shape() == y.shape(), "batch: y_prime shape != y shape");
        detail::require_shape(psi.size() == n, "batch: psi size != batch size");
        for (double p : psi) detail::require(p >= 0.0 && std::isfinite(p), "batch: psi must be finite and >= 0");
    }
};

/// Loss graph handles plus batch-mean values of each term, for tracing.
struct LossNodes {
    Graph::NodeId total = 0;
    double term1 = 0.0;
    double term2 = 0.0;
    double psi_mean = 0.0;

    double value(const Graph& g) const { return g.value(total).item(); }
};

/// x_t for every row of the batch.
inline Tensor noised_inputs(const NoiseSchedule& schedule, const TrainBatch& batch) {
    Tensor x_t(batch.x0.shape());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto row = q_sample(schedule, batch.x0.row(i), batch.t[i], batch.eps.row(i));
        std::copy(row.begin(), row.end(), x_t.row(i).begin());
    }
    return x_t;
}

namespace detail {

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Standard noise-prediction objective mean_i |eps_theta(x_t, t, y) - eps|^2.
/// Ignores y_prime and psi.
inline LossNodes vanilla_loss(Graph& g, const MlpDenoiser& model, const NoiseSchedule& schedule,
                              const TrainBatch& batch) {
    batch.validate();
    const Tensor x_t = noised_inputs(schedule, batch);
    const auto pred = denoise(g, model, x_t, batch.t, batch.y);
    const auto term1 = g.row_sum(g.square(g.sub(pred, g.constant(batch.eps))));
    LossNodes out;
    out.total = g.mean(term1);
    out.term1 = g.value(out.total).item();
    out.psi_mean = detail::mean_of(batch.psi);
    return out;
}

/// PoG objective
///   mean_i [ |eps_theta(x_t, y) - eps|^2 + psi_i |eps_theta(x_t, y) - eps_theta(x_t, y')|^2 ].
///
/// With `stop_grad_neighbor`, eps_theta(x_t, y') is a constant in the
/// backward pass; otherwise gradients flow through both forward passes.
inline LossNodes pogdiff_loss(Graph& g, const MlpDenoiser& model, const NoiseSchedule& schedule,
                              const TrainBatch& batch, bool stop_grad_neighbor) {
    batch.validate();
    const Tensor x_t = noised_inputs(schedule, batch);
    const auto pred = denoise(g, model, x_t, batch.t, batch.y);
    auto pred_neighbor = denoise(g, model, x_t, batch.t, batch.y_prime);
    if (stop_grad_neighbor) pred_neighbor = g.stop_gradient(pred_neighbor);
    const auto term1 = g.row_sum(g.square(g.sub(pred, g.constant(batch.eps))));
    const auto term2 = g.row_sum(g.square(g.sub(pred, pred_neighbor)));
    const auto weighted = g.mul(g.constant(Tensor::vector(batch.psi)), term2);
    LossNodes out;
    out.total = g.mean(g.add(term1, weighted));
    out.term1 = detail::mean_of(g.value(term1).values());
    out.term2 = detail::mean_of(g.value(term2).values());
    out.psi_mean = detail::mean_of(batch.psi);
    return out;
}

}  // namespace pogdiff
