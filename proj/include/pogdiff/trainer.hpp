#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pogdiff/dataset.hpp"
#include "pogdiff/density_vae.hpp"
#include "pogdiff/diffusion_loss.hpp"
#include "pogdiff/errors.hpp"
#include "pogdiff/mlp.hpp"
#include "pogdiff/neighbor_bank.hpp"
#include "pogdiff/optimizer.hpp"
#include "pogdiff/rng.hpp"
#include "pogdiff/schedule.hpp"

namespace pogdiff {

enum class Method { vanilla, pogdiff };

inline std::string_view method_name(Method m) { return m == Method::vanilla ? "vanilla" : "pogdiff"; }

inline Method parse_method(std::string_view s) {
    if (s == "vanilla") return Method::vanilla;
    if (s == "pogdiff") return Method::pogdiff;
    throw ContractError("unknown method '" + std::string(s) + "'");
}

struct TrainConfig {
    int steps = 3000;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer{};
    bool stop_grad_neighbor = false;
    /// Replaces every computed psi when set; neighbors are still drawn.
    std::optional<double> psi_override;
};

/// Everything needed to produce (y', psi) for a training sample.
struct NeighborContext {
    const EmbeddingIndex* index = nullptr;
    std::vector<double> elbos;  // frozen ELBO per sample id
    PsiParams psi;
};

struct TraceRow {
    long step = 0;
    double term1 = 0.0;
    double term2 = 0.0;
    double psi_mean = 0.0;
    double total = 0.0;
};

/// Mutable state of one training run. Data order, timesteps and noise come
/// from `train_rng`; neighbor draws from `neighbor_rng`, so the vanilla path
/// (which never draws neighbors) consumes exactly the same training stream.
struct TrainingState {
    MlpDenoiser model;
    Optimizer optimizer;
    Rng train_rng;
    Rng neighbor_rng;
    long step = 0;
    long clamped_psi = 0;
    std::vector<TraceRow> trace;

    TrainingState(MlpDenoiser m, OptimizerConfig opt, Rng train, Rng neighbor)
        : model(std::move(m)), optimizer(opt), train_rng(train), neighbor_rng(neighbor) {}
};

inline TrainBatch make_batch(TrainingState& state, const Dataset& data, std::span<const std::size_t> ids,
                             const NoiseSchedule& schedule, Method method, const NeighborContext* ctx,
                             const TrainConfig& config) {
    const std::size_t n = ids.size(), d = data.dims().data, c = data.dims().condition;
    TrainBatch b;
    b.x0 = Tensor(Shape{n, d});
    b.y = Tensor(Shape{n, c});
    b.eps = Tensor(Shape{n, d});
    b.t.resize(n);
    b.psi.assign(n, 0.0);
    std::uniform_int_distribution<int> t_dist(1, schedule.num_steps());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data[ids[i]];
        std::copy(s.x0.begin(), s.x0.end(), b.x0.row(i).begin());
        std::copy(s.y.begin(), s.y.end(), b.y.row(i).begin());
        b.t[i] = t_dist(state.train_rng);
        for (auto& v : b.eps.row(i)) v = standard_normal(state.train_rng);
    }
    b.y_prime = b.y;
    if (method == Method::vanilla) return b;
    detail::require(ctx && ctx->index, "train: pogdiff needs a neighbor index");
    detail::require(ctx->elbos.size() == data.size(), "train: ELBO table does not cover the dataset");
    for (std::size_t i = 0; i < n; ++i) {
        const auto draw = ctx->index->sample(ids[i], state.neighbor_rng);
        const auto& ny = data[draw.neighbor].y;
        std::copy(ny.begin(), ny.end(), b.y_prime.row(i).begin());
        const auto w = psi_weight(draw.similarity, draw.same_identity, ctx->psi, ctx->elbos[ids[i]], draw.neighbor);
        state.clamped_psi += w.clamped ? 1 : 0;
        b.psi[i] = config.psi_override ? *config.psi_override : w.psi;
    }
    return b;
}

/// One optimizer step on the given sample ids.
inline TraceRow train_step(TrainingState& state, const Dataset& data, std::span<const std::size_t> ids,
                           const NoiseSchedule& schedule, Method method, const NeighborContext* ctx,
                           const TrainConfig& config) {
    const TrainBatch batch = make_batch(state, data, ids, schedule, method, ctx, config);
    Graph g;
    const LossNodes loss = method == Method::vanilla
                               ? vanilla_loss(g, state.model, schedule, batch)
                               : pogdiff_loss(g, state.model, schedule, batch, config.stop_grad_neighbor);
    const double total = loss.value(g);
    if (!std::isfinite(total)) throw NumericError("train: non-finite loss at step " + std::to_string(state.step));
    state.optimizer.step(state.model.params, g.backward(loss.total));
    TraceRow row{state.step, loss.term1, loss.term2, loss.psi_mean, total};
    state.trace.push_back(row);
    ++state.step;
    return row;
}

/// One shuffled pass over the dataset in minibatches, stopping early once
/// `config.steps` total steps have run. Returns the rows added this epoch.
inline std::vector<TraceRow> train_epoch(TrainingState& state, const Dataset& data, const NoiseSchedule& schedule,
                                         Method method, const NeighborContext* ctx, const TrainConfig& config) {
    detail::require(config.batch_size >= 1, "train: batch size must be >= 1");
    detail::require(data.size() >= 1, "train: empty dataset");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.train_rng);
    std::vector<TraceRow> rows;
    for (std::size_t begin = 0; begin < order.size() && state.step < config.steps; begin += config.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        rows.push_back(train_step(state, data, std::span<const std::size_t>(order).subspan(begin, end - begin),
                                  schedule, method, ctx, config));
    }
    return rows;
}

/// Runs epochs until `config.steps` optimizer steps have been taken.
inline void train(TrainingState& state, const Dataset& data, const NoiseSchedule& schedule, Method method,
                  const NeighborContext* ctx, const TrainConfig& config) {
    while (state.step < config.steps) train_epoch(state, data, schedule, method, ctx, config);
}

/// CSV: step,term1,term2,psi_mean,total.
inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
    os << "step,term1,term2,psi_mean,total\n" << std::setprecision(17);
    for (const auto& r : trace)
        os << r.step << ',' << r.term1 << ',' << r.term2 << ',' << r.psi_mean << ',' << r.total << '\n';
}

}  // namespace pogdiff
