#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pogdiff/checkpoint.hpp"
#include "pogdiff/config.hpp"
#include "pogdiff/dataset.hpp"
#include "pogdiff/density_vae.hpp"
#include "pogdiff/metrics.hpp"
#include "pogdiff/neighbor_bank.hpp"
#include "pogdiff/sampler.hpp"
#include "pogdiff/schedule.hpp"
#include "pogdiff/trainer.hpp"

namespace pogdiff {

/// Raised when a pipeline stage fails; `stage()` names it.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct MetricRow {
    std::string method;
    std::uint64_t seed = 0;
    std::string shot;    // all | few
    std::string metric;  // grecall | fid
    double value = 0.0;
};

struct RunRecord {
    std::string config_hash;
    Method method = Method::vanilla;
    std::uint64_t seed = 0;
    std::string trace_path;
    std::vector<MetricRow> metrics;
    std::vector<TraceRow> trace;
    double wall_seconds = 0.0;
};

/// Generated samples for one identity.
struct GeneratedSet {
    std::string identity;
    Tensor samples;  // [n, d]
};

namespace detail {

template <class F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

inline std::vector<std::pair<std::string, std::size_t>> identity_counts(const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& i : c.dataset.identities) out.emplace_back(i.id, i.count);
    return out;
}

}  // namespace detail

inline Dataset make_dataset(const ExperimentConfig& c) {
    const DataDims dims{c.dataset.data_dim, c.dataset.cond_dim};
    Rng layout = stream_rng(c.dataset.seed, "layout");
    const auto specs =
        layout_identities(detail::identity_counts(c), dims, c.dataset.spread, c.dataset.data_radius, c.dataset.cond_scale, layout);
    return generate(specs, dims, splitmix64(c.dataset.seed ^ fnv1a64("data")));
}

inline NoiseSchedule make_schedule(const ExperimentConfig& c) {
    return NoiseSchedule(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
}

inline TrainConfig make_train_config(const ExperimentConfig& c) {
    TrainConfig t;
    t.steps = c.training.steps;
    t.batch_size = c.training.batch;
    t.optimizer = OptimizerConfig{c.training.lr, c.training.optimizer};
    t.stop_grad_neighbor = c.training.stop_grad_neighbor;
    t.psi_override = c.training.psi_override;
    return t;
}

inline PsiParams make_psi_params(const ExperimentConfig& c) {
    return PsiParams{c.psi.a1, c.psi.a2, c.psi.a3, c.psi.psi_max};
}

/// Fits the density VAE on the dataset's condition embeddings and returns
/// the frozen per-sample ELBO table.
inline std::vector<double> fit_density(const ExperimentConfig& c, const Dataset& data, std::uint64_t seed,
                                       std::vector<double>* trace = nullptr) {
    Rng rng = stream_rng(seed, "vae");
    DensityVae vae = DensityVae::create(data.dims().condition, c.vae.latent_dim, c.vae.hidden, rng);
    std::vector<std::vector<double>> ys;
    for (const auto& s : data.samples()) ys.push_back(s.y);
    auto t = fit(vae, stack_rows(ys), VaeFitConfig{c.vae.epochs, c.vae.lr}, rng);
    if (trace) *trace = std::move(t);
    return elbo_table(vae, data);
}

struct TrainedRun {
    Dataset data;
    MlpDenoiser model;
    std::vector<TraceRow> trace;
    std::vector<double> elbos;
    std::optional<EmbeddingIndex> index;
    long clamped_psi = 0;
};

/// Data generation, neighbor index, density fit (pogdiff only) and training.
inline TrainedRun train_run(const ExperimentConfig& c, Method method, std::uint64_t seed) {
    c.validate();
    TrainedRun run;
    run.data = detail::stage("data", [&] { return make_dataset(c); });
    const NoiseSchedule schedule = make_schedule(c);
    run.index.emplace(detail::stage("index", [&] { return build_index(run.data, identity_embedding, c.psi.k); }));
    NeighborContext ctx;
    if (method == Method::pogdiff) {
        run.elbos = detail::stage("vae", [&] { return fit_density(c, run.data, seed); });
        ctx = NeighborContext{&*run.index, run.elbos, make_psi_params(c)};
    }
    detail::stage("train", [&] {
        Rng init = stream_rng(seed, "init");
        auto model = MlpDenoiser::create(run.data.dims().data, run.data.dims().condition, c.schedule.steps,
                                         c.model.hidden, c.model.activation, init);
        const TrainConfig tc = make_train_config(c);
        TrainingState state(std::move(model), tc.optimizer, stream_rng(seed, "train"), stream_rng(seed, "neighbor"));
        train(state, run.data, schedule, method, method == Method::pogdiff ? &ctx : nullptr, tc);
        run.model = std::move(state.model);
        run.trace = std::move(state.trace);
        run.clamped_psi = state.clamped_psi;
        return 0;
    });
    return run;
}

/// DDIM samples for every identity, conditioned on the identity's mean
/// condition embedding, starting from x_T ~ N(0, I) drawn from the
/// "sample" stream.
inline std::vector<GeneratedSet> sample_identities(const ExperimentConfig& c, const Dataset& data,
                                                   const MlpDenoiser& model, std::uint64_t seed) {
    const NoiseSchedule schedule = make_schedule(c);
    Rng rng = stream_rng(seed, "sample");
    std::vector<GeneratedSet> out;
    const std::size_t n = c.eval.samples_per_identity, d = data.dims().data, cd = data.dims().condition;
    for (const auto& id : data.identities()) {
        const auto y_mean = data.condition_mean(id);
        Tensor y(Shape{n, cd});
        for (std::size_t i = 0; i < n; ++i) std::copy(y_mean.begin(), y_mean.end(), y.row(i).begin());
        Tensor x_T(Shape{n, d}, standard_normal_vector(rng, n * d));
        out.push_back({id, ddim_sample(model, schedule, y, c.eval.ddim_steps, x_T)});
    }
    return out;
}

inline std::vector<IdentityEmbeddings> training_embeddings(const Dataset& data) {
    std::vector<IdentityEmbeddings> out;
    for (const auto& id : data.identities()) {
        IdentityEmbeddings e{id, {}, {}};
        for (auto sid : data.members(id)) {
            e.ids.push_back(sid);
            e.embeddings.push_back(identity_embedding(data[sid].x0));
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<IdentityEmbeddings> generated_embeddings(const std::vector<GeneratedSet>& generated) {
    std::vector<IdentityEmbeddings> out;
    for (const auto& g : generated) {
        IdentityEmbeddings e{g.identity, {}, {}};
        for (std::size_t i = 0; i < g.samples.rows(); ++i) {
            e.ids.push_back(i);
            e.embeddings.push_back(identity_embedding(g.samples.row(i)));
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// gRecall (all/few) and toy FID (all/few). The few-shot FID row is omitted
/// when the few-shot training images are too few to fit a covariance.
inline std::vector<MetricRow> evaluate(const ExperimentConfig& c, const Dataset& data,
                                       const std::vector<GeneratedSet>& generated, Method method, std::uint64_t seed) {
    const auto train_emb = training_embeddings(data);
    const auto gen_emb = generated_embeddings(generated);
    const auto report = coverage_match(gen_emb, train_emb, c.eval.threshold);
    const std::string m(method_name(method));
    std::vector<MetricRow> rows;
    rows.push_back({m, seed, "all", "grecall", grecall(report)});
    bool any_few = false;
    for (const auto& pc : report.per_identity) any_few = any_few || is_few_shot(pc);
    if (any_few) rows.push_back({m, seed, "few", "grecall", grecall(report, is_few_shot)});

    auto pool = [&](const std::vector<IdentityEmbeddings>& sets, bool few_only) {
        EmbeddingSet out;
        for (const auto& s : sets) {
            if (few_only && data.members(s.identity).size() > kFewShotCutoff) continue;
            out.insert(out.end(), s.embeddings.begin(), s.embeddings.end());
        }
        return out;
    };
    rows.push_back({m, seed, "all", "fid", toy_fid(pool(gen_emb, false), pool(train_emb, false))});
    if (any_few) {
        const auto real = pool(train_emb, true);
        const auto fake = pool(gen_emb, true);
        if (real.size() > data.dims().data && fake.size() > data.dims().data)
            rows.push_back({m, seed, "few", "fid", toy_fid(fake, real)});
    }
    return rows;
}

// --- artifact IO -----------------------------------------------------------

inline void write_samples_csv(std::ostream& os, const std::vector<GeneratedSet>& sets) {
    os << "identity,index";
    const std::size_t d = sets.empty() ? 0 : sets.front().samples.cols();
    for (std::size_t i = 0; i < d; ++i) os << ",x_" << i;
    os << '\n' << std::setprecision(17);
    for (const auto& s : sets)
        for (std::size_t r = 0; r < s.samples.rows(); ++r) {
            os << s.identity << ',' << r;
            for (double v : s.samples.row(r)) os << ',' << v;
            os << '\n';
        }
}

inline std::vector<GeneratedSet> read_samples_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ContractError("samples csv: empty input");
    const auto header = split_csv_line(line);
    detail::require(header.size() >= 3 && header[0] == "identity" && header[1] == "index", "samples csv: bad header");
    const std::size_t d = header.size() - 2;
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> values;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        detail::require(cells.size() == header.size(), "samples csv: ragged row");
        if (!values.count(cells[0])) order.push_back(cells[0]);
        auto& v = values[cells[0]];
        for (std::size_t i = 0; i < d; ++i) v.push_back(std::stod(cells[2 + i]));
    }
    std::vector<GeneratedSet> out;
    for (const auto& id : order) {
        auto& v = values[id];
        const std::size_t n = v.size() / d;
        out.push_back({id, Tensor(Shape{n, d}, std::move(v))});
    }
    return out;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
    os << "method,seed,shot,metric,value\n" << std::setprecision(17);
    for (const auto& r : rows) os << r.method << ',' << r.seed << ',' << r.shot << ',' << r.metric << ',' << r.value << '\n';
}

inline nlohmann::json record_to_json(const RunRecord& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : r.metrics)
        rows.push_back({{"method", m.method}, {"seed", m.seed}, {"shot", m.shot}, {"metric", m.metric}, {"value", m.value}});
    return {{"config_hash", r.config_hash},
            {"method", std::string(method_name(r.method))},
            {"seed", r.seed},
            {"trace_path", r.trace_path},
            {"metrics", rows},
            {"wall_seconds", r.wall_seconds}};
}

inline RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    try {
        r.config_hash = j.at("config_hash").get<std::string>();
        r.method = parse_method(j.at("method").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.trace_path = j.value("trace_path", "");
        r.wall_seconds = j.value("wall_seconds", 0.0);
        for (const auto& m : j.at("metrics"))
            r.metrics.push_back({m.at("method").get<std::string>(), m.at("seed").get<std::uint64_t>(),
                                 m.at("shot").get<std::string>(), m.at("metric").get<std::string>(),
                                 m.at("value").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("record: malformed: ") + e.what());
    }
    return r;
}

inline void write_text(const std::filesystem::path& path, const auto& writer) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    writer(os);
}

/// Name of the per-run artifact directory under an output root.
inline std::string run_dir_name(Method method, std::uint64_t seed) {
    return std::string(method_name(method)) + "_seed" + std::to_string(seed);
}

/// Full pipeline for one (method, seed). With `out_dir`, every artifact is
/// written as soon as its stage completes, so a failing stage leaves the
/// earlier ones on disk.
inline RunRecord run_experiment(const ExperimentConfig& c, Method method, std::uint64_t seed,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    const auto start = std::chrono::steady_clock::now();
    c.validate();
    if (out_dir) std::filesystem::create_directories(*out_dir);
    RunRecord rec;
    rec.config_hash = config_hash(c);
    rec.method = method;
    rec.seed = seed;

    TrainedRun run = train_run(c, method, seed);
    if (out_dir) {
        write_text(*out_dir / "config.json", [&](std::ostream& os) { os << to_json(c).dump(2) << '\n'; });
        save_dataset(*out_dir / "dataset.csv", run.data);
        write_text(*out_dir / "index.csv", [&](std::ostream& os) { write_index_csv(os, *run.index); });
        if (!run.elbos.empty())
            write_text(*out_dir / "elbo.csv", [&](std::ostream& os) { write_elbo_csv(os, run.data, run.elbos, c.psi.a3); });
        write_text(*out_dir / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, run.trace); });
        save_checkpoint(*out_dir / "model.ckpt", run.model);
        rec.trace_path = (*out_dir / "trace.csv").string();
    }
    const auto generated = detail::stage("sample", [&] { return sample_identities(c, run.data, run.model, seed); });
    if (out_dir) write_text(*out_dir / "samples.csv", [&](std::ostream& os) { write_samples_csv(os, generated); });
    rec.metrics = detail::stage("eval", [&] { return evaluate(c, run.data, generated, method, seed); });
    rec.trace = std::move(run.trace);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out_dir) {
        write_text(*out_dir / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rec.metrics); });
        write_text(*out_dir / "record.json", [&](std::ostream& os) { os << record_to_json(rec).dump(2) << '\n'; });
    }
    return rec;
}

// --- reporting -------------------------------------------------------------

struct AggregateRow {
    std::string method;
    std::string shot;
    std::string metric;
    double mean = 0.0;
    double std_dev = 0.0;
    std::size_t n = 0;
};

/// Mean and sample standard deviation (0 for a single value) over seeds,
/// grouped by (method, shot, metric). Records must share a config hash
/// unless `force` is set.
inline std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records, bool force = false) {
    detail::require(!records.empty(), "report: no records");
    for (const auto& r : records)
        if (r.config_hash != records.front().config_hash && !force)
            throw ContractError("report: records come from different configs (" + records.front().config_hash +
                                " vs " + r.config_hash + "); use --force to combine");
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
    for (const auto& r : records)
        for (const auto& m : r.metrics) groups[{m.method, m.shot, m.metric}].push_back(m.value);
    std::vector<AggregateRow> out;
    for (const auto& [key, values] : groups) {
        AggregateRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), 0.0, 0.0, values.size()};
        for (double v : values) row.mean += v;
        row.mean /= static_cast<double>(values.size());
        if (values.size() > 1) {
            double ss = 0.0;
            for (double v : values) ss += (v - row.mean) * (v - row.mean);
            row.std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
        }
        out.push_back(row);
    }
    return out;
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
    os << "method,shot,metric,mean,std,n\n" << std::setprecision(17);
    for (const auto& r : rows)
        os << r.method << ',' << r.shot << ',' << r.metric << ',' << r.mean << ',' << r.std_dev << ',' << r.n << '\n';
}

/// Plain-text comparison table: one line per (metric, shot), one column per method.
inline void write_report_table(std::ostream& os, const std::vector<AggregateRow>& rows) {
    std::vector<std::string> methods;
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
        const std::pair<std::string, std::string> k{r.metric, r.shot};
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    os << std::left << std::setw(16) << "metric/shot";
    for (const auto& m : methods) os << std::setw(24) << m;
    os << '\n';
    for (const auto& [metric, shot] : keys) {
        os << std::setw(16) << (metric + "/" + shot);
        for (const auto& m : methods) {
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(4);
            bool found = false;
            for (const auto& r : rows)
                if (r.method == m && r.metric == metric && r.shot == shot) {
                    cell << r.mean << " +- " << r.std_dev;
                    found = true;
                }
            os << std::setw(24) << (found ? cell.str() : "-");
        }
        os << '\n';
    }
}

inline std::vector<AggregateRow> emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir,
                                             bool force = false) {
    const auto rows = aggregate(records, force);
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "aggregate.csv", [&](std::ostream& os) { write_aggregate_csv(os, rows); });
    write_text(out_dir / "report.txt", [&](std::ostream& os) {
        write_report_table(os, rows);
        // Budgets are equal in steps, not time; cost is shown on its own line.
        std::map<std::string, std::pair<double, std::size_t>> wall;
        for (const auto& r : records) {
            auto& w = wall[std::string(method_name(r.method))];
            w.first += r.wall_seconds;
            ++w.second;
        }
        os << std::left << std::setw(16) << "wall s/run";
        for (const auto& [m, w] : wall)
            os << m << ' ' << std::fixed << std::setprecision(2) << w.first / static_cast<double>(w.second) << "  ";
        os << '\n';
    });
    return rows;
}

}  // namespace pogdiff
