#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pogdiff/errors.hpp"
#include "pogdiff/mlp.hpp"
#include "pogdiff/optimizer.hpp"
#include "pogdiff/rng.hpp"

namespace pogdiff {

struct IdentityCount {
    std::string id;
    std::size_t count = 0;
};

struct ExperimentConfig {
    struct Dataset {
        std::vector<IdentityCount> identities{{"A", 30}, {"B", 2}};
        std::size_t data_dim = 2;
        std::size_t cond_dim = 4;
        double spread = 0.3;
        double data_radius = 3.0;
        double cond_scale = 2.0;
        std::uint64_t seed = 0;
    } dataset;
    struct Schedule {
        int steps = 100;
        double beta_start = 1e-4;
        double beta_end = 0.02;
    } schedule;
    struct Model {
        std::vector<std::size_t> hidden{64, 64};
        Activation activation = Activation::tanh;
    } model;
    struct Training {
        int steps = 3000;
        std::size_t batch = 32;
        double lr = 1e-3;
        OptimizerMethod optimizer = OptimizerMethod::adam;
        bool stop_grad_neighbor = false;
        std::optional<double> psi_override;
    } training;
    struct Psi {
        std::size_t k = 5;
        double a1 = 1.0;
        double a2 = 1.0;
        double a3 = 1.0;
        double psi_max = 100.0;
    } psi;
    struct Vae {
        std::size_t latent_dim = 2;
        std::size_t hidden = 32;
        int epochs = 1500;
        double lr = 5e-3;
    } vae;
    struct Eval {
        std::size_t samples_per_identity = 20;
        int ddim_steps = 50;
        double threshold = 0.7;
        std::vector<std::uint64_t> seeds{0, 1, 2};
    } eval;

    void validate() const;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ContractError("config: '" + where + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items())
        if (!ok.count(key)) throw ContractError("config: unknown key '" + where + "." + key + "'");
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ContractError("config: bad value for '" + where + "." + key + "': " + e.what());
    }
}

inline std::string_view optimizer_name(OptimizerMethod m) { return m == OptimizerMethod::sgd ? "sgd" : "adam"; }

}  // namespace detail

inline void ExperimentConfig::validate() const {
    using detail::require;
    require(!dataset.identities.empty(), "config: dataset.identities must not be empty");
    std::set<std::string> ids;
    for (const auto& i : dataset.identities) {
        require(!i.id.empty() && i.id.find(',') == std::string::npos, "config: identity ids must be non-empty without commas");
        require(ids.insert(i.id).second, "config: duplicate identity '" + i.id + "'");
        require(i.count >= 2, "config: identity '" + i.id + "' needs count >= 2");
    }
    require(dataset.data_dim >= 1 && dataset.cond_dim >= 1, "config: dims must be >= 1");
    require(dataset.spread > 0.0 && dataset.data_radius > 0.0 && dataset.cond_scale > 0.0,
            "config: dataset scales must be positive");
    require(schedule.steps >= 1, "config: schedule.T must be >= 1");
    require(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1.0,
            "config: need 0 < beta_start <= beta_end < 1");
    for (auto h : model.hidden) require(h >= 1, "config: hidden widths must be >= 1");
    require(training.steps >= 1 && training.batch >= 1 && training.lr > 0.0, "config: invalid training settings");
    if (training.psi_override) require(*training.psi_override >= 0.0, "config: psi_override must be >= 0");
    std::size_t total = 0;
    for (const auto& i : dataset.identities) total += i.count;
    require(psi.k >= 1 && psi.k < total, "config: psi.k must satisfy 1 <= k < dataset size");
    require(psi.a1 > 0.0 && psi.a2 > 0.0 && psi.a3 > 0.0 && psi.psi_max > 0.0, "config: psi parameters must be positive");
    require(vae.latent_dim >= 1 && vae.hidden >= 1 && vae.epochs >= 1 && vae.lr > 0.0, "config: invalid vae settings");
    require(eval.samples_per_identity >= 1, "config: eval.samples_per_identity must be >= 1");
    require(eval.ddim_steps >= 1 && eval.ddim_steps <= schedule.steps, "config: need 1 <= eval.ddim_steps <= T");
    require(eval.threshold > 0.0 && eval.threshold < 1.0, "config: eval.threshold must lie in (0, 1)");
    require(!eval.seeds.empty(), "config: eval.seeds must not be empty");
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    json ids = json::array();
    for (const auto& i : c.dataset.identities) ids.push_back({{"id", i.id}, {"count", i.count}});
    json j;
    j["dataset"] = {{"identities", ids},          {"data_dim", c.dataset.data_dim},
                    {"cond_dim", c.dataset.cond_dim}, {"spread", c.dataset.spread},
                    {"data_radius", c.dataset.data_radius}, {"cond_scale", c.dataset.cond_scale},
                    {"seed", c.dataset.seed}};
    j["schedule"] = {{"T", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
    j["model"] = {{"hidden", c.model.hidden}, {"activation", std::string(activation_name(c.model.activation))}};
    j["training"] = {{"steps", c.training.steps},
                     {"batch", c.training.batch},
                     {"lr", c.training.lr},
                     {"optimizer", std::string(detail::optimizer_name(c.training.optimizer))},
                     {"stop_grad_neighbor", c.training.stop_grad_neighbor},
                     {"psi_override", c.training.psi_override ? json(*c.training.psi_override) : json(nullptr)}};
    j["psi"] = {{"k", c.psi.k}, {"a1", c.psi.a1}, {"a2", c.psi.a2}, {"a3", c.psi.a3}, {"psi_max", c.psi.psi_max}};
    j["vae"] = {{"latent_dim", c.vae.latent_dim}, {"hidden", c.vae.hidden}, {"epochs", c.vae.epochs}, {"lr", c.vae.lr}};
    j["eval"] = {{"samples_per_identity", c.eval.samples_per_identity},
                 {"ddim_steps", c.eval.ddim_steps},
                 {"threshold", c.eval.threshold},
                 {"seeds", c.eval.seeds}};
    return j;
}

/// Missing keys keep their defaults; unknown keys are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    using detail::reject_unknown;
    ExperimentConfig c;
    reject_unknown(j, "", {"dataset", "schedule", "model", "training", "psi", "vae", "eval"});
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown(d, "dataset", {"identities", "data_dim", "cond_dim", "spread", "data_radius", "cond_scale", "seed"});
        if (d.contains("identities")) {
            c.dataset.identities.clear();
            if (!d.at("identities").is_array()) throw ContractError("config: dataset.identities must be an array");
            for (const auto& e : d.at("identities")) {
                reject_unknown(e, "dataset.identities[]", {"id", "count"});
                IdentityCount ic;
                read(e, "id", ic.id, "dataset.identities[]");
                read(e, "count", ic.count, "dataset.identities[]");
                c.dataset.identities.push_back(ic);
            }
        }
        read(d, "data_dim", c.dataset.data_dim, "dataset");
        read(d, "cond_dim", c.dataset.cond_dim, "dataset");
        read(d, "spread", c.dataset.spread, "dataset");
        read(d, "data_radius", c.dataset.data_radius, "dataset");
        read(d, "cond_scale", c.dataset.cond_scale, "dataset");
        read(d, "seed", c.dataset.seed, "dataset");
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        reject_unknown(s, "schedule", {"T", "beta_start", "beta_end"});
        read(s, "T", c.schedule.steps, "schedule");
        read(s, "beta_start", c.schedule.beta_start, "schedule");
        read(s, "beta_end", c.schedule.beta_end, "schedule");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, "model", {"hidden", "activation"});
        read(m, "hidden", c.model.hidden, "model");
        std::string act(activation_name(c.model.activation));
        read(m, "activation", act, "model");
        c.model.activation = parse_activation(act);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        reject_unknown(t, "training", {"steps", "batch", "lr", "optimizer", "stop_grad_neighbor", "psi_override"});
        read(t, "steps", c.training.steps, "training");
        read(t, "batch", c.training.batch, "training");
        read(t, "lr", c.training.lr, "training");
        std::string opt(detail::optimizer_name(c.training.optimizer));
        read(t, "optimizer", opt, "training");
        if (opt == "sgd")
            c.training.optimizer = OptimizerMethod::sgd;
        else if (opt == "adam")
            c.training.optimizer = OptimizerMethod::adam;
        else
            throw ContractError("config: training.optimizer must be 'sgd' or 'adam'");
        read(t, "stop_grad_neighbor", c.training.stop_grad_neighbor, "training");
        if (t.contains("psi_override") && !t.at("psi_override").is_null()) {
            double v = 0.0;
            read(t, "psi_override", v, "training");
            c.training.psi_override = v;
        }
    }
    if (j.contains("psi")) {
        const auto& p = j.at("psi");
        reject_unknown(p, "psi", {"k", "a1", "a2", "a3", "psi_max"});
        read(p, "k", c.psi.k, "psi");
        read(p, "a1", c.psi.a1, "psi");
        read(p, "a2", c.psi.a2, "psi");
        read(p, "a3", c.psi.a3, "psi");
        read(p, "psi_max", c.psi.psi_max, "psi");
    }
    if (j.contains("vae")) {
        const auto& v = j.at("vae");
        reject_unknown(v, "vae", {"latent_dim", "hidden", "epochs", "lr"});
        read(v, "latent_dim", c.vae.latent_dim, "vae");
        read(v, "hidden", c.vae.hidden, "vae");
        read(v, "epochs", c.vae.epochs, "vae");
        read(v, "lr", c.vae.lr, "vae");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, "eval", {"samples_per_identity", "ddim_steps", "threshold", "seeds"});
        read(e, "samples_per_identity", c.eval.samples_per_identity, "eval");
        read(e, "ddim_steps", c.eval.ddim_steps, "eval");
        read(e, "threshold", c.eval.threshold, "eval");
        read(e, "seeds", c.eval.seeds, "eval");
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ContractError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(std::string("config: parse error: ") + e.what());
    }
    return config_from_json(j);
}

/// Stable 64-bit hash of the canonical (sorted-key) JSON form, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(to_json(c).dump());
    return os.str();
}

}  // namespace pogdiff
