// Command-line driver: data generation, training, sampling, evaluation,
// math self-checks, the vanilla/pogdiff A/B run and report aggregation.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pogdiff/experiment.hpp"
#include "pogdiff/verify.hpp"

namespace fs = std::filesystem;
using namespace pogdiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string method = "pogdiff";
    std::string out = "out";
    bool force = false;
    std::vector<std::string> records;
};

/// Config errors are usage errors, so they get their own type.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ExperimentConfig load(const Options& o) {
    try {
        return o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
}

Method method_of(const Options& o) {
    try {
        return parse_method(o.method);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
}

std::uint64_t run_seed(const Options& o, const ExperimentConfig& c) { return o.seed.value_or(c.eval.seeds.front()); }

int cmd_gen_data(const Options& o) {
    ExperimentConfig c = load(o);
    if (o.seed) c.dataset.seed = *o.seed;
    const Dataset data = make_dataset(c);
    fs::create_directories(o.out);
    save_dataset(fs::path(o.out) / "dataset.csv", data);
    for (const auto& [id, n] : data.counts()) std::cout << id << ": " << n << " samples\n";
    return kExitOk;
}

int cmd_train(const Options& o) {
    const ExperimentConfig c = load(o);
    const Method method = method_of(o);
    const std::uint64_t seed = run_seed(o, c);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    const TrainedRun run = train_run(c, method, seed);
    write_text(dir / "config.json", [&](std::ostream& os) { os << to_json(c).dump(2) << '\n'; });
    save_dataset(dir / "dataset.csv", run.data);
    write_text(dir / "index.csv", [&](std::ostream& os) { write_index_csv(os, *run.index); });
    if (!run.elbos.empty())
        write_text(dir / "elbo.csv", [&](std::ostream& os) { write_elbo_csv(os, run.data, run.elbos, c.psi.a3); });
    write_text(dir / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, run.trace); });
    save_checkpoint(dir / "model.ckpt", run.model);
    std::cout << method_name(method) << " seed " << seed << ": " << run.trace.size() << " steps, final loss "
              << run.trace.back().total;
    if (run.clamped_psi) std::cout << ", psi clamped " << run.clamped_psi << " times";
    std::cout << '\n';
    return kExitOk;
}

int cmd_sample(const Options& o) {
    const ExperimentConfig c = load(o);
    const fs::path dir(o.out);
    const MlpDenoiser model = load_checkpoint(dir / "model.ckpt");
    const Dataset data = load_dataset(dir / "dataset.csv");
    const auto sets = sample_identities(c, data, model, run_seed(o, c));
    write_text(dir / "samples.csv", [&](std::ostream& os) { write_samples_csv(os, sets); });
    std::cout << "wrote " << (dir / "samples.csv").string() << '\n';
    return kExitOk;
}

int cmd_eval(const Options& o) {
    const ExperimentConfig c = load(o);
    const fs::path dir(o.out);
    const Dataset data = load_dataset(dir / "dataset.csv");
    std::ifstream is(dir / "samples.csv");
    if (!is) throw Error("cannot open " + (dir / "samples.csv").string());
    const auto rows = evaluate(c, data, read_samples_csv(is), method_of(o), run_seed(o, c));
    write_text(dir / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rows); });
    write_metrics_csv(std::cout, rows);
    return kExitOk;
}

int cmd_verify(const Options& o) {
    bool ok = true;
    for (const auto& r : verify_math(o.seed.value_or(0))) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << r.name << " worst=" << std::scientific
                  << std::setprecision(3) << r.value << " tol=" << r.tolerance << std::defaultfloat << " ("
                  << std::fixed << std::setprecision(2) << r.seconds << "s)" << std::defaultfloat;
        if (!r.detail.empty()) std::cout << " " << r.detail;
        std::cout << '\n';
        ok = ok && r.passed;
    }
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_ab_run(const Options& o) {
    const ExperimentConfig c = load(o);
    std::vector<std::uint64_t> seeds = c.eval.seeds;
    if (o.seed) seeds = {*o.seed};
    std::vector<RunRecord> records;
    for (Method m : {Method::vanilla, Method::pogdiff})
        for (auto s : seeds) {
            records.push_back(run_experiment(c, m, s, fs::path(o.out) / run_dir_name(m, s)));
            std::cout << method_name(m) << " seed " << s << " done in " << std::fixed << std::setprecision(1)
                      << records.back().wall_seconds << "s" << std::defaultfloat << '\n';
        }
    emit_report(records, o.out);
    std::ifstream table(fs::path(o.out) / "report.txt");
    std::cout << table.rdbuf();
    return kExitOk;
}

int cmd_report(const Options& o) {
    std::vector<fs::path> paths(o.records.begin(), o.records.end());
    if (paths.empty())
        for (const auto& e : fs::recursive_directory_iterator(o.out))
            if (e.is_regular_file() && e.path().filename() == "record.json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw UsageError("report: no record.json files found under " + o.out);
    std::vector<RunRecord> records;
    for (const auto& p : paths) {
        std::ifstream is(p);
        if (!is) throw UsageError("report: cannot open " + p.string());
        records.push_back(record_from_json(nlohmann::json::parse(is)));
    }
    try {
        emit_report(records, o.out, o.force);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    std::ifstream table(fs::path(o.out) / "report.txt");
    std::cout << table.rdbuf();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy conditional diffusion with product-of-Gaussians neighbor regularization"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub, bool with_method) {
        sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Run seed");
        sub->add_option("--out", o.out, "Output directory");
        if (with_method)
            sub->add_option("--method", o.method, "vanilla or pogdiff")
                ->check(CLI::IsMember({"vanilla", "pogdiff"}));
    };
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
    add_common(gen, false);
    auto* train = app.add_subcommand("train", "Train a denoiser");
    add_common(train, true);
    auto* sample = app.add_subcommand("sample", "DDIM-sample every identity from a trained run directory");
    add_common(sample, false);
    auto* eval = app.add_subcommand("eval", "Compute gRecall and FID for a sampled run directory");
    add_common(eval, true);
    auto* verify = app.add_subcommand("verify-math", "Run the numerical self-checks");
    verify->add_option("--seed", o.seed, "Check seed");
    auto* ab = app.add_subcommand("ab-run", "Run vanilla and pogdiff over all seeds and report");
    add_common(ab, false);
    auto* report = app.add_subcommand("report", "Aggregate record.json files into a report");
    report->add_option("--out", o.out, "Directory to scan and write into");
    report->add_option("records", o.records, "Explicit record.json files");
    report->add_flag("--force", o.force, "Combine records from different configs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (train->parsed()) return cmd_train(o);
        if (sample->parsed()) return cmd_sample(o);
        if (eval->parsed()) return cmd_eval(o);
        if (verify->parsed()) return cmd_verify(o);
        if (ab->parsed()) return cmd_ab_run(o);
        if (report->parsed()) return cmd_report(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    return kExitUsage;
}
