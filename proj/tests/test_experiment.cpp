#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pogdiff/experiment.hpp"

using namespace pogdiff;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.training.steps = 150;
    c.vae.epochs = 100;
    c.eval.samples_per_identity = 8;
    c.eval.ddim_steps = 20;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pogdiff_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunRecord record(const std::string& hash, Method m, std::uint64_t seed, double g_all, double g_few) {
    RunRecord r;
    r.config_hash = hash;
    r.method = m;
    r.seed = seed;
    const std::string name(method_name(m));
    r.metrics = {{name, seed, "all", "grecall", g_all}, {name, seed, "few", "grecall", g_few}};
    return r;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(POGDIFF_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
    const ExperimentConfig c;
    EXPECT_NO_THROW(c.validate());
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(c.psi.k, 5u);
    EXPECT_EQ(c.eval.samples_per_identity, 20u);
    EXPECT_EQ(c.eval.ddim_steps, 50);
    EXPECT_EQ(c.eval.threshold, 0.7);
    EXPECT_EQ(c.schedule.steps, 100);
}

TEST(Config, MissingKeysKeepDefaults) {
    const auto c = config_from_json(nlohmann::json::parse(R"({"training": {"steps": 10}})"));
    EXPECT_EQ(c.training.steps, 10);
    EXPECT_EQ(c.training.batch, ExperimentConfig{}.training.batch);
    EXPECT_FALSE(c.training.psi_override.has_value());
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
    for (const char* text : {R"({"bogus": 1})", R"({"training": {"stepz": 1}})",
                             R"({"dataset": {"identities": [{"id": "A", "count": 3, "extra": 1}]}})"}) {
        EXPECT_THROW(config_from_json(nlohmann::json::parse(text)), ContractError) << text;
    }
}

TEST(Config, RangesValidated) {
    for (const char* text :
         {R"({"schedule": {"beta_start": 0.5, "beta_end": 0.1}})", R"({"training": {"psi_override": -1}})",
          R"({"psi": {"k": 32}})", R"({"eval": {"threshold": 1.0}})", R"({"eval": {"ddim_steps": 101}})",
          R"({"training": {"optimizer": "rmsprop"}})", R"({"model": {"activation": "gelu"}})",
          R"({"training": {"steps": "many"}})", R"({"dataset": {"identities": [{"id": "A", "count": 1}]}})"}) {
        EXPECT_THROW(config_from_json(nlohmann::json::parse(text)), ContractError) << text;
    }
}

TEST(Config, HashIsDeterministicAndSensitive) {
    const ExperimentConfig a, b;
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    ExperimentConfig c;
    c.psi.a3 = 2.0;
    EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Report, SingleRecordHasZeroStd) {
    const auto rows = aggregate({record("h", Method::pogdiff, 0, 0.75, 0.5)});
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.std_dev, 0.0);
        EXPECT_EQ(r.n, 1u);
    }
    EXPECT_EQ(rows[0].shot == "all" ? rows[0].mean : rows[1].mean, 0.75);
}

TEST(Report, MeanAndSampleStdOverSeeds) {
    const auto rows = aggregate({record("h", Method::vanilla, 0, 0.2, 0.0), record("h", Method::vanilla, 1, 0.4, 0.5),
                                 record("h", Method::vanilla, 2, 0.9, 1.0)});
    for (const auto& r : rows) {
        if (r.shot != "all") continue;
        EXPECT_NEAR(r.mean, 0.5, 1e-15);
        // Deviations -0.3, -0.1, 0.4: sum of squares 0.26 over 2.
        EXPECT_NEAR(r.std_dev, std::sqrt(0.13), 1e-15);
    }
}

TEST(Report, MixedConfigsNeedForce) {
    const std::vector<RunRecord> recs{record("h1", Method::vanilla, 0, 1, 1), record("h2", Method::vanilla, 1, 1, 1)};
    EXPECT_THROW(aggregate(recs), ContractError);
    EXPECT_NO_THROW(aggregate(recs, true));
    EXPECT_THROW(aggregate({}), ContractError);
}

TEST(Report, WritesCsvAndTable) {
    const auto dir = scratch("report");
    emit_report({record("h", Method::vanilla, 0, 0.5, 0.0), record("h", Method::pogdiff, 0, 0.5, 1.0)}, dir);
    EXPECT_EQ(slurp(dir / "aggregate.csv").substr(0, 26), "method,shot,metric,mean,st");
    const std::string table = slurp(dir / "report.txt");
    EXPECT_NE(table.find("grecall/few"), std::string::npos);
    EXPECT_NE(table.find("1.0000 +- 0.0000"), std::string::npos);
}

TEST(Record, JsonRoundTrip) {
    RunRecord r = record("abc", Method::pogdiff, 4, 0.25, 0.5);
    r.trace_path = "x/trace.csv";
    r.wall_seconds = 1.5;
    const auto back = record_from_json(record_to_json(r));
    EXPECT_EQ(back.config_hash, r.config_hash);
    EXPECT_EQ(back.method, r.method);
    EXPECT_EQ(back.seed, r.seed);
    ASSERT_EQ(back.metrics.size(), 2u);
    EXPECT_EQ(back.metrics[1].value, 0.5);
    EXPECT_THROW(record_from_json(nlohmann::json::parse("{}")), ContractError);
}

TEST(Samples, CsvRoundTrip) {
    Rng rng(1);
    const std::vector<GeneratedSet> sets{{"A", Tensor(Shape{3, 2}, standard_normal_vector(rng, 6))},
                                         {"B", Tensor(Shape{2, 2}, standard_normal_vector(rng, 4))}};
    std::stringstream ss;
    write_samples_csv(ss, sets);
    const auto back = read_samples_csv(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].identity, "A");
    EXPECT_EQ(back[0].samples, sets[0].samples);
    EXPECT_EQ(back[1].samples, sets[1].samples);
}

TEST(Pipeline, VanillaEqualsPogdiffWithZeroPsi) {
    ExperimentConfig c = small_config();
    c.training.psi_override = 0.0;
    const auto v = run_experiment(c, Method::vanilla, 1);
    const auto p = run_experiment(c, Method::pogdiff, 1);
    ASSERT_EQ(v.metrics.size(), p.metrics.size());
    for (std::size_t i = 0; i < v.metrics.size(); ++i) {
        EXPECT_EQ(v.metrics[i].metric, p.metrics[i].metric);
        EXPECT_EQ(v.metrics[i].shot, p.metrics[i].shot);
        EXPECT_EQ(v.metrics[i].value, p.metrics[i].value);
    }
}

TEST(Pipeline, RerunReproducesEveryArtifactByte) {
    const auto c = small_config();
    const auto a = scratch("det_a"), b = scratch("det_b");
    run_experiment(c, Method::pogdiff, 2, a);
    run_experiment(c, Method::pogdiff, 2, b);
    for (const char* f : {"config.json", "dataset.csv", "index.csv", "elbo.csv", "trace.csv", "model.ckpt",
                          "samples.csv", "metrics.csv"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    auto ra = nlohmann::json::parse(slurp(a / "record.json")), rb = nlohmann::json::parse(slurp(b / "record.json"));
    ra.erase("wall_seconds");
    rb.erase("wall_seconds");
    ra.erase("trace_path");
    rb.erase("trace_path");
    EXPECT_EQ(ra, rb);
}

TEST(Pipeline, MetricsRowsCoverBothSplits) {
    const auto r = run_experiment(small_config(), Method::pogdiff, 0);
    std::set<std::string> keys;
    for (const auto& m : r.metrics) {
        keys.insert(m.metric + "/" + m.shot);
        EXPECT_EQ(m.method, "pogdiff");
        EXPECT_EQ(m.seed, 0u);
    }
    EXPECT_TRUE(keys.count("grecall/all") && keys.count("grecall/few") && keys.count("fid/all"));
    EXPECT_EQ(r.config_hash, config_hash(small_config()));
    EXPECT_EQ(r.trace.size(), 150u);
}

TEST(Pipeline, StageErrorsAreTaggedAndEarlierArtifactsKept) {
    ExperimentConfig c = small_config();
    c.training.lr = 1e12;
    c.training.optimizer = OptimizerMethod::sgd;
    const auto dir = scratch("stage");
    try {
        run_experiment(c, Method::vanilla, 0, dir);
        FAIL() << "expected a stage error";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "train");
        EXPECT_EQ(std::string(e.what()).rfind("train: ", 0), 0u);
    }
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    {
        std::ofstream(dir / "bad.json") << R"({"training": {"stepz": 3}})";
        std::ofstream(dir / "tiny.json")
            << R"({"training": {"steps": 20}, "vae": {"epochs": 20}, "eval": {"seeds": [0], "samples_per_identity": 4, "ddim_steps": 5}})";
        std::ofstream(dir / "tiny2.json")
            << R"({"training": {"steps": 21}, "vae": {"epochs": 20}, "eval": {"seeds": [0], "samples_per_identity": 4, "ddim_steps": 5}})";
    }
    const std::string d = dir.string();
    EXPECT_EQ(run_cli("verify-math"), 0);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("no-such-command"), 2);
    EXPECT_EQ(run_cli("train --method sideways"), 2);
    EXPECT_EQ(run_cli("train --config " + d + "/bad.json"), 2);
    EXPECT_EQ(run_cli("gen-data --config " + d + "/tiny.json --out " + d + "/gen"), 0);
    EXPECT_TRUE(fs::exists(dir / "gen" / "dataset.csv"));

    const std::string run = " --config " + d + "/tiny.json --seed 0 --out " + d + "/run";
    EXPECT_EQ(run_cli("train --method pogdiff" + run), 0);
    EXPECT_EQ(run_cli("sample" + run), 0);
    EXPECT_EQ(run_cli("eval --method pogdiff" + run), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "metrics.csv"));

    EXPECT_EQ(run_cli("ab-run --config " + d + "/tiny.json --out " + d + "/ab1"), 0);
    EXPECT_EQ(run_cli("ab-run --config " + d + "/tiny2.json --out " + d + "/ab2"), 0);
    EXPECT_EQ(run_cli("report --out " + d + "/ab1"), 0);
    const std::string mixed = " " + d + "/ab1/vanilla_seed0/record.json " + d + "/ab2/vanilla_seed0/record.json";
    EXPECT_EQ(run_cli("report --out " + d + "/mixed" + mixed), 2);
    EXPECT_EQ(run_cli("report --force --out " + d + "/mixed" + mixed), 0);
}
