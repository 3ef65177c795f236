#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spuriouslab/csv.hpp"
#include "spuriouslab/error.hpp"
#include "spuriouslab/experiment.hpp"

using namespace splab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig from_text(const std::string& text) {
    return ExperimentConfig::from_config(ConfigFile::parse_string(text, "test"));
}

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& name) : path("/tmp/splab_exp_test_" + name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kTinyRun =
    "[task]\n"
    "spurious = \"parity\"\n"
    "spurious_degree = 2\n"
    "core = \"parity\"\n"
    "core_degree = 2\n"
    "noise = 1\n"
    "lambda = 0.9\n"
    "[train]\n"
    "width = 4\n"
    "epochs = 4\n"
    "samples_per_epoch = 100\n"
    "batch_size = 50\n"
    "seed = 3\n"
    "[metrics]\n"
    "cadence = 2\n"
    "mc_samples = 2000\n"
    "snapshot_every = 2\n";

}  // namespace

TEST_CASE("csv numbers use 12 significant digits") {
    CHECK(csv_num(1.0 / 3.0) == "0.333333333333");
    CHECK(csv_num(2.0) == "2");
    CHECK(csv_num(-123456789.123456) == "-123456789.123");
    CHECK(csv_num(1e-15) == "1e-15");
}

TEST_CASE("csv round trip and column lookup") {
    TempDir tmp("csv");
    const std::string path = tmp.path + "/t.csv";
    write_csv(path, {"a", "b"}, {{"1", "x"}, {"2", ""}});
    CsvTable t = read_csv(path);
    CHECK(t.header == std::vector<std::string>{"a", "b"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1] == std::vector<std::string>{"2", ""});
    CHECK(t.col("b") == 1);
    CHECK(t.col("c") == -1);
    CHECK_THROWS_AS(t.require_col("c"), ConfigError);
    CHECK_THROWS_AS(read_csv(tmp.path + "/absent.csv"), IoError);
}

TEST_CASE("experiment config fills defaults") {
    ExperimentConfig cfg = from_text("[task]\ncore = \"parity\"\ncore_degree = 2\n");
    CHECK(cfg.task.s == 0);
    CHECK(cfg.task.c == 2);
    CHECK(cfg.task.u == 0);
    CHECK(cfg.task.lambda == 0.5);
    CHECK(cfg.online);
    CHECK(cfg.train.learning_rate == 0.0001);
    CHECK(cfg.train.momentum == 0.5);
    CHECK(cfg.train.batch_size == 64);
    CHECK(cfg.train.samples_per_epoch == 10000);
    CHECK(cfg.train.width == 100);
    CHECK(cfg.train.depth == 2);
    CHECK(cfg.train.weight_decay == 0.0);
    CHECK(cfg.train.init.kind == InitKind::BooleanSymmetric);
    CHECK(cfg.metrics.cadence == 1);
    CHECK(!cfg.probes.enabled);
    CHECK(!cfg.stop_core_corr);
    CHECK(cfg.out_dir == "out");
}

TEST_CASE("feature blocks take degree or length") {
    ExperimentConfig cfg = from_text(
        "[task]\n"
        "spurious = \"majority\"\n"
        "spurious_length = 3\n"
        "core = \"staircase\"\n"
        "core_degree = 4\n"
        "noise = 2\n"
        "lambda = 0.8\n");
    CHECK(cfg.task.s == 3);
    CHECK(cfg.task.f_s.kind == FeatureKind::Majority);
    CHECK(cfg.task.f_s.degree == 3);
    CHECK(cfg.task.f_c.kind == FeatureKind::Staircase);
    CHECK(cfg.task.f_c.offset == 3);
    CHECK(cfg.task.n() == 9);
}

TEST_CASE("experiment config rejects bad input") {
    CHECK_THROWS_AS(from_text("[task]\ncore = \"parity\"\n"), ConfigError);  // no degree
    CHECK_THROWS_AS(from_text("[task]\ncore = \"parity\"\ncore_degree = 2\ntypo = 1\n"),
                    ConfigError);
    CHECK_THROWS_AS(
        from_text("[task]\ncore = \"parity\"\ncore_degree = 2\nspurious_degree = 2\n"),
        ConfigError);  // spurious keys without a spurious kind
    CHECK_THROWS_AS(from_text("[task]\ncore = \"parity\"\ncore_degree = 2\n"
                              "[train]\nmode = \"weird\"\n"),
                    ConfigError);
    CHECK_THROWS_AS(from_text("[task]\ncore = \"parity\"\ncore_degree = 2\n"
                              "[train]\nmode = \"finite\"\n"),
                    ConfigError);  // finite needs dataset_size
    CHECK_THROWS_AS(from_text("[task]\ncore = \"parity\"\ncore_degree = 2\n"
                              "[train]\nmask_core = true\nmode = \"finite\"\ndataset_size = 10\n"),
                    ConfigError);
    CHECK_THROWS_AS(from_text("[task]\ncore = \"parity\"\ncore_degree = 2\n"
                              "[sweep]\nlambdas = [0.3]\n"),
                    ConfigError);
}

TEST_CASE("experiment config text round trips") {
    ExperimentConfig cfg = from_text(
        "[task]\n"
        "spurious = \"parity\"\n"
        "spurious_degree = 2\n"
        "core = \"parity\"\n"
        "core_degree = 6\n"
        "noise = 5\n"
        "lambda = 0.9\n"
        "[train]\n"
        "mode = \"finite\"\n"
        "dataset_size = 1234\n"
        "data_seed = 9\n"
        "learning_rate = 0.001\n"
        "seed = 42\n"
        "width = 10\n"
        "[metrics]\n"
        "cadence = 5\n"
        "stop_core_corr = 0.95\n"
        "[probes]\n"
        "enabled = true\n"
        "cadence = 10\n"
        "reg = \"l1\"\n"
        "strength = 0.25\n"
        "[sweep]\n"
        "lambdas = [0.6, 0.9]\n"
        "spurious_degrees = [2, 4]\n"
        "seeds = [1, 2, 3]\n"
        "[output]\n"
        "dir = \"/tmp/splab_roundtrip\"\n");
    ExperimentConfig back = from_text(cfg.to_text());
    CHECK(back.task.s == cfg.task.s);
    CHECK(back.task.c == cfg.task.c);
    CHECK(back.task.u == cfg.task.u);
    CHECK(back.task.lambda == cfg.task.lambda);
    CHECK(back.task.f_s.kind == cfg.task.f_s.kind);
    CHECK(back.task.f_c.degree == cfg.task.f_c.degree);
    CHECK(back.online == cfg.online);
    CHECK(back.dataset_size == cfg.dataset_size);
    CHECK(back.data_seed == cfg.data_seed);
    CHECK(back.train.learning_rate == cfg.train.learning_rate);
    CHECK(back.train.seed == cfg.train.seed);
    CHECK(back.train.width == cfg.train.width);
    CHECK(back.metrics.cadence == cfg.metrics.cadence);
    REQUIRE(back.stop_core_corr);
    CHECK(*back.stop_core_corr == *cfg.stop_core_corr);
    CHECK(back.probes.enabled == cfg.probes.enabled);
    CHECK(back.probes.reg == cfg.probes.reg);
    CHECK(back.probes.strength == cfg.probes.strength);
    CHECK(back.sweep.lambdas == cfg.sweep.lambdas);
    CHECK(back.sweep.spurious_degrees == cfg.sweep.spurious_degrees);
    CHECK(back.sweep.seeds == cfg.sweep.seeds);
    CHECK(back.out_dir == cfg.out_dir);
}

TEST_CASE("metrics csv round trips optional columns") {
    TempDir tmp("metrics");
    std::vector<EpochRecord> records(2);
    records[0].epoch = 1;
    records[0].train_loss = 1.25;
    records[0].core_corr = 0.5;
    records[0].spurious_corr = -0.25;
    records[1].epoch = 2;
    records[1].train_loss = 1.0;
    records[1].core_corr = 0.75;
    records[1].spurious_corr = 0.125;
    records[1].decoded_core = 0.875;
    records[1].spurious_subnet_weight = 2.5;

    const std::string path = tmp.path + "/metrics.csv";
    write_metrics_csv(path, records);
    std::vector<EpochRecord> back = read_metrics_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].epoch == 1);
    CHECK(back[0].train_loss == 1.25);
    CHECK(!back[0].decoded_core);
    CHECK(!back[0].spurious_subnet_weight);
    CHECK(back[1].core_corr == 0.75);
    REQUIRE(back[1].decoded_core);
    CHECK(*back[1].decoded_core == 0.875);
    REQUIRE(back[1].spurious_subnet_weight);
    CHECK(*back[1].spurious_subnet_weight == 2.5);
    CHECK(!back[1].decoded_spurious);
}

TEST_CASE("run experiment writes metrics, snapshots, and a manifest") {
    TempDir tmp("run");
    ExperimentConfig cfg = from_text(kTinyRun);
    cfg.out_dir = tmp.path;
    RunResult res = run_experiment(cfg, tmp.path);

    REQUIRE(res.records.size() == 2);
    CHECK(res.records[0].epoch == 2);
    CHECK(res.records[1].epoch == 4);
    CHECK(fs::exists(tmp.path + "/metrics.csv"));
    CHECK(fs::exists(tmp.path + "/model_epoch_2.snapshot"));
    CHECK(fs::exists(tmp.path + "/model_epoch_4.snapshot"));
    CHECK(res.final_snapshot == tmp.path + "/model_epoch_4.snapshot");

    std::vector<EpochRecord> back = read_metrics_csv(tmp.path + "/metrics.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].epoch == 4);
    CHECK(back[1].train_loss == doctest::Approx(res.records[1].train_loss).epsilon(1e-9));

    std::ifstream in(tmp.path + "/manifest.json");
    REQUIRE(in.good());
    nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j["format_version"] == 1);
    CHECK(j["kind"] == "run");
    CHECK(j["headline"]["n"] == 5);
    CHECK(j["headline"]["epochs"] == 4);

    // The stored config text reproduces the run configuration.
    ExperimentConfig again = ExperimentConfig::from_file(tmp.path + "/manifest.json");
    CHECK(again.task.n() == cfg.task.n());
    CHECK(again.train.seed == cfg.train.seed);
    CHECK(again.train.epochs == cfg.train.epochs);
}

TEST_CASE("config loader rejects malformed manifests") {
    TempDir tmp("manifest");
    const std::string bad_json = tmp.path + "/bad.json";
    {
        std::ofstream out(bad_json);
        out << "{ not json";
    }
    CHECK_THROWS_AS(ExperimentConfig::from_file(bad_json), ConfigError);
    const std::string no_text = tmp.path + "/no_text.json";
    {
        std::ofstream out(no_text);
        out << "{\"kind\": \"run\"}";
    }
    CHECK_THROWS_AS(ExperimentConfig::from_file(no_text), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_file(tmp.path + "/absent.toml"), ConfigError);
}

TEST_CASE("sweep runs every cell and records unbuildable ones as failed") {
    TempDir tmp("sweep");
    ExperimentConfig cfg = from_text(kTinyRun);
    cfg.out_dir = tmp.path;
    cfg.sweep.lambdas = {0.6, 0.9};
    // Degree 8 does not fit in 5 bits alongside the core block: those cells
    // must fail without taking down the rest.
    cfg.sweep.spurious_degrees = {2, 8};
    cfg.sweep.seeds = {1, 2};
    run_sweep(cfg);

    CsvTable t = read_csv(tmp.path + "/sweep.csv");
    int c_row = t.require_col("row");
    int c_status = t.require_col("status");
    int c_deg = t.require_col("spurious_degree");
    int c_err = t.require_col("error");
    int runs_ok = 0, runs_failed = 0, summaries = 0;
    for (const auto& row : t.rows) {
        if (row[c_row] == "summary") {
            ++summaries;
            continue;
        }
        REQUIRE(row[c_row] == "run");
        if (row[c_status] == "ok") {
            ++runs_ok;
            CHECK(row[c_deg] == "2");
        } else {
            ++runs_failed;
            CHECK(row[c_deg] == "8");
            CHECK(!row[c_err].empty());
        }
    }
    CHECK(runs_ok == 4);
    CHECK(runs_failed == 4);
    CHECK(summaries == 4);
    CHECK(fs::exists(tmp.path + "/runs/lam0.9_deg2_seed1/metrics.csv"));
    CHECK(fs::exists(tmp.path + "/manifest.json"));

    CHECK_THROWS_AS(run_sweep(from_text(kTinyRun)), ConfigError);  // no sweep axes
}

TEST_CASE("plot data extraction") {
    TempDir tmp("plot");
    ExperimentConfig cfg = from_text(kTinyRun);
    cfg.out_dir = tmp.path + "/run";
    run_experiment(cfg, cfg.out_dir);

    const std::string dyn = emit_plotdata(cfg.out_dir, PlotMode::Dynamics);
    CsvTable t = read_csv(dyn);
    CHECK(t.header == std::vector<std::string>{"series", "x", "y", "ci_low", "ci_high"});
    bool saw_core = false, saw_spur = false;
    for (const auto& row : t.rows) {
        if (row[0] == "core_corr") saw_core = true;
        if (row[0] == "spurious_corr") saw_spur = true;
    }
    CHECK(saw_core);
    CHECK(saw_spur);

    // Margin curves need no input data.
    const std::string margins = emit_plotdata(tmp.path + "/margins", PlotMode::Margins);
    CHECK(read_csv(margins).rows.size() > 0);

    // A sweep with no reached thresholds has nothing to plot.
    fs::create_directories(tmp.path + "/sweep");
    write_csv(tmp.path + "/sweep/sweep.csv",
              {"row", "lambda", "spurious_degree", "median_epochs", "iqr_low_epochs",
               "iqr_high_epochs"},
              {{"summary", "0.9", "2", "", "", ""}});
    CHECK_THROWS_AS(emit_plotdata(tmp.path + "/sweep", PlotMode::Complexity), ConfigError);
    write_csv(tmp.path + "/sweep/sweep.csv",
              {"row", "lambda", "spurious_degree", "median_epochs", "iqr_low_epochs",
               "iqr_high_epochs"},
              {{"summary", "0.9", "2", "120", "100", "150"}});
    CsvTable cx = read_csv(emit_plotdata(tmp.path + "/sweep", PlotMode::Complexity));
    REQUIRE(cx.rows.size() == 1);
    CHECK(cx.rows[0][0] == "lambda=0.9");
    CHECK(cx.rows[0][2] == "120");

    CHECK_THROWS_AS(emit_plotdata(tmp.path + "/nowhere", PlotMode::Dynamics), IoError);
    CHECK_THROWS_AS(plot_mode_from_string("pie"), ConfigError);
    CHECK(plot_mode_from_string("dynamics") == PlotMode::Dynamics);
}
