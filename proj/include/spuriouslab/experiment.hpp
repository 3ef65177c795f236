#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spuriouslab/config.hpp"
#include "spuriouslab/dataset.hpp"
#include "spuriouslab/train.hpp"

namespace splab {

struct MetricsSettings {
    int cadence = 1;                 // record metrics every k epochs
    std::int64_t mc_samples = 20000;  // correlation panel size (exact when 2^n small)
    int snapshot_every = 0;          // save model_epoch_<k>.snapshot every k epochs; 0 = final only
};

// Grid axes; an empty axis keeps the base config's value.
struct SweepAxes {
    std::vector<double> lambdas;
    std::vector<int> spurious_degrees;  // 0 removes the spurious block (freed bits become noise)
    std::vector<std::int64_t> seeds;

    bool configured() const {
        return !lambdas.empty() || !spurious_degrees.empty() || !seeds.empty();
    }
};

// One experiment = task + trainer + measurement plan, loadable from a config
// file (see docs/config_format.md) or from a previously written manifest.json.
struct ExperimentConfig {
    SpuriousTaskConfig task;
    TrainConfig train;
    bool online = true;               // fresh samples per batch vs fixed dataset
    std::int64_t dataset_size = 0;    // finite mode only
    std::uint64_t data_seed = 1;      // finite mode dataset stream
    bool mask_core = false;           // zero the core block after labeling (online only)
    std::optional<double> stop_core_corr;
    MetricsSettings metrics;
    ProbeSettings probes;
    SweepAxes sweep;
    std::string out_dir = "out";

    void validate() const;
    static ExperimentConfig from_config(const ConfigFile& file);
    // Accepts a config file or a manifest.json produced by an earlier run.
    static ExperimentConfig from_file(const std::string& path);
    // Canonical serialization; parsing it back reproduces this config exactly.
    std::string to_text() const;
};

struct RunResult {
    std::vector<EpochRecord> records;
    MlpModel model;
    std::string dir;
    std::string final_snapshot;
};

// Trains one model and writes metrics.csv, model snapshots, and manifest.json
// under dir. Deterministic given the config.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& dir);

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& records);
std::vector<EpochRecord> read_metrics_csv(const std::string& path);

// Runs the lambdas x spurious_degrees x seeds grid, one subdirectory per run
// under out_dir/runs/, and writes out_dir/sweep.csv with one row per run plus
// median/IQR summary rows per grid cell (epochs to core correlation 0.95).
// Worker count comes from SPURIOUS_LAB_THREADS (default 1); a failed run is
// recorded in its row and the sweep continues.
void run_sweep(const ExperimentConfig& cfg);

enum class PlotMode { Dynamics, Complexity, Retention, Margins, Jaccard };
PlotMode plot_mode_from_string(const std::string& name);
std::string to_string(PlotMode mode);

// Reshapes outputs in dir into a tidy series,x,y,ci_low,ci_high CSV:
//   dynamics    metrics.csv       -> correlation curves per series
//   complexity  sweep.csv         -> median epochs-to-0.95 vs spurious degree
//   retention   sweep run dirs    -> decoded spurious correlation vs epoch
//   margins     (analytic)        -> optimal margin and gradient ratio vs gamma_c
//   jaccard     jaccard.csv       -> group-recovery overlap vs epoch
// Returns the written file path (plot_<mode>.csv in dir).
std::string emit_plotdata(const std::string& dir, PlotMode mode);

}  // namespace splab
