#include "spuriouslab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "spuriouslab/csv.hpp"
#include "spuriouslab/error.hpp"
#include "spuriouslab/theory.hpp"

namespace splab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_axis(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

struct FeatureKeys {
    std::string kind, degree, length;
};

// Reads kind/degree/length for one feature block; degree and length default
// to each other so parity tasks give a degree and majority tasks a length.
FeatureSpec read_feature(const ConfigFile& cfg, const std::string& section,
                         const FeatureKeys& keys, FeatureKind kind, int offset) {
    std::int64_t degree = cfg.get_int_or(section, keys.degree, -1);
    std::int64_t length = cfg.get_int_or(section, keys.length, -1);
    if (degree < 0 && length < 0)
        throw ConfigError("config: '" + section + "." + keys.degree + "' or '" + section + "." +
                          keys.length + "' is required");
    if (degree < 0) degree = length;
    if (length < 0) length = degree;
    FeatureSpec spec;
    spec.kind = kind;
    spec.degree = static_cast<int>(degree);
    spec.offset = offset;
    spec.length = static_cast<int>(length);
    return spec;
}

double parse_field_num(const CsvTable& t, const std::vector<std::string>& row, int col) {
    const std::string& s = row[static_cast<std::size_t>(col)];
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw ConfigError(t.path + ": bad numeric field '" + s + "'");
    return v;
}

}  // namespace

void ExperimentConfig::validate() const {
    task.validate();
    train.validate();
    if (metrics.cadence < 1) throw ConfigError("metrics cadence must be >= 1");
    if (metrics.mc_samples < 2) throw ConfigError("metrics mc_samples must be >= 2");
    if (metrics.snapshot_every < 0) throw ConfigError("snapshot_every must be >= 0");
    if (stop_core_corr && (*stop_core_corr <= -1.0 || *stop_core_corr > 1.0))
        throw ConfigError("stop_core_corr must lie in (-1, 1]");
    if (probes.enabled) {
        if (probes.cadence < 1) throw ConfigError("probe cadence must be >= 1");
        if (probes.n_fit < 2 || probes.n_eval < 2)
            throw ConfigError("probe sample counts must be >= 2");
        if (probes.strength < 0.0) throw ConfigError("probe strength must be >= 0");
    }
    if (!online && dataset_size < 1)
        throw ConfigError("finite mode requires train.dataset_size >= 1");
    if (mask_core && !online) throw ConfigError("mask_core requires online mode");
    for (double lam : sweep.lambdas)
        if (lam < 0.5 || lam > 1.0) throw ConfigError("sweep lambdas must lie in [0.5, 1]");
    for (int d : sweep.spurious_degrees)
        if (d < 0) throw ConfigError("sweep spurious degrees must be >= 0");
    if (out_dir.empty()) throw ConfigError("output dir must be nonempty");
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& cfg) {
    cfg.require_known_keys("task", {"spurious", "spurious_degree", "spurious_length", "core",
                                    "core_degree", "core_length", "noise", "lambda"});
    cfg.require_known_keys("train", {"mode", "learning_rate", "momentum", "batch_size", "epochs",
                                     "samples_per_epoch", "weight_decay", "seed", "width", "depth",
                                     "init", "bias_grid", "mask_core", "dataset_size", "data_seed"});
    cfg.require_known_keys("metrics",
                           {"cadence", "mc_samples", "snapshot_every", "stop_core_corr"});
    cfg.require_known_keys("probes", {"enabled", "cadence", "n_fit", "n_eval", "reg", "strength"});
    cfg.require_known_keys("sweep", {"lambdas", "spurious_degrees", "seeds"});
    cfg.require_known_keys("output", {"dir"});

    ExperimentConfig out;

    std::string spur = cfg.get_string_or("task", "spurious", "none");
    std::string core = cfg.get_string("task", "core");
    FeatureSpec f_s;
    int s = 0;
    if (spur != "none") {
        f_s = read_feature(cfg, "task", {"spurious", "spurious_degree", "spurious_length"},
                           feature_kind_from_string(spur), 0);
        s = f_s.length;
    } else if (cfg.has("task", "spurious_degree") || cfg.has("task", "spurious_length")) {
        throw ConfigError("config: task.spurious_degree/length given but task.spurious is none");
    }
    FeatureSpec f_c = read_feature(cfg, "task", {"core", "core_degree", "core_length"},
                                   feature_kind_from_string(core), s);
    out.task.s = s;
    out.task.c = f_c.length;
    out.task.u = static_cast<int>(cfg.get_int_or("task", "noise", 0));
    out.task.lambda = cfg.get_number_or("task", "lambda", 0.5);
    out.task.f_s = f_s;
    out.task.f_c = f_c;

    TrainConfig dflt;
    std::string mode = cfg.get_string_or("train", "mode", "online");
    if (mode == "online") {
        out.online = true;
    } else if (mode == "finite") {
        out.online = false;
        out.dataset_size = cfg.get_int("train", "dataset_size");
        out.data_seed = static_cast<std::uint64_t>(cfg.get_int_or("train", "data_seed", 1));
    } else {
        throw ConfigError("config: train.mode must be online or finite");
    }
    out.train.learning_rate = cfg.get_number_or("train", "learning_rate", dflt.learning_rate);
    out.train.momentum = cfg.get_number_or("train", "momentum", dflt.momentum);
    out.train.batch_size = static_cast<int>(cfg.get_int_or("train", "batch_size", dflt.batch_size));
    out.train.epochs = static_cast<int>(cfg.get_int_or("train", "epochs", dflt.epochs));
    out.train.samples_per_epoch =
        static_cast<int>(cfg.get_int_or("train", "samples_per_epoch", dflt.samples_per_epoch));
    out.train.weight_decay = cfg.get_number_or("train", "weight_decay", dflt.weight_decay);
    out.train.seed = static_cast<std::uint64_t>(cfg.get_int_or("train", "seed", 0));
    out.train.width = static_cast<int>(cfg.get_int_or("train", "width", dflt.width));
    out.train.depth = static_cast<int>(cfg.get_int_or("train", "depth", dflt.depth));
    out.train.init.kind =
        init_kind_from_string(cfg.get_string_or("train", "init", "boolean_symmetric"));
    out.train.init.bias_grid =
        static_cast<int>(cfg.get_int_or("train", "bias_grid", dflt.init.bias_grid));
    out.mask_core = cfg.get_bool_or("train", "mask_core", false);

    out.metrics.cadence = static_cast<int>(cfg.get_int_or("metrics", "cadence", 1));
    out.metrics.mc_samples = cfg.get_int_or("metrics", "mc_samples", 20000);
    out.metrics.snapshot_every = static_cast<int>(cfg.get_int_or("metrics", "snapshot_every", 0));
    if (cfg.has("metrics", "stop_core_corr"))
        out.stop_core_corr = cfg.get_number("metrics", "stop_core_corr");

    out.probes.enabled = cfg.get_bool_or("probes", "enabled", false);
    out.probes.cadence = static_cast<int>(cfg.get_int_or("probes", "cadence", 1));
    out.probes.n_fit = static_cast<int>(cfg.get_int_or("probes", "n_fit", 2000));
    out.probes.n_eval = static_cast<int>(cfg.get_int_or("probes", "n_eval", 2000));
    out.probes.reg = reg_kind_from_string(cfg.get_string_or("probes", "reg", "l2"));
    out.probes.strength = cfg.get_number_or("probes", "strength", 1.0);

    if (cfg.has("sweep", "lambdas")) out.sweep.lambdas = cfg.get_number_list("sweep", "lambdas");
    if (cfg.has("sweep", "spurious_degrees")) {
        for (std::int64_t d : cfg.get_int_list("sweep", "spurious_degrees"))
            out.sweep.spurious_degrees.push_back(static_cast<int>(d));
    }
    if (cfg.has("sweep", "seeds")) out.sweep.seeds = cfg.get_int_list("sweep", "seeds");

    out.out_dir = cfg.get_string_or("output", "dir", "out");

    out.validate();
    return out;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError(path + ": invalid manifest: " + e.what());
        }
        if (!j.contains("config_text") || !j["config_text"].is_string())
            throw ConfigError(path + ": manifest has no config_text field");
        return from_config(ConfigFile::parse_string(j["config_text"].get<std::string>(), path));
    }
    return from_config(ConfigFile::parse_string(text, path));
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream out;
    out << "[task]\n";
    if (task.s > 0) {
        out << "spurious = \"" << to_string(task.f_s.kind) << "\"\n";
        out << "spurious_degree = " << task.f_s.degree << "\n";
        out << "spurious_length = " << task.f_s.length << "\n";
    } else {
        out << "spurious = \"none\"\n";
    }
    out << "core = \"" << to_string(task.f_c.kind) << "\"\n";
    out << "core_degree = " << task.f_c.degree << "\n";
    out << "core_length = " << task.f_c.length << "\n";
    out << "noise = " << task.u << "\n";
    out << "lambda = " << fmt_double(task.lambda) << "\n";
    out << "\n[train]\n";
    out << "mode = \"" << (online ? "online" : "finite") << "\"\n";
    if (!online) {
        out << "dataset_size = " << dataset_size << "\n";
        out << "data_seed = " << data_seed << "\n";
    }
    out << "learning_rate = " << fmt_double(train.learning_rate) << "\n";
    out << "momentum = " << fmt_double(train.momentum) << "\n";
    out << "batch_size = " << train.batch_size << "\n";
    out << "epochs = " << train.epochs << "\n";
    out << "samples_per_epoch = " << train.samples_per_epoch << "\n";
    out << "weight_decay = " << fmt_double(train.weight_decay) << "\n";
    out << "seed = " << train.seed << "\n";
    out << "width = " << train.width << "\n";
    out << "depth = " << train.depth << "\n";
    out << "init = \"" << to_string(train.init.kind) << "\"\n";
    out << "bias_grid = " << train.init.bias_grid << "\n";
    out << "mask_core = " << (mask_core ? "true" : "false") << "\n";
    out << "\n[metrics]\n";
    out << "cadence = " << metrics.cadence << "\n";
    out << "mc_samples = " << metrics.mc_samples << "\n";
    out << "snapshot_every = " << metrics.snapshot_every << "\n";
    if (stop_core_corr) out << "stop_core_corr = " << fmt_double(*stop_core_corr) << "\n";
    out << "\n[probes]\n";
    out << "enabled = " << (probes.enabled ? "true" : "false") << "\n";
    out << "cadence = " << probes.cadence << "\n";
    out << "n_fit = " << probes.n_fit << "\n";
    out << "n_eval = " << probes.n_eval << "\n";
    out << "reg = \"" << to_string(probes.reg) << "\"\n";
    out << "strength = " << fmt_double(probes.strength) << "\n";
    if (sweep.configured()) {
        out << "\n[sweep]\n";
        auto write_list = [&out](const char* key, auto format, const auto& values) {
            if (values.empty()) return;
            out << key << " = [";
            for (std::size_t i = 0; i < values.size(); ++i) {
                if (i) out << ", ";
                out << format(values[i]);
            }
            out << "]\n";
        };
        write_list("lambdas", [](double v) { return fmt_double(v); }, sweep.lambdas);
        write_list("spurious_degrees", [](int v) { return std::to_string(v); },
                   sweep.spurious_degrees);
        write_list("seeds", [](std::int64_t v) { return std::to_string(v); }, sweep.seeds);
    }
    out << "\n[output]\n";
    out << "dir = \"" << out_dir << "\"\n";
    return out.str();
}

namespace {

void write_manifest(const std::string& path, const ExperimentConfig& cfg, const std::string& kind,
                    const std::vector<std::string>& outputs) {
    json j;
    j["format_version"] = 1;
    j["generator"] = "spurious-lab";
    j["kind"] = kind;
    j["config_text"] = cfg.to_text();
    j["headline"] = {{"n", cfg.task.n()},     {"s", cfg.task.s},
                     {"c", cfg.task.c},       {"u", cfg.task.u},
                     {"lambda", cfg.task.lambda}, {"seed", cfg.train.seed},
                     {"epochs", cfg.train.epochs}, {"width", cfg.train.width}};
    j["outputs"] = outputs;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& records) {
    std::vector<std::string> header = {"epoch",
                                       "train_loss",
                                       "core_corr",
                                       "spurious_corr",
                                       "decoded_core",
                                       "decoded_spurious",
                                       "spurious_subnet_weight",
                                       "core_subnet_weight"};
    std::vector<std::vector<std::string>> rows;
    rows.reserve(records.size());
    auto opt = [](const std::optional<double>& v) { return v ? csv_num(*v) : std::string(); };
    for (const EpochRecord& r : records) {
        rows.push_back({std::to_string(r.epoch), csv_num(r.train_loss), csv_num(r.core_corr),
                        csv_num(r.spurious_corr), opt(r.decoded_core), opt(r.decoded_spurious),
                        opt(r.spurious_subnet_weight), opt(r.core_subnet_weight)});
    }
    write_csv(path, header, rows);
}

std::vector<EpochRecord> read_metrics_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    int c_epoch = t.require_col("epoch");
    int c_loss = t.require_col("train_loss");
    int c_core = t.require_col("core_corr");
    int c_spur = t.require_col("spurious_corr");
    int c_dcore = t.col("decoded_core");
    int c_dspur = t.col("decoded_spurious");
    int c_sw = t.col("spurious_subnet_weight");
    int c_cw = t.col("core_subnet_weight");
    auto opt_field = [&](const std::vector<std::string>& row, int col) -> std::optional<double> {
        if (col < 0 || row[static_cast<std::size_t>(col)].empty()) return std::nullopt;
        return std::strtod(row[static_cast<std::size_t>(col)].c_str(), nullptr);
    };
    std::vector<EpochRecord> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        EpochRecord r;
        r.epoch = static_cast<int>(parse_field_num(t, row, c_epoch));
        r.train_loss = parse_field_num(t, row, c_loss);
        r.core_corr = parse_field_num(t, row, c_core);
        r.spurious_corr = parse_field_num(t, row, c_spur);
        r.decoded_core = opt_field(row, c_dcore);
        r.decoded_spurious = opt_field(row, c_dspur);
        r.spurious_subnet_weight = opt_field(row, c_sw);
        r.core_subnet_weight = opt_field(row, c_cw);
        out.push_back(r);
    }
    return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& dir) {
    cfg.validate();
    fs::create_directories(dir);

    RunResult res;
    res.dir = dir;
    Rng init_rng = derive_rng(cfg.train.seed, "init", {});
    res.model =
        init_model(cfg.train.width, cfg.task.n(), cfg.train.init, init_rng, cfg.train.depth);

    std::unique_ptr<DataSource> source;
    if (cfg.online) {
        source = std::make_unique<OnlineSource>(cfg.task, cfg.train.seed,
                                                cfg.train.samples_per_epoch, cfg.mask_core);
    } else {
        FiniteDataset data = make_finite_dataset(cfg.task, cfg.dataset_size, cfg.data_seed);
        source = std::make_unique<FiniteSource>(data, cfg.train.seed);
    }

    MetricEvaluator evaluator(cfg.task, cfg.metrics.mc_samples,
                              derive_rng(cfg.train.seed, "eval-panel", {}).next_u64());

    TrainRunOptions opts;
    opts.evaluator = &evaluator;
    opts.metric_cadence = cfg.metrics.cadence;
    opts.probes = cfg.probes;
    opts.stop_core_corr = cfg.stop_core_corr;
    const int snap = cfg.metrics.snapshot_every;
    opts.on_epoch = [&](const EpochRecord& rec, const MlpModel& m) {
        if (snap > 0 && rec.epoch % snap == 0)
            save_snapshot(m, dir + "/model_epoch_" + std::to_string(rec.epoch) + ".snapshot");
        return true;
    };

    res.records = sgd_train(res.model, cfg.train, *source, cfg.task, opts);

    const int last = res.records.empty() ? 0 : res.records.back().epoch;
    std::string snap_name = "model_epoch_" + std::to_string(last) + ".snapshot";
    res.final_snapshot = dir + "/" + snap_name;
    save_snapshot(res.model, res.final_snapshot);
    write_metrics_csv(dir + "/metrics.csv", res.records);
    write_manifest(dir + "/manifest.json", cfg, "run", {"metrics.csv", snap_name});
    return res;
}

namespace {

// Rebuilds the task with spurious degree d at fixed total dimension: the
// spurious block becomes length d (0 removes it) and freed bits join the
// noise block.
SpuriousTaskConfig retarget_degree(const SpuriousTaskConfig& base, int d) {
    SpuriousTaskConfig out = base;
    const int n = base.n();
    if (d == 0) {
        out.s = 0;
        out.u = n - base.c;
        out.f_s = FeatureSpec{};
    } else {
        if (n - base.c - d < 0)
            throw ConfigError("sweep spurious degree " + std::to_string(d) +
                              " exceeds available bits");
        FeatureKind kind = base.s > 0 ? base.f_s.kind : FeatureKind::Parity;
        out.s = d;
        out.u = n - base.c - d;
        out.f_s = FeatureSpec{kind, d, 0, d};
    }
    out.f_c.offset = out.s;
    out.validate();
    return out;
}

struct SweepRun {
    double lambda = 0.5;
    int degree = -1;  // -1: degree axis not configured, base task kept
    std::int64_t seed = 0;
    ExperimentConfig cfg;
    std::string name;
    std::string dir;

    bool buildable = false;
    bool ok = false;
    std::string error;
    std::optional<int> epochs95;
    int final_epoch = 0;
    double final_core = 0.0;
    double final_spur = 0.0;
};

// R-7 linear interpolation percentile on a sorted vector.
double percentile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return std::nan("");
    if (sorted.size() == 1) return sorted[0];
    double h = p * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::string sanitize_csv(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

int sweep_thread_count(std::size_t n_runs) {
    int threads = 1;
    if (const char* env = std::getenv("SPURIOUS_LAB_THREADS")) {
        threads = std::atoi(env);
        if (threads < 1) threads = 1;
        if (threads > 64) threads = 64;
    }
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n_runs));
}

}  // namespace

void run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!cfg.sweep.configured())
        throw ConfigError("sweep requires a [sweep] section with at least one axis");
    fs::create_directories(cfg.out_dir + "/runs");

    std::vector<double> lambdas =
        cfg.sweep.lambdas.empty() ? std::vector<double>{cfg.task.lambda} : cfg.sweep.lambdas;
    const bool has_degree_axis = !cfg.sweep.spurious_degrees.empty();
    std::vector<int> degrees =
        has_degree_axis ? cfg.sweep.spurious_degrees : std::vector<int>{-1};
    std::vector<std::int64_t> seeds =
        cfg.sweep.seeds.empty()
            ? std::vector<std::int64_t>{static_cast<std::int64_t>(cfg.train.seed)}
            : cfg.sweep.seeds;

    std::vector<SweepRun> runs;
    for (double lam : lambdas) {
        for (int deg : degrees) {
            for (std::int64_t seed : seeds) {
                SweepRun run;
                run.lambda = lam;
                run.degree = deg;
                run.seed = seed;
                std::string degname = deg >= 0 ? std::to_string(deg) : std::string("base");
                run.name = "lam" + std::string(fmt_axis(lam)) + "_deg" + degname + "_seed" +
                           std::to_string(seed);
                run.dir = cfg.out_dir + "/runs/" + run.name;
                // A cell whose config cannot be built becomes a failed row
                // instead of aborting the rest of the sweep.
                try {
                    run.cfg = cfg;
                    run.cfg.sweep = SweepAxes{};
                    if (deg >= 0) run.cfg.task = retarget_degree(cfg.task, deg);
                    run.cfg.task.lambda = lam;
                    run.cfg.train.seed = static_cast<std::uint64_t>(seed);
                    run.cfg.out_dir = run.dir;
                    run.cfg.validate();
                    run.buildable = true;
                } catch (const std::exception& e) {
                    run.buildable = false;
                    run.error = e.what();
                }
                runs.push_back(std::move(run));
            }
        }
    }

    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;
    auto worker = [&runs, &next, &io_mutex]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= runs.size()) break;
            SweepRun& run = runs[i];
            if (!run.buildable) {
                std::lock_guard<std::mutex> lock(io_mutex);
                std::fprintf(stderr, "[sweep] %s: FAILED: %s\n", run.name.c_str(),
                             run.error.c_str());
                continue;
            }
            try {
                RunResult r = run_experiment(run.cfg, run.dir);
                run.ok = true;
                run.epochs95 = epochs_to_threshold(r.records, RecordMetric::CoreCorr, 0.95);
                if (!r.records.empty()) {
                    run.final_epoch = r.records.back().epoch;
                    run.final_core = r.records.back().core_corr;
                    run.final_spur = r.records.back().spurious_corr;
                }
            } catch (const std::exception& e) {
                run.ok = false;
                run.error = e.what();
            }
            std::lock_guard<std::mutex> lock(io_mutex);
            std::string note = run.ok ? (run.epochs95 ? "epochs_to_0.95 = " +
                                                            std::to_string(*run.epochs95)
                                                      : std::string("threshold not reached"))
                                      : "FAILED: " + run.error;
            std::fprintf(stderr, "[sweep] %s: %s\n", run.name.c_str(), note.c_str());
        }
    };
    int n_threads = sweep_thread_count(runs.size());
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    std::vector<std::string> header = {
        "row",         "lambda",         "spurious_degree",
        "seed",        "status",         "run_dir",
        "epochs_to_core_095", "final_epoch", "final_core_corr",
        "final_spurious_corr", "median_epochs", "iqr_low_epochs",
        "iqr_high_epochs", "n_ok",        "n_reached",
        "error"};
    std::vector<std::vector<std::string>> rows;
    const int base_degree = cfg.task.s > 0 ? cfg.task.f_s.degree : 0;
    auto degree_field = [&](int deg) { return std::to_string(deg >= 0 ? deg : base_degree); };

    for (double lam : lambdas) {
        for (int deg : degrees) {
            std::vector<double> reached;
            int n_ok = 0;
            for (const SweepRun& run : runs) {
                if (run.lambda != lam || run.degree != deg) continue;
                std::vector<std::string> row(header.size());
                row[0] = "run";
                row[1] = csv_num(run.lambda);
                row[2] = degree_field(run.degree);
                row[3] = std::to_string(run.seed);
                row[4] = run.ok ? "ok" : "failed";
                row[5] = "runs/" + run.name;
                if (run.epochs95) {
                    row[6] = std::to_string(*run.epochs95);
                    reached.push_back(static_cast<double>(*run.epochs95));
                }
                if (run.ok) {
                    row[7] = std::to_string(run.final_epoch);
                    row[8] = csv_num(run.final_core);
                    row[9] = csv_num(run.final_spur);
                    ++n_ok;
                }
                row[15] = sanitize_csv(run.error);
                rows.push_back(std::move(row));
            }
            std::sort(reached.begin(), reached.end());
            std::vector<std::string> srow(header.size());
            srow[0] = "summary";
            srow[1] = csv_num(lam);
            srow[2] = degree_field(deg);
            if (!reached.empty()) {
                srow[10] = csv_num(percentile(reached, 0.5));
                srow[11] = csv_num(percentile(reached, 0.25));
                srow[12] = csv_num(percentile(reached, 0.75));
            }
            srow[13] = std::to_string(n_ok);
            srow[14] = std::to_string(reached.size());
            rows.push_back(std::move(srow));
        }
    }
    write_csv(cfg.out_dir + "/sweep.csv", header, rows);
    write_manifest(cfg.out_dir + "/manifest.json", cfg, "sweep", {"sweep.csv", "runs/"});
}

PlotMode plot_mode_from_string(const std::string& name) {
    if (name == "dynamics") return PlotMode::Dynamics;
    if (name == "complexity") return PlotMode::Complexity;
    if (name == "retention") return PlotMode::Retention;
    if (name == "margins") return PlotMode::Margins;
    if (name == "jaccard") return PlotMode::Jaccard;
    throw ConfigError("unknown plot mode: " + name);
}

std::string to_string(PlotMode mode) {
    switch (mode) {
        case PlotMode::Dynamics: return "dynamics";
        case PlotMode::Complexity: return "complexity";
        case PlotMode::Retention: return "retention";
        case PlotMode::Margins: return "margins";
        case PlotMode::Jaccard: return "jaccard";
    }
    return "?";
}

namespace {

using PlotRows = std::vector<std::vector<std::string>>;

void plot_row(PlotRows& rows, const std::string& series, double x, double y,
              const std::string& lo = "", const std::string& hi = "") {
    rows.push_back({series, csv_num(x), csv_num(y), lo, hi});
}

PlotRows plotdata_dynamics(const std::string& dir) {
    std::vector<EpochRecord> records = read_metrics_csv(dir + "/metrics.csv");
    PlotRows rows;
    for (const EpochRecord& r : records) {
        plot_row(rows, "core_corr", r.epoch, r.core_corr);
        plot_row(rows, "spurious_corr", r.epoch, r.spurious_corr);
        if (r.decoded_core) plot_row(rows, "decoded_core", r.epoch, *r.decoded_core);
        if (r.decoded_spurious) plot_row(rows, "decoded_spurious", r.epoch, *r.decoded_spurious);
        if (r.spurious_subnet_weight)
            plot_row(rows, "spurious_subnet_weight", r.epoch, *r.spurious_subnet_weight);
        if (r.core_subnet_weight)
            plot_row(rows, "core_subnet_weight", r.epoch, *r.core_subnet_weight);
    }
    return rows;
}

PlotRows plotdata_complexity(const std::string& dir) {
    CsvTable t = read_csv(dir + "/sweep.csv");
    int c_row = t.require_col("row");
    int c_lam = t.require_col("lambda");
    int c_deg = t.require_col("spurious_degree");
    int c_med = t.require_col("median_epochs");
    int c_lo = t.require_col("iqr_low_epochs");
    int c_hi = t.require_col("iqr_high_epochs");
    PlotRows rows;
    for (const auto& row : t.rows) {
        if (row[static_cast<std::size_t>(c_row)] != "summary") continue;
        if (row[static_cast<std::size_t>(c_med)].empty()) continue;
        std::string series = "lambda=" + row[static_cast<std::size_t>(c_lam)];
        rows.push_back({series, row[static_cast<std::size_t>(c_deg)],
                        row[static_cast<std::size_t>(c_med)],
                        row[static_cast<std::size_t>(c_lo)],
                        row[static_cast<std::size_t>(c_hi)]});
    }
    if (rows.empty())
        throw ConfigError(dir + "/sweep.csv has no summary rows with reached thresholds");
    return rows;
}

PlotRows plotdata_retention(const std::string& dir) {
    CsvTable t = read_csv(dir + "/sweep.csv");
    int c_row = t.require_col("row");
    int c_lam = t.require_col("lambda");
    int c_seed = t.require_col("seed");
    int c_status = t.require_col("status");
    int c_dir = t.require_col("run_dir");
    PlotRows rows;
    for (const auto& row : t.rows) {
        if (row[static_cast<std::size_t>(c_row)] != "run") continue;
        if (row[static_cast<std::size_t>(c_status)] != "ok") continue;
        std::string run_dir = dir + "/" + row[static_cast<std::size_t>(c_dir)];
        std::vector<EpochRecord> records = read_metrics_csv(run_dir + "/metrics.csv");
        std::string series = "lambda=" + row[static_cast<std::size_t>(c_lam)] +
                             " seed=" + row[static_cast<std::size_t>(c_seed)];
        for (const EpochRecord& r : records)
            if (r.decoded_spurious) plot_row(rows, series, r.epoch, *r.decoded_spurious);
    }
    if (rows.empty())
        throw ConfigError("no decoded_spurious data under " + dir +
                          " (enable [probes] in the sweep config)");
    return rows;
}

PlotRows plotdata_margins() {
    const double lambdas[] = {0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
    PlotRows rows;
    for (double lam : lambdas) {
        std::string lam_tag = "lambda=" + std::string(fmt_axis(lam));
        for (double gc = 0.0; gc <= 12.0 + 1e-9; gc += 0.5) {
            double gs = optimal_spurious_margin(gc, lam);
            plot_row(rows, "gamma_s_star " + lam_tag, gc, gs);
            plot_row(rows, "core_grad_ratio " + lam_tag, gc, core_gradient_ratio(gc, lam));
        }
    }
    return rows;
}

PlotRows plotdata_jaccard(const std::string& dir) {
    CsvTable t = read_csv(dir + "/jaccard.csv");
    int c_epoch = t.require_col("epoch");
    int c_method = t.require_col("method");
    int c_jac = t.require_col("jaccard");
    int c_cont = t.require_col("containment");
    PlotRows rows;
    for (const auto& row : t.rows) {
        double epoch = parse_field_num(t, row, c_epoch);
        const std::string& method = row[static_cast<std::size_t>(c_method)];
        plot_row(rows, method + ":jaccard", epoch, parse_field_num(t, row, c_jac));
        plot_row(rows, method + ":containment", epoch, parse_field_num(t, row, c_cont));
    }
    if (rows.empty()) throw ConfigError(dir + "/jaccard.csv has no rows");
    return rows;
}

}  // namespace

std::string emit_plotdata(const std::string& dir, PlotMode mode) {
    PlotRows rows;
    switch (mode) {
        case PlotMode::Dynamics: rows = plotdata_dynamics(dir); break;
        case PlotMode::Complexity: rows = plotdata_complexity(dir); break;
        case PlotMode::Retention: rows = plotdata_retention(dir); break;
        case PlotMode::Margins: rows = plotdata_margins(); break;
        case PlotMode::Jaccard: rows = plotdata_jaccard(dir); break;
    }
    fs::create_directories(dir);
    std::string path = dir + "/plot_" + to_string(mode) + ".csv";
    write_csv(path, {"series", "x", "y", "ci_low", "ci_high"}, rows);
    return path;
}

}  // namespace splab
