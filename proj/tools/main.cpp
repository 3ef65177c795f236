#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spuriouslab/csv.hpp"
#include "spuriouslab/debias.hpp"
#include "spuriouslab/error.hpp"
#include "spuriouslab/experiment.hpp"
#include "spuriouslab/probe.hpp"
#include "spuriouslab/theory.hpp"

using nlohmann::json;

namespace {

using namespace splab;

void print_kv(const std::string& key, const std::string& value) {
    std::printf("%-22s %s\n", key.c_str(), value.c_str());
}

void print_kv(const std::string& key, double value) { print_kv(key, csv_num(value)); }

FeatureKind cli_feature_kind(const std::string& name) {
    if (name == "sc") return FeatureKind::ThresholdStaircase;
    if (name == "maj") return FeatureKind::Majority;
    return feature_kind_from_string(name);
}

// --- fourier ---------------------------------------------------------------

struct FourierOpts {
    std::string fn = "parity";
    int degree = 0;
    int length = 0;  // 0: defaults to degree
    std::string set;
    std::int64_t mc = 0;
    std::uint64_t seed = 1;
};

std::uint32_t parse_subset(const std::string& text, int length) {
    std::uint32_t mask = 0;
    if (text.empty()) return mask;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) throw ConfigError("empty coordinate in --set");
        std::size_t pos = 0;
        int coord = 0;
        try {
            coord = std::stoi(item, &pos);
        } catch (const std::exception&) {
            throw ConfigError("bad coordinate '" + item + "' in --set");
        }
        if (pos != item.size()) throw ConfigError("bad coordinate '" + item + "' in --set");
        if (coord < 1 || coord > length)
            throw ConfigError("--set coordinates must lie in [1, " + std::to_string(length) + "]");
        mask |= 1u << (coord - 1);
    }
    return mask;
}

void run_fourier(const FourierOpts& opt) {
    FeatureSpec spec;
    spec.kind = cli_feature_kind(opt.fn);
    spec.length = opt.length > 0 ? opt.length : opt.degree;
    spec.degree = opt.degree > 0 ? opt.degree : spec.length;
    spec.offset = 0;
    spec.validate(spec.length);
    std::uint32_t subset = parse_subset(opt.set, spec.length);
    if (opt.mc > 0) {
        McEstimate est = fourier_coefficient_mc(spec, subset, opt.mc, opt.seed);
        std::printf("%s %s\n", csv_num(est.value).c_str(), csv_num(est.std_error).c_str());
    } else {
        std::printf("%s\n", csv_num(fourier_coefficient_exact(spec, subset)).c_str());
    }
}

// --- gen -------------------------------------------------------------------

struct GenOpts {
    std::string config;
    std::int64_t size = 0;
    std::uint64_t seed = 1;
    std::string out;
};

void run_gen(const GenOpts& opt) {
    ExperimentConfig ec = ExperimentConfig::from_file(opt.config);
    FiniteDataset data = make_finite_dataset(ec.task, opt.size, opt.seed);
    save_tsv(data, opt.out);
    std::printf("wrote %zu samples to %s\n", data.size(), opt.out.c_str());
}

// --- train -----------------------------------------------------------------

struct TrainOpts {
    std::string config;
    std::string out;
};

void run_train(const TrainOpts& opt) {
    ExperimentConfig ec = ExperimentConfig::from_file(opt.config);
    if (!opt.out.empty()) ec.out_dir = opt.out;
    RunResult res = run_experiment(ec, ec.out_dir);
    if (res.records.empty()) throw TrainingError("no epochs recorded");
    const EpochRecord& last = res.records.back();
    print_kv("run_dir", res.dir);
    print_kv("final_epoch", std::to_string(last.epoch));
    print_kv("train_loss", last.train_loss);
    print_kv("core_corr", last.core_corr);
    print_kv("spurious_corr", last.spurious_corr);
}

// --- metrics ---------------------------------------------------------------

struct MetricsOpts {
    std::string model;
    std::string config;
    bool exact = false;
    std::int64_t mc = 20000;
    std::uint64_t seed = 1;
    bool as_json = false;
};

void run_metrics(const MetricsOpts& opt) {
    MlpModel model = load_snapshot(opt.model);
    ExperimentConfig ec = ExperimentConfig::from_file(opt.config);
    const SpuriousTaskConfig& task = ec.task;
    if (model.n_inputs != task.n())
        throw ConfigError("model expects n=" + std::to_string(model.n_inputs) +
                          " but task has n=" + std::to_string(task.n()));
    EvalMode mode = opt.exact ? EvalMode::Exact : EvalMode::MonteCarlo;
    double core = correlation(model, task, Target::Core, mode, opt.mc, opt.seed);
    double spur =
        task.s > 0 ? correlation(model, task, Target::Spurious, mode, opt.mc, opt.seed) : 0.0;
    GroupAccuracies acc = group_accuracies(model, task, opt.mc, opt.seed + 1);
    NeuronPartition part = classify_neurons(model, task);

    json j;
    j["core_corr"] = core;
    j["spurious_corr"] = spur;
    j["group_acc"] = {{"y_pos_majority", acc.y_pos_majority},
                      {"y_pos_minority", acc.y_pos_minority},
                      {"y_neg_majority", acc.y_neg_majority},
                      {"y_neg_minority", acc.y_neg_minority},
                      {"mean", acc.mean()},
                      {"worst", acc.worst()}};
    j["neurons"] = {{"spurious", part.spurious.size()},
                    {"core", part.core.size()},
                    {"other", part.other.size()}};
    if (!part.spurious.empty() && !part.core.empty()) {
        SubnetworkWeights sw = subnetwork_weights(model, part);
        j["subnet"] = {{"core_mean", sw.core_mean},
                       {"spurious_mean", sw.spurious_mean},
                       {"ratio", sw.ratio}};
    }
    if (opt.as_json) {
        std::printf("%s\n", j.dump(2).c_str());
        return;
    }
    print_kv("core_corr", core);
    print_kv("spurious_corr", spur);
    print_kv("acc_y_pos_majority", acc.y_pos_majority);
    print_kv("acc_y_pos_minority", acc.y_pos_minority);
    print_kv("acc_y_neg_majority", acc.y_neg_majority);
    print_kv("acc_y_neg_minority", acc.y_neg_minority);
    print_kv("acc_mean", acc.mean());
    print_kv("acc_worst", acc.worst());
    print_kv("neurons_spurious", std::to_string(part.spurious.size()));
    print_kv("neurons_core", std::to_string(part.core.size()));
    print_kv("neurons_other", std::to_string(part.other.size()));
    if (j.contains("subnet")) {
        print_kv("subnet_core_mean", j["subnet"]["core_mean"].get<double>());
        print_kv("subnet_spurious_mean", j["subnet"]["spurious_mean"].get<double>());
        print_kv("subnet_ratio", j["subnet"]["ratio"].get<double>());
    }
}

// --- decode ----------------------------------------------------------------

struct DecodeOpts {
    std::string model;
    std::string config;
    std::string target = "core";
    int n_fit = 2000;
    int n_eval = 2000;
    std::uint64_t seed = 1;
    std::string reg = "l2";
    double strength = 1.0;
};

void run_decode(const DecodeOpts& opt) {
    MlpModel model = load_snapshot(opt.model);
    ExperimentConfig ec = ExperimentConfig::from_file(opt.config);
    ProbeOptions popt;
    popt.reg = reg_kind_from_string(opt.reg);
    popt.strength = opt.strength;
    double corr = decoded_correlation(model, ec.task, target_from_string(opt.target), opt.n_fit,
                                      opt.n_eval, opt.seed, popt);
    std::printf("%s\n", csv_num(corr).c_str());
}

// --- theory ----------------------------------------------------------------

struct TheoryOpts {
    int n = 0, s = 0, c = 0;
    double lambda = 0.5;
    double gamma_c = -1.0;  // < 0: skip the margin block
    bool as_json = false;
};

void run_theory(const TheoryOpts& opt) {
    const bool with_margins = opt.gamma_c >= 0.0;
    TheoryReport rep =
        make_theory_report(opt.n, opt.s, opt.c, opt.lambda, with_margins ? opt.gamma_c : 0.0);
    if (opt.as_json) {
        json j;
        json xi = json::object();
        for (const auto& [k, v] : rep.xi_table) xi[std::to_string(k)] = v;
        j["xi"] = xi;
        j["gap_spurious"] = rep.gaps.spurious;
        j["gap_core"] = rep.gaps.core;
        j["bayes_margin"] = rep.bayes;
        j["slowdown_factor"] = rep.slowdown;
        if (with_margins) {
            j["gamma_c"] = rep.gamma_c;
            j["gamma_s_star"] = rep.gamma_s_star;
            j["core_grad_ratio"] = rep.gradient_ratio;
        }
        std::printf("%s\n", j.dump(2).c_str());
        return;
    }
    for (const auto& [k, v] : rep.xi_table)
        print_kv("xi_" + std::to_string(k) + "(" + std::to_string(opt.n) + ")", v);
    print_kv("gap_spurious", rep.gaps.spurious);
    print_kv("gap_core", rep.gaps.core);
    print_kv("gap_ratio", rep.gaps.spurious / rep.gaps.core);
    print_kv("bayes_margin", rep.bayes);
    print_kv("slowdown_factor", rep.slowdown);
    if (with_margins) {
        print_kv("gamma_c", rep.gamma_c);
        print_kv("gamma_s_star", rep.gamma_s_star);
        print_kv("core_grad_ratio", rep.gradient_ratio);
    }
}

// --- debias ----------------------------------------------------------------

struct DebiasOpts {
    std::string run;
    std::string data;
    std::string method = "all";
    std::string k = "auto";
    int cadence = 1;
    double upweight = 0.0;
    int id_epoch = -1;
    std::string out;
};

void run_debias(const DebiasOpts& opt) {
    ExperimentConfig ec = ExperimentConfig::from_file(opt.run + "/manifest.json");
    FiniteDataset data = load_tsv(opt.data);
    if (data.samples.empty()) throw ConfigError("dataset is empty");
    if (static_cast<int>(data.samples[0].x.size()) != ec.task.n())
        throw ConfigError("dataset dimension does not match the run's task");
    data.config = ec.task;

    int k = -1;
    if (opt.k != "auto") {
        try {
            k = std::stoi(opt.k);
        } catch (const std::exception&) {
            throw ConfigError("--k must be 'auto' or a positive integer");
        }
    }
    bool all = opt.method == "all";
    InferMethod method = all ? InferMethod::Jtt : infer_method_from_string(opt.method);

    std::vector<EpochInference> curve = inference_curve(ec.task, data, ec.train, opt.cadence, k);

    std::vector<std::vector<std::string>> rows;
    auto emit = [&rows](int epoch, InferMethod m, double jac, double cont) {
        rows.push_back({std::to_string(epoch), to_string(m), csv_num(jac), csv_num(cont)});
    };
    for (const EpochInference& e : curve) {
        if (all || method == InferMethod::Jtt)
            emit(e.epoch, InferMethod::Jtt, e.jaccard_jtt, e.containment_jtt);
        if (all || method == InferMethod::TopCe)
            emit(e.epoch, InferMethod::TopCe, e.jaccard_ce, e.containment_ce);
        if (all || method == InferMethod::TopKl)
            emit(e.epoch, InferMethod::TopKl, e.jaccard_kl, e.containment_kl);
        if (all || method == InferMethod::MarginCluster)
            emit(e.epoch, InferMethod::MarginCluster, e.jaccard_cluster, e.containment_cluster);
    }
    std::string out_path = opt.out.empty() ? opt.run + "/jaccard.csv" : opt.out;
    write_csv(out_path, {"epoch", "method", "jaccard", "containment"}, rows);
    std::printf("wrote %s\n", out_path.c_str());

    if (opt.upweight > 0.0) {
        if (all) throw ConfigError("--upweight needs a single --method, not all");
        // Re-identify at the requested epoch with a fresh model trained to it.
        int id_epoch = opt.id_epoch > 0 ? opt.id_epoch : curve.back().epoch;
        TrainConfig id_cfg = ec.train;
        id_cfg.epochs = id_epoch;
        Rng init_rng = derive_rng(id_cfg.seed, "init", {});
        MlpModel id_model =
            init_model(id_cfg.width, ec.task.n(), id_cfg.init, init_rng, id_cfg.depth);
        FiniteSource source(data, id_cfg.seed);
        TrainRunOptions id_opts;
        id_opts.metric_cadence = id_epoch;
        id_opts.subnet_columns = false;
        sgd_train(id_model, id_cfg, source, ec.task, id_opts);
        GroupInference inf;
        switch (method) {
            case InferMethod::Jtt: inf = jtt_infer(id_model, data); break;
            case InferMethod::TopCe:
                inf = rank_by_ce(id_model, data, k > 0 ? k : static_cast<int>(
                                                              data.minority_indices().size()));
                break;
            case InferMethod::TopKl:
                throw ConfigError("--upweight with kl needs two snapshots; use jtt, ce or cluster");
            case InferMethod::MarginCluster: inf = margin_cluster_infer(id_model, data); break;
        }
        TrainRunOptions up_opts;
        up_opts.subnet_columns = false;
        DebiasOutcome outcome =
            upsample_retrain(ec.task, data, inf, opt.upweight, ec.train, up_opts);
        print_kv("id_epoch", std::to_string(id_epoch));
        print_kv("predicted_minority", std::to_string(inf.predicted.size()));
        print_kv("fell_back_to_erm", outcome.fell_back_to_erm ? "true" : "false");
        print_kv("core_corr", outcome.core_corr);
        print_kv("spurious_corr", outcome.spurious_corr);
        print_kv("worst_group_acc", outcome.groups.worst());
        print_kv("mean_group_acc", outcome.groups.mean());
    }
}

// --- sweep -----------------------------------------------------------------

struct SweepOpts {
    std::string config;
    std::string out;
};

void run_sweep_cmd(const SweepOpts& opt) {
    ExperimentConfig ec = ExperimentConfig::from_file(opt.config);
    if (!opt.out.empty()) ec.out_dir = opt.out;
    run_sweep(ec);
    std::printf("wrote %s/sweep.csv\n", ec.out_dir.c_str());
}

// --- plotdata --------------------------------------------------------------

struct PlotOpts {
    std::string mode;
    std::string dir;
};

void run_plotdata(const PlotOpts& opt) {
    std::string path = emit_plotdata(opt.dir, plot_mode_from_string(opt.mode));
    std::printf("wrote %s\n", path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Boolean spurious-correlation laboratory"};
    app.require_subcommand(1);

    FourierOpts fourier_opts;
    CLI::App* fourier = app.add_subcommand("fourier", "Fourier coefficient of a boolean feature");
    fourier->add_option("--fn", fourier_opts.fn, "parity | staircase (sc) | majority (maj)");
    fourier->add_option("--d", fourier_opts.degree, "feature degree");
    fourier->add_option("--len", fourier_opts.length, "slice length (default: degree)");
    fourier->add_option("--set", fourier_opts.set, "subset as 1-based coordinates, e.g. 1,2,3");
    fourier->add_option("--mc", fourier_opts.mc, "Monte Carlo sample count (default: exact)");
    fourier->add_option("--seed", fourier_opts.seed, "Monte Carlo seed");
    fourier->callback([&fourier_opts]() { run_fourier(fourier_opts); });

    GenOpts gen_opts;
    CLI::App* gen = app.add_subcommand("gen", "Sample a dataset to TSV");
    gen->add_option("--config", gen_opts.config, "config file with a [task] section")->required();
    gen->add_option("--size", gen_opts.size, "number of samples")->required();
    gen->add_option("--seed", gen_opts.seed, "sampling seed");
    gen->add_option("--out", gen_opts.out, "output TSV path")->required();
    gen->callback([&gen_opts]() { run_gen(gen_opts); });

    TrainOpts train_opts;
    CLI::App* train = app.add_subcommand("train", "Train a model and write run outputs");
    train->add_option("--config", train_opts.config, "experiment config file")->required();
    train->add_option("--out", train_opts.out, "output directory (overrides [output] dir)");
    train->callback([&train_opts]() { run_train(train_opts); });

    MetricsOpts metrics_opts;
    CLI::App* metrics = app.add_subcommand("metrics", "Evaluate a model snapshot");
    metrics->add_option("--model", metrics_opts.model, "model snapshot path")->required();
    metrics->add_option("--config", metrics_opts.config, "config file with the task")->required();
    metrics->add_flag("--exact", metrics_opts.exact, "enumerate all 2^n inputs");
    metrics->add_option("--mc", metrics_opts.mc, "Monte Carlo panel size");
    metrics->add_option("--seed", metrics_opts.seed, "Monte Carlo seed");
    metrics->add_flag("--json", metrics_opts.as_json, "JSON output");
    metrics->callback([&metrics_opts]() { run_metrics(metrics_opts); });

    DecodeOpts decode_opts;
    CLI::App* decode = app.add_subcommand("decode", "Linear probe on frozen embeddings");
    decode->add_option("--model", decode_opts.model, "model snapshot path")->required();
    decode->add_option("--config", decode_opts.config, "config file with the task")->required();
    decode->add_option("--target", decode_opts.target, "core | spurious")->required();
    decode->add_option("--n-fit", decode_opts.n_fit, "probe fit sample count");
    decode->add_option("--n-eval", decode_opts.n_eval, "probe eval sample count");
    decode->add_option("--seed", decode_opts.seed, "sampling seed");
    decode->add_option("--reg", decode_opts.reg, "none | l2 | l1");
    decode->add_option("--strength", decode_opts.strength, "regularization strength");
    decode->callback([&decode_opts]() { run_decode(decode_opts); });

    TheoryOpts theory_opts;
    CLI::App* theory = app.add_subcommand("theory", "Analytic quantities for a task");
    theory->add_option("--n", theory_opts.n, "total input dimension")->required();
    theory->add_option("--s", theory_opts.s, "spurious parity degree (even)")->required();
    theory->add_option("--c", theory_opts.c, "core parity degree (even)")->required();
    theory->add_option("--lambda", theory_opts.lambda, "majority fraction")->required();
    theory->add_option("--gamma-c", theory_opts.gamma_c, "core margin for the optimum block");
    theory->add_flag("--json", theory_opts.as_json, "JSON output");
    theory->callback([&theory_opts]() { run_theory(theory_opts); });

    DebiasOpts debias_opts;
    CLI::App* debias = app.add_subcommand("debias", "Group inference curve and upsampling");
    debias->add_option("--run", debias_opts.run, "run directory with manifest.json")->required();
    debias->add_option("--data", debias_opts.data, "dataset TSV")->required();
    debias->add_option("--method", debias_opts.method, "jtt | ce | kl | cluster | all");
    debias->add_option("--k", debias_opts.k, "rank size: auto (= true minority count) or integer");
    debias->add_option("--cadence", debias_opts.cadence, "score every k epochs");
    debias->add_option("--upweight", debias_opts.upweight,
                       "retrain with predicted minority upsampled this many times");
    debias->add_option("--id-epoch", debias_opts.id_epoch,
                       "identification epoch for --upweight (default: last)");
    debias->add_option("--out", debias_opts.out, "output CSV (default: <run>/jaccard.csv)");
    debias->callback([&debias_opts]() { run_debias(debias_opts); });

    SweepOpts sweep_opts;
    CLI::App* sweep = app.add_subcommand("sweep", "Run a config's sweep grid");
    sweep->add_option("--config", sweep_opts.config, "experiment config with [sweep]")->required();
    sweep->add_option("--out", sweep_opts.out, "output directory (overrides [output] dir)");
    sweep->callback([&sweep_opts]() { run_sweep_cmd(sweep_opts); });

    PlotOpts plot_opts;
    CLI::App* plot = app.add_subcommand("plotdata", "Reshape outputs into tidy plot CSVs");
    plot->add_option("--mode", plot_opts.mode,
                     "dynamics | complexity | retention | margins | jaccard")
        ->required();
    plot->add_option("--dir", plot_opts.dir, "run/sweep directory (also output location)")
        ->required();
    plot->callback([&plot_opts]() { run_plotdata(plot_opts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const splab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
