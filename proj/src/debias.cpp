#include "spuriouslab/debias.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spuriouslab/error.hpp"
#include "spuriouslab/rng.hpp"

namespace splab {

InferMethod infer_method_from_string(const std::string& s) {
    if (s == "jtt") return InferMethod::Jtt;
    if (s == "ce") return InferMethod::TopCe;
    if (s == "kl") return InferMethod::TopKl;
    if (s == "cluster") return InferMethod::MarginCluster;
    throw ConfigError("unknown inference method: " + s);
}

std::string to_string(InferMethod method) {
    switch (method) {
        case InferMethod::Jtt: return "jtt";
        case InferMethod::TopCe: return "ce";
        case InferMethod::TopKl: return "kl";
        case InferMethod::MarginCluster: return "cluster";
    }
    return "?";
}

std::vector<double> dataset_logits(const MlpModel& model, const FiniteDataset& data) {
    model.check_consistent();
    const int n = data.config.n();
    if (model.n_inputs != n) throw DimensionError("model/dataset dimension mismatch");
    const std::size_t rows = data.size();
    std::vector<double> X(rows * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < rows; ++i)
        for (int c = 0; c < n; ++c)
            X[i * static_cast<std::size_t>(n) + c] =
                static_cast<double>(data.samples[i].x[static_cast<std::size_t>(c)]);
    std::vector<double> out(rows);
    batch_logits(model, X.data(), static_cast<std::int64_t>(rows), out.data());
    return out;
}

namespace {

void check_rows(const std::vector<double>& logits, const FiniteDataset& data) {
    if (logits.size() != data.size()) throw DimensionError("logit/dataset row count mismatch");
}

void check_k(int k, const FiniteDataset& data) {
    if (k <= 0 || static_cast<std::size_t>(k) > data.size())
        throw ConfigError("rank size k must satisfy 0 < k <= dataset size");
}

// Indices of the k largest scores, ties by ascending index.
std::vector<int> top_k(const std::vector<double>& scores, int k) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GroupInference jtt_from_logits(const std::vector<double>& logits, const FiniteDataset& data) {
    check_rows(logits, data);
    GroupInference out;
    out.method = InferMethod::Jtt;
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (sgn(logits[i]) != data.samples[i].y) out.predicted.push_back(static_cast<int>(i));
    return out;
}

GroupInference ce_from_logits(const std::vector<double>& logits, const FiniteDataset& data,
                              int k) {
    check_rows(logits, data);
    check_k(k, data);
    std::vector<double> scores(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        scores[i] = loss(logits[i], data.samples[i].y);
    GroupInference out;
    out.method = InferMethod::TopCe;
    out.predicted = top_k(scores, k);
    return out;
}

GroupInference kl_from_logits(const std::vector<double>& early, const std::vector<double>& late,
                              const FiniteDataset& data, int k) {
    check_rows(early, data);
    check_rows(late, data);
    check_k(k, data);
    std::vector<double> scores(early.size());
    for (std::size_t i = 0; i < early.size(); ++i) {
        // KL(Bern(phi(z1)) || Bern(phi(z2))) with log phi(z) = -softplus(-z).
        const double z1 = early[i], z2 = late[i];
        const double p1 = sigmoid(z1);
        scores[i] = p1 * (softplus(-z2) - softplus(-z1)) +
                    (1.0 - p1) * (softplus(z2) - softplus(z1));
    }
    GroupInference out;
    out.method = InferMethod::TopKl;
    out.predicted = top_k(scores, k);
    return out;
}

GroupInference cluster_from_logits(const std::vector<double>& logits, const FiniteDataset& data) {
    check_rows(logits, data);
    GroupInference out;
    out.method = InferMethod::MarginCluster;
    for (int label : {+1, -1}) {
        std::vector<int> members;
        for (std::size_t i = 0; i < logits.size(); ++i)
            if (data.samples[i].y == label) members.push_back(static_cast<int>(i));
        if (members.empty()) throw ConfigError("margin clustering: empty label class");
        double lo = logits[static_cast<std::size_t>(members[0])], hi = lo;
        for (int i : members) {
            lo = std::min(lo, logits[static_cast<std::size_t>(i)]);
            hi = std::max(hi, logits[static_cast<std::size_t>(i)]);
        }
        if (hi - lo <= 1e-12) {
            out.degenerate = true;
            continue;
        }
        // 1-D 2-means, centers seeded at the extremes.
        double c0 = lo, c1 = hi;
        std::vector<char> assign(members.size(), 0);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            double s0 = 0.0, s1 = 0.0;
            int n0 = 0, n1 = 0;
            for (std::size_t m = 0; m < members.size(); ++m) {
                const double v = logits[static_cast<std::size_t>(members[m])];
                const char c = std::fabs(v - c0) <= std::fabs(v - c1) ? 0 : 1;
                if (c != assign[m]) changed = true;
                assign[m] = c;
                if (c == 0) {
                    s0 += v;
                    ++n0;
                } else {
                    s1 += v;
                    ++n1;
                }
            }
            if (n0 == 0 || n1 == 0) break;
            c0 = s0 / n0;
            c1 = s1 / n1;
            if (!changed) break;
        }
        // Smaller margin = smaller y * center.
        const char minority_cluster = label * c0 <= label * c1 ? 0 : 1;
        for (std::size_t m = 0; m < members.size(); ++m)
            if (assign[m] == minority_cluster) out.predicted.push_back(members[m]);
    }
    std::sort(out.predicted.begin(), out.predicted.end());
    return out;
}

GroupInference jtt_infer(const MlpModel& model, const FiniteDataset& data) {
    return jtt_from_logits(dataset_logits(model, data), data);
}

GroupInference rank_by_ce(const MlpModel& model, const FiniteDataset& data, int k) {
    return ce_from_logits(dataset_logits(model, data), data, k);
}

GroupInference rank_by_kl(const MlpModel& early, const MlpModel& late, const FiniteDataset& data,
                          int k) {
    if (early.n_inputs != late.n_inputs || early.width() != late.width() ||
        early.depth() != late.depth())
        throw DimensionError("rank_by_kl: snapshot architectures differ");
    return kl_from_logits(dataset_logits(early, data), dataset_logits(late, data), data, k);
}

GroupInference margin_cluster_infer(const MlpModel& model, const FiniteDataset& data) {
    return cluster_from_logits(dataset_logits(model, data), data);
}

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::vector<int> inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double containment(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty()) return 1.0;
    std::vector<int> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    return static_cast<double>(inter.size()) / static_cast<double>(a.size());
}

std::vector<EpochInference> inference_curve(const SpuriousTaskConfig& task,
                                            const FiniteDataset& data, const TrainConfig& config,
                                            int cadence, int k) {
    config.validate();
    if (cadence <= 0) throw ConfigError("cadence must be positive");
    const std::vector<int> truth = data.minority_indices();
    if (truth.empty()) throw ConfigError("dataset has no minority points to score against");
    if (k < 0) k = static_cast<int>(truth.size());
    check_k(k, data);

    Rng init_rng = derive_rng(config.seed, "init", {});
    MlpModel model = init_model(config.width, task.n(), config.init, init_rng, config.depth);

    const int n = task.n();
    const std::size_t rows = data.size();
    std::vector<double> X(rows * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < rows; ++i)
        for (int c = 0; c < n; ++c)
            X[i * static_cast<std::size_t>(n) + c] =
                static_cast<double>(data.samples[i].x[static_cast<std::size_t>(c)]);

    std::vector<std::pair<int, std::vector<double>>> trajectory;
    FiniteSource source(data, config.seed);
    TrainRunOptions opts;
    opts.metric_cadence = cadence;
    opts.subnet_columns = false;
    MetricEvaluator evaluator(task, 4096, derive_rng(config.seed, "eval-panel", {}).next_u64());
    opts.evaluator = &evaluator;
    opts.on_epoch = [&](const EpochRecord& rec, const MlpModel& m) {
        std::vector<double> logits(rows);
        batch_logits(m, X.data(), static_cast<std::int64_t>(rows), logits.data());
        trajectory.emplace_back(rec.epoch, std::move(logits));
        return true;
    };
    sgd_train(model, config, source, task, opts);
    if (trajectory.empty()) throw TrainingError("no epochs recorded");

    const std::vector<double>& final_logits = trajectory.back().second;
    std::vector<EpochInference> out;
    out.reserve(trajectory.size());
    for (const auto& [epoch, logits] : trajectory) {
        EpochInference row;
        row.epoch = epoch;
        const GroupInference jtt = jtt_from_logits(logits, data);
        row.jaccard_jtt = jaccard(jtt.predicted, truth);
        row.containment_jtt = containment(jtt.predicted, truth);
        const GroupInference ce = ce_from_logits(logits, data, k);
        row.jaccard_ce = jaccard(ce.predicted, truth);
        row.containment_ce = containment(ce.predicted, truth);
        const GroupInference kl = kl_from_logits(logits, final_logits, data, k);
        row.jaccard_kl = jaccard(kl.predicted, truth);
        row.containment_kl = containment(kl.predicted, truth);
        const GroupInference cl = cluster_from_logits(logits, data);
        row.jaccard_cluster = jaccard(cl.predicted, truth);
        row.containment_cluster = containment(cl.predicted, truth);
        out.push_back(row);
    }
    return out;
}

DebiasOutcome upsample_retrain(const SpuriousTaskConfig& task, const FiniteDataset& data,
                               const GroupInference& inference, double upweight,
                               const TrainConfig& config, const TrainRunOptions& opts) {
    config.validate();
    if (upweight < 1.0) throw ConfigError("upweight must be at least 1");
    for (int i : inference.predicted)
        if (i < 0 || static_cast<std::size_t>(i) >= data.size())
            throw ConfigError("inference index out of dataset range");

    DebiasOutcome out;
    FiniteDataset augmented = data;
    const int extra = static_cast<int>(std::ceil(upweight)) - 1;
    if (inference.predicted.empty()) {
        out.fell_back_to_erm = true;
    } else {
        for (int rep = 0; rep < extra; ++rep)
            for (int i : inference.predicted) augmented.samples.push_back(data.samples[i]);
    }

    Rng init_rng = derive_rng(config.seed, "init", {});
    out.model = init_model(config.width, task.n(), config.init, init_rng, config.depth);
    FiniteSource source(augmented, config.seed);
    out.records = sgd_train(out.model, config, source, task, opts);

    const EpochRecord& last = out.records.back();
    out.core_corr = last.core_corr;
    out.spurious_corr = last.spurious_corr;
    out.groups = group_accuracies(out.model, task, 20000,
                                  derive_rng(config.seed, "debias-groups", {}).next_u64());
    return out;
}

}  // namespace splab
