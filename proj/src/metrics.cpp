#include "spuriouslab/metrics.hpp"

#include <cmath>

#include "spuriouslab/error.hpp"

namespace splab {

std::string to_string(Target target) { return target == Target::Core ? "core" : "spurious"; }

Target target_from_string(const std::string& name) {
    if (name == "core") return Target::Core;
    if (name == "spurious") return Target::Spurious;
    throw ConfigError("unknown target: " + name);
}

namespace {

const FeatureSpec& target_feature(const SpuriousTaskConfig& config, Target target) {
    if (target == Target::Spurious && config.s == 0)
        throw ConfigError("task has no spurious block");
    return target == Target::Core ? config.f_c : config.f_s;
}

void mask_to_row(std::uint32_t mask, int n, double* row) {
    for (int j = 0; j < n; ++j) row[j] = (mask >> j) & 1u ? -1.0 : 1.0;
}

int feature_from_mask(const FeatureSpec& spec, std::uint32_t mask) {
    const std::uint32_t slice =
        (mask >> spec.offset) & ((spec.length >= 32) ? ~0u : ((1u << spec.length) - 1u));
    return spec.eval_slice_bits(slice);
}

}  // namespace

double correlation(const MlpModel& model, const SpuriousTaskConfig& config, Target target,
                   EvalMode mode, std::int64_t n_samples, std::uint64_t seed) {
    config.validate();
    if (model.n_inputs != config.n()) throw DimensionError("model/task dimension mismatch");
    const FeatureSpec& feature = target_feature(config, target);
    const int n = config.n();
    if (mode == EvalMode::Exact) {
        if (n > 20) throw ResourceError("exact correlation limited to n <= 20");
        std::vector<double> row(n);
        std::int64_t sum = 0;
        const std::uint32_t count = 1u << n;
        for (std::uint32_t mask = 0; mask < count; ++mask) {
            mask_to_row(mask, n, row.data());
            sum += feature_from_mask(feature, mask) * sgn(model.forward(row.data()));
        }
        return static_cast<double>(sum) / static_cast<double>(count);
    }
    if (n_samples <= 0) throw ConfigError("Monte Carlo correlation needs n_samples > 0");
    Rng rng = derive_rng(seed, "corr-mc");
    std::vector<double> row(n);
    std::int64_t sum = 0;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        for (int j = 0; j < n; ++j) row[j] = rng.pick_sign();
        sum += feature.eval(row.data()) * sgn(model.forward(row.data()));
    }
    return static_cast<double>(sum) / static_cast<double>(n_samples);
}

double GroupAccuracies::worst() const {
    double w = y_pos_majority;
    if (y_pos_minority < w) w = y_pos_minority;
    if (y_neg_majority < w) w = y_neg_majority;
    if (y_neg_minority < w) w = y_neg_minority;
    return w;
}

GroupAccuracies group_accuracies(const MlpModel& model, const SpuriousTaskConfig& config,
                                 std::int64_t n_samples, std::uint64_t seed) {
    config.validate();
    if (n_samples < 1000) throw ConfigError("group accuracies need at least 1000 samples");
    SpuriousTaskConfig balanced = config;
    balanced.lambda = 0.5;
    Rng rng = derive_rng(seed, "group-acc");
    std::vector<double> row(config.n());
    std::int64_t correct[4] = {0, 0, 0, 0};
    std::int64_t total[4] = {0, 0, 0, 0};
    int y;
    Group g;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        sample_into(balanced, rng, row.data(), y, g);
        const int cell = (y > 0 ? 0 : 2) + (g == Group::Majority ? 0 : 1);
        ++total[cell];
        if (sgn(model.forward(row.data())) == y) ++correct[cell];
    }
    const auto acc = [&](int cell) {
        return total[cell] == 0 ? std::nan("")
                                : static_cast<double>(correct[cell]) / static_cast<double>(total[cell]);
    };
    return {acc(0), acc(1), acc(2), acc(3)};
}

NeuronPartition classify_neurons(const MlpModel& model, const SpuriousTaskConfig& config,
                                 double margin) {
    config.validate();
    if (model.hidden.empty()) throw DimensionError("model has no hidden layer");
    const Layer& first = model.hidden.front();
    if (first.in != config.n()) throw DimensionError("model/task dimension mismatch");
    NeuronPartition out;
    for (int i = 0; i < first.out; ++i) {
        const double* w = first.w.data() + static_cast<std::size_t>(i) * first.in;
        double spur = 0.0, core = 0.0;
        for (int j = 0; j < config.s; ++j) spur += std::abs(w[j]);
        for (int j = config.s; j < config.s + config.c; ++j) core += std::abs(w[j]);
        if (spur > core * (1.0 + margin))
            out.spurious.push_back(i);
        else if (core > spur * (1.0 + margin))
            out.core.push_back(i);
        else
            out.other.push_back(i);
    }
    return out;
}

SubnetworkWeights subnetwork_weights(const MlpModel& model, const NeuronPartition& partition) {
    if (partition.core.empty() || partition.spurious.empty())
        throw ConfigError("subnetwork ratio undefined: empty core or spurious neuron set");
    SubnetworkWeights out;
    for (int i : partition.core) out.core_mean += std::abs(model.a.at(i));
    for (int i : partition.spurious) out.spurious_mean += std::abs(model.a.at(i));
    out.core_mean /= static_cast<double>(partition.core.size());
    out.spurious_mean /= static_cast<double>(partition.spurious.size());
    out.ratio = out.spurious_mean == 0.0 ? std::numeric_limits<double>::infinity()
                                         : out.core_mean / out.spurious_mean;
    return out;
}

std::optional<int> epochs_to_threshold(const std::vector<EpochRecord>& records,
                                       RecordMetric metric, double threshold) {
    if (records.empty()) throw ConfigError("empty record list");
    for (const auto& rec : records) {
        double value;
        switch (metric) {
            case RecordMetric::CoreCorr: value = rec.core_corr; break;
            case RecordMetric::SpuriousCorr: value = rec.spurious_corr; break;
            case RecordMetric::DecodedCore:
                if (!rec.decoded_core) continue;
                value = *rec.decoded_core;
                break;
            case RecordMetric::DecodedSpurious:
                if (!rec.decoded_spurious) continue;
                value = *rec.decoded_spurious;
                break;
            default: continue;
        }
        if (value >= threshold) return rec.epoch;
    }
    return std::nullopt;
}

MetricEvaluator::MetricEvaluator(const SpuriousTaskConfig& config, std::int64_t mc_samples,
                                 std::uint64_t seed, std::int64_t max_exact_inputs) {
    config.validate();
    n_ = config.n();
    has_spurious_ = config.s > 0;
    exact_ = n_ <= 30 && (std::int64_t{1} << n_) <= max_exact_inputs;
    const std::int64_t panel = exact_ ? (std::int64_t{1} << n_) : mc_samples;
    if (panel <= 0) throw ConfigError("empty evaluation panel");
    inputs_.resize(static_cast<std::size_t>(panel) * n_);
    core_vals_.resize(panel);
    spur_vals_.assign(panel, 0.0f);
    Rng rng = derive_rng(seed, "metric-panel");
    for (std::int64_t i = 0; i < panel; ++i) {
        double* row = inputs_.data() + static_cast<std::size_t>(i) * n_;
        if (exact_) {
            mask_to_row(static_cast<std::uint32_t>(i), n_, row);
        } else {
            for (int j = 0; j < n_; ++j) row[j] = rng.pick_sign();
        }
        core_vals_[i] = static_cast<float>(config.f_c.eval(row));
        if (has_spurious_) spur_vals_[i] = static_cast<float>(config.f_s.eval(row));
    }
}

// Batched logit evaluation, 4 rows at a time on the depth-2 fast path.
void batch_logits(const MlpModel& model, const double* X, std::int64_t rows, double* out) {
    const int n = model.n_inputs;
    if (model.depth() != 2) {
        for (std::int64_t i = 0; i < rows; ++i)
            out[i] = model.forward(X + static_cast<std::size_t>(i) * n);
        return;
    }
    const Layer& layer = model.hidden.front();
    const int p = layer.out;
    std::int64_t i = 0;
    for (; i + 4 <= rows; i += 4) {
        const double* x0 = X + static_cast<std::size_t>(i) * n;
        const double* x1 = x0 + n;
        const double* x2 = x1 + n;
        const double* x3 = x2 + n;
        double l0 = model.out_bias, l1 = l0, l2 = l0, l3 = l0;
        for (int r = 0; r < p; ++r) {
            const double* wr = layer.w.data() + static_cast<std::size_t>(r) * n;
            double s0 = layer.b[r], s1 = s0, s2 = s0, s3 = s0;
            for (int c = 0; c < n; ++c) {
                const double w = wr[c];
                s0 += w * x0[c];
                s1 += w * x1[c];
                s2 += w * x2[c];
                s3 += w * x3[c];
            }
            const double ar = model.a[r];
            if (s0 > 0.0) l0 += ar * s0;
            if (s1 > 0.0) l1 += ar * s1;
            if (s2 > 0.0) l2 += ar * s2;
            if (s3 > 0.0) l3 += ar * s3;
        }
        out[i] = l0;
        out[i + 1] = l1;
        out[i + 2] = l2;
        out[i + 3] = l3;
    }
    for (; i < rows; ++i)
        out[i] = model.forward(X + static_cast<std::size_t>(i) * n);
}

MetricEvaluator::Correlations MetricEvaluator::evaluate(const MlpModel& model) const {
    if (model.n_inputs != n_) throw DimensionError("model/panel dimension mismatch");
    const std::int64_t panel = panel_size();
    std::vector<double> logits(panel);
    batch_logits(model, inputs_.data(), panel, logits.data());
    double core_sum = 0.0, spur_sum = 0.0;
    for (std::int64_t i = 0; i < panel; ++i) {
        const double s = logits[i] >= 0.0 ? 1.0 : -1.0;
        core_sum += s * core_vals_[i];
        spur_sum += s * spur_vals_[i];
    }
    const double scale = 1.0 / static_cast<double>(panel);
    return {core_sum * scale, has_spurious_ ? spur_sum * scale : 0.0};
}

}  // namespace splab
