#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spuriouslab/dataset.hpp"
#include "spuriouslab/model.hpp"

namespace splab {

enum class Target { Core, Spurious };

enum class EvalMode { Exact, MonteCarlo };

// E_{x ~ uniform}[f_target(x) * sgn(h(x))], the balanced-distribution
// correlation. Exact mode enumerates all 2^n inputs (n <= 20); Monte Carlo
// draws n_samples uniform inputs.
double correlation(const MlpModel& model, const SpuriousTaskConfig& config, Target target,
                   EvalMode mode, std::int64_t n_samples = 0, std::uint64_t seed = 0);

struct GroupAccuracies {
    double y_pos_majority = 0.0;
    double y_pos_minority = 0.0;
    double y_neg_majority = 0.0;
    double y_neg_minority = 0.0;

    double mean() const {
        return 0.25 * (y_pos_majority + y_pos_minority + y_neg_majority + y_neg_minority);
    }
    double worst() const;
};

// Per-(label, group) accuracy under balanced (lambda = 0.5) sampling.
GroupAccuracies group_accuracies(const MlpModel& model, const SpuriousTaskConfig& config,
                                 std::int64_t n_samples, std::uint64_t seed);

struct NeuronPartition {
    std::vector<int> spurious;
    std::vector<int> core;
    std::vector<int> other;
};

// First-layer weight-mass rule: neuron i is Spurious when its absolute
// weight mass on the spurious block exceeds the core-block mass by the
// relative margin, Core in the reverse case, Other in between.
NeuronPartition classify_neurons(const MlpModel& model, const SpuriousTaskConfig& config,
                                 double margin = 0.1);

struct SubnetworkWeights {
    double core_mean = 0.0;      // mean |a_i| over core neurons
    double spurious_mean = 0.0;  // mean |a_i| over spurious neurons
    double ratio = 0.0;          // core_mean / spurious_mean (+inf when spurious_mean = 0)
};

// Throws ConfigError when either partition class is empty.
SubnetworkWeights subnetwork_weights(const MlpModel& model, const NeuronPartition& partition);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double core_corr = 0.0;
    double spurious_corr = 0.0;
    std::optional<double> decoded_core;
    std::optional<double> decoded_spurious;
    std::optional<double> spurious_subnet_weight;
    std::optional<double> core_subnet_weight;
};

enum class RecordMetric { CoreCorr, SpuriousCorr, DecodedCore, DecodedSpurious };

// First epoch whose metric is >= threshold; nullopt when never reached.
std::optional<int> epochs_to_threshold(const std::vector<EpochRecord>& records,
                                       RecordMetric metric, double threshold);

// Logits over row-major inputs [rows x n], blocked for the depth-2 case.
void batch_logits(const MlpModel& model, const double* X, std::int64_t rows, double* out);

// Caches the evaluation panel so per-epoch correlation checks during training
// cost one batched forward pass. Uses exhaustive enumeration when
// 2^n <= max_exact_inputs, otherwise a fixed uniform Monte Carlo panel.
class MetricEvaluator {
public:
    MetricEvaluator(const SpuriousTaskConfig& config, std::int64_t mc_samples = 20000,
                    std::uint64_t seed = 0, std::int64_t max_exact_inputs = 1 << 14);

    bool exact() const { return exact_; }
    std::int64_t panel_size() const { return static_cast<std::int64_t>(core_vals_.size()); }

    struct Correlations {
        double core = 0.0;
        double spurious = 0.0;
    };
    Correlations evaluate(const MlpModel& model) const;

private:
    int n_ = 0;
    bool exact_ = false;
    std::vector<double> inputs_;  // row-major [panel x n]
    std::vector<float> core_vals_;
    std::vector<float> spur_vals_;  // zeros when s = 0
    bool has_spurious_ = false;
};

std::string to_string(Target target);
Target target_from_string(const std::string& name);

}  // namespace splab
