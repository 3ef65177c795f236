#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "spuriouslab/dataset.hpp"
#include "spuriouslab/metrics.hpp"
#include "spuriouslab/model.hpp"
#include "spuriouslab/probe.hpp"

namespace splab {

struct TrainConfig {
    double learning_rate = 0.0001;
    double momentum = 0.5;
    int batch_size = 64;
    int epochs = 100;
    int samples_per_epoch = 10000;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    int width = 100;
    int depth = 2;
    InitScheme init;

    void validate() const;
};

// Produces row-major training batches. Implementations own their stream
// state; batches are derived from (seed, epoch, batch index) so content never
// depends on how much an earlier phase consumed.
class DataSource {
public:
    virtual ~DataSource() = default;
    virtual int dim() const = 0;
    virtual void start_epoch(int epoch) = 0;
    // Fills up to max_count rows of X [count x dim] and labels y; returns the
    // number of rows produced, 0 at epoch end.
    virtual int next_batch(int max_count, double* X, int* y) = 0;
};

// Fresh i.i.d. samples every batch ("online" mode). Optionally zeroes the
// core block after the label is computed, i.e. trains on spurious and noise
// coordinates only.
class OnlineSource : public DataSource {
public:
    OnlineSource(SpuriousTaskConfig config, std::uint64_t seed, int samples_per_epoch,
                 bool mask_core = false);
    int dim() const override { return config_.n(); }
    void start_epoch(int epoch) override;
    int next_batch(int max_count, double* X, int* y) override;

private:
    SpuriousTaskConfig config_;
    std::uint64_t seed_;
    int samples_per_epoch_;
    bool mask_core_;
    int epoch_ = 0;
    int produced_ = 0;
    int batch_index_ = 0;
};

// Full pass over a fixed dataset per epoch, reshuffled with the epoch's
// substream.
class FiniteSource : public DataSource {
public:
    FiniteSource(const FiniteDataset& data, std::uint64_t seed);
    int dim() const override { return n_; }
    void start_epoch(int epoch) override;
    int next_batch(int max_count, double* X, int* y) override;
    std::int64_t size() const { return static_cast<std::int64_t>(xs_.size()); }

private:
    int n_;
    std::uint64_t seed_;
    std::vector<std::vector<double>> xs_;
    std::vector<int> ys_;
    std::vector<std::uint32_t> order_;
    std::size_t cursor_ = 0;
};

struct ProbeSettings {
    bool enabled = false;
    int cadence = 1;
    int n_fit = 2000;
    int n_eval = 2000;
    RegKind reg = RegKind::L2;
    double strength = 1.0;
};

struct TrainRunOptions {
    // Correlation panel; built internally from the task when null.
    const MetricEvaluator* evaluator = nullptr;
    // Records are emitted every metric_cadence epochs (plus the final epoch);
    // early-stop checks run only on recorded epochs. Epoch numbers are
    // 1-based counts of completed epochs.
    int metric_cadence = 1;
    ProbeSettings probes;
    bool subnet_columns = true;
    double neuron_margin = 0.1;
    std::optional<double> stop_core_corr;
    // Called after each epoch's record is assembled; return false to stop.
    std::function<bool(const EpochRecord&, const MlpModel&)> on_epoch;
};

// Momentum SGD (velocity = mu * velocity + grad + wd * w; w -= lr * velocity)
// on the cross-entropy loss, with per-epoch metric records. Deterministic
// given config.seed. Throws TrainingError on NaN loss.
std::vector<EpochRecord> sgd_train(MlpModel& model, const TrainConfig& config,
                                   DataSource& source, const SpuriousTaskConfig& task,
                                   const TrainRunOptions& opts = {});

struct GradEstimate {
    ModelGrad mean;
    ModelGrad std_error;
};

// Monte Carlo estimate of the population loss gradient E[grad l(h(x), y)]
// under the task distribution, with per-entry standard errors.
GradEstimate population_gradient_mc(const MlpModel& model, const SpuriousTaskConfig& config,
                                    std::int64_t n_samples, std::uint64_t seed);

// Two-phase layer-wise training (depth 2, BooleanSymmetric init):
// phase 1 replaces the first-layer weights with a single population-gradient
// step of size 1/g_s (g_s = analytic spurious-coordinate gradient magnitude),
// then zeroes each coordinate whose |gradient| falls below that weight
// vector's mean |gradient|; phase 2 freezes the hidden layer, resets the
// output weights to zero and runs T plain-SGD steps on them.
void layerwise_train(MlpModel& model, const SpuriousTaskConfig& task, const TrainConfig& config,
                     std::int64_t first_step_samples, int second_phase_steps,
                     double second_phase_lr = 0.01);

}  // namespace splab
