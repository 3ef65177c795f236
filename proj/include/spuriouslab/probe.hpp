#pragma once

#include <cstdint>
#include <vector>

#include "spuriouslab/dataset.hpp"
#include "spuriouslab/metrics.hpp"
#include "spuriouslab/model.hpp"

namespace splab {

enum class RegKind { None, L2, L1 };

RegKind reg_kind_from_string(const std::string& s);
std::string to_string(RegKind kind);

struct ProbeOptions {
    RegKind reg = RegKind::L2;
    double strength = 1.0;
    int max_iters = 1000;
    double grad_tol = 1e-6;
};

struct ProbeFit {
    std::vector<double> w;
    double b = 0.0;
    double objective = 0.0;
    int iters = 0;
    bool converged = false;

    double logit(const double* z, int dim) const;
};

// Fits a linear readout min_w mean_i l(w . z_i + b, y_i) + penalty on fixed
// embeddings via full-batch gradient descent with backtracking line search
// (proximal step for L1). l is the same scaled cross-entropy used by the
// network.
ProbeFit fit_probe(const std::vector<std::vector<double>>& embeddings,
                   const std::vector<int>& labels, const ProbeOptions& opts = {});

// Decodability of a feature from the frozen hidden layer: fits a probe on
// n_fit fresh balanced samples (lambda forced to 1/2) targeting the feature
// value, then reports sign-agreement correlation on n_eval held-out samples.
double decoded_correlation(const MlpModel& model, const SpuriousTaskConfig& config,
                           Target target, int n_fit, int n_eval, std::uint64_t seed,
                           const ProbeOptions& opts = {});

struct RetrainResult {
    ProbeFit fit;
    GroupAccuracies before;
    GroupAccuracies after;
};

// Last-layer retraining: refits the output layer against the label on data
// drawn at mixture weight lambda_retrain (1/2 = group balanced) with the
// hidden layer frozen, installs the result in the model, and reports group
// accuracies before and after.
RetrainResult last_layer_retrain(MlpModel& model, const SpuriousTaskConfig& config,
                                 double lambda_retrain, int n_fit, std::uint64_t seed,
                                 const ProbeOptions& opts = {}, int n_eval = 20000);

}  // namespace splab
