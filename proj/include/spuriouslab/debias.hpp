#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spuriouslab/dataset.hpp"
#include "spuriouslab/metrics.hpp"
#include "spuriouslab/model.hpp"
#include "spuriouslab/train.hpp"

namespace splab {

enum class InferMethod { Jtt, TopCe, TopKl, MarginCluster };

InferMethod infer_method_from_string(const std::string& s);
std::string to_string(InferMethod method);

// Predicted minority-group indices into a finite dataset.
struct GroupInference {
    std::vector<int> predicted;
    InferMethod method = InferMethod::Jtt;
    int epoch = 0;
    bool degenerate = false;  // clustering collapsed; predicted is empty
};

// Logits of the model on every dataset row, in dataset order.
std::vector<double> dataset_logits(const MlpModel& model, const FiniteDataset& data);

// Misclassified points: sgn(h(x)) != y.
GroupInference jtt_infer(const MlpModel& model, const FiniteDataset& data);

// Top-k rows by loss; ties broken by ascending dataset index.
GroupInference rank_by_ce(const MlpModel& model, const FiniteDataset& data, int k);

// Top-k rows by KL divergence between the two models' Bernoulli outputs
// phi(h_early) and phi(h_late); ties broken by ascending dataset index.
GroupInference rank_by_kl(const MlpModel& early, const MlpModel& late, const FiniteDataset& data,
                          int k);

// Within each label class, 2-means on the logit; the smaller-margin cluster
// is predicted minority ("SPARE-like" simplification). A class whose logits
// are constant contributes nothing and marks the result degenerate.
GroupInference margin_cluster_infer(const MlpModel& model, const FiniteDataset& data);

// Logit-level variants used to score stored training trajectories.
GroupInference jtt_from_logits(const std::vector<double>& logits, const FiniteDataset& data);
GroupInference ce_from_logits(const std::vector<double>& logits, const FiniteDataset& data, int k);
GroupInference kl_from_logits(const std::vector<double>& early, const std::vector<double>& late,
                              const FiniteDataset& data, int k);
GroupInference cluster_from_logits(const std::vector<double>& logits, const FiniteDataset& data);

// Set scores over ascending-sorted index vectors (all inference results and
// minority_indices() are already sorted).
// |A intersect B| / |A union B|; both empty -> 1 by convention.
double jaccard(const std::vector<int>& a, const std::vector<int>& b);
// |A intersect B| / |A|; empty A -> 1 by convention.
double containment(const std::vector<int>& a, const std::vector<int>& b);

struct EpochInference {
    int epoch = 0;
    double jaccard_jtt = 0.0, containment_jtt = 0.0;
    double jaccard_ce = 0.0, containment_ce = 0.0;
    double jaccard_kl = 0.0, containment_kl = 0.0;
    double jaccard_cluster = 0.0, containment_cluster = 0.0;
};

// Trains a fresh model on the dataset, storing its logits on every row each
// cadence epochs, then scores every inference method at every stored epoch
// against the true minority set. Rank methods use k (k < 0 picks |minority|);
// KL compares each epoch to the final model.
std::vector<EpochInference> inference_curve(const SpuriousTaskConfig& task,
                                            const FiniteDataset& data, const TrainConfig& config,
                                            int cadence = 1, int k = -1);

struct DebiasOutcome {
    MlpModel model;
    std::vector<EpochRecord> records;
    GroupAccuracies groups;
    double core_corr = 0.0;
    double spurious_corr = 0.0;
    bool fell_back_to_erm = false;  // inference was empty
};

// Retrains from scratch on the dataset with the predicted-minority rows
// duplicated ceil(upweight) - 1 extra times.
DebiasOutcome upsample_retrain(const SpuriousTaskConfig& task, const FiniteDataset& data,
                               const GroupInference& inference, double upweight,
                               const TrainConfig& config, const TrainRunOptions& opts = {});

}  // namespace splab
