#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spuriouslab/boolfn.hpp"
#include "spuriouslab/rng.hpp"

namespace splab {

enum class Group : std::uint8_t { Majority, Minority };

// Task layout: x = [spurious block | core block | noise block] with lengths
// s, c, u. The label is y = f_c(x_core); a sample is in the majority group
// when f_s(x_spur) agrees with the label. lambda is the majority fraction.
// s = 0 disables the spurious feature entirely (pure uniform task).
struct SpuriousTaskConfig {
    int s = 0;
    int c = 1;
    int u = 0;
    double lambda = 0.5;
    FeatureSpec f_s;
    FeatureSpec f_c;

    int n() const { return s + c + u; }
    void validate() const;

    // Convenience constructor placing degree-d features at the start of each
    // block (slice length = block length).
    static SpuriousTaskConfig make(FeatureKind spur_kind, int s, int spur_degree,
                                   FeatureKind core_kind, int c, int core_degree,
                                   int u, double lambda);
};

struct LabeledSample {
    BitVector x;
    int y = 0;  // +1 or -1
    Group group = Group::Majority;
};

// Draws one sample: agree ~ Bernoulli(lambda); core and noise blocks uniform;
// spurious block uniform conditioned on f_s = y (agree) or f_s = -y, via
// rejection. Throws ConfigError after 10,000 rejected tries (only possible
// when f_s never attains the required sign).
LabeledSample sample(const SpuriousTaskConfig& config, Rng& rng);

// Allocation-free variant for the training loop: writes x as +-1.0 doubles.
void sample_into(const SpuriousTaskConfig& config, Rng& rng, double* x_out, int& y_out,
                 Group& group_out);

// Exact probability mass of the sampler's distribution at x. Requires
// n <= 24 and an unbiased f_s (with a biased f_s the conditional sampler no
// longer coincides with the uniform-conditioned mixture this computes).
double exact_pmf(const SpuriousTaskConfig& config, const BitVector& x);

// Equivalent mixture form 2(1-lambda) P_unif + (2 lambda - 1) P_same; equals
// exact_pmf pointwise. Same preconditions.
double mixture_pmf(const SpuriousTaskConfig& config, const BitVector& x);

// Fourier coefficient of the label: E[chi_S(x) y] = hat f_c(S) for S inside
// the core block, (2 lambda - 1) hat f_s(S) for S inside the spurious block,
// 0 for mixed or noise-touching S. Subset bits index full-input coordinates.
// Requires both features unbiased.
double label_fourier(const SpuriousTaskConfig& config, std::uint64_t subset);

enum class MarginalBlock { Spurious, Core, SpuriousCore };

// Chi-square goodness-of-fit p-value of the sampled block marginal against
// the uniform distribution on that block (block length <= 16).
double marginal_check(const SpuriousTaskConfig& config, MarginalBlock block, std::int64_t n_samples,
                      std::uint64_t seed);

struct FiniteDataset {
    SpuriousTaskConfig config;
    std::uint64_t seed = 0;
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
    std::vector<int> minority_indices() const;
};

FiniteDataset make_finite_dataset(const SpuriousTaskConfig& config, std::int64_t size,
                                  std::uint64_t seed);

// One sample per line: bits as '+'/'-' characters, tab, label (+1/-1), tab,
// group (majority/minority).
void save_tsv(const FiniteDataset& dataset, const std::string& path);
FiniteDataset load_tsv(const std::string& path);

}  // namespace splab
