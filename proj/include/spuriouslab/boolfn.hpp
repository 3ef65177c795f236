#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spuriouslab/error.hpp"
#include "spuriouslab/rng.hpp"

namespace splab {

// Inputs live on the hypercube {+1, -1}^n.
using BitVector = std::vector<std::int8_t>;

enum class FeatureKind { Parity, ThresholdStaircase, Majority };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

// A boolean feature evaluated on a contiguous slice [offset, offset+length)
// of the input. Parity multiplies the first `degree` slice coordinates;
// ThresholdStaircase thresholds the degree-`degree` staircase polynomial;
// Majority takes the sign of the full slice sum (length must be odd).
struct FeatureSpec {
    FeatureKind kind = FeatureKind::Parity;
    int degree = 1;
    int offset = 0;
    int length = 1;

    void validate(int n) const;

    // Evaluates on a full input of dimension >= offset+length. The double
    // overload reads +-1.0 values as produced by the training pipeline.
    int eval(const BitVector& x) const;
    int eval(const double* x) const;

    // Evaluates from enumeration bits of the slice alone: bit j set means
    // slice coordinate j equals -1.
    int eval_slice_bits(std::uint32_t bits) const;

    // Exact E[f] over the uniform slice distribution (enumeration).
    double mean() const;
    bool unbiased() const;
};

// sum_{k=1..d} prod_{i<=k} x_i over the slice prefix; integer in [-d, d].
int staircase_sum(const BitVector& x, const FeatureSpec& spec);

int eval_parity(const BitVector& x, const FeatureSpec& spec);
int eval_threshold_staircase(const BitVector& x, const FeatureSpec& spec);
int eval_majority(const BitVector& x, const FeatureSpec& spec);

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

// hat f(S) = E[f(x) chi_S(x)] over the slice's uniform cube. The subset mask
// is slice-relative: bit j selects slice coordinate j. Exact mode enumerates
// 2^length inputs (length <= 24).
double fourier_coefficient_exact(const FeatureSpec& spec, std::uint32_t subset);
McEstimate fourier_coefficient_mc(const FeatureSpec& spec, std::uint32_t subset,
                                  std::int64_t n_samples, std::uint64_t seed);

// All 2^length coefficients, indexed by subset mask (length <= 20).
std::vector<double> fourier_spectrum(const FeatureSpec& spec);

// Shared coefficient of every staircase term of sc_d (d >= 2):
// binom(d-1, d/2-1)/2^(d-1) for even d, binom(d-2, (d-1)/2)/2^(d-2) for odd d.
double staircase_term_coefficient(int d);

// xi_k(n): Fourier coefficient of Maj_n on a size-k set, computed exactly by
// summation over Hamming-weight classes. n odd; even k returns exactly 0.
double majority_fourier_xi(int n, int k);

// Exact binomial coefficient; requires n <= 62.
std::uint64_t binomial(int n, int k);

}  // namespace splab
