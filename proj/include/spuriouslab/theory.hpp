#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "spuriouslab/boolfn.hpp"
#include "spuriouslab/dataset.hpp"

namespace splab {

// Margins of a decomposed predictor h = gamma_c * f_c + gamma_s * f_s.
struct MarginPair {
    double gamma_s = 0.0;
    double gamma_c = 0.0;
};

enum class CoordType { Noise, Core, Spurious };

CoordType coord_type_from_string(const std::string& s);
std::string to_string(CoordType type);

struct GradientGaps {
    double spurious = 0.0;
    double core = 0.0;
};

// Population-gradient gaps (relevant coordinate minus noise coordinate) at a
// symmetric initialization, for parity features inside a majority-like
// mixture: spurious = -(lambda - 1/2)(xi_{s-1} - xi_{s+1}),
// core = -(1/2)(xi_{c-1} - xi_{c+1}). Requires n odd and s, c even, s >= 2.
GradientGaps init_gradient_gaps(int n, int s, int c, double lambda);

// Exact population gradient of the scaled cross-entropy loss with respect to
// first-layer weight j of a sign-pattern neuron (w in {+-1}^n, output weight
// a in {+-1}) at an initialization where the network output is identically 0.
// Coordinate layout: spurious block [0, s), core block [s, s+c), noise after.
// j is the absolute coordinate index and must lie in the block named by type.
double init_population_gradient(const BitVector& w, int a, CoordType type, int j, int n, int s,
                                int c, double lambda);

// Step scale for the layer-wise first gradient step: the dominant analytic
// per-coordinate gradient magnitude ((lambda - 1/2)|xi_{s-1}| when the
// mixture favors the spurious block, else (1/2)|xi_{c-1}|).
double layerwise_step_scale(const SpuriousTaskConfig& task);

// ln(lambda / (1 - lambda)): the logit of the best spurious-only classifier.
// Returns 0 at lambda = 0.5 and +infinity at lambda = 1.
double bayes_margin(double lambda);

// 4 lambda (1 - lambda): the factor by which the core-coordinate gradient
// shrinks once the spurious margin sits at its optimum (at gamma_c = 0).
double slowdown_factor(double lambda);

// Population loss of the decomposed predictor:
//   -lambda log(phi(gamma_c + gamma_s)) - (1 - lambda) log(phi(gamma_c - gamma_s)).
double spurious_loss(MarginPair margins, double lambda);

// d spurious_loss / d gamma_s; its root is the optimal spurious margin.
double spurious_loss_slope(double gamma_s, double gamma_c, double lambda);

// argmin over gamma_s in [0, 50] of spurious_loss at fixed (gamma_c, lambda),
// by golden-section search plus a bisection polish of the first-order
// condition inside the final bracket.
double optimal_spurious_margin(double gamma_c, double lambda, double tol = 1e-10);

// 2 lambda (1 - phi(gamma_s* + gamma_c)) / (1 - phi(gamma_c)): core-feature
// gradient under the mixture relative to the uncorrelated baseline.
double core_gradient_ratio(double gamma_c, double lambda);

// A hand-built network gamma_c * f_c(x) + a * relu(w . x + b) whose ReLU gate
// is controlled by the spurious block: sum of |w| over the core block is
// smaller than every spurious |w_j|. margin_wobble != 0 deliberately breaks
// the constant-core-margin assumption (negative control).
struct DeadNeuronInstance {
    SpuriousTaskConfig task;
    double gamma_c = 1.0;
    std::vector<double> w;
    double b = 0.0;
    double a = 1.0;
    double margin_wobble = 0.0;
};

// s=2, c=2 parity instance satisfying the gate condition.
DeadNeuronInstance make_dead_neuron_instance(double lambda, double gamma_c);

// MC estimate of the population loss gradient on the neuron's weight at core
// coordinate core_j; the claim under test is that it vanishes.
McEstimate dead_spurious_gradient_check(const DeadNeuronInstance& inst, int core_j,
                                        std::int64_t n_samples, std::uint64_t seed);

// Exact representation of the k-parity on {-1,+1}^k as a sum of k+1 ReLUs of
// the coordinate sum, via the anti-triangular system over Hamming-weight
// classes.
struct ParityReluConstruction {
    int k = 0;
    std::vector<double> biases;               // k+1 - 2j, j = 0..k
    std::vector<double> coeffs;               // solved ReLU coefficients
    std::vector<std::vector<double>> matrix;  // M[i][j] = relu((k - 2i) + b_j)
    double coeff_norm = 0.0;
    double max_abs_residual = 0.0;            // over all 2^k inputs (k <= 20)
    bool exact = false;
};

ParityReluConstruction parity_relu_construction(int k);

struct TheoryReport {
    std::map<int, double> xi_table;
    GradientGaps gaps;
    double bayes = 0.0;
    double slowdown = 0.0;
    double gamma_c = 0.0;
    double gamma_s_star = 0.0;
    double gradient_ratio = 0.0;
};

TheoryReport make_theory_report(int n, int s, int c, double lambda, double gamma_c = 0.0);

}  // namespace splab
