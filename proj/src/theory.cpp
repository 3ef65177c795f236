#include "spuriouslab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spuriouslab/error.hpp"
#include "spuriouslab/model.hpp"
#include "spuriouslab/rng.hpp"

namespace splab {

CoordType coord_type_from_string(const std::string& s) {
    if (s == "noise") return CoordType::Noise;
    if (s == "core") return CoordType::Core;
    if (s == "spurious") return CoordType::Spurious;
    throw ConfigError("unknown coordinate type: " + s);
}

std::string to_string(CoordType type) {
    switch (type) {
        case CoordType::Noise: return "noise";
        case CoordType::Core: return "core";
        case CoordType::Spurious: return "spurious";
    }
    return "?";
}

namespace {

void check_block_parities(int n, int s, int c, double lambda) {
    if (n <= 0) throw ConfigError("n must be positive");
    if (n % 2 == 0) throw ConfigError("majority-based gradient formulas need odd n");
    if (s < 2 || s % 2 != 0) throw ConfigError("spurious block length must be even and >= 2");
    if (c < 2 || c % 2 != 0) throw ConfigError("core block length must be even and >= 2");
    if (s + c > n) throw ConfigError("blocks exceed the dimension");
    if (lambda < 0.5 || lambda > 1.0) throw ConfigError("lambda must lie in [0.5, 1]");
}

// Sign character chi_S(w) for S = block plus/minus one index.
int chi_block(const BitVector& w, int lo, int hi, int drop, int add) {
    int prod = 1;
    for (int i = lo; i < hi; ++i)
        if (i != drop) prod *= w[static_cast<std::size_t>(i)];
    if (add >= 0) prod *= w[static_cast<std::size_t>(add)];
    return prod;
}

}  // namespace

GradientGaps init_gradient_gaps(int n, int s, int c, double lambda) {
    check_block_parities(n, s, c, lambda);
    GradientGaps gaps;
    gaps.spurious =
        -(lambda - 0.5) * (majority_fourier_xi(n, s - 1) - majority_fourier_xi(n, s + 1));
    gaps.core = -0.5 * (majority_fourier_xi(n, c - 1) - majority_fourier_xi(n, c + 1));
    return gaps;
}

double init_population_gradient(const BitVector& w, int a, CoordType type, int j, int n, int s,
                                int c, double lambda) {
    check_block_parities(n, s, c, lambda);
    if (static_cast<int>(w.size()) != n) throw DimensionError("weight vector length mismatch");
    if (a != 1 && a != -1) throw ConfigError("output sign must be +-1");
    for (int8_t v : w)
        if (v != 1 && v != -1) throw ConfigError("weight entries must be +-1");
    if (j < 0 || j >= n) throw ConfigError("coordinate index out of range");

    const int s_lo = 0, s_hi = s, c_lo = s, c_hi = s + c;
    const bool in_s = j < s_hi;
    const bool in_c = j >= c_lo && j < c_hi;
    const double half = 0.5, lam = lambda - 0.5;

    switch (type) {
        case CoordType::Noise: {
            if (in_s || in_c) throw ConfigError("index is not a noise coordinate");
            double core_term = majority_fourier_xi(n, c + 1) * chi_block(w, c_lo, c_hi, -1, j);
            double spur_term = majority_fourier_xi(n, s + 1) * chi_block(w, s_lo, s_hi, -1, j);
            return -a * (half * core_term + lam * spur_term);
        }
        case CoordType::Core: {
            if (!in_c) throw ConfigError("index is not a core coordinate");
            double core_term = majority_fourier_xi(n, c - 1) * chi_block(w, c_lo, c_hi, j, -1);
            double spur_term = majority_fourier_xi(n, s + 1) * chi_block(w, s_lo, s_hi, -1, j);
            return -a * (half * core_term + lam * spur_term);
        }
        case CoordType::Spurious: {
            if (!in_s) throw ConfigError("index is not a spurious coordinate");
            double core_term = majority_fourier_xi(n, c + 1) * chi_block(w, c_lo, c_hi, -1, j);
            double spur_term = majority_fourier_xi(n, s - 1) * chi_block(w, s_lo, s_hi, j, -1);
            return -a * (half * core_term + lam * spur_term);
        }
    }
    throw ConfigError("unknown coordinate type");
}

double layerwise_step_scale(const SpuriousTaskConfig& task) {
    const int n = task.n();
    if (n % 2 == 0) throw ConfigError("layerwise step scale needs odd n");
    if (task.s > 0 && task.lambda > 0.5)
        return (task.lambda - 0.5) * std::fabs(majority_fourier_xi(n, task.s - 1));
    return 0.5 * std::fabs(majority_fourier_xi(n, task.c - 1));
}

double bayes_margin(double lambda) {
    if (lambda < 0.5 || lambda > 1.0) throw ConfigError("lambda must lie in [0.5, 1]");
    if (lambda == 0.5) return 0.0;
    if (lambda == 1.0) return std::numeric_limits<double>::infinity();
    return std::log(lambda / (1.0 - lambda));
}

double slowdown_factor(double lambda) {
    if (lambda < 0.5 || lambda > 1.0) throw ConfigError("lambda must lie in [0.5, 1]");
    return 4.0 * lambda * (1.0 - lambda);
}

namespace {

// log(sigmoid(z)) without overflow.
double log_phi(double z) { return -softplus(-z); }

}  // namespace

double spurious_loss(MarginPair margins, double lambda) {
    if (!std::isfinite(margins.gamma_s) || !std::isfinite(margins.gamma_c))
        throw ConfigError("margins must be finite");
    return -lambda * log_phi(margins.gamma_c + margins.gamma_s) -
           (1.0 - lambda) * log_phi(margins.gamma_c - margins.gamma_s);
}

double spurious_loss_slope(double gamma_s, double gamma_c, double lambda) {
    // d/dgamma_s: -lambda (1 - phi(gc + gs)) + (1 - lambda)(1 - phi(gc - gs)).
    return -lambda * sigmoid(-(gamma_c + gamma_s)) +
           (1.0 - lambda) * sigmoid(-(gamma_c - gamma_s));
}

double optimal_spurious_margin(double gamma_c, double lambda, double tol) {
    if (gamma_c < 0.0) throw ConfigError("gamma_c must be nonnegative");
    if (lambda <= 0.5 || lambda >= 1.0) {
        if (lambda == 0.5) return 0.0;
        throw ConfigError("lambda must lie in (0.5, 1)");
    }
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.0, hi = 50.0;
    double x1 = hi - invphi * (hi - lo);
    double x2 = lo + invphi * (hi - lo);
    double f1 = spurious_loss({x1, gamma_c}, lambda);
    double f2 = spurious_loss({x2, gamma_c}, lambda);
    while (hi - lo > tol) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - invphi * (hi - lo);
            f1 = spurious_loss({x1, gamma_c}, lambda);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + invphi * (hi - lo);
            f2 = spurious_loss({x2, gamma_c}, lambda);
        }
    }
    // Loss comparisons bottom out near sqrt(machine eps); push the root of
    // the (monotone, closed-form) slope the rest of the way by bisection.
    double a = std::max(0.0, 0.5 * (lo + hi) - 1e-4);
    double b = std::min(50.0, 0.5 * (lo + hi) + 1e-4);
    while (spurious_loss_slope(a, gamma_c, lambda) > 0.0 && a > 0.0)
        a = std::max(0.0, a - 1e-3);
    while (spurious_loss_slope(b, gamma_c, lambda) < 0.0 && b < 50.0)
        b = std::min(50.0, b + 1e-3);
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (a + b);
        if (mid == a || mid == b) break;
        if (spurious_loss_slope(mid, gamma_c, lambda) < 0.0)
            a = mid;
        else
            b = mid;
    }
    return 0.5 * (a + b);
}

double core_gradient_ratio(double gamma_c, double lambda) {
    if (lambda == 0.5) return 1.0;
    double gs = optimal_spurious_margin(gamma_c, lambda);
    return 2.0 * lambda * sigmoid(-(gs + gamma_c)) / sigmoid(-gamma_c);
}

DeadNeuronInstance make_dead_neuron_instance(double lambda, double gamma_c) {
    DeadNeuronInstance inst;
    inst.task = SpuriousTaskConfig::make(FeatureKind::Parity, 2, 2, FeatureKind::Parity, 2, 2, 0,
                                         lambda);
    inst.gamma_c = gamma_c;
    // Gate 1{x0 + x1 + eps(x2 + x3) + 1/2 > 0} never flips on the core bits.
    inst.w = {1.0, 1.0, 1e-5, 1e-5};
    inst.b = 0.5;
    inst.a = 1.0;
    return inst;
}

McEstimate dead_spurious_gradient_check(const DeadNeuronInstance& inst, int core_j,
                                        std::int64_t n_samples, std::uint64_t seed) {
    const SpuriousTaskConfig& task = inst.task;
    task.validate();
    const int n = task.n();
    if (static_cast<int>(inst.w.size()) != n) throw DimensionError("neuron weight length mismatch");
    if (core_j < task.s || core_j >= task.s + task.c)
        throw ConfigError("core_j must index the core block");
    if (n_samples <= 0) throw ConfigError("n_samples must be positive");
    double core_mass = 0.0;
    for (int i = task.s; i < task.s + task.c; ++i) core_mass += std::fabs(inst.w[i]);
    for (int i = 0; i < task.s; ++i)
        if (core_mass >= std::fabs(inst.w[i]))
            throw ConfigError("gate condition violated: core |w| mass must stay below every spurious |w_j|");

    Rng rng = derive_rng(seed, "dead-neuron", {static_cast<std::uint64_t>(core_j)});
    std::vector<double> x(static_cast<std::size_t>(n));
    int y = 0;
    Group g = Group::Majority;
    double sum = 0.0, sumsq = 0.0;
    for (std::int64_t t = 0; t < n_samples; ++t) {
        sample_into(task, rng, x.data(), y, g);
        double pre = inst.b;
        for (int i = 0; i < n; ++i) pre += inst.w[i] * x[static_cast<std::size_t>(i)];
        double margin = inst.gamma_c + inst.margin_wobble * x[static_cast<std::size_t>(task.s)];
        double h = margin * task.f_c.eval(x.data()) + inst.a * (pre > 0.0 ? pre : 0.0);
        double grad = pre > 0.0 ? loss_grad(h, y) * inst.a * x[static_cast<std::size_t>(core_j)]
                                : 0.0;
        sum += grad;
        sumsq += grad * grad;
    }
    McEstimate est;
    const double N = static_cast<double>(n_samples);
    est.value = sum / N;
    double var = std::max(0.0, (sumsq - sum * sum / N) / (N - 1.0));
    est.std_error = std::sqrt(var / N);
    return est;
}

ParityReluConstruction parity_relu_construction(int k) {
    if (k < 1) throw ConfigError("k must be at least 1");
    if (k > 20) throw ResourceError("parity ReLU verification enumerates 2^k inputs; k > 20 refused");
    ParityReluConstruction out;
    out.k = k;
    const int m = k + 1;
    out.biases.resize(m);
    for (int j = 0; j < m; ++j) out.biases[j] = static_cast<double>(k + 1 - 2 * j);
    out.matrix.assign(m, std::vector<double>(m, 0.0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            double v = static_cast<double>(k - 2 * i) + out.biases[j];
            out.matrix[i][j] = v > 0.0 ? v : 0.0;
        }
    // M[i][j] vanishes for j > k - i and M[i][k - i] = 1: solve rows bottom-up.
    std::vector<double> u(m, 0.0), y(m);
    for (int i = 0; i < m; ++i) y[i] = i % 2 == 0 ? 1.0 : -1.0;
    for (int i = m - 1; i >= 0; --i) {
        double acc = y[i];
        for (int j = 0; j < k - i; ++j) acc -= out.matrix[i][j] * u[j];
        u[k - i] = acc;  // diagonal coefficient is exactly 1
    }
    out.coeffs = u;
    double norm = 0.0;
    for (double v : u) norm += v * v;
    out.coeff_norm = std::sqrt(norm);

    double worst = 0.0;
    const std::uint64_t total = 1ull << k;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        int ones = k - 2 * static_cast<int>(__builtin_popcountll(mask));
        double acc = 0.0;
        for (int j = 0; j < m; ++j) {
            double v = static_cast<double>(ones) + out.biases[j];
            acc += u[j] * (v > 0.0 ? v : 0.0);
        }
        double parity = __builtin_popcountll(mask) % 2 == 0 ? 1.0 : -1.0;
        worst = std::max(worst, std::fabs(acc - parity));
    }
    out.max_abs_residual = worst;
    out.exact = worst <= 1e-9;
    return out;
}

TheoryReport make_theory_report(int n, int s, int c, double lambda, double gamma_c) {
    TheoryReport rep;
    rep.gaps = init_gradient_gaps(n, s, c, lambda);
    for (int k : {s - 1, s + 1, c - 1, c + 1})
        rep.xi_table[k] = majority_fourier_xi(n, k);
    rep.bayes = bayes_margin(lambda);
    rep.slowdown = slowdown_factor(lambda);
    rep.gamma_c = gamma_c;
    if (lambda > 0.5 && lambda < 1.0) {
        rep.gamma_s_star = optimal_spurious_margin(gamma_c, lambda);
        rep.gradient_ratio = core_gradient_ratio(gamma_c, lambda);
    } else {
        rep.gamma_s_star = lambda == 0.5 ? 0.0 : std::numeric_limits<double>::infinity();
        rep.gradient_ratio = lambda == 0.5 ? 1.0 : 0.0;
    }
    return rep;
}

}  // namespace splab
