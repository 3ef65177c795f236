#include <doctest.h>

#include <cmath>
#include <vector>

#include "spuriouslab/dataset.hpp"
#include "spuriouslab/error.hpp"
#include "spuriouslab/model.hpp"
#include "spuriouslab/rng.hpp"
#include "spuriouslab/theory.hpp"

using namespace splab;

namespace {

BitVector bits_from_mask(int n, unsigned mask) {
    BitVector x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = (mask >> i) & 1u ? -1 : 1;
    return x;
}

// Exact population gradient at a symmetric (output == 0) initialization by
// direct enumeration: E[loss_grad(0, y) * a * 1{w . x > 0} * x_j].
double enumerated_init_gradient(const SpuriousTaskConfig& task, const BitVector& w, int a,
                                int j) {
    const int n = task.n();
    double total = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        BitVector x = bits_from_mask(n, mask);
        double p = exact_pmf(task, x);
        int y = task.f_c.eval(x);
        int dot = 0;
        for (int i = 0; i < n; ++i) dot += w[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        if (dot <= 0) continue;  // relu gate closed (n odd, so never exactly 0)
        total += p * loss_grad(0.0, y) * a * x[static_cast<std::size_t>(j)];
    }
    return total;
}

}  // namespace

TEST_CASE("initial population gradient matches exact enumeration") {
    const int n = 7, s = 2, c = 4;
    for (double lambda : {0.6, 0.9}) {
        SpuriousTaskConfig task = SpuriousTaskConfig::make(FeatureKind::Parity, s, s,
                                                           FeatureKind::Parity, c, c, n - s - c,
                                                           lambda);
        Rng rng(99);
        for (int probe = 0; probe < 8; ++probe) {
            BitVector w(static_cast<std::size_t>(n));
            for (auto& v : w) v = static_cast<std::int8_t>(rng.pick_sign());
            int a = rng.pick_sign();
            struct Case {
                CoordType type;
                int j;
            };
            for (Case cs : {Case{CoordType::Spurious, 0}, Case{CoordType::Spurious, 1},
                            Case{CoordType::Core, 2}, Case{CoordType::Core, 5},
                            Case{CoordType::Noise, 6}}) {
                double got = init_population_gradient(w, a, cs.type, cs.j, n, s, c, lambda);
                double want = enumerated_init_gradient(task, w, a, cs.j);
                CHECK(std::abs(got - want) <= 1e-12);
            }
        }
    }
}

TEST_CASE("gradient gaps equal the coordinate-type differences") {
    const int n = 7, s = 2, c = 4;
    const double lambda = 0.8;
    GradientGaps gaps = init_gradient_gaps(n, s, c, lambda);
    BitVector ones(static_cast<std::size_t>(n), 1);
    double g_spur = init_population_gradient(ones, 1, CoordType::Spurious, 0, n, s, c, lambda);
    double g_core = init_population_gradient(ones, 1, CoordType::Core, 2, n, s, c, lambda);
    double g_noise = init_population_gradient(ones, 1, CoordType::Noise, 6, n, s, c, lambda);
    CHECK(std::abs(gaps.spurious - (g_spur - g_noise)) <= 1e-12);
    CHECK(std::abs(gaps.core - (g_core - g_noise)) <= 1e-12);
    // Low-degree blocks get the larger pull: |spurious gap| > |core gap| here.
    CHECK(std::abs(gaps.spurious) > std::abs(gaps.core));
}

TEST_CASE("gradient formula argument validation") {
    BitVector w(7, 1);
    CHECK_THROWS_AS(init_gradient_gaps(6, 2, 4, 0.9), ConfigError);   // even n
    CHECK_THROWS_AS(init_gradient_gaps(7, 3, 4, 0.9), ConfigError);   // odd block
    CHECK_THROWS_AS(init_gradient_gaps(7, 2, 4, 0.4), ConfigError);   // lambda range
    CHECK_THROWS_AS(init_gradient_gaps(7, 4, 4, 0.9), ConfigError);   // blocks exceed n
    CHECK_THROWS_AS(init_population_gradient(w, 2, CoordType::Core, 2, 7, 2, 4, 0.9),
                    ConfigError);
    CHECK_THROWS_AS(init_population_gradient(w, 1, CoordType::Core, 0, 7, 2, 4, 0.9),
                    ConfigError);  // index not in the named block
    CHECK_THROWS_AS(init_population_gradient(w, 1, CoordType::Noise, 3, 7, 2, 4, 0.9),
                    ConfigError);
    BitVector bad(7, 1);
    bad[0] = 0;
    CHECK_THROWS_AS(init_population_gradient(bad, 1, CoordType::Core, 2, 7, 2, 4, 0.9),
                    ConfigError);
    CHECK_THROWS_AS(init_population_gradient(BitVector(6, 1), 1, CoordType::Core, 2, 7, 2, 4, 0.9),
                    DimensionError);
}

TEST_CASE("layerwise step scale picks the dominant block") {
    SpuriousTaskConfig task = SpuriousTaskConfig::make(FeatureKind::Parity, 2, 2,
                                                       FeatureKind::Parity, 4, 4, 1, 0.9);
    CHECK(layerwise_step_scale(task) ==
          doctest::Approx(0.4 * std::fabs(majority_fourier_xi(7, 1))).epsilon(1e-12));
    SpuriousTaskConfig no_spur = SpuriousTaskConfig::make(FeatureKind::Parity, 0, 0,
                                                          FeatureKind::Parity, 4, 4, 3, 0.5);
    CHECK(layerwise_step_scale(no_spur) ==
          doctest::Approx(0.5 * std::fabs(majority_fourier_xi(7, 3))).epsilon(1e-12));
    SpuriousTaskConfig even = SpuriousTaskConfig::make(FeatureKind::Parity, 2, 2,
                                                       FeatureKind::Parity, 4, 4, 0, 0.9);
    CHECK_THROWS_AS(layerwise_step_scale(even), ConfigError);
}

TEST_CASE("bayes margin and slowdown factor") {
    CHECK(bayes_margin(0.5) == 0.0);
    CHECK(bayes_margin(0.75) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK(std::isinf(bayes_margin(1.0)));
    CHECK_THROWS_AS(bayes_margin(0.3), ConfigError);
    CHECK(slowdown_factor(0.5) == 1.0);
    CHECK(slowdown_factor(0.9) == doctest::Approx(0.36).epsilon(1e-15));
    CHECK_THROWS_AS(slowdown_factor(1.2), ConfigError);
}

TEST_CASE("spurious loss slope is the margin derivative") {
    const double eps = 1e-6;
    for (double gc : {0.0, 0.7, 2.0}) {
        for (double gs : {0.0, 0.5, 1.5}) {
            double num = (spurious_loss({gs + eps, gc}, 0.85) -
                          spurious_loss({gs - eps, gc}, 0.85)) /
                         (2.0 * eps);
            CHECK(spurious_loss_slope(gs, gc, 0.85) == doctest::Approx(num).epsilon(1e-5));
        }
    }
    CHECK_THROWS_AS(spurious_loss({std::nan(""), 0.0}, 0.9), ConfigError);
}

TEST_CASE("optimal spurious margin anchors and shape") {
    for (double lam : {0.6, 0.75, 0.9, 0.99})
        CHECK(std::abs(optimal_spurious_margin(0.0, lam) - bayes_margin(lam)) <= 1e-6);
    // First-order condition at the reported optimum.
    for (double gc : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        for (double lam : {0.6, 0.8, 0.95}) {
            double gs = optimal_spurious_margin(gc, lam);
            CHECK(std::abs(spurious_loss_slope(gs, gc, lam)) <= 1e-8);
        }
    }
    // Nonincreasing in the core margin.
    double prev = optimal_spurious_margin(0.0, 0.9);
    for (double gc = 0.5; gc <= 3.0 + 1e-9; gc += 0.5) {
        double cur = optimal_spurious_margin(gc, 0.9);
        CHECK(cur <= prev + 1e-9);
        prev = cur;
    }
    CHECK(optimal_spurious_margin(1.0, 0.5) == 0.0);
    CHECK_THROWS_AS(optimal_spurious_margin(-0.1, 0.9), ConfigError);
    CHECK_THROWS_AS(optimal_spurious_margin(0.0, 1.0), ConfigError);
}

TEST_CASE("core gradient ratio at zero core margin") {
    for (double lam : {0.6, 0.75, 0.9, 0.99})
        CHECK(std::abs(core_gradient_ratio(0.0, lam) - 4.0 * lam * (1.0 - lam)) <= 1e-8);
    CHECK(core_gradient_ratio(0.7, 0.5) == 1.0);
    // The mixture can only slow the core feature down.
    for (double gc : {0.0, 1.0, 2.5}) {
        double r = core_gradient_ratio(gc, 0.85);
        CHECK(r > 0.0);
        CHECK(r < 1.0);
    }
}

TEST_CASE("parity relu construction is exact") {
    for (int k : {1, 3, 5, 7}) {
        ParityReluConstruction pc = parity_relu_construction(k);
        CHECK(pc.exact);
        CHECK(pc.max_abs_residual <= 1e-12);
        CHECK(static_cast<int>(pc.coeffs.size()) == k + 1);
        // Re-evaluate from coefficients and biases on every input.
        for (unsigned mask = 0; mask < (1u << k); ++mask) {
            int sum = 0;
            for (int i = 0; i < k; ++i) sum += (mask >> i) & 1u ? -1 : 1;
            double acc = 0.0;
            for (int j = 0; j <= k; ++j) {
                double pre = static_cast<double>(sum) + pc.biases[j];
                acc += pc.coeffs[j] * (pre > 0.0 ? pre : 0.0);
            }
            double parity = __builtin_popcount(mask) % 2 == 0 ? 1.0 : -1.0;
            CHECK(std::abs(acc - parity) <= 1e-12);
        }
    }
    // The internal matrix follows the closed form for k = 5.
    ParityReluConstruction p5 = parity_relu_construction(5);
    for (int i = 0; i <= 5; ++i)
        for (int j = 0; j <= 5; ++j)
            CHECK(p5.matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
                  std::max(0.0, 2.0 * (5.0 - i - j) + 1.0));
    CHECK_THROWS_AS(parity_relu_construction(0), ConfigError);
    CHECK_THROWS_AS(parity_relu_construction(21), ResourceError);
}

TEST_CASE("dead spurious neuron has no core gradient") {
    DeadNeuronInstance inst = make_dead_neuron_instance(0.9, 1.0);
    McEstimate est = dead_spurious_gradient_check(inst, 2, 200000, 5);
    CHECK(est.std_error > 0.0);
    CHECK(std::abs(est.value) <= 3.0 * est.std_error);

    // Negative control: a core-dependent margin breaks the cancellation.
    DeadNeuronInstance wobble = inst;
    wobble.margin_wobble = 1.0;
    McEstimate bad = dead_spurious_gradient_check(wobble, 2, 200000, 5);
    CHECK(std::abs(bad.value) > 5.0 * bad.std_error);

    CHECK_THROWS_AS(dead_spurious_gradient_check(inst, 0, 1000, 1), ConfigError);
    CHECK_THROWS_AS(dead_spurious_gradient_check(inst, 2, 0, 1), ConfigError);
    DeadNeuronInstance short_w = inst;
    short_w.w.pop_back();
    CHECK_THROWS_AS(dead_spurious_gradient_check(short_w, 2, 1000, 1), DimensionError);
    DeadNeuronInstance heavy = inst;
    heavy.w[2] = 2.0;  // core mass now exceeds the spurious weights
    CHECK_THROWS_AS(dead_spurious_gradient_check(heavy, 2, 1000, 1), ConfigError);
}

TEST_CASE("theory report wires the oracles together") {
    TheoryReport rep = make_theory_report(7, 2, 4, 0.9, 0.5);
    CHECK(rep.bayes == bayes_margin(0.9));
    CHECK(rep.slowdown == slowdown_factor(0.9));
    CHECK(rep.gamma_c == 0.5);
    CHECK(rep.gamma_s_star == optimal_spurious_margin(0.5, 0.9));
    CHECK(rep.gradient_ratio == core_gradient_ratio(0.5, 0.9));
    CHECK(rep.xi_table.count(1) == 1);  // s - 1
    CHECK(rep.xi_table.count(3) == 1);  // s + 1 and c - 1
    CHECK(rep.xi_table.count(5) == 1);  // c + 1
    GradientGaps gaps = init_gradient_gaps(7, 2, 4, 0.9);
    CHECK(rep.gaps.spurious == gaps.spurious);
    CHECK(rep.gaps.core == gaps.core);

    TheoryReport balanced = make_theory_report(7, 2, 4, 0.5);
    CHECK(balanced.gamma_s_star == 0.0);
    CHECK(balanced.gradient_ratio == 1.0);
    TheoryReport pure = make_theory_report(7, 2, 4, 1.0);
    CHECK(std::isinf(pure.gamma_s_star));
    CHECK(pure.gradient_ratio == 0.0);
}

TEST_CASE("coordinate type names round trip") {
    for (CoordType t : {CoordType::Noise, CoordType::Core, CoordType::Spurious})
        CHECK(coord_type_from_string(to_string(t)) == t);
    CHECK_THROWS_AS(coord_type_from_string("label"), ConfigError);
}
