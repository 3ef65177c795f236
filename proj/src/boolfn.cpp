#include "spuriouslab/boolfn.hpp"

#include <bit>
#include <cmath>

namespace splab {

std::string to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::Parity: return "parity";
        case FeatureKind::ThresholdStaircase: return "staircase";
        case FeatureKind::Majority: return "majority";
    }
    return "?";
}

FeatureKind feature_kind_from_string(const std::string& name) {
    if (name == "parity") return FeatureKind::Parity;
    if (name == "staircase") return FeatureKind::ThresholdStaircase;
    if (name == "majority") return FeatureKind::Majority;
    throw ConfigError("unknown feature kind: " + name);
}

void FeatureSpec::validate(int n) const {
    if (length <= 0 || offset < 0 || offset + length > n)
        throw DimensionError("feature slice [" + std::to_string(offset) + ", " +
                             std::to_string(offset + length) + ") out of bounds for n=" +
                             std::to_string(n));
    if (degree <= 0 || degree > length)
        throw ConfigError("feature degree " + std::to_string(degree) +
                          " exceeds slice length " + std::to_string(length));
    if (kind == FeatureKind::Majority && length % 2 == 0)
        throw ConfigError("majority requires an odd slice length");
}

namespace {

inline int sign_of_sum(int sum) { return sum >= 0 ? +1 : -1; }

template <class Get>
int eval_impl(const FeatureSpec& spec, Get get) {
    switch (spec.kind) {
        case FeatureKind::Parity: {
            int prod = 1;
            for (int j = 0; j < spec.degree; ++j) prod *= get(j);
            return prod;
        }
        case FeatureKind::ThresholdStaircase: {
            int sum = 0, cum = 1;
            for (int j = 0; j < spec.degree; ++j) {
                cum *= get(j);
                sum += cum;
            }
            return sign_of_sum(sum);
        }
        case FeatureKind::Majority: {
            int sum = 0;
            for (int j = 0; j < spec.length; ++j) sum += get(j);
            return sign_of_sum(sum);
        }
    }
    return 0;
}

}  // namespace

int FeatureSpec::eval(const BitVector& x) const {
    if (offset + length > static_cast<int>(x.size()))
        throw DimensionError("input shorter than feature slice");
    return eval_impl(*this, [&](int j) { return static_cast<int>(x[offset + j]); });
}

int FeatureSpec::eval(const double* x) const {
    return eval_impl(*this, [&](int j) { return x[offset + j] < 0.0 ? -1 : +1; });
}

int FeatureSpec::eval_slice_bits(std::uint32_t bits) const {
    switch (kind) {
        case FeatureKind::Parity: {
            std::uint32_t mask = (degree >= 32) ? ~0u : ((1u << degree) - 1u);
            return (std::popcount(bits & mask) & 1) ? -1 : +1;
        }
        default:
            return eval_impl(*this, [&](int j) { return (bits >> j) & 1u ? -1 : +1; });
    }
}

double FeatureSpec::mean() const {
    if (length > 24) throw ResourceError("enumeration over 2^" + std::to_string(length) +
                                         " exceeds the 2^24 budget");
    std::int64_t sum = 0;
    for (std::uint32_t bits = 0; bits < (1u << length); ++bits) sum += eval_slice_bits(bits);
    return static_cast<double>(sum) / std::ldexp(1.0, length);
}

bool FeatureSpec::unbiased() const { return mean() == 0.0; }

int staircase_sum(const BitVector& x, const FeatureSpec& spec) {
    if (spec.offset + spec.length > static_cast<int>(x.size()))
        throw DimensionError("input shorter than feature slice");
    int sum = 0, cum = 1;
    for (int j = 0; j < spec.degree; ++j) {
        cum *= x[spec.offset + j];
        sum += cum;
    }
    return sum;
}

int eval_parity(const BitVector& x, const FeatureSpec& spec) {
    FeatureSpec p = spec;
    p.kind = FeatureKind::Parity;
    return p.eval(x);
}

int eval_threshold_staircase(const BitVector& x, const FeatureSpec& spec) {
    FeatureSpec p = spec;
    p.kind = FeatureKind::ThresholdStaircase;
    return p.eval(x);
}

int eval_majority(const BitVector& x, const FeatureSpec& spec) {
    FeatureSpec p = spec;
    p.kind = FeatureKind::Majority;
    if (p.length % 2 == 0) throw ConfigError("majority requires an odd slice length");
    return p.eval(x);
}

double fourier_coefficient_exact(const FeatureSpec& spec, std::uint32_t subset) {
    if (spec.length > 24)
        throw ResourceError("exact Fourier coefficient limited to slice length <= 24");
    std::int64_t sum = 0;
    const std::uint32_t count = 1u << spec.length;
    for (std::uint32_t bits = 0; bits < count; ++bits) {
        int chi = (std::popcount(bits & subset) & 1) ? -1 : +1;
        sum += spec.eval_slice_bits(bits) * chi;
    }
    return static_cast<double>(sum) / static_cast<double>(count);
}

McEstimate fourier_coefficient_mc(const FeatureSpec& spec, std::uint32_t subset,
                                  std::int64_t n_samples, std::uint64_t seed) {
    if (n_samples <= 1) throw ConfigError("Monte Carlo estimate needs at least 2 samples");
    Rng rng = derive_rng(seed, "fourier-mc");
    double sum = 0.0, sum_sq = 0.0;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(rng.next_u64()) &
                             ((spec.length >= 32) ? ~0u : ((1u << spec.length) - 1u));
        int chi = (std::popcount(bits & subset) & 1) ? -1 : +1;
        double v = static_cast<double>(spec.eval_slice_bits(bits) * chi);
        sum += v;
        sum_sq += v * v;
    }
    double n = static_cast<double>(n_samples);
    double mean = sum / n;
    double var = (sum_sq - n * mean * mean) / (n - 1.0);
    if (var < 0.0) var = 0.0;
    return {mean, std::sqrt(var / n)};
}

std::vector<double> fourier_spectrum(const FeatureSpec& spec) {
    if (spec.length > 20)
        throw ResourceError("full spectrum limited to slice length <= 20");
    const std::size_t size = std::size_t{1} << spec.length;
    std::vector<double> table(size);
    for (std::size_t bits = 0; bits < size; ++bits)
        table[bits] = static_cast<double>(spec.eval_slice_bits(static_cast<std::uint32_t>(bits)));
    // In-place Walsh-Hadamard transform; with the bit=1 <-> -1 convention the
    // (a+b, a-b) butterfly accumulates exactly sum_x f(x) chi_S(x).
    for (std::size_t h = 1; h < size; h <<= 1) {
        for (std::size_t i = 0; i < size; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                double a = table[j], b = table[j + h];
                table[j] = a + b;
                table[j + h] = a - b;
            }
        }
    }
    const double scale = 1.0 / static_cast<double>(size);
    for (double& v : table) v *= scale;
    return table;
}

std::uint64_t binomial(int n, int k) {
    if (n < 0 || k < 0 || k > n) return 0;
    if (n > 62) throw ResourceError("binomial table limited to n <= 62");
    static const auto table = [] {
        std::vector<std::vector<std::uint64_t>> t(63);
        for (int i = 0; i <= 62; ++i) {
            t[i].resize(i + 1);
            t[i][0] = t[i][i] = 1;
            for (int j = 1; j < i; ++j) t[i][j] = t[i - 1][j - 1] + t[i - 1][j];
        }
        return t;
    }();
    return table[n][k];
}

double staircase_term_coefficient(int d) {
    if (d < 2) throw ConfigError("staircase term coefficient requires degree >= 2");
    if (d % 2 == 0)
        return static_cast<double>(binomial(d - 1, d / 2 - 1)) / std::ldexp(1.0, d - 1);
    return static_cast<double>(binomial(d - 2, (d - 1) / 2)) / std::ldexp(1.0, d - 2);
}

double majority_fourier_xi(int n, int k) {
    if (n <= 0 || n % 2 == 0) throw ConfigError("majority dimension must be odd");
    if (k < 0 || k > n) throw ConfigError("subset size out of range");
    if (n > 61) throw ResourceError("xi_k limited to n <= 61");
    if (k % 2 == 0) return 0.0;
    __int128 acc = 0;
    for (int i = 0; i <= k; ++i) {
        for (int j = 0; j <= n - k; ++j) {
            int maj = (n - 2 * (i + j)) > 0 ? +1 : -1;
            int chi = (i & 1) ? -1 : +1;
            __int128 count = static_cast<__int128>(binomial(k, i)) * binomial(n - k, j);
            acc += (maj * chi) * count;
        }
    }
    return static_cast<double>(static_cast<long double>(acc) / std::pow(2.0L, n));
}

}  // namespace splab
