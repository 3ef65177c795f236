#include "spuriouslab/dataset.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "spuriouslab/error.hpp"

namespace splab {

namespace {

constexpr int kMaxRejectionTries = 10000;

void require_unbiased_spurious(const SpuriousTaskConfig& config, const char* op) {
    if (config.s > 0 && !config.f_s.unbiased())
        throw ConfigError(std::string(op) +
                          " requires an unbiased spurious feature; the conditional "
                          "sampler and the uniform-conditioned mass differ otherwise");
}

}  // namespace

void SpuriousTaskConfig::validate() const {
    if (s < 0 || c <= 0 || u < 0) throw ConfigError("block lengths must satisfy s>=0, c>0, u>=0");
    if (lambda < 0.5 || lambda > 1.0)
        throw ConfigError("lambda must lie in [0.5, 1]");
    if (s > 0) {
        f_s.validate(n());
        if (f_s.offset < 0 || f_s.offset + f_s.length > s)
            throw ConfigError("spurious feature slice must lie inside the spurious block");
    }
    f_c.validate(n());
    if (f_c.offset < s || f_c.offset + f_c.length > s + c)
        throw ConfigError("core feature slice must lie inside the core block");
}

SpuriousTaskConfig SpuriousTaskConfig::make(FeatureKind spur_kind, int s, int spur_degree,
                                            FeatureKind core_kind, int c, int core_degree,
                                            int u, double lambda) {
    SpuriousTaskConfig cfg;
    cfg.s = s;
    cfg.c = c;
    cfg.u = u;
    cfg.lambda = lambda;
    if (s > 0) cfg.f_s = FeatureSpec{spur_kind, spur_degree, 0, s};
    cfg.f_c = FeatureSpec{core_kind, core_degree, s, c};
    cfg.validate();
    return cfg;
}

void sample_into(const SpuriousTaskConfig& config, Rng& rng, double* x_out, int& y_out,
                 Group& group_out) {
    const int n = config.n();
    const int s = config.s;
    // Blocks of up to 64 coordinates come from single 64-bit draws.
    if (n - s <= 64) {
        const std::uint64_t bits = rng.next_u64();
        for (int i = s; i < n; ++i) x_out[i] = (bits >> (i - s)) & 1u ? -1.0 : 1.0;
    } else {
        for (int i = s; i < n; ++i) x_out[i] = rng.pick_sign();
    }
    y_out = config.f_c.eval(x_out);
    if (s == 0) {
        group_out = Group::Majority;
        return;
    }
    const bool agree = rng.bernoulli(config.lambda);
    const int want = agree ? y_out : -y_out;
    for (int tries = 0; tries < kMaxRejectionTries; ++tries) {
        if (s <= 64) {
            const std::uint64_t bits = rng.next_u64();
            for (int i = 0; i < s; ++i) x_out[i] = (bits >> i) & 1u ? -1.0 : 1.0;
        } else {
            for (int i = 0; i < s; ++i) x_out[i] = rng.pick_sign();
        }
        if (config.f_s.eval(x_out) == want) {
            group_out = agree ? Group::Majority : Group::Minority;
            return;
        }
    }
    throw ConfigError("rejection sampling failed after 10000 tries; the spurious feature "
                      "never attains the required sign");
}

LabeledSample sample(const SpuriousTaskConfig& config, Rng& rng) {
    const int n = config.n();
    std::vector<double> buf(n);
    LabeledSample out;
    int y;
    sample_into(config, rng, buf.data(), y, out.group);
    out.y = y;
    out.x.resize(n);
    for (int i = 0; i < n; ++i) out.x[i] = buf[i] < 0.0 ? -1 : +1;
    return out;
}

double exact_pmf(const SpuriousTaskConfig& config, const BitVector& x) {
    config.validate();
    const int n = config.n();
    if (n > 24) throw ResourceError("exact_pmf limited to n <= 24");
    if (static_cast<int>(x.size()) != n) throw DimensionError("input length mismatch");
    if (config.s == 0) return std::ldexp(1.0, -n);
    require_unbiased_spurious(config, "exact_pmf");
    // With E[f_s] = 0 both signs of f_s carry mass 1/2, so conditioning on
    // agreement doubles the uniform mass on the agreeing half.
    const bool agree = config.f_s.eval(x) == config.f_c.eval(x);
    const double base = std::ldexp(1.0, 1 - n);
    return agree ? config.lambda * base : (1.0 - config.lambda) * base;
}

double mixture_pmf(const SpuriousTaskConfig& config, const BitVector& x) {
    config.validate();
    const int n = config.n();
    if (n > 24) throw ResourceError("mixture_pmf limited to n <= 24");
    if (static_cast<int>(x.size()) != n) throw DimensionError("input length mismatch");
    if (config.s == 0) return std::ldexp(1.0, -n);
    require_unbiased_spurious(config, "mixture_pmf");
    const bool agree = config.f_s.eval(x) == config.f_c.eval(x);
    const double p_unif = std::ldexp(1.0, -n);
    const double p_same = agree ? std::ldexp(1.0, 1 - n) : 0.0;
    return 2.0 * (1.0 - config.lambda) * p_unif + (2.0 * config.lambda - 1.0) * p_same;
}

double label_fourier(const SpuriousTaskConfig& config, std::uint64_t subset) {
    config.validate();
    if (config.s > 0 && !config.f_s.unbiased())
        throw ConfigError("label_fourier requires an unbiased spurious feature");
    if (!config.f_c.unbiased())
        throw ConfigError("label_fourier requires an unbiased core feature");
    const int s = config.s;
    const int c = config.c;
    const std::uint64_t spur_mask = (s >= 64) ? ~0ULL : ((1ULL << s) - 1ULL);
    const std::uint64_t core_mask = (((c >= 64) ? ~0ULL : ((1ULL << c) - 1ULL)) << s);
    const std::uint64_t s_part = subset & spur_mask;
    const std::uint64_t c_part = subset & core_mask;
    if (subset & ~(spur_mask | core_mask)) return 0.0;  // touches the noise block
    if (s_part && c_part) return 0.0;                   // mixed sets vanish
    if (c_part) {
        std::uint64_t rel = c_part >> config.f_c.offset;
        if (rel >> config.f_c.length) return 0.0;  // outside the core feature's slice
        return fourier_coefficient_exact(config.f_c, static_cast<std::uint32_t>(rel));
    }
    if (s_part) {
        std::uint64_t rel = s_part >> config.f_s.offset;
        if (rel >> config.f_s.length) return 0.0;
        return (2.0 * config.lambda - 1.0) *
               fourier_coefficient_exact(config.f_s, static_cast<std::uint32_t>(rel));
    }
    return 0.0;  // empty set: E[y] = 0 for an unbiased core feature
}

double marginal_check(const SpuriousTaskConfig& config, MarginalBlock block,
                      std::int64_t n_samples, std::uint64_t seed) {
    config.validate();
    int offset = 0, len = 0;
    switch (block) {
        case MarginalBlock::Spurious: offset = 0; len = config.s; break;
        case MarginalBlock::Core: offset = config.s; len = config.c; break;
        case MarginalBlock::SpuriousCore: offset = 0; len = config.s + config.c; break;
    }
    if (len <= 0) throw ConfigError("empty block for marginal check");
    if (len > 16) throw ResourceError("marginal_check limited to block length <= 16");
    std::vector<std::int64_t> counts(std::size_t{1} << len, 0);
    Rng rng = derive_rng(seed, "marginal-check");
    std::vector<double> buf(config.n());
    int y;
    Group g;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        sample_into(config, rng, buf.data(), y, g);
        std::uint32_t idx = 0;
        for (int j = 0; j < len; ++j)
            if (buf[offset + j] < 0.0) idx |= (1u << j);
        ++counts[idx];
    }
    const double expected = static_cast<double>(n_samples) / static_cast<double>(counts.size());
    double stat = 0.0;
    for (std::int64_t count : counts) {
        const double diff = static_cast<double>(count) - expected;
        stat += diff * diff / expected;
    }
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

std::vector<int> FiniteDataset::minority_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].group == Group::Minority) out.push_back(static_cast<int>(i));
    return out;
}

FiniteDataset make_finite_dataset(const SpuriousTaskConfig& config, std::int64_t size,
                                  std::uint64_t seed) {
    config.validate();
    if (size <= 0) throw ConfigError("dataset size must be positive");
    FiniteDataset out;
    out.config = config;
    out.seed = seed;
    out.samples.reserve(static_cast<std::size_t>(size));
    Rng rng = derive_rng(seed, "finite-dataset");
    for (std::int64_t i = 0; i < size; ++i) out.samples.push_back(sample(config, rng));
    return out;
}

void save_tsv(const FiniteDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& s : dataset.samples) {
        std::string line;
        line.reserve(s.x.size() + 16);
        for (std::int8_t bit : s.x) line.push_back(bit > 0 ? '+' : '-');
        line += '\t';
        line += s.y > 0 ? "+1" : "-1";
        line += '\t';
        line += s.group == Group::Majority ? "majority" : "minority";
        line += '\n';
        out << line;
    }
    if (!out) throw IoError("write failed: " + path);
}

FiniteDataset load_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    FiniteDataset out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto where = [&] { return path + ":" + std::to_string(line_no); };
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw IoError("malformed dataset line at " + where());
        LabeledSample s;
        s.x.reserve(t1);
        for (std::size_t i = 0; i < t1; ++i) {
            const char ch = line[i];
            if (ch == '+') s.x.push_back(+1);
            else if (ch == '-') s.x.push_back(-1);
            else throw IoError("invalid bit character at " + where());
        }
        const std::string label = line.substr(t1 + 1, t2 - t1 - 1);
        if (label == "+1") s.y = +1;
        else if (label == "-1") s.y = -1;
        else throw IoError("invalid label at " + where());
        const std::string group = line.substr(t2 + 1);
        if (group == "majority") s.group = Group::Majority;
        else if (group == "minority") s.group = Group::Minority;
        else throw IoError("invalid group at " + where());
        if (!out.samples.empty() && out.samples.front().x.size() != s.x.size())
            throw IoError("inconsistent input length at " + where());
        out.samples.push_back(std::move(s));
    }
    if (out.samples.empty()) throw IoError("empty dataset: " + path);
    return out;
}

}  // namespace splab
