#include "spuriouslab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spuriouslab/error.hpp"
#include "spuriouslab/rng.hpp"

namespace splab {

RegKind reg_kind_from_string(const std::string& s) {
    if (s == "none") return RegKind::None;
    if (s == "l2") return RegKind::L2;
    if (s == "l1") return RegKind::L1;
    throw ConfigError("unknown probe regularizer: " + s);
}

std::string to_string(RegKind kind) {
    switch (kind) {
        case RegKind::None: return "none";
        case RegKind::L2: return "l2";
        case RegKind::L1: return "l1";
    }
    return "?";
}

double ProbeFit::logit(const double* z, int dim) const {
    double s = b;
    for (int i = 0; i < dim; ++i) s += w[i] * z[i];
    return s;
}

namespace {

// Mean data loss and gradient; returns loss without penalty.
double data_loss_grad(const std::vector<std::vector<double>>& Z, const std::vector<int>& y,
                      const std::vector<double>& w, double b, std::vector<double>& gw,
                      double& gb) {
    const std::size_t m = Z.size();
    const std::size_t d = w.size();
    std::fill(gw.begin(), gw.end(), 0.0);
    gb = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* z = Z[i].data();
        double s = b;
        for (std::size_t j = 0; j < d; ++j) s += w[j] * z[j];
        total += loss(s, y[i]);
        double g = loss_grad(s, y[i]);
        for (std::size_t j = 0; j < d; ++j) gw[j] += g * z[j];
        gb += g;
    }
    double inv = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < d; ++j) gw[j] *= inv;
    gb *= inv;
    return total * inv;
}

double penalty(const std::vector<double>& w, RegKind reg, double lam) {
    double p = 0.0;
    if (reg == RegKind::L2) {
        for (double v : w) p += v * v;
        return lam * p;
    }
    if (reg == RegKind::L1) {
        for (double v : w) p += std::fabs(v);
        return lam * p;
    }
    return 0.0;
}

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

}  // namespace

ProbeFit fit_probe(const std::vector<std::vector<double>>& embeddings,
                   const std::vector<int>& labels, const ProbeOptions& opts) {
    if (embeddings.empty()) throw ConfigError("fit_probe: empty embedding set");
    if (embeddings.size() != labels.size())
        throw DimensionError("fit_probe: embeddings/labels size mismatch");
    const std::size_t d = embeddings[0].size();
    for (const auto& z : embeddings)
        if (z.size() != d) throw DimensionError("fit_probe: ragged embeddings");
    if (opts.strength < 0.0) throw ConfigError("fit_probe: negative regularizer strength");

    int pos = 0, neg = 0;
    for (int y : labels) {
        if (y == 1)
            ++pos;
        else if (y == -1)
            ++neg;
        else
            throw ConfigError("fit_probe: labels must be +-1");
    }
    if (pos == 0 || neg == 0) throw ConfigError("fit_probe: degenerate fit, single-class targets");

    ProbeFit fit;
    fit.w.assign(d, 0.0);
    std::vector<double> gw(d, 0.0), wd(d, 0.0), trial(d, 0.0);
    double gb = 0.0;
    const double lam = opts.reg == RegKind::None ? 0.0 : opts.strength;
    double step = 1.0;

    double f = data_loss_grad(embeddings, labels, fit.w, fit.b, gw, gb);
    for (int it = 0; it < opts.max_iters; ++it) {
        // Smooth part of the gradient (L1 handled by the proximal step).
        for (std::size_t j = 0; j < d; ++j) {
            wd[j] = gw[j];
            if (opts.reg == RegKind::L2) wd[j] += 2.0 * lam * fit.w[j];
        }
        double gmax = std::fabs(gb);
        for (std::size_t j = 0; j < d; ++j) gmax = std::max(gmax, std::fabs(wd[j]));
        if (opts.reg == RegKind::L1) {
            // Optimality for the composite objective: w step fixed point.
            gmax = std::fabs(gb);
            for (std::size_t j = 0; j < d; ++j) {
                double moved = soft_threshold(fit.w[j] - wd[j], lam);
                gmax = std::max(gmax, std::fabs(fit.w[j] - moved));
            }
        }
        fit.iters = it;
        if (gmax <= opts.grad_tol) {
            fit.converged = true;
            break;
        }

        double fsmooth = f + (opts.reg == RegKind::L2 ? penalty(fit.w, opts.reg, lam) : 0.0);
        step = std::min(step * 2.0, 1e6);
        double tb = fit.b;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t j = 0; j < d; ++j) {
                trial[j] = fit.w[j] - step * wd[j];
                if (opts.reg == RegKind::L1) trial[j] = soft_threshold(trial[j], step * lam);
            }
            tb = fit.b - step * gb;
            double s = 0.0;
            const std::size_t m = embeddings.size();
            for (std::size_t i = 0; i < m; ++i) {
                const double* z = embeddings[i].data();
                double lg = tb;
                for (std::size_t j = 0; j < d; ++j) lg += trial[j] * z[j];
                s += loss(lg, labels[i]);
            }
            double ftrial = s / static_cast<double>(m) +
                            (opts.reg == RegKind::L2 ? penalty(trial, opts.reg, lam) : 0.0);
            if (std::isfinite(ftrial) && ftrial <= fsmooth + 1e-12) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no descent step representable; already at the floor
        fit.w.swap(trial);
        fit.b = tb;
        f = data_loss_grad(embeddings, labels, fit.w, fit.b, gw, gb);
    }
    fit.objective = f + penalty(fit.w, opts.reg, lam);
    return fit;
}

namespace {

// Draws samples at the given mixture weight and returns model embeddings
// plus the requested feature values as +-1 labels.
void sample_embeddings(const MlpModel& model, const SpuriousTaskConfig& config, double lambda,
                       Target target, int count, Rng& rng, std::vector<std::vector<double>>& Z,
                       std::vector<int>& t) {
    SpuriousTaskConfig task = config;
    task.lambda = lambda;
    task.validate();
    Z.clear();
    t.clear();
    Z.reserve(static_cast<std::size_t>(count));
    t.reserve(static_cast<std::size_t>(count));
    std::vector<double> x(static_cast<std::size_t>(config.n()));
    int y = 0;
    Group g = Group::Majority;
    for (int i = 0; i < count; ++i) {
        sample_into(task, rng, x.data(), y, g);
        if (target == Target::Core) {
            t.push_back(y);
        } else {
            if (config.s == 0) throw ConfigError("decoded_correlation: no spurious block");
            t.push_back(config.f_s.eval(x.data()));
        }
        Z.push_back(model.embed(x.data()));
    }
}

}  // namespace

double decoded_correlation(const MlpModel& model, const SpuriousTaskConfig& config, Target target,
                           int n_fit, int n_eval, std::uint64_t seed, const ProbeOptions& opts) {
    if (n_fit <= 0 || n_eval <= 0) throw ConfigError("decoded_correlation: sample counts must be positive");
    Rng rng = derive_rng(seed, "decode", {target == Target::Core ? 0ull : 1ull});
    std::vector<std::vector<double>> Z;
    std::vector<int> t;
    sample_embeddings(model, config, 0.5, target, n_fit, rng, Z, t);
    ProbeFit fit = fit_probe(Z, t, opts);

    sample_embeddings(model, config, 0.5, target, n_eval, rng, Z, t);
    double acc = 0.0;
    const int d = model.width();
    for (std::size_t i = 0; i < Z.size(); ++i) {
        int pred = sgn(fit.logit(Z[i].data(), d));
        acc += pred == t[i] ? 1.0 : 0.0;
    }
    acc /= static_cast<double>(Z.size());
    return 2.0 * acc - 1.0;
}

RetrainResult last_layer_retrain(MlpModel& model, const SpuriousTaskConfig& config,
                                 double lambda_retrain, int n_fit, std::uint64_t seed,
                                 const ProbeOptions& opts, int n_eval) {
    if (n_fit <= 0) throw ConfigError("last_layer_retrain: n_fit must be positive");
    RetrainResult out;
    out.before = group_accuracies(model, config, n_eval, derive_rng(seed, "llr-eval", {0}).next_u64());

    Rng rng = derive_rng(seed, "llr", {});
    std::vector<std::vector<double>> Z;
    std::vector<int> t;
    sample_embeddings(model, config, lambda_retrain, Target::Core, n_fit, rng, Z, t);
    out.fit = fit_probe(Z, t, opts);
    last_layer_replace(model, out.fit.w, out.fit.b);

    out.after = group_accuracies(model, config, n_eval, derive_rng(seed, "llr-eval", {1}).next_u64());
    return out;
}

}  // namespace splab
