#include "spuriouslab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "spuriouslab/error.hpp"
#include "spuriouslab/theory.hpp"

namespace splab {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (epochs <= 0) throw ConfigError("epoch count must be positive");
    if (samples_per_epoch <= 0) throw ConfigError("samples per epoch must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
    if (width <= 0) throw ConfigError("width must be positive");
    if (depth < 2) throw ConfigError("depth must be at least 2");
}

OnlineSource::OnlineSource(SpuriousTaskConfig config, std::uint64_t seed, int samples_per_epoch,
                           bool mask_core)
    : config_(std::move(config)),
      seed_(seed),
      samples_per_epoch_(samples_per_epoch),
      mask_core_(mask_core) {
    config_.validate();
    if (samples_per_epoch_ <= 0) throw ConfigError("samples per epoch must be positive");
}

void OnlineSource::start_epoch(int epoch) {
    epoch_ = epoch;
    produced_ = 0;
    batch_index_ = 0;
}

int OnlineSource::next_batch(int max_count, double* X, int* y) {
    if (max_count <= 0) throw ConfigError("batch capacity must be positive");
    const int remaining = samples_per_epoch_ - produced_;
    if (remaining <= 0) return 0;
    const int count = std::min(max_count, remaining);
    Rng rng = derive_rng(seed_, "batch",
                         {static_cast<std::uint64_t>(epoch_), static_cast<std::uint64_t>(batch_index_)});
    const int n = config_.n();
    int yv = 0;
    Group g = Group::Majority;
    for (int i = 0; i < count; ++i) {
        double* row = X + static_cast<std::size_t>(i) * n;
        sample_into(config_, rng, row, yv, g);
        if (mask_core_)
            for (int c = config_.s; c < config_.s + config_.c; ++c) row[c] = 0.0;
        y[i] = yv;
    }
    produced_ += count;
    ++batch_index_;
    return count;
}

FiniteSource::FiniteSource(const FiniteDataset& data, std::uint64_t seed)
    : n_(data.config.n()), seed_(seed) {
    if (data.samples.empty()) throw ConfigError("finite dataset is empty");
    xs_.reserve(data.samples.size());
    ys_.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        if (static_cast<int>(s.x.size()) != n_) throw DimensionError("dataset row length mismatch");
        xs_.emplace_back(s.x.begin(), s.x.end());
        ys_.push_back(s.y);
    }
    order_.resize(xs_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
}

void FiniteSource::start_epoch(int epoch) {
    Rng rng = derive_rng(seed_, "shuffle", {static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order_.size() - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(i + 1));
        std::swap(order_[i], order_[j]);
    }
    cursor_ = 0;
}

int FiniteSource::next_batch(int max_count, double* X, int* y) {
    if (max_count <= 0) throw ConfigError("batch capacity must be positive");
    if (cursor_ >= order_.size()) return 0;
    const int count = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(max_count), order_.size() - cursor_));
    for (int i = 0; i < count; ++i) {
        const std::uint32_t idx = order_[cursor_ + static_cast<std::size_t>(i)];
        std::memcpy(X + static_cast<std::size_t>(i) * n_, xs_[idx].data(),
                    sizeof(double) * static_cast<std::size_t>(n_));
        y[i] = ys_[idx];
    }
    cursor_ += static_cast<std::size_t>(count);
    return count;
}

namespace {

// Depth-2 trainer with the first-layer weights stored transposed [n x p] so
// the inner loops stream contiguously over neurons.
struct FastTrainer {
    int n = 0, p = 0;
    bool train_out_bias = false;
    std::vector<double> Wt, b, a, vWt, vb, va;
    double out_bias = 0.0, v_ob = 0.0;
    std::vector<double> act, da, db, dWt;
    int capacity = 0;

    void load(const MlpModel& model, int batch_capacity) {
        n = model.n_inputs;
        p = model.width();
        train_out_bias = model.out_bias_trainable;
        const Layer& L = model.hidden[0];
        Wt.assign(static_cast<std::size_t>(n) * p, 0.0);
        for (int r = 0; r < p; ++r)
            for (int c = 0; c < n; ++c)
                Wt[static_cast<std::size_t>(c) * p + r] = L.w[static_cast<std::size_t>(r) * n + c];
        b = L.b;
        a = model.a;
        out_bias = model.out_bias;
        vWt.assign(Wt.size(), 0.0);
        vb.assign(b.size(), 0.0);
        va.assign(a.size(), 0.0);
        v_ob = 0.0;
        capacity = batch_capacity;
        act.assign(static_cast<std::size_t>(capacity) * p, 0.0);
        da.assign(a.size(), 0.0);
        db.assign(b.size(), 0.0);
        dWt.assign(Wt.size(), 0.0);
    }

    void store(MlpModel& model) const {
        Layer& L = model.hidden[0];
        for (int r = 0; r < p; ++r)
            for (int c = 0; c < n; ++c)
                L.w[static_cast<std::size_t>(r) * n + c] = Wt[static_cast<std::size_t>(c) * p + r];
        L.b = b;
        model.a = a;
        model.out_bias = out_bias;
    }

    // One momentum-SGD step on a batch; returns the mean loss. Samples are
    // processed four at a time so each weight vector load serves four
    // fused multiply-adds, and each pass is kept as a single flat loop over
    // neurons so it vectorizes cleanly.
    double step(const double* X, const int* y, int count, double lr, double mu, double wd) {
        std::fill(dWt.begin(), dWt.end(), 0.0);
        std::fill(da.begin(), da.end(), 0.0);
        std::fill(db.begin(), db.end(), 0.0);
        double d_ob = 0.0, loss_sum = 0.0;
        int s = 0;
        for (; s + 4 <= count; s += 4) {
            const double* __restrict x0 = X + static_cast<std::size_t>(s) * n;
            const double* __restrict x1 = x0 + n;
            const double* __restrict x2 = x1 + n;
            const double* __restrict x3 = x2 + n;
            double* __restrict r0 = act.data() + static_cast<std::size_t>(s) * p;
            double* __restrict r1 = r0 + p;
            double* __restrict r2 = r1 + p;
            double* __restrict r3 = r2 + p;
            const std::size_t row_bytes = sizeof(double) * static_cast<std::size_t>(p);
            std::memcpy(r0, b.data(), row_bytes);
            std::memcpy(r1, b.data(), row_bytes);
            std::memcpy(r2, b.data(), row_bytes);
            std::memcpy(r3, b.data(), row_bytes);
            for (int c = 0; c < n; ++c) {
                const double v0 = x0[c], v1 = x1[c], v2 = x2[c], v3 = x3[c];
                const double* __restrict wc = Wt.data() + static_cast<std::size_t>(c) * p;
                for (int r = 0; r < p; ++r) {
                    const double w = wc[r];
                    r0[r] += v0 * w;
                    r1[r] += v1 * w;
                    r2[r] += v2 * w;
                    r3[r] += v3 * w;
                }
            }
            for (int r = 0; r < p; ++r) {
                r0[r] = r0[r] > 0.0 ? r0[r] : 0.0;
                r1[r] = r1[r] > 0.0 ? r1[r] : 0.0;
                r2[r] = r2[r] > 0.0 ? r2[r] : 0.0;
                r3[r] = r3[r] > 0.0 ? r3[r] : 0.0;
            }
            const double* __restrict av = a.data();
            double g[4];
            const double* rows[4] = {r0, r1, r2, r3};
            for (int k = 0; k < 4; ++k) {
                // Four running sums break the add-latency chain; the final
                // combination order is fixed, so results stay reproducible.
                const double* __restrict arow = rows[k];
                double t0 = 0.0, t1 = 0.0, t2 = 0.0, t3 = 0.0;
                int r = 0;
                for (; r + 4 <= p; r += 4) {
                    t0 += av[r] * arow[r];
                    t1 += av[r + 1] * arow[r + 1];
                    t2 += av[r + 2] * arow[r + 2];
                    t3 += av[r + 3] * arow[r + 3];
                }
                for (; r < p; ++r) t0 += av[r] * arow[r];
                const double logit = out_bias + ((t0 + t1) + (t2 + t3));
                loss_sum += loss(logit, y[s + k]);
                g[k] = loss_grad(logit, y[s + k]);
                d_ob += g[k];
            }
            const double g0 = g[0], g1 = g[1], g2 = g[2], g3 = g[3];
            double* __restrict dav = da.data();
            double* __restrict dbv = db.data();
            for (int r = 0; r < p; ++r)
                dav[r] += g0 * r0[r] + g1 * r1[r] + g2 * r2[r] + g3 * r3[r];
            // Rows become pre-activation gradients for the backward pass.
            for (int r = 0; r < p; ++r) {
                const double ar = av[r];
                r0[r] = r0[r] > 0.0 ? g0 * ar : 0.0;
                r1[r] = r1[r] > 0.0 ? g1 * ar : 0.0;
                r2[r] = r2[r] > 0.0 ? g2 * ar : 0.0;
                r3[r] = r3[r] > 0.0 ? g3 * ar : 0.0;
            }
            for (int r = 0; r < p; ++r) dbv[r] += r0[r] + r1[r] + r2[r] + r3[r];
            for (int c = 0; c < n; ++c) {
                const double v0 = x0[c], v1 = x1[c], v2 = x2[c], v3 = x3[c];
                double* __restrict dwc = dWt.data() + static_cast<std::size_t>(c) * p;
                for (int r = 0; r < p; ++r)
                    dwc[r] += v0 * r0[r] + v1 * r1[r] + v2 * r2[r] + v3 * r3[r];
            }
        }
        for (; s < count; ++s) {
            const double* x = X + static_cast<std::size_t>(s) * n;
            double* arow = act.data() + static_cast<std::size_t>(s) * p;
            std::memcpy(arow, b.data(), sizeof(double) * static_cast<std::size_t>(p));
            for (int c = 0; c < n; ++c) {
                const double xv = x[c];
                const double* wc = Wt.data() + static_cast<std::size_t>(c) * p;
                for (int r = 0; r < p; ++r) arow[r] += xv * wc[r];
            }
            double logit = out_bias;
            for (int r = 0; r < p; ++r) {
                const double v = arow[r] > 0.0 ? arow[r] : 0.0;
                arow[r] = v;
                logit += a[r] * v;
            }
            loss_sum += loss(logit, y[s]);
            const double g = loss_grad(logit, y[s]);
            d_ob += g;
            for (int r = 0; r < p; ++r) {
                const double v = arow[r];
                da[r] += g * v;
                // Row becomes the pre-activation gradient for the backward pass.
                arow[r] = v > 0.0 ? g * a[r] : 0.0;
            }
            for (int r = 0; r < p; ++r) db[r] += arow[r];
            for (int c = 0; c < n; ++c) {
                const double xv = x[c];
                double* dwc = dWt.data() + static_cast<std::size_t>(c) * p;
                for (int r = 0; r < p; ++r) dwc[r] += xv * arow[r];
            }
        }
        const double inv = 1.0 / static_cast<double>(count);
        const std::size_t wn = Wt.size();
        for (std::size_t i = 0; i < wn; ++i) {
            const double g = dWt[i] * inv + wd * Wt[i];
            vWt[i] = mu * vWt[i] + g;
            Wt[i] -= lr * vWt[i];
        }
        for (int r = 0; r < p; ++r) {
            const double gb = db[r] * inv + wd * b[r];
            vb[r] = mu * vb[r] + gb;
            b[r] -= lr * vb[r];
            const double ga = da[r] * inv + wd * a[r];
            va[r] = mu * va[r] + ga;
            a[r] -= lr * va[r];
        }
        if (train_out_bias) {
            const double g = d_ob * inv + wd * out_bias;
            v_ob = mu * v_ob + g;
            out_bias -= lr * v_ob;
        }
        return loss_sum * inv;
    }
};

// Fallback for depth > 2: generic backprop plus momentum on ModelGrad shapes.
struct GenericTrainer {
    ModelGrad vel, grad;

    void load(const MlpModel& model) {
        vel = ModelGrad::zeros_like(model);
        grad = ModelGrad::zeros_like(model);
    }

    double step(MlpModel& model, const double* X, const int* y, int count, double lr, double mu,
                double wd) {
        const double mean_loss = grad_batch(model, X, y, count, grad);
        for (std::size_t l = 0; l < model.hidden.size(); ++l) {
            Layer& L = model.hidden[l];
            Layer& V = vel.hidden[l];
            Layer& G = grad.hidden[l];
            for (std::size_t i = 0; i < L.w.size(); ++i) {
                V.w[i] = mu * V.w[i] + G.w[i] + wd * L.w[i];
                L.w[i] -= lr * V.w[i];
            }
            for (std::size_t i = 0; i < L.b.size(); ++i) {
                V.b[i] = mu * V.b[i] + G.b[i] + wd * L.b[i];
                L.b[i] -= lr * V.b[i];
            }
        }
        for (std::size_t i = 0; i < model.a.size(); ++i) {
            vel.a[i] = mu * vel.a[i] + grad.a[i] + wd * model.a[i];
            model.a[i] -= lr * vel.a[i];
        }
        if (model.out_bias_trainable) {
            vel.out_bias = mu * vel.out_bias + grad.out_bias + wd * model.out_bias;
            model.out_bias -= lr * vel.out_bias;
        }
        return mean_loss;
    }
};

}  // namespace

std::vector<EpochRecord> sgd_train(MlpModel& model, const TrainConfig& config, DataSource& source,
                                   const SpuriousTaskConfig& task, const TrainRunOptions& opts) {
    config.validate();
    model.check_consistent();
    if (source.dim() != model.n_inputs)
        throw DimensionError("data source dimension does not match the model");

    std::unique_ptr<MetricEvaluator> own_eval;
    const MetricEvaluator* evaluator = opts.evaluator;
    if (evaluator == nullptr) {
        own_eval = std::make_unique<MetricEvaluator>(
            task, 20000, derive_rng(config.seed, "eval-panel", {}).next_u64());
        evaluator = own_eval.get();
    }
    const int cadence = std::max(1, opts.metric_cadence);

    const bool fast = model.depth() == 2;
    FastTrainer ft;
    GenericTrainer gt;
    if (fast)
        ft.load(model, config.batch_size);
    else
        gt.load(model);

    std::vector<double> X(static_cast<std::size_t>(config.batch_size) * model.n_inputs);
    std::vector<int> yb(static_cast<std::size_t>(config.batch_size));
    std::vector<EpochRecord> records;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        source.start_epoch(epoch);
        double loss_sum = 0.0;
        std::int64_t seen = 0;
        int got = 0;
        while ((got = source.next_batch(config.batch_size, X.data(), yb.data())) > 0) {
            const double mean_loss =
                fast ? ft.step(X.data(), yb.data(), got, config.learning_rate, config.momentum,
                               config.weight_decay)
                     : gt.step(model, X.data(), yb.data(), got, config.learning_rate,
                               config.momentum, config.weight_decay);
            if (!std::isfinite(mean_loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1));
            loss_sum += mean_loss * got;
            seen += got;
        }
        if (seen == 0) throw ConfigError("data source produced an empty epoch");

        const int epoch_no = epoch + 1;
        const bool last = epoch_no == config.epochs;
        if (epoch_no % cadence != 0 && !last) continue;

        if (fast) ft.store(model);
        EpochRecord rec;
        rec.epoch = epoch_no;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        const auto corr = evaluator->evaluate(model);
        rec.core_corr = corr.core;
        rec.spurious_corr = corr.spurious;

        if (opts.probes.enabled &&
            (epoch_no % std::max(1, opts.probes.cadence) == 0 || last)) {
            ProbeOptions popts;
            popts.reg = opts.probes.reg;
            popts.strength = opts.probes.strength;
            const std::uint64_t pseed =
                derive_rng(config.seed, "probe", {static_cast<std::uint64_t>(epoch_no)}).next_u64();
            rec.decoded_core = decoded_correlation(model, task, Target::Core, opts.probes.n_fit,
                                                   opts.probes.n_eval, pseed, popts);
            if (task.s > 0)
                rec.decoded_spurious = decoded_correlation(
                    model, task, Target::Spurious, opts.probes.n_fit, opts.probes.n_eval, pseed,
                    popts);
        }
        if (opts.subnet_columns && task.s > 0) {
            const NeuronPartition part = classify_neurons(model, task, opts.neuron_margin);
            if (!part.spurious.empty() && !part.core.empty()) {
                const SubnetworkWeights sw = subnetwork_weights(model, part);
                rec.spurious_subnet_weight = sw.spurious_mean;
                rec.core_subnet_weight = sw.core_mean;
            }
        }
        records.push_back(rec);
        if (opts.stop_core_corr && rec.core_corr >= *opts.stop_core_corr) break;
        if (opts.on_epoch && !opts.on_epoch(rec, model)) break;
    }
    if (fast) ft.store(model);
    return records;
}

namespace {

template <typename Fn>
void for_each_entry(ModelGrad& g, Fn fn) {
    for (auto& layer : g.hidden) {
        for (double& v : layer.w) fn(v);
        for (double& v : layer.b) fn(v);
    }
    for (double& v : g.a) fn(v);
    fn(g.out_bias);
}

}  // namespace

GradEstimate population_gradient_mc(const MlpModel& model, const SpuriousTaskConfig& config,
                                    std::int64_t n_samples, std::uint64_t seed) {
    model.check_consistent();
    config.validate();
    if (model.n_inputs != config.n()) throw DimensionError("model/task dimension mismatch");
    if (n_samples < 2) throw ConfigError("population gradient needs at least 2 samples");

    Rng rng = derive_rng(seed, "pop-grad", {});
    ModelGrad scratch = ModelGrad::zeros_like(model);
    GradEstimate est{ModelGrad::zeros_like(model), ModelGrad::zeros_like(model)};
    ModelGrad sumsq = ModelGrad::zeros_like(model);

    const int n = config.n();
    std::vector<double> x(static_cast<std::size_t>(n));
    int y = 0;
    Group g = Group::Majority;
    for (std::int64_t t = 0; t < n_samples; ++t) {
        sample_into(config, rng, x.data(), y, g);
        grad_batch(model, x.data(), &y, 1, scratch);
        // Accumulate elementwise sums and squares.
        auto* acc = &est.mean;
        auto* acc2 = &sumsq;
        for (std::size_t l = 0; l < scratch.hidden.size(); ++l) {
            for (std::size_t i = 0; i < scratch.hidden[l].w.size(); ++i) {
                const double v = scratch.hidden[l].w[i];
                acc->hidden[l].w[i] += v;
                acc2->hidden[l].w[i] += v * v;
            }
            for (std::size_t i = 0; i < scratch.hidden[l].b.size(); ++i) {
                const double v = scratch.hidden[l].b[i];
                acc->hidden[l].b[i] += v;
                acc2->hidden[l].b[i] += v * v;
            }
        }
        for (std::size_t i = 0; i < scratch.a.size(); ++i) {
            acc->a[i] += scratch.a[i];
            acc2->a[i] += scratch.a[i] * scratch.a[i];
        }
        acc->out_bias += scratch.out_bias;
        acc2->out_bias += scratch.out_bias * scratch.out_bias;
    }
    const double N = static_cast<double>(n_samples);
    // Convert sums to means and sums of squares to standard errors in lockstep.
    std::vector<double*> means, sqs;
    for_each_entry(est.mean, [&](double& v) { means.push_back(&v); });
    for_each_entry(sumsq, [&](double& v) { sqs.push_back(&v); });
    for (std::size_t i = 0; i < means.size(); ++i) {
        const double mean = *means[i] / N;
        const double var = std::max(0.0, (*sqs[i] - N * mean * mean) / (N - 1.0));
        *means[i] = mean;
        *sqs[i] = std::sqrt(var / N);
    }
    est.std_error = sumsq;
    return est;
}

void layerwise_train(MlpModel& model, const SpuriousTaskConfig& task, const TrainConfig& config,
                     std::int64_t first_step_samples, int second_phase_steps,
                     double second_phase_lr) {
    model.check_consistent();
    task.validate();
    if (model.depth() != 2) throw ConfigError("layerwise_train requires depth 2");
    if (model.n_inputs != task.n()) throw DimensionError("model/task dimension mismatch");
    if (first_step_samples <= 0) throw ConfigError("first-step sample count must be positive");
    if (second_phase_steps < 0) throw ConfigError("second-phase step count must be nonnegative");
    if (!(second_phase_lr > 0.0)) throw ConfigError("second-phase learning rate must be positive");

    const double step_scale = layerwise_step_scale(task);
    const int n = task.n();
    const int p = model.width();

    // Phase 1: estimate the population gradient of the first-layer weights.
    Rng rng = derive_rng(config.seed, "layerwise-step", {});
    ModelGrad sum = ModelGrad::zeros_like(model);
    ModelGrad scratch = ModelGrad::zeros_like(model);
    const int chunk = 1024;
    std::vector<double> X(static_cast<std::size_t>(chunk) * n);
    std::vector<int> yb(static_cast<std::size_t>(chunk));
    int y = 0;
    Group grp = Group::Majority;
    std::int64_t done = 0;
    while (done < first_step_samples) {
        const int count = static_cast<int>(std::min<std::int64_t>(chunk, first_step_samples - done));
        for (int i = 0; i < count; ++i) {
            sample_into(task, rng, X.data() + static_cast<std::size_t>(i) * n, y, grp);
            yb[static_cast<std::size_t>(i)] = y;
        }
        grad_batch(model, X.data(), yb.data(), count, scratch);
        for (std::size_t i = 0; i < sum.hidden[0].w.size(); ++i)
            sum.hidden[0].w[i] += scratch.hidden[0].w[i] * count;
        done += count;
    }
    const double inv = 1.0 / static_cast<double>(first_step_samples);

    // Replace each weight with -ghat / g_s, zeroing coordinates whose
    // |gradient| falls below the weight vector's mean |gradient|.
    Layer& L = model.hidden[0];
    for (int r = 0; r < p; ++r) {
        double* gr = sum.hidden[0].w.data() + static_cast<std::size_t>(r) * n;
        double tau = 0.0;
        for (int c = 0; c < n; ++c) tau += std::fabs(gr[c] * inv);
        tau /= static_cast<double>(n);
        for (int c = 0; c < n; ++c) {
            const double gv = gr[c] * inv;
            L.w[static_cast<std::size_t>(r) * n + c] =
                std::fabs(gv) < tau ? 0.0 : -gv / step_scale;
        }
    }

    // Phase 2: hidden layer frozen, plain SGD on zero-initialized output weights.
    std::fill(model.a.begin(), model.a.end(), 0.0);
    model.out_bias = 0.0;
    const int batch = config.batch_size;
    std::vector<double> xrow(static_cast<std::size_t>(n));
    std::vector<double> emb;
    std::vector<double> da(static_cast<std::size_t>(p));
    for (int t = 0; t < second_phase_steps; ++t) {
        Rng srng = derive_rng(config.seed, "layerwise-a", {static_cast<std::uint64_t>(t)});
        std::fill(da.begin(), da.end(), 0.0);
        double d_ob = 0.0;
        for (int i = 0; i < batch; ++i) {
            sample_into(task, srng, xrow.data(), y, grp);
            emb = model.embed(xrow.data());
            double logit = model.out_bias;
            for (int r = 0; r < p; ++r) logit += model.a[static_cast<std::size_t>(r)] * emb[static_cast<std::size_t>(r)];
            const double g = loss_grad(logit, y);
            for (int r = 0; r < p; ++r) da[static_cast<std::size_t>(r)] += g * emb[static_cast<std::size_t>(r)];
            d_ob += g;
        }
        const double scale = second_phase_lr / static_cast<double>(batch);
        for (int r = 0; r < p; ++r) model.a[static_cast<std::size_t>(r)] -= scale * da[static_cast<std::size_t>(r)];
        if (model.out_bias_trainable) model.out_bias -= scale * d_ob;
    }
}

}  // namespace splab
