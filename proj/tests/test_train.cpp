#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "spuriouslab/error.hpp"
#include "spuriouslab/train.hpp"

using namespace splab;

namespace {

SpuriousTaskConfig parity_task(int s, int c, int u, double lambda) {
    return SpuriousTaskConfig::make(FeatureKind::Parity, s, s, FeatureKind::Parity, c, c, u,
                                    lambda);
}

TrainConfig small_train(int epochs, std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.samples_per_epoch = 256;
    cfg.batch_size = 64;
    cfg.width = 8;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.momentum = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.samples_per_epoch = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.weight_decay = -0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("online source batches are epoch addressed") {
    SpuriousTaskConfig task = parity_task(2, 3, 1, 0.9);
    OnlineSource a(task, 7, 150);
    OnlineSource b(task, 7, 150);
    std::vector<double> Xa(64 * 6), Xb(64 * 6);
    std::vector<int> ya(64), yb(64);

    // Same epoch, same batch index: identical content regardless of history.
    a.start_epoch(3);
    b.start_epoch(0);
    int got = b.next_batch(64, Xb.data(), yb.data());
    CHECK(got == 64);
    b.start_epoch(3);
    CHECK(a.next_batch(64, Xa.data(), ya.data()) == 64);
    CHECK(b.next_batch(64, Xb.data(), yb.data()) == 64);
    CHECK(Xa == Xb);
    CHECK(ya == yb);

    // Epoch yields exactly samples_per_epoch rows then 0.
    a.start_epoch(1);
    int total = 0, calls = 0;
    while (int k = a.next_batch(64, Xa.data(), ya.data())) {
        total += k;
        ++calls;
        REQUIRE(calls < 100);
    }
    CHECK(total == 150);
    CHECK(a.next_batch(64, Xa.data(), ya.data()) == 0);

    // Different seeds give different streams.
    OnlineSource c(task, 8, 150);
    c.start_epoch(3);
    CHECK(c.next_batch(64, Xb.data(), yb.data()) == 64);
    CHECK(Xa != Xb);

    // Labels always match the core feature on the drawn rows.
    for (int i = 0; i < 64; ++i) CHECK(yb[i] == task.f_c.eval(Xb.data() + i * 6));
}

TEST_CASE("online source with mask_core zeroes the core block") {
    SpuriousTaskConfig task = parity_task(2, 3, 1, 0.9);
    OnlineSource src(task, 5, 64, true);
    std::vector<double> X(64 * 6);
    std::vector<int> y(64);
    src.start_epoch(0);
    REQUIRE(src.next_batch(64, X.data(), y.data()) == 64);
    int agree = 0;
    for (int i = 0; i < 64; ++i) {
        const double* row = X.data() + i * 6;
        for (int j = 2; j < 5; ++j) CHECK(row[j] == 0.0);
        CHECK(row[0] * row[0] == 1.0);
        CHECK(row[5] * row[5] == 1.0);
        // Group structure survives: spurious parity should usually agree with y.
        if (static_cast<int>(row[0] * row[1]) == y[i]) ++agree;
    }
    CHECK(agree > 45);  // Binomial(64, 0.9) has sigma ~ 2.4
}

TEST_CASE("finite source visits every sample exactly once per epoch") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.8);
    FiniteDataset data = make_finite_dataset(task, 100, 3);
    FiniteSource src(data, 17);
    CHECK(src.size() == 100);
    std::vector<double> X(32 * 4);
    std::vector<int> y(32);

    const auto epoch_rows = [&](int epoch) {
        src.start_epoch(epoch);
        std::vector<std::vector<double>> rows;
        int k;
        while ((k = src.next_batch(32, X.data(), y.data())) > 0)
            for (int i = 0; i < k; ++i)
                rows.emplace_back(X.begin() + i * 4, X.begin() + (i + 1) * 4);
        return rows;
    };

    std::vector<std::vector<double>> e0 = epoch_rows(0);
    std::vector<std::vector<double>> e1 = epoch_rows(1);
    REQUIRE(e0.size() == 100);
    REQUIRE(e1.size() == 100);
    CHECK(e0 != e1);  // reshuffled between epochs
    std::vector<std::vector<double>> s0 = e0, s1 = e1;
    std::sort(s0.begin(), s0.end());
    std::sort(s1.begin(), s1.end());
    CHECK(s0 == s1);  // same multiset

    // Restarting the same epoch reproduces the same order.
    std::vector<std::vector<double>> e0b = epoch_rows(0);
    CHECK(e0 == e0b);
}

TEST_CASE("one sgd step equals the hand-computed momentum update") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.9);
    TrainConfig cfg = small_train(1);
    cfg.samples_per_epoch = 64;  // single batch
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.5;
    cfg.weight_decay = 0.01;

    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    MlpModel reference = model;

    // Reproduce the batch the trainer will draw.
    OnlineSource probe(task, cfg.seed, cfg.samples_per_epoch);
    probe.start_epoch(0);
    std::vector<double> X(64 * 4);
    std::vector<int> y(64);
    REQUIRE(probe.next_batch(64, X.data(), y.data()) == 64);

    ModelGrad g;
    const double expected_loss = grad_batch(reference, X.data(), y.data(), 64, g);
    const auto apply = [&](std::vector<double>& w, const std::vector<double>& gw) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double v = gw[i] + cfg.weight_decay * w[i];  // zero initial velocity
            w[i] -= cfg.learning_rate * v;
        }
    };
    apply(reference.hidden[0].w, g.hidden[0].w);
    apply(reference.hidden[0].b, g.hidden[0].b);
    apply(reference.a, g.a);

    OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
    std::vector<EpochRecord> recs = sgd_train(model, cfg, src, task);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].epoch == 1);
    CHECK(recs[0].train_loss == doctest::Approx(expected_loss).epsilon(1e-12));
    for (std::size_t i = 0; i < model.hidden[0].w.size(); ++i)
        CHECK(model.hidden[0].w[i] == doctest::Approx(reference.hidden[0].w[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < model.a.size(); ++i)
        CHECK(model.a[i] == doctest::Approx(reference.a[i]).epsilon(1e-12));
    // Output bias is untrainable by default and BooleanSymmetric starts at 0.
    CHECK(model.out_bias == 0.0);
}

TEST_CASE("two sgd steps accumulate momentum") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.9);
    TrainConfig cfg = small_train(2);
    cfg.samples_per_epoch = 64;
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.7;

    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    MlpModel reference = model;

    std::vector<double> vel_w(reference.hidden[0].w.size(), 0.0);
    std::vector<double> vel_b(reference.hidden[0].b.size(), 0.0);
    std::vector<double> vel_a(reference.a.size(), 0.0);
    std::vector<double> X(64 * 4);
    std::vector<int> y(64);
    for (int epoch = 0; epoch < 2; ++epoch) {
        OnlineSource probe(task, cfg.seed, 64);
        probe.start_epoch(epoch);
        REQUIRE(probe.next_batch(64, X.data(), y.data()) == 64);
        ModelGrad g;
        grad_batch(reference, X.data(), y.data(), 64, g);
        const auto apply = [&](std::vector<double>& w, std::vector<double>& vel,
                               const std::vector<double>& gw) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                vel[i] = cfg.momentum * vel[i] + gw[i];
                w[i] -= cfg.learning_rate * vel[i];
            }
        };
        apply(reference.hidden[0].w, vel_w, g.hidden[0].w);
        apply(reference.hidden[0].b, vel_b, g.hidden[0].b);
        apply(reference.a, vel_a, g.a);
    }

    OnlineSource src(task, cfg.seed, 64);
    sgd_train(model, cfg, src, task);
    for (std::size_t i = 0; i < model.hidden[0].w.size(); ++i)
        CHECK(model.hidden[0].w[i] == doctest::Approx(reference.hidden[0].w[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < model.a.size(); ++i)
        CHECK(model.a[i] == doctest::Approx(reference.a[i]).epsilon(1e-12));
}

TEST_CASE("depth 3 training uses the generic path and matches by-hand sgd") {
    SpuriousTaskConfig task = parity_task(0, 2, 1, 0.5);
    TrainConfig cfg = small_train(1);
    cfg.samples_per_epoch = 64;
    cfg.depth = 3;
    cfg.width = 5;
    cfg.init.kind = InitKind::StandardUniform;
    cfg.learning_rate = 0.02;

    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng, cfg.depth);
    MlpModel reference = model;

    OnlineSource probe(task, cfg.seed, 64);
    probe.start_epoch(0);
    std::vector<double> X(64 * 3);
    std::vector<int> y(64);
    REQUIRE(probe.next_batch(64, X.data(), y.data()) == 64);
    ModelGrad g;
    grad_batch(reference, X.data(), y.data(), 64, g);
    for (std::size_t layer = 0; layer < 2; ++layer) {
        for (std::size_t i = 0; i < reference.hidden[layer].w.size(); ++i)
            reference.hidden[layer].w[i] -= cfg.learning_rate * g.hidden[layer].w[i];
        for (std::size_t i = 0; i < reference.hidden[layer].b.size(); ++i)
            reference.hidden[layer].b[i] -= cfg.learning_rate * g.hidden[layer].b[i];
    }
    for (std::size_t i = 0; i < reference.a.size(); ++i)
        reference.a[i] -= cfg.learning_rate * g.a[i];

    OnlineSource src(task, cfg.seed, 64);
    sgd_train(model, cfg, src, task);
    for (std::size_t layer = 0; layer < 2; ++layer)
        for (std::size_t i = 0; i < model.hidden[layer].w.size(); ++i)
            CHECK(model.hidden[layer].w[i] ==
                  doctest::Approx(reference.hidden[layer].w[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < model.a.size(); ++i)
        CHECK(model.a[i] == doctest::Approx(reference.a[i]).epsilon(1e-12));
}

TEST_CASE("metric cadence controls which epochs are recorded") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.9);
    TrainConfig cfg = small_train(7);
    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
    TrainRunOptions opts;
    opts.metric_cadence = 3;
    std::vector<EpochRecord> recs = sgd_train(model, cfg, src, task, opts);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].epoch == 3);
    CHECK(recs[1].epoch == 6);
    CHECK(recs[2].epoch == 7);  // final epoch is always recorded
    for (const EpochRecord& r : recs) {
        CHECK(std::isfinite(r.train_loss));
        CHECK(std::abs(r.core_corr) <= 1.0);
        CHECK(std::abs(r.spurious_corr) <= 1.0);
        CHECK(r.spurious_subnet_weight);  // subnet columns on by default when s > 0
        CHECK_FALSE(r.decoded_core);      // probes disabled
    }
}

TEST_CASE("training is deterministic and restart-safe") {
    SpuriousTaskConfig task = parity_task(2, 3, 1, 0.85);
    TrainConfig cfg = small_train(4, 11);
    const auto run = [&] {
        Rng init_rng = derive_rng(cfg.seed, "init");
        MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
        OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
        sgd_train(model, cfg, src, task);
        return model;
    };
    MlpModel m1 = run();
    MlpModel m2 = run();
    CHECK(m1.hidden[0].w == m2.hidden[0].w);
    CHECK(m1.hidden[0].b == m2.hidden[0].b);
    CHECK(m1.a == m2.a);
}

TEST_CASE("early stop triggers on the recorded epoch") {
    // s = 0 keeps the task pure; core of degree 1 is learned almost instantly
    // with a large learning rate.
    SpuriousTaskConfig task = parity_task(0, 1, 2, 0.5);
    TrainConfig cfg = small_train(400, 2);
    cfg.learning_rate = 0.05;
    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
    TrainRunOptions opts;
    opts.stop_core_corr = 0.95;
    std::vector<EpochRecord> recs = sgd_train(model, cfg, src, task, opts);
    REQUIRE(!recs.empty());
    CHECK(recs.back().epoch < 400);
    CHECK(recs.back().core_corr >= 0.95);
}

TEST_CASE("on_epoch callback can stop training") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.9);
    TrainConfig cfg = small_train(50);
    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
    TrainRunOptions opts;
    int seen = 0;
    opts.on_epoch = [&](const EpochRecord& rec, const MlpModel& m) {
        CHECK(m.width() == 8);
        ++seen;
        return rec.epoch < 5;
    };
    std::vector<EpochRecord> recs = sgd_train(model, cfg, src, task, opts);
    CHECK(seen == 5);
    CHECK(recs.size() == 5);
    CHECK(recs.back().epoch == 5);
}

TEST_CASE("diverging training reports a training error") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.9);
    TrainConfig cfg = small_train(200);
    cfg.learning_rate = 1e18;  // guarantees overflow to non-finite loss
    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
    CHECK_THROWS_AS(sgd_train(model, cfg, src, task), TrainingError);
}

TEST_CASE("probe columns appear on the probe cadence") {
    SpuriousTaskConfig task = parity_task(2, 2, 0, 0.9);
    TrainConfig cfg = small_train(4);
    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    OnlineSource src(task, cfg.seed, cfg.samples_per_epoch);
    TrainRunOptions opts;
    opts.probes.enabled = true;
    opts.probes.cadence = 2;
    opts.probes.n_fit = 200;
    opts.probes.n_eval = 200;
    std::vector<EpochRecord> recs = sgd_train(model, cfg, src, task, opts);
    REQUIRE(recs.size() == 4);
    CHECK_FALSE(recs[0].decoded_core);
    CHECK(recs[1].decoded_core);
    CHECK(recs[1].decoded_spurious);
    CHECK_FALSE(recs[2].decoded_core);
    CHECK(recs[3].decoded_core);
    // Decoded correlations are correlations, hence within [-1, 1].
    CHECK(std::abs(*recs[1].decoded_core) <= 1.0);
    CHECK(std::abs(*recs[1].decoded_spurious) <= 1.0);
}

TEST_CASE("population gradient mc agrees with a direct average") {
    SpuriousTaskConfig task = parity_task(2, 2, 1, 0.8);
    Rng init_rng(9);
    MlpModel model = init_model(4, task.n(), InitScheme{InitKind::StandardUniform, 10}, init_rng);
    GradEstimate est = population_gradient_mc(model, task, 4000, 123);

    // Direct average with the same substream must match the mean exactly.
    Rng rng = derive_rng(123, "pop-grad");
    ModelGrad acc = ModelGrad::zeros_like(model);
    std::vector<double> x(task.n());
    int y;
    Group g;
    ModelGrad one;
    for (int i = 0; i < 4000; ++i) {
        sample_into(task, rng, x.data(), y, g);
        grad_batch(model, x.data(), &y, 1, one);
        for (std::size_t j = 0; j < acc.a.size(); ++j) acc.a[j] += one.a[j];
        for (std::size_t j = 0; j < acc.hidden[0].w.size(); ++j)
            acc.hidden[0].w[j] += one.hidden[0].w[j];
    }
    for (std::size_t j = 0; j < acc.a.size(); ++j)
        CHECK(est.mean.a[j] == doctest::Approx(acc.a[j] / 4000).epsilon(1e-10));
    for (std::size_t j = 0; j < acc.hidden[0].w.size(); ++j)
        CHECK(est.mean.hidden[0].w[j] == doctest::Approx(acc.hidden[0].w[j] / 4000).epsilon(1e-10));
    // Standard errors are positive and shrink roughly like 1/sqrt(N).
    GradEstimate wide = population_gradient_mc(model, task, 16000, 123);
    int checked = 0;
    for (std::size_t j = 0; j < est.std_error.a.size(); ++j) {
        if (est.std_error.a[j] == 0.0) continue;
        CHECK(wide.std_error.a[j] < est.std_error.a[j]);
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("layerwise training recovers the spurious feature") {
    // Matches the layer-wise protocol on a small instance: the first-layer
    // step keeps only the strong spurious coordinates, then the output layer
    // is retrained. The spurious correlation should be high afterwards.
    SpuriousTaskConfig task = parity_task(2, 3, 1, 0.9);
    TrainConfig cfg;
    cfg.width = 8;
    cfg.seed = 3;
    Rng init_rng = derive_rng(cfg.seed, "init");
    MlpModel model = init_model(cfg.width, task.n(), cfg.init, init_rng);
    layerwise_train(model, task, cfg, 200000, 3000, 0.05);
    MetricEvaluator eval(task, 20000, 99);
    MetricEvaluator::Correlations pc = eval.evaluate(model);
    CHECK(pc.spurious >= 0.9);
    // Hidden weights on noise coordinates were zeroed by the sparsification.
    for (int r = 0; r < 8; ++r)
        for (int j = task.s + task.c; j < task.n(); ++j)
            CHECK(model.hidden[0].w[r * task.n() + j] == 0.0);
}
