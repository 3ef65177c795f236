#include "spuriouslab/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

#include "spuriouslab/error.hpp"

namespace splab {

std::string to_string(InitKind kind) {
    return kind == InitKind::StandardUniform ? "standard_uniform" : "boolean_symmetric";
}

InitKind init_kind_from_string(const std::string& name) {
    if (name == "standard_uniform" || name == "uniform") return InitKind::StandardUniform;
    if (name == "boolean_symmetric" || name == "symmetric") return InitKind::BooleanSymmetric;
    throw ConfigError("unknown init scheme: " + name);
}

void MlpModel::check_consistent() const {
    if (hidden.empty()) throw DimensionError("model needs at least one hidden layer");
    int prev = n_inputs;
    for (const auto& layer : hidden) {
        if (layer.in != prev) throw DimensionError("layer input dimension mismatch");
        if (static_cast<int>(layer.w.size()) != layer.in * layer.out ||
            static_cast<int>(layer.b.size()) != layer.out)
            throw DimensionError("layer storage mismatch");
        prev = layer.out;
    }
    if (static_cast<int>(a.size()) != prev) throw DimensionError("output weight dimension mismatch");
}

namespace {

void layer_forward(const Layer& layer, const double* in, double* out) {
    for (int r = 0; r < layer.out; ++r) {
        const double* wr = layer.w.data() + static_cast<std::size_t>(r) * layer.in;
        double acc = layer.b[r];
        for (int c = 0; c < layer.in; ++c) acc += wr[c] * in[c];
        out[r] = acc > 0.0 ? acc : 0.0;
    }
}

}  // namespace

double MlpModel::forward(const double* x) const {
    std::vector<double> cur(x, x + n_inputs), next;
    for (const auto& layer : hidden) {
        next.assign(layer.out, 0.0);
        layer_forward(layer, cur.data(), next.data());
        cur.swap(next);
    }
    double acc = out_bias;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * cur[i];
    return acc;
}

double MlpModel::forward(const std::vector<std::int8_t>& x) const {
    if (static_cast<int>(x.size()) != n_inputs) throw DimensionError("input length mismatch");
    std::vector<double> buf(x.begin(), x.end());
    return forward(buf.data());
}

std::vector<double> MlpModel::embed(const double* x) const {
    std::vector<double> cur(x, x + n_inputs), next;
    for (const auto& layer : hidden) {
        next.assign(layer.out, 0.0);
        layer_forward(layer, cur.data(), next.data());
        cur.swap(next);
    }
    return cur;
}

std::vector<double> MlpModel::embed(const std::vector<std::int8_t>& x) const {
    if (static_cast<int>(x.size()) != n_inputs) throw DimensionError("input length mismatch");
    std::vector<double> buf(x.begin(), x.end());
    return embed(buf.data());
}

MlpModel init_model(int width, int n_inputs, const InitScheme& scheme, Rng& rng, int depth) {
    if (width <= 0 || n_inputs <= 0) throw ConfigError("width and input dimension must be positive");
    if (depth < 2) throw ConfigError("depth must be at least 2 (one hidden layer)");
    MlpModel model;
    model.n_inputs = n_inputs;
    if (scheme.kind == InitKind::BooleanSymmetric) {
        if (depth != 2) throw ConfigError("BooleanSymmetric init is defined for depth 2 only");
        if (width % 2 != 0) throw ConfigError("BooleanSymmetric init requires an even width");
        if (scheme.bias_grid < 1) throw ConfigError("bias grid must be positive");
        Layer layer;
        layer.in = n_inputs;
        layer.out = width;
        layer.w.resize(static_cast<std::size_t>(width) * n_inputs);
        layer.b.resize(width);
        model.a.resize(width);
        const int half = width / 2;
        const int g = scheme.bias_grid;
        for (int i = 0; i < half; ++i) {
            for (int c = 0; c < n_inputs; ++c)
                layer.w[static_cast<std::size_t>(i) * n_inputs + c] = rng.pick_sign();
            const int step = 1 + static_cast<int>(rng.uniform_int(2 * g - 1));
            layer.b[i] = -1.0 + static_cast<double>(step) / g;
            model.a[i] = rng.pick_sign();
        }
        for (int i = 0; i < half; ++i) {
            const int j = half + i;
            for (int c = 0; c < n_inputs; ++c)
                layer.w[static_cast<std::size_t>(j) * n_inputs + c] =
                    layer.w[static_cast<std::size_t>(i) * n_inputs + c];
            layer.b[j] = layer.b[i];
            model.a[j] = -model.a[i];
        }
        model.hidden.push_back(std::move(layer));
    } else {
        int prev = n_inputs;
        for (int d = 0; d < depth - 1; ++d) {
            Layer layer;
            layer.in = prev;
            layer.out = width;
            layer.w.resize(static_cast<std::size_t>(width) * prev);
            layer.b.resize(width);
            const double bound = 1.0 / std::sqrt(static_cast<double>(prev));
            for (double& v : layer.w) v = rng.uniform_in(-bound, bound);
            for (double& v : layer.b) v = rng.uniform_in(-bound, bound);
            model.hidden.push_back(std::move(layer));
            prev = width;
        }
        model.a.resize(width);
        const double bound = 1.0 / std::sqrt(static_cast<double>(width));
        for (double& v : model.a) v = rng.uniform_in(-bound, bound);
    }
    model.out_bias = 0.0;
    model.check_consistent();
    return model;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

double loss(double logit, int y) { return 2.0 * softplus(-static_cast<double>(y) * logit); }

double loss_grad(double logit, int y) {
    const double yd = static_cast<double>(y);
    return -2.0 * yd * sigmoid(-yd * logit);
}

ModelGrad ModelGrad::zeros_like(const MlpModel& model) {
    ModelGrad g;
    g.hidden.reserve(model.hidden.size());
    for (const auto& layer : model.hidden) {
        Layer zero;
        zero.in = layer.in;
        zero.out = layer.out;
        zero.w.assign(layer.w.size(), 0.0);
        zero.b.assign(layer.b.size(), 0.0);
        g.hidden.push_back(std::move(zero));
    }
    g.a.assign(model.a.size(), 0.0);
    g.out_bias = 0.0;
    return g;
}

void ModelGrad::scale(double factor) {
    for (auto& layer : hidden) {
        for (double& v : layer.w) v *= factor;
        for (double& v : layer.b) v *= factor;
    }
    for (double& v : a) v *= factor;
    out_bias *= factor;
}

double grad_batch(const MlpModel& model, const double* X, const int* y, int batch,
                  ModelGrad& out) {
    if (batch <= 0) throw ConfigError("empty batch");
    const int depth_h = static_cast<int>(model.hidden.size());
    // Per-sample activations, reused across the batch.
    std::vector<std::vector<double>> acts(depth_h + 1);
    std::vector<std::vector<double>> deltas(depth_h);
    double loss_sum = 0.0;
    for (int s = 0; s < batch; ++s) {
        const double* x = X + static_cast<std::size_t>(s) * model.n_inputs;
        acts[0].assign(x, x + model.n_inputs);
        for (int l = 0; l < depth_h; ++l) {
            const Layer& layer = model.hidden[l];
            acts[l + 1].assign(layer.out, 0.0);
            layer_forward(layer, acts[l].data(), acts[l + 1].data());
        }
        double logit = model.out_bias;
        const auto& top = acts[depth_h];
        for (std::size_t i = 0; i < model.a.size(); ++i) logit += model.a[i] * top[i];
        loss_sum += loss(logit, y[s]);
        const double dlogit = loss_grad(logit, y[s]);
        // Output layer.
        for (std::size_t i = 0; i < model.a.size(); ++i) out.a[i] += dlogit * top[i];
        out.out_bias += dlogit;
        // Top hidden delta; ReLU'(z) = 1{activation > 0} (so exactly 0 at 0).
        auto& dtop = deltas[depth_h - 1];
        dtop.assign(model.a.size(), 0.0);
        for (std::size_t i = 0; i < model.a.size(); ++i)
            if (top[i] > 0.0) dtop[i] = dlogit * model.a[i];
        for (int l = depth_h - 1; l >= 0; --l) {
            const Layer& layer = model.hidden[l];
            const auto& delta = deltas[l];
            const auto& in_act = acts[l];
            Layer& g = out.hidden[l];
            for (int r = 0; r < layer.out; ++r) {
                const double d = delta[r];
                if (d == 0.0) continue;
                double* gw = g.w.data() + static_cast<std::size_t>(r) * layer.in;
                for (int c = 0; c < layer.in; ++c) gw[c] += d * in_act[c];
                g.b[r] += d;
            }
            if (l > 0) {
                auto& dprev = deltas[l - 1];
                dprev.assign(layer.in, 0.0);
                for (int r = 0; r < layer.out; ++r) {
                    const double d = delta[r];
                    if (d == 0.0) continue;
                    const double* wr = layer.w.data() + static_cast<std::size_t>(r) * layer.in;
                    for (int c = 0; c < layer.in; ++c) dprev[c] += d * wr[c];
                }
                for (int c = 0; c < layer.in; ++c)
                    if (acts[l][c] <= 0.0) dprev[c] = 0.0;
            }
        }
    }
    out.scale(1.0 / static_cast<double>(batch));
    return loss_sum / static_cast<double>(batch);
}

void last_layer_replace(MlpModel& model, const std::vector<double>& new_a, double new_bias) {
    if (new_a.size() != model.a.size())
        throw DimensionError("output weight length mismatch in last_layer_replace");
    model.a = new_a;
    model.out_bias = new_bias;
}

namespace {
constexpr const char* kSnapshotFormat = "spurious-lab-model/1";
}

void save_snapshot(const MlpModel& model, const std::string& path) {
    model.check_consistent();
    nlohmann::json j;
    j["format"] = kSnapshotFormat;
    j["n_inputs"] = model.n_inputs;
    j["out_bias"] = model.out_bias;
    j["out_bias_trainable"] = model.out_bias_trainable;
    j["a"] = model.a;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : model.hidden) {
        nlohmann::json jl;
        jl["in"] = layer.in;
        jl["out"] = layer.out;
        jl["w"] = layer.w;
        jl["b"] = layer.b;
        j["layers"].push_back(std::move(jl));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

MlpModel load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid snapshot " + path + ": " + e.what());
    }
    if (j.value("format", "") != kSnapshotFormat)
        throw IoError("unsupported snapshot format in " + path);
    MlpModel model;
    model.n_inputs = j.at("n_inputs").get<int>();
    model.out_bias = j.at("out_bias").get<double>();
    model.out_bias_trainable = j.at("out_bias_trainable").get<bool>();
    model.a = j.at("a").get<std::vector<double>>();
    for (const auto& jl : j.at("layers")) {
        Layer layer;
        layer.in = jl.at("in").get<int>();
        layer.out = jl.at("out").get<int>();
        layer.w = jl.at("w").get<std::vector<double>>();
        layer.b = jl.at("b").get<std::vector<double>>();
        model.hidden.push_back(std::move(layer));
    }
    model.check_consistent();
    return model;
}

}  // namespace splab
