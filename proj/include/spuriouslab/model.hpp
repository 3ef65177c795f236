#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spuriouslab/rng.hpp"

namespace splab {

enum class InitKind { StandardUniform, BooleanSymmetric };

struct InitScheme {
    InitKind kind = InitKind::BooleanSymmetric;
    // BooleanSymmetric biases are drawn from {-1+1/g, -1+2/g, ..., 1-1/g}.
    int bias_grid = 10;
};

std::string to_string(InitKind kind);
InitKind init_kind_from_string(const std::string& name);

struct Layer {
    int in = 0;
    int out = 0;
    std::vector<double> w;  // row-major [out x in]
    std::vector<double> b;  // [out]
};

// Feed-forward ReLU network with identity output:
//   h(x) = sum_i a_i * relu(w_i . z + b_i) + out_bias
// where z is the last hidden activation (z = x for depth 2). depth counts
// hidden layers plus the output layer, so depth 2 means one hidden layer.
struct MlpModel {
    int n_inputs = 0;
    std::vector<Layer> hidden;
    std::vector<double> a;
    double out_bias = 0.0;
    bool out_bias_trainable = false;

    int depth() const { return static_cast<int>(hidden.size()) + 1; }
    int width() const { return hidden.empty() ? 0 : hidden.back().out; }

    double forward(const double* x) const;
    double forward(const std::vector<std::int8_t>& x) const;

    // Post-ReLU activations of the last hidden layer; independent of the
    // output weights.
    std::vector<double> embed(const double* x) const;
    std::vector<double> embed(const std::vector<std::int8_t>& x) const;

    void check_consistent() const;
};

// BooleanSymmetric requires even width and depth 2: neurons i and i + p/2
// share weights and bias with opposite output signs, so h == 0 everywhere.
// StandardUniform draws every parameter from U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
// The output bias starts at 0 under both schemes.
MlpModel init_model(int width, int n_inputs, const InitScheme& scheme, Rng& rng, int depth = 2);

// Cross-entropy loss on a +-1 label: loss = -2 log(sigmoid(y * logit)).
double loss(double logit, int y);
// d loss / d logit.
double loss_grad(double logit, int y);

double sigmoid(double z);
double softplus(double z);
inline int sgn(double v) { return v >= 0.0 ? +1 : -1; }

struct ModelGrad {
    std::vector<Layer> hidden;  // same shapes as the model's layers
    std::vector<double> a;
    double out_bias = 0.0;

    static ModelGrad zeros_like(const MlpModel& model);
    void scale(double factor);
};

// Mean loss gradient over a row-major batch X[batch x n] with labels y.
// ReLU' (0) = 0. Returns the mean loss as well.
double grad_batch(const MlpModel& model, const double* X, const int* y, int batch,
                  ModelGrad& out);

// Swaps the output layer, leaving hidden layers untouched.
void last_layer_replace(MlpModel& model, const std::vector<double>& new_a, double new_bias);

// Versioned JSON snapshot with full double round-trip.
void save_snapshot(const MlpModel& model, const std::string& path);
MlpModel load_snapshot(const std::string& path);

}  // namespace splab
