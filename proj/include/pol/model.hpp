#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pol/tensor.hpp"

namespace pol {

// Activations are restricted to twice-differentiable choices; the input
// perturbation machinery differentiates through the gradient, so anything
// with a kink (ReLU) is unrepresentable here by construction.
enum class Activation { tanh, softplus };
enum class LossKind { squared_error, softmax_cross_entropy };

struct ModelSpec {
    // [input_dim, hidden..., n_classes]; at most two hidden layers, ≤ 64
    // units each (desk-scale family). A single output unit is allowed for
    // squared-error loss (scalar regression; labels are the real targets).
    std::vector<std::size_t> widths;
    Activation activation = Activation::tanh;
    LossKind loss = LossKind::softmax_cross_entropy;
    bool use_bias = true;

    std::size_t input_dim() const { return widths.front(); }
    std::size_t n_classes() const { return widths.back(); }
    std::size_t n_layers() const { return widths.size() - 1; }
    std::vector<LayerShape> layout() const;
    std::size_t dim() const { return flat_size(layout()); }
    void validate() const;  // throws ConfigError
};

// Init distribution ζ: zero-mean gaussian per layer with
// std = scale / sqrt(fan_in). Biases are drawn from the same per-layer
// distribution so a layer block is one i.i.d. sample (which is also what
// the per-layer KS check assumes).
struct InitSpec {
    std::uint64_t seed = 0;
    double scale = 1.0;
};

double layer_init_std(const ModelSpec& m, std::size_t l, const InitSpec& z);
WeightVector init_weights(const ModelSpec& m, const InitSpec& z);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Forward pass over a full matrix of inputs; logits written per row.
void forward_logits(const ModelSpec& m, const WeightVector& w, const Matrix& X, Matrix& logits);
EvalResult evaluate(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                    const std::vector<std::int64_t>& y);

const char* to_string(Activation a);
const char* to_string(LossKind l);
Activation activation_from_string(const std::string& s);
LossKind loss_from_string(const std::string& s);

}  // namespace pol
