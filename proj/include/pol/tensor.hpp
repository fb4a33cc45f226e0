#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pol {

// Dense row-major matrix of doubles. Nothing fancy: the models here are
// small enough that hand-rolled loops beat pulling in a linear-algebra
// dependency, and keeping every FLOP visible is what makes the replay
// bit-exactness guarantees auditable.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double* row(std::size_t i) { return v.data() + i * cols; }
    const double* row(std::size_t i) const { return v.data() + i * cols; }
    double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    std::size_t size() const { return v.size(); }
};

// One affine layer's block in a flattened parameter vector: a weight matrix
// (out × in) followed, if present, by a bias vector (out).
struct LayerShape {
    std::size_t out = 0;
    std::size_t in = 0;
    bool bias = true;
    std::size_t params() const { return out * in + (bias ? out : 0); }
};

inline std::size_t flat_size(const std::vector<LayerShape>& layout) {
    std::size_t n = 0;
    for (const auto& l : layout) n += l.params();
    return n;
}

// Flattened model parameters plus the layout needed to view them per layer.
// The flat form is what distances, updates, checkpoints and serialization
// operate on; the per-layer spans are views, so flatten/unflatten is exact
// by construction.
struct WeightVector {
    std::vector<double> values;
    std::vector<LayerShape> layout;

    WeightVector() = default;
    explicit WeightVector(std::vector<LayerShape> shapes)
        : values(flat_size(shapes), 0.0), layout(std::move(shapes)) {}

    std::size_t size() const { return values.size(); }
    std::size_t layers() const { return layout.size(); }

    std::size_t layer_offset(std::size_t l) const {
        std::size_t off = 0;
        for (std::size_t i = 0; i < l; ++i) off += layout[i].params();
        return off;
    }
    // Whole layer block (weights then bias).
    std::span<double> layer(std::size_t l) {
        return {values.data() + layer_offset(l), layout[l].params()};
    }
    std::span<const double> layer(std::size_t l) const {
        return {values.data() + layer_offset(l), layout[l].params()};
    }
    std::span<double> weights(std::size_t l) {
        return {values.data() + layer_offset(l), layout[l].out * layout[l].in};
    }
    std::span<const double> weights(std::size_t l) const {
        return {values.data() + layer_offset(l), layout[l].out * layout[l].in};
    }
    std::span<double> bias(std::size_t l) {
        return {values.data() + layer_offset(l) + layout[l].out * layout[l].in,
                layout[l].bias ? layout[l].out : 0};
    }
    std::span<const double> bias(std::size_t l) const {
        return {values.data() + layer_offset(l) + layout[l].out * layout[l].in,
                layout[l].bias ? layout[l].out : 0};
    }
};

// Same storage as a WeightVector but a distinct type: a direction in
// parameter space, not a point. Keeps η·g updates and W−W′ distances from
// being mixed up by accident.
struct GradientVector {
    std::vector<double> values;

    GradientVector() = default;
    explicit GradientVector(std::size_t n) : values(n, 0.0) {}
    std::size_t size() const { return values.size(); }
};

inline double l2_norm(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace pol
