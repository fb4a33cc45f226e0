#pragma once

#include <cmath>

#include "pol/model.hpp"

// Activation helpers shared by the forward pass and the differentiation
// core. For both activations φ″ is recoverable from the stored value and
// first derivative, which keeps the second-order sweep tape small:
//   tanh:     φ′ = 1 − a²,  φ″ = −2a(1 − a²) = −2a·φ′
//   softplus: φ′ = σ(z),    φ″ = σ(1 − σ)    = φ′(1 − φ′)

namespace pol::detail {

inline double act_value(Activation k, double z) {
    if (k == Activation::tanh) return std::tanh(z);
    // numerically stable softplus
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double act_prime(Activation k, double z, double a) {
    if (k == Activation::tanh) return 1.0 - a * a;
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double act_second(Activation k, double a, double phi1) {
    if (k == Activation::tanh) return -2.0 * a * phi1;
    return phi1 * (1.0 - phi1);
}

}  // namespace pol::detail
