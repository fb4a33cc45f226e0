#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pol/model.hpp"

namespace pol {

// Two-sided Kolmogorov–Smirnov statistic of a sample against the standard
// normal CDF.
double ks_statistic_normal(std::span<const double> sample);

// Asymptotic two-sided p-value with Stephens' finite-n correction
// λ = (√n + 0.12 + 0.11/√n)·D,  p = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²).
double ks_p_value(double d_stat, std::size_t n);

struct LayerKs {
    std::size_t layer = 0;
    std::size_t n = 0;
    double statistic = 0.0;
    double p_value = 0.0;
};

struct InitCheck {
    std::vector<LayerKs> layers;
    double min_p = 1.0;
    bool pass = false;
};

// Alg. 2's first gate: were these weights drawn from ζ? Each layer block is
// standardized by its expected init std and tested against N(0,1); pass iff
// the smallest per-layer p-value clears alpha_sig.
InitCheck verify_initialization(const ModelSpec& m, const InitSpec& zeta, const WeightVector& w0,
                                double alpha_sig);

}  // namespace pol
