#pragma once

#include <cstdint>
#include <vector>

#include "pol/cost_ledger.hpp"
#include "pol/model.hpp"
#include "pol/tensor.hpp"

namespace pol {

// Gradient noise: W_{t+1} = W_t − η(∇L + ν·u), u ~ N(0, I), with the draw
// for step t derived from (seed, t) so replay is order-independent.
// amplitude == 0 is the exact no-noise path (not even a +0.0 is added).
struct NoiseModel {
    double amplitude = 0.0;
    std::uint64_t seed = 0;
};

void inject_noise(GradientVector& g, const NoiseModel& nm, std::uint64_t step);

struct LossGrad {
    double loss = 0.0;
    GradientVector grad;
};

// Mean-loss gradient over one batch. Adds exactly 1 to the ledger.
LossGrad loss_grad(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                   const std::vector<std::int64_t>& y, CostLedger* ledger = nullptr);

void sgd_update_inplace(WeightVector& w, const GradientVector& g, double eta);
WeightVector sgd_update(const WeightVector& w, const GradientVector& g, double eta);

// Objectives over an input perturbation R (same shape as the batch X):
//   grad_norm:        D(R) = ‖∇_W L(W, X+R)‖₂           + λ‖R‖₂
//   target_distance:  D(R) = ‖(W − η∇_W L(W, X+R)) − W*‖₂ + λ‖R‖₂
// ‖R‖₂ is the Frobenius norm of the whole perturbation.
enum class ObjectiveKind { grad_norm, target_distance };

struct ObjectiveSpec {
    ObjectiveKind kind = ObjectiveKind::grad_norm;
    double lambda = 0.01;
    // target_distance only:
    double eta = 0.0;
    const WeightVector* target = nullptr;
};

struct InputObjective {
    double value = 0.0;       // D(R) including the λ‖R‖₂ term
    Matrix r_grad;            // ∂D/∂R, one row per batch sample
    GradientVector inner_grad;  // ∇_W L at (W, X+R) — free by-product
    double inner_grad_norm = 0.0;  // ‖inner_grad‖₂
};

// Exact ∂D/∂R via a hand-rolled second-order reverse sweep (reverse-mode
// through the backward pass). Adds exactly 3 to the ledger — the "three
// gradient computations" an adversarial iteration costs. The inner weight
// gradient comes out as a by-product, which is what lets the attack loops
// reuse the accepting iteration's gradient for the recorded update without
// paying for an extra call.
InputObjective input_objective_grad(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                                    const Matrix& R, const std::vector<std::int64_t>& y,
                                    const ObjectiveSpec& obj, CostLedger* ledger = nullptr);

}  // namespace pol
