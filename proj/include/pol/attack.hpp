#pragma once

// The three spoof generators, the distribution-preserving matched
// initialization, checkpoint interpolation, and the sequential-replay drift
// bound machinery.

#include <cstdint>
#include <vector>

#include "pol/bundle.hpp"
#include "pol/cost_ledger.hpp"
#include "pol/data.hpp"
#include "pol/diffcore.hpp"
#include "pol/model.hpp"

namespace pol {

// "Largest element" pairing order for the matched init: by signed value
// (default) or by magnitude.
enum class MatchOrdering { signed_desc, magnitude_desc };

struct AttackConfig {
    std::size_t steps = 0;                // T', must be a multiple of k
    std::size_t checkpoint_interval = 0;  // k of the spoofed trace
    std::size_t batch_size = 0;
    std::size_t epochs = 1;           // epoch framing of the spoofed trace
    std::size_t max_iters = 10;       // adversarial-optimization cap per unit
    std::size_t forced_iters = 0;     // >0: run exactly this many, ignore guards
    double eta = 0.0;                 // declared learning rate of the spoof
    double eta_r = 0.5;               // step size on the input perturbation R
    double lambda = 0.01;             // weight of the ‖R‖ objective term
    std::uint64_t seed = 0;           // batch schedule + init draws
    MatchOrdering ordering = MatchOrdering::signed_desc;
    double shaping_amplitude = 0.0;   // interior-checkpoint noise (report-only)
    NoiseModel noise;                 // ν declared in the spoof bundle
    bool parallel = true;             // optimize intervals with OpenMP
};

struct SpoofResult {
    ProofBundle bundle;
    Dataset dataset;  // attacker's dataset with perturbations written back
    Costs costs;      // exactly the attack's own gradient spend

    // One entry per optimized unit: per step for attacks one/two, per
    // interval for attack three.
    std::vector<std::size_t> opt_iters;
    // Attacker-side distance between the end of each replayed interval and
    // the next stored checkpoint (l2, noise-free).
    std::vector<double> interval_gap;

    double grad_norm_before = 0.0;  // mean ‖∇L‖₂ at R = 0 over optimized units
    double grad_norm_after = 0.0;   // mean ‖∇L‖₂ at the accepted R
    double mean_r_inf = 0.0;        // mean ‖R‖∞ over modified batches
};

// Permutation of n i.i.d. draws from ζ positioned so the largest draw sits
// where W_T's largest element sits, layer by layer; preserves each layer's
// empirical distribution exactly while pulling W_0 toward W_T.
WeightVector init_w0_matched(const ModelSpec& m, const InitSpec& zeta, const WeightVector& w_t,
                             std::uint64_t seed,
                             MatchOrdering ordering = MatchOrdering::signed_desc);

// Checkpoints W_t = W_0 + (t/T')(W_T − W_0) at t = 0, k, ..., T'; endpoints
// are exact copies. Consecutive spacing is (k/T')·d(W_0, W_T); throws
// SpacingExceedsDelta (reporting the smallest sufficient T') when that
// exceeds delta in l2.
std::vector<WeightVector> interpolate_checkpoints(const WeightVector& w0, const WeightVector& w_t,
                                                  std::size_t steps, std::size_t k, double delta);

// Honest training for T'−1 steps from a fresh ζ draw, then adversarial
// optimization of the final batch until one more update lands within delta
// of w_t. Throws NonConvergence when max_iters is exhausted — frequent by
// design, this attack's weakness.
SpoofResult attack_one(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                       double delta, const InitSpec& zeta, const AttackConfig& cfg);

// Matched init + interpolated checkpoints; every step's batch is optimized
// until the single-step movement η·‖∇L‖₂ drops to gamma or below.
SpoofResult attack_two(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                       double delta, double gamma, const InitSpec& zeta, const AttackConfig& cfg);

// Like attack_two but one joint optimization per interval: all k batches
// concatenated, candidate update at learning rate k·η from the interval
// start, guard d(candidate, W_t) ≤ gamma − sigma. sigma must dominate the
// drift term estimated from the trajectory (else SigmaTooSmall).
SpoofResult attack_three(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                         double delta, double gamma, double sigma, const InitSpec& zeta,
                         const AttackConfig& cfg);

// η²αβ(k−1)(k−2)/2 + γ − σ: how far the verifier's sequential k-step replay
// can land from a checkpoint produced by one joint k-batch update.
double corollary_bound(double eta, double alpha, double beta, std::size_t k, double gamma,
                       double sigma);

struct DerivativeBounds {
    double alpha = 0.0;      // max observed ‖∇L‖₂
    double beta = 0.0;       // max observed Hessian-vector-product norm
    std::size_t samples = 0; // (weight sample, batch) pairs inspected
};

// Running max of first- and second-order derivative magnitudes over sampled
// weights and random batches; the Hessian norm is probed by central
// finite-difference HVPs along random unit directions. Gradient spend here
// is deliberately off-ledger (scratch estimation, not attack cost).
DerivativeBounds estimate_alpha_beta(const ModelSpec& m, const Dataset& data,
                                     const std::vector<WeightVector>& weight_samples,
                                     std::size_t batch_size, std::uint64_t seed,
                                     std::size_t directions = 2);

}  // namespace pol
