#pragma once

#include "pol/bundle.hpp"
#include "pol/cost_ledger.hpp"
#include "pol/data.hpp"

namespace pol {

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t steps_per_epoch = 1;
    std::size_t checkpoint_interval = 1;
    std::size_t batch_size = 1;
    double learning_rate = 0.1;
    std::uint64_t batch_seed = 0;
    NoiseModel noise;

    std::size_t total_steps() const { return epochs * steps_per_epoch; }
    void validate(std::size_t dataset_n) const;  // throws ConfigError
};

// Alg. 1: SGD with per-step batch recording, digests, and checkpoints at
// every k-th step (plus the final weights).
ProofBundle create_proof(const ModelSpec& m, const InitSpec& zeta, const Dataset& D,
                         const TrainConfig& cfg, CostLedger* ledger = nullptr);

// Same trajectory, no proof materials — used for d_ref and experiments.
WeightVector train_final(const ModelSpec& m, const InitSpec& zeta, const Dataset& D,
                         const TrainConfig& cfg, CostLedger* ledger = nullptr);

}  // namespace pol
