#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pol/cost_ledger.hpp"
#include "pol/data.hpp"
#include "pol/diffcore.hpp"
#include "pol/digest.hpp"
#include "pol/model.hpp"

namespace pol {

// Declared hyperparameters riding along with a proof — what the paper
// calls A. T = epochs·steps_per_epoch steps total; checkpoints every k
// steps; k must divide S so epochs contain whole checkpoint intervals.
struct AuxInfo {
    std::size_t epochs = 0;
    std::size_t steps_per_epoch = 0;
    std::size_t checkpoint_interval = 0;
    std::size_t batch_size = 0;
    double learning_rate = 0.0;
    std::uint64_t batch_seed = 0;
    NoiseModel noise;
    ModelSpec model;
    InitSpec init;

    std::size_t total_steps() const { return epochs * steps_per_epoch; }
};

// The proof tuple: checkpoints 𝕎, batch index trace 𝕀, per-batch digests
// ℍ, hyperparameters 𝔸. checkpoints has T+1 slots; entries are engaged
// exactly at t ≡ 0 (mod k) and at t = T.
struct ProofBundle {
    AuxInfo aux;
    std::string dataset_id;
    std::vector<std::optional<WeightVector>> checkpoints;
    std::vector<BatchIndex> batch_indices;  // T entries
    std::vector<Digest32> digests;          // T entries

    const WeightVector& checkpoint(std::size_t t) const { return checkpoints.at(t).value(); }
    const WeightVector& final_weights() const { return checkpoints.back().value(); }
};

// Structural invariants only (counts, checkpoint placement, shapes);
// throws MalformedBundle.
void validate_bundle(const ProofBundle& b);

// Directory layout: manifest.json + weights/w_<t>.bin (u64 length then f64
// little-endian values).
void save_bundle(const ProofBundle& b, const std::filesystem::path& dir,
                 CostLedger* ledger = nullptr);
ProofBundle load_bundle(const std::filesystem::path& dir);  // throws MalformedBundle

// Serialized size in bytes (manifest + weight files), without touching disk.
std::uint64_t bundle_size(const ProofBundle& b);

}  // namespace pol
