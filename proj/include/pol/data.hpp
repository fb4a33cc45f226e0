#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pol/tensor.hpp"

namespace pol {

struct Dataset {
    Matrix features;  // n × d
    std::vector<std::int64_t> labels;
    std::string id;

    std::size_t n() const { return features.rows; }
    std::size_t dim() const { return features.cols; }
};

// Gaussian blobs: class means are `separation`-scaled random unit
// directions, points are mean + spread·N(0, I). Labels are exactly
// balanced (round-robin before shuffling).
Dataset make_blobs(std::size_t n, std::size_t dim, std::size_t classes, double separation,
                   double spread, std::uint64_t seed);

// Two interleaved half-moons in 2-D with additive gaussian noise.
Dataset make_moons(std::size_t n, double noise, std::uint64_t seed);

// CSV with a header row; the column named "label" (any position) holds the
// integer label, every other column is a feature in file order.
Dataset load_csv(const std::filesystem::path& p);
void save_csv(const Dataset& d, const std::filesystem::path& p);

// Binary cache: magic "POLD", u16 version, u64 n, u64 d, features as f64
// little-endian row-major, labels as i64 little-endian.
Dataset load_cache(const std::filesystem::path& p);
void save_cache(const Dataset& d, const std::filesystem::path& p);

// Stratified disjoint split: per-class shuffle, first `fraction` of each
// class to the first part. Parts are disjoint, union the parent, and class
// balance is preserved by construction.
std::pair<Dataset, Dataset> split_disjoint(const Dataset& d, double fraction, std::uint64_t seed);

struct BatchIndex {
    std::vector<std::size_t> rows;
};

// One epoch's batch schedule: S batches of b distinct rows, sampled
// without replacement from [0, n) — requires S·b ≤ n.
std::vector<BatchIndex> get_batches(std::size_t n, std::size_t steps, std::size_t batch_size,
                                    std::uint64_t seed, std::uint64_t epoch);

Matrix gather_rows(const Matrix& X, const std::vector<std::size_t>& rows);
std::vector<std::int64_t> gather_labels(const std::vector<std::int64_t>& y,
                                        const std::vector<std::size_t>& rows);

}  // namespace pol
