#pragma once

#include <atomic>
#include <cstdint>

namespace pol {

// Plain snapshot of a ledger, safe to copy and serialize.
struct Costs {
    std::uint64_t loss_grad_calls = 0;
    std::uint64_t input_grad_calls = 0;
    std::uint64_t bytes_written = 0;
    double wall_seconds = 0.0;

    // Gradient-computation units: a loss gradient costs 1, an adversarial
    // input-objective gradient costs 3 (forward + backward + the
    // second-order adjoint sweep).
    std::uint64_t units() const { return loss_grad_calls + 3 * input_grad_calls; }
    std::uint64_t opt_iterations() const { return input_grad_calls; }
};

// Shared mutable cost counter. The only thing the core numerics ever share
// across threads, so increments are atomic and everything else stays pure.
class CostLedger {
  public:
    void add_loss_grad() noexcept { loss_grad_.fetch_add(1, std::memory_order_relaxed); }
    void add_input_grad() noexcept { input_grad_.fetch_add(1, std::memory_order_relaxed); }
    void add_bytes(std::uint64_t n) noexcept { bytes_.fetch_add(n, std::memory_order_relaxed); }
    void add_wall_seconds(double s) noexcept {
        // Single-writer in practice (harness timing); atomic for form.
        double cur = wall_.load(std::memory_order_relaxed);
        while (!wall_.compare_exchange_weak(cur, cur + s, std::memory_order_relaxed)) {
        }
    }

    Costs snapshot() const {
        Costs c;
        c.loss_grad_calls = loss_grad_.load(std::memory_order_relaxed);
        c.input_grad_calls = input_grad_.load(std::memory_order_relaxed);
        c.bytes_written = bytes_.load(std::memory_order_relaxed);
        c.wall_seconds = wall_.load(std::memory_order_relaxed);
        return c;
    }
    std::uint64_t units() const { return snapshot().units(); }

  private:
    std::atomic<std::uint64_t> loss_grad_{0};
    std::atomic<std::uint64_t> input_grad_{0};
    std::atomic<std::uint64_t> bytes_{0};
    std::atomic<double> wall_{0.0};
};

}  // namespace pol
