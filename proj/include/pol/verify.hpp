#pragma once

// Verifier side of the protocol: initialization distribution test, per-epoch
// top-Q interval replay, reproduction errors, reference distance, and
// threshold calibration.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "pol/bundle.hpp"
#include "pol/cost_ledger.hpp"
#include "pol/data.hpp"
#include "pol/ks.hpp"
#include "pol/metric.hpp"
#include "pol/prove.hpp"

namespace pol {

// Threshold that may tighten over the course of training. Stage of step t is
// floor(stages * t / total_steps), clamped to the last stage; a single-value
// schedule is a constant threshold.
struct DeltaSchedule {
    std::vector<double> stage_values;

    DeltaSchedule() = default;
    explicit DeltaSchedule(double constant) : stage_values{constant} {}
    explicit DeltaSchedule(std::vector<double> values) : stage_values(std::move(values)) {}

    double at(std::size_t t, std::size_t total_steps) const;
};

struct VerificationConfig {
    std::vector<Metric> metrics{Metric::l2};
    std::map<Metric, DeltaSchedule> delta;  // must cover every configured metric
    std::size_t top_q = 1;                  // intervals replayed per epoch
    double init_alpha = 0.01;               // significance level for the init test
    bool parallel = true;                   // replay selected intervals with OpenMP
};

enum class Verdict { pass, init_fail, signature_fail, distance_fail };
std::string to_string(Verdict v);

struct IntervalCheck {
    std::size_t start = 0;            // replayed window is [start, start + k)
    double magnitude = 0.0;           // recorded checkpoint movement (l2)
    std::map<Metric, double> eps;     // replay distance per metric
    std::map<Metric, double> threshold;
    bool signatures_ok = true;
    bool distances_ok = true;
    bool pass() const { return signatures_ok && distances_ok; }
};

struct EpochCheck {
    std::size_t epoch = 0;
    std::vector<std::size_t> starts;     // every interval start in this epoch
    std::vector<double> magnitudes;      // parallel to starts
    std::vector<IntervalCheck> checked;  // selected intervals, largest movement first
};

struct VerificationReport {
    Verdict verdict = Verdict::pass;
    InitCheck init;
    std::vector<EpochCheck> epochs;
    std::map<Metric, double> max_eps;  // over all replayed intervals
    std::size_t replay_steps = 0;      // gradient evaluations spent on replay
    std::string detail;                // names the offending step on failure
    bool pass() const { return verdict == Verdict::pass; }
};

// Full verification pass. The initialization test runs first and short-circuits;
// otherwise each epoch's Q largest-movement intervals are replayed with the
// verifier's noise model nm and compared against the recorded endpoints under
// every configured metric. Throws MalformedBundle for structural violations or
// a dataset mismatch, ConfigError for bad cfg values.
VerificationReport verify_proof(const ProofBundle& b, const Dataset& data,
                                const VerificationConfig& cfg, const NoiseModel& nm,
                                CostLedger* ledger = nullptr);

// Replay distance for the single interval starting at checkpoint step t.
// Throws ConfigError unless t is a stored interval start with t + k <= T.
double reproduction_error(const ProofBundle& b, const Dataset& data, std::size_t t,
                          Metric metric, const NoiseModel& nm, CostLedger* ledger = nullptr);

// Replay of every interval (not just the selected ones); used by calibration
// and reporting.
struct ReplayErrors {
    std::vector<std::size_t> starts;
    std::map<Metric, std::vector<double>> eps;  // parallel to starts
    std::map<Metric, double> max_eps;
};
ReplayErrors replay_all_intervals(const ProofBundle& b, const Dataset& data,
                                  const std::vector<Metric>& metrics, const NoiseModel& nm,
                                  bool parallel = true, CostLedger* ledger = nullptr);

// max_t eps(t) / d_ref per metric.
std::map<Metric, double> normalized_errors(const ProofBundle& b, const Dataset& data,
                                           const std::vector<Metric>& metrics,
                                           const NoiseModel& nm,
                                           const std::map<Metric, double>& d_ref);

// Reference scale: distance between the final weights of two trainings that
// share architecture, data, and init distribution but draw different init and
// batch-order seeds. Deterministic in the seed pair; identical seeds give 0.
std::map<Metric, double> compute_d_ref(const ModelSpec& m, const InitSpec& zeta,
                                       const Dataset& data, const TrainConfig& cfg,
                                       const std::vector<Metric>& metrics,
                                       std::pair<std::uint64_t, std::uint64_t> seeds = {0, 1});

// Constant threshold: geometric mean of (max eps, d_ref) per metric. Throws
// CalibrationInfeasible when max eps >= d_ref.
std::map<Metric, double> calibrate_delta(const std::map<Metric, double>& max_eps,
                                         const std::map<Metric, double>& d_ref);

// Staged thresholds: stage s gets eps_s * sqrt(d_ref / eps_max) where eps_s is
// the stage's own worst replay error, then the list is clamped non-increasing.
std::map<Metric, DeltaSchedule> calibrate_delta_schedule(const ReplayErrors& errs,
                                                         std::size_t total_steps,
                                                         std::size_t stages,
                                                         const std::map<Metric, double>& d_ref);

// Indices of the q largest values, largest first; ties broken by lower index.
std::vector<std::size_t> top_q_indices(const std::vector<double>& mags, std::size_t q);

// Wrap constant per-metric thresholds as single-stage schedules.
std::map<Metric, DeltaSchedule> to_schedule(const std::map<Metric, double>& delta);

}  // namespace pol
