#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pol/attack.hpp"
#include "pol/bundle.hpp"
#include "pol/cost_ledger.hpp"
#include "pol/data.hpp"
#include "pol/metric.hpp"
#include "pol/model.hpp"
#include "pol/prove.hpp"
#include "pol/verify.hpp"

namespace pol {

// ---------------------------------------------------------------------------
// Scenario description (loaded from a JSON file).
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::string kind = "blobs";   // blobs | moons | csv | cache
    std::size_t n = 2000;
    std::size_t dim = 10;
    std::size_t classes = 3;
    double separation = 2.0;
    double spread = 0.8;
    double moons_noise = 0.1;
    std::string path;             // source file for kind=csv / kind=cache
    // When > 0 the dataset is split into two disjoint stratified parts; the
    // proof is produced on part one and all spoofs run on part two.
    double split_fraction = 0.0;
};

struct AttackGridSpec {
    std::vector<std::string> enabled{"attack2", "attack3"};
    std::vector<std::size_t> steps_grid;   // candidate spoof step counts T'
    std::size_t checkpoint_interval = 5;
    std::size_t batch_size = 30;
    std::size_t epochs = 1;
    std::size_t max_iters = 10;
    double eta = 0.0;                      // 0 -> reuse the honest learning rate
    double eta_r = 0.5;
    double lambda = 0.01;
    // Thresholds are derived from the interpolation spacing of each grid cell:
    //   attack2:  gamma = gamma2_scale * spacing / k
    //   attack3:  sigma = sigma_scale * spacing, gamma = sigma + gamma3_scale * spacing
    double gamma2_scale = 0.25;
    double sigma_scale = 0.35;
    double gamma3_scale = 1.15;
    double shaping_amplitude = 0.0;
    MatchOrdering ordering = MatchOrdering::signed_desc;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    ModelSpec model;
    double init_scale = 1.0;
    TrainConfig train;
    std::vector<Metric> metrics{Metric::l1, Metric::l2, Metric::linf, Metric::cos};
    std::size_t top_q = 1;
    double init_alpha = 0.01;
    std::size_t stages = 1;                 // 1 -> flat verification threshold
    std::pair<std::uint64_t, std::uint64_t> dref_seeds{0, 1};
    AttackGridSpec attacks;
    std::size_t repeats = 5;
    std::size_t trend_points = 5;
    std::string optimizer = "gd";
    bool parallel = true;
};

// Parse a scenario from JSON text / from a file. load_scenario additionally
// honours the POL_SEED environment variable as a seed override.
ScenarioConfig parse_scenario(const std::string& json_text);
ScenarioConfig load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const ScenarioConfig& sc);

// ---------------------------------------------------------------------------
// Experiment results.
// ---------------------------------------------------------------------------

// One aggregated grid cell: (attack, T', metric), averaged over repeats.
// Honest verification appears as attack == "honest" with steps == T.
struct ExperimentRow {
    std::string attack;
    std::size_t steps = 0;
    Metric metric = Metric::l2;
    double delta = 0.0;            // verification threshold for this metric
    double proof_norm_err = 0.0;   // honest max_t eps / d_ref (same for all rows)
    double spoof_norm_err = 0.0;   // NaN on honest rows
    double spoof_eps = 0.0;        // raw max_t eps of the spoof; NaN on honest rows
    double pass_rate = 0.0;        // fraction of successful repeats that verified
    std::size_t repeats_ok = 0;    // repeats that produced a bundle
    std::size_t repeats = 0;
    std::string errors;            // e.g. "SpacingExceedsDelta:5"; empty if none
    double mean_opt_iters = 0.0;   // mean optimizer iterations per optimized unit
    double loss_grads = 0.0;       // mean ledger counts per repeat (spoof cost)
    double input_grads = 0.0;
    double units = 0.0;            // loss_grads + 3 * input_grads
    std::uint64_t honest_units = 0;
    std::uint64_t bundle_bytes = 0;
};

struct ExperimentRecord {
    ScenarioConfig scenario;
    std::map<Metric, double> d_ref;
    std::map<Metric, double> delta;        // stage-0 thresholds used in rows
    std::map<Metric, DeltaSchedule> schedule;
    std::map<Metric, double> proof_norm;
    double proof_pass_rate = 0.0;
    // Exact gradient-unit accounting; totals is the sum of the three parts.
    std::uint64_t proof_units = 0;
    std::uint64_t verify_units = 0;
    std::uint64_t attack_units = 0;
    Costs totals;
    std::vector<ExperimentRow> rows;
    std::vector<std::pair<double, double>> trend;   // (fraction of T, accuracy)
    std::filesystem::path csv_path;
    std::filesystem::path report_path;
};

// Stable CSV schema; every row of results.csv follows this header.
std::string csv_header();
std::string csv_row(const std::string& scenario_name, const ExperimentRow& row);

// Materialize the scenario dataset. With split_fraction > 0 the pair holds
// two disjoint stratified parts (proof part, spoof part); otherwise both
// entries are the same dataset.
std::pair<Dataset, Dataset> scenario_datasets(const ScenarioConfig& sc);

// Spoof thresholds derived from the matched-init spacing of one grid cell;
// shared by the experiment driver and the command-line spoof tool.
struct AttackPlan {
    double d0 = 0.0;       // matched-init distance to the target weights
    double spacing = 0.0;  // d0 * k / steps
    double gamma = 0.0;    // movement bound (unused by attack 1)
    double sigma = 0.0;    // attack-3 slack (0 otherwise)
};
AttackPlan plan_attack(const ScenarioConfig& sc, int attack, std::size_t steps,
                       const WeightVector& w_t, std::uint64_t attack_seed);

// Attack settings for one grid cell, seeded for that cell.
AttackConfig make_attack_config(const ScenarioConfig& sc, std::size_t steps,
                                std::uint64_t seed);

// Run one attack (1, 2 or 3) against target weights w_t with thresholds from
// plan_attack; delta_l2 is the verification threshold the bundle must meet.
SpoofResult run_attack(const ScenarioConfig& sc, int attack, std::size_t steps,
                       const Dataset& data, const WeightVector& w_t, double delta_l2,
                       std::uint64_t seed);

// Run the full pipeline: honest proof, reference distances, calibration,
// repeated honest verification, then every enabled attack over the step grid.
// Rows are appended to <out_dir>/results.csv as they complete and a JSON
// report is written at the end. Cell-level failures (spacing, convergence,
// sigma) become error-marked rows; anything else propagates after the rows
// collected so far have been flushed.
ExperimentRecord run_experiment(const ScenarioConfig& sc,
                                const std::filesystem::path& out_dir);

// Model accuracy on D at `points` evenly spaced fractions of training,
// snapped to stored checkpoints. Requires 2 <= points <= stored checkpoints.
std::vector<std::pair<double, double>> accuracy_trend(const ProofBundle& bundle,
                                                      const Dataset& data,
                                                      std::size_t points);

}  // namespace pol
