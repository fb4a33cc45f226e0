#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pol/errors.hpp"
#include "pol/experiment.hpp"

using namespace pol;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* leaf) { return fs::temp_directory_path() / leaf; }

const char* kMiniScenario = R"({
  "name": "mini",
  "seed": 9,
  "dataset": {"kind": "blobs", "n": 600, "dim": 2, "classes": 2,
               "separation": 2.0, "spread": 0.6},
  "model": {"widths": [2, 8, 2]},
  "train": {"epochs": 2, "steps_per_epoch": 15, "checkpoint_interval": 5,
             "batch_size": 10, "learning_rate": 0.1, "noise": 1e-3},
  "metrics": ["l1", "l2", "linf", "cos"],
  "top_q": 3,
  "attacks": {"enabled": ["attack1", "attack2", "attack3"], "steps_grid": [20, 150],
               "checkpoint_interval": 5, "batch_size": 4, "epochs": 1,
               "max_iters": 10, "eta": 0.01, "gamma2_scale": 0.5},
  "repeats": 2
})";

// One shared run; the record is deterministic in the scenario seed.
const ExperimentRecord& mini() {
    static ExperimentRecord rec = run_experiment(parse_scenario(kMiniScenario),
                                                 scratch("pol_exp_mini"));
    return rec;
}

const ExperimentRow& find_row(const ExperimentRecord& rec, const std::string& attack,
                              std::size_t steps, Metric m) {
    for (const ExperimentRow& r : rec.rows)
        if (r.attack == attack && r.steps == steps && r.metric == m) return r;
    REQUIRE_MESSAGE(false, "row not found: " << attack << "/" << steps);
    static ExperimentRow dummy;
    return dummy;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace

TEST_CASE("scenario parsing rejects malformed configs") {
    CHECK_THROWS_AS(parse_scenario("not json at all"), ConfigError);
    CHECK_THROWS_AS(parse_scenario("[1,2]"), ConfigError);
    // model block is mandatory
    CHECK_THROWS_AS(parse_scenario(R"({"train": {}})"), ConfigError);
    const std::string base = R"({"model": {"widths": [2, 4, 2]}, "train": {})";
    CHECK_THROWS_AS(parse_scenario(base + R"(, "metrics": ["l5"]})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(base + R"(, "optimizer": "lbfgs"})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(base + R"(, "repeats": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(base + R"(, "dref_seeds": [1]})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(base + R"(, "attacks": {"enabled": ["attack9"]}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_scenario(base + R"(, "attacks": {"ordering": "rhyming"}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_scenario(base + R"(, "model": {"widths": "wide"}})"), ConfigError);

    ScenarioConfig ok = parse_scenario(base + "}");
    CHECK(ok.model.widths == std::vector<std::size_t>{2, 4, 2});
    CHECK(ok.optimizer == "gd");
    CHECK(ok.metrics.size() == 4);  // defaults to all four
}

TEST_CASE("scenario JSON round-trips through its own serialization") {
    ScenarioConfig sc = parse_scenario(kMiniScenario);
    ScenarioConfig back = parse_scenario(scenario_to_json(sc));
    CHECK(back.name == sc.name);
    CHECK(back.seed == sc.seed);
    CHECK(back.dataset.n == sc.dataset.n);
    CHECK(back.model.widths == sc.model.widths);
    CHECK(back.train.total_steps() == sc.train.total_steps());
    CHECK(back.train.noise.amplitude == sc.train.noise.amplitude);
    CHECK(back.metrics == sc.metrics);
    CHECK(back.attacks.steps_grid == sc.attacks.steps_grid);
    CHECK(back.attacks.gamma2_scale == sc.attacks.gamma2_scale);
    CHECK(back.attacks.ordering == sc.attacks.ordering);
    CHECK(back.repeats == sc.repeats);
}

TEST_CASE("POL_SEED environment variable overrides the scenario seed") {
    const fs::path p = scratch("pol_seed_scenario.json");
    {
        std::ofstream out(p);
        out << kMiniScenario;
    }
    unsetenv("POL_SEED");
    CHECK(load_scenario(p).seed == 9);
    setenv("POL_SEED", "1234", 1);
    CHECK(load_scenario(p).seed == 1234);
    setenv("POL_SEED", "12x4", 1);
    CHECK_THROWS_AS(load_scenario(p), ConfigError);
    unsetenv("POL_SEED");
    CHECK_THROWS_AS(load_scenario(scratch("no_such_scenario.json")), ConfigError);
}

TEST_CASE("experiment emits a stable CSV schema") {
    const ExperimentRecord& rec = mini();
    CHECK(csv_header() ==
          "scenario,attack,steps,metric,delta,proof_norm_err,spoof_norm_err,spoof_eps,"
          "pass_rate,repeats_ok,repeats,errors,mean_opt_iters,loss_grads,input_grads,units,"
          "honest_units,bundle_bytes");

    std::ifstream csv(rec.csv_path);
    REQUIRE(csv.good());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(csv, line)) lines.push_back(line);

    // header + 4 honest rows + (3 attacks x 2 grid steps x 4 metrics)
    REQUIRE(lines.size() == 29);
    CHECK(lines[0] == csv_header());
    const std::size_t n_cols = split_fields(lines[0]).size();
    CHECK(n_cols == 18);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto fields = split_fields(lines[i]);
        REQUIRE(fields.size() == n_cols);
        CHECK(fields[0] == "mini");
        // numeric columns parse when non-empty
        for (std::size_t c : {4u, 5u, 8u, 9u, 10u, 16u, 17u})
            CHECK_NOTHROW((void)std::stod(fields[c]));
    }
    // one row per (attack, steps, metric): rows match the in-memory record
    CHECK(rec.rows.size() == 28);
    for (const ExperimentRow& r : rec.rows)
        CHECK(csv_row("mini", r) == lines[1 + (&r - rec.rows.data())]);
}

TEST_CASE("honest verification rows: calibrated pass with small normalized error") {
    const ExperimentRecord& rec = mini();
    CHECK(rec.proof_pass_rate == 1.0);
    for (Metric m : rec.scenario.metrics) {
        const ExperimentRow& r = find_row(rec, "honest", 30, m);
        CHECK(r.pass_rate == 1.0);
        CHECK(r.repeats_ok == 2);
        CHECK(r.errors.empty());
        CHECK(r.proof_norm_err > 0.0);       // nu = 1e-3 leaves a trace
        CHECK(r.proof_norm_err < 1e-2);      // far below the reference scale
        CHECK(r.delta > 0.0);
        CHECK(r.delta < rec.d_ref.at(m));    // geometric mean sits strictly inside
        CHECK(r.units == 30.0);              // proof cost: one gradient per step
        CHECK(r.bundle_bytes > 0);
        CHECK(std::isnan(r.spoof_norm_err));
        CHECK(std::isnan(r.spoof_eps));
    }
    // delta = sqrt(eps_max * d_ref) in every metric
    for (Metric m : rec.scenario.metrics) {
        const double eps = rec.proof_norm.at(m) * rec.d_ref.at(m);
        CHECK(rec.delta.at(m) ==
              doctest::Approx(std::sqrt(eps * rec.d_ref.at(m))).epsilon(1e-9));
    }
}

TEST_CASE("attack grid rows: feasible cells pass, infeasible cells carry error marks") {
    const ExperimentRecord& rec = mini();

    // T' = 20 gives spacing d0/4 >> delta: both structured attacks must report it.
    for (const char* a : {"attack2", "attack3"}) {
        const ExperimentRow& r = find_row(rec, a, 20, Metric::l2);
        CHECK(r.repeats_ok == 0);
        CHECK(r.errors == "SpacingExceedsDelta:2");
        CHECK(std::isnan(r.spoof_eps));
        CHECK(r.pass_rate == 0.0);
        CHECK(r.bundle_bytes == 0);
    }
    // Attack 1 retrains honestly and cannot steer the last step into delta.
    for (std::size_t steps : {std::size_t{20}, std::size_t{150}}) {
        const ExperimentRow& r = find_row(rec, "attack1", steps, Metric::l2);
        CHECK(r.repeats_ok == 0);
        CHECK(r.errors == "NonConvergence:2");
    }

    // T' = 150 is feasible for both structured attacks in every metric.
    for (const char* a : {"attack2", "attack3"}) {
        for (Metric m : rec.scenario.metrics) {
            const ExperimentRow& r = find_row(rec, a, 150, m);
            CHECK(r.repeats_ok == 2);
            CHECK(r.pass_rate == 1.0);
            CHECK(r.errors.empty());
            CHECK(r.spoof_eps > 0.0);
            CHECK(r.spoof_eps <= r.delta);
            CHECK(r.spoof_norm_err < 1.0);
            CHECK(r.bundle_bytes > 0);
        }
    }

    // Exact ledger identities for the feasible cells (means over 2 repeats).
    const ExperimentRow& a2 = find_row(rec, "attack2", 150, Metric::l2);
    CHECK(a2.loss_grads == 150.0);  // one per spoofed step
    CHECK(a2.input_grads > 0.0);    // a few steps needed input optimization
    CHECK(a2.mean_opt_iters > 0.0);
    CHECK(a2.units == a2.loss_grads + 3.0 * a2.input_grads);

    const ExperimentRow& a3 = find_row(rec, "attack3", 150, Metric::l2);
    CHECK(a3.loss_grads == 30.0);   // one joint gradient per interval (150 / 5)
    CHECK(a3.input_grads == 0.0);   // every joint candidate accepted at R = 0
    CHECK(a3.units == 30.0);
    CHECK(a3.units < 150.0);        // spoofing cost below the spoofed step count
}

TEST_CASE("experiment gradient totals equal the sum of component ledgers") {
    const ExperimentRecord& rec = mini();
    CHECK(rec.totals.units() == rec.proof_units + rec.verify_units + rec.attack_units);
    CHECK(rec.proof_units == 30);

    // Reconstruct the attack total from the per-cell means: mean * repeats_ok.
    std::uint64_t attack_sum = 0;
    for (const ExperimentRow& r : rec.rows) {
        if (r.attack == "honest" || r.metric != Metric::l2 || r.repeats_ok == 0) continue;
        attack_sum += static_cast<std::uint64_t>(
            std::llround(r.units * static_cast<double>(r.repeats_ok)));
    }
    CHECK(attack_sum == rec.attack_units);

    // Verifier-side accounting, counted independently: calibration replays all
    // T/k = 6 intervals (30 steps); each of the 2 honest repeats replays
    // Q x epochs = 6 intervals (30 steps); each successful spoof repeat costs
    // Q = 3 intervals (15 steps) plus a 150-step full replay.
    const std::uint64_t honest_side = 30 + 2 * 30;
    const std::uint64_t spoof_side = 2 * (15 + 150) + 2 * (15 + 150);
    CHECK(rec.verify_units == honest_side + spoof_side);
}

TEST_CASE("accuracy trend rises from chance to the final model's accuracy") {
    const ExperimentRecord& rec = mini();
    REQUIRE(rec.trend.size() == 5);
    CHECK(rec.trend.front().first == 0.0);
    CHECK(rec.trend.back().first == 1.0);
    // random init sits near chance on a balanced two-class problem
    CHECK(rec.trend.front().second > 0.2);
    CHECK(rec.trend.front().second < 0.8);
    for (std::size_t i = 1; i < rec.trend.size(); ++i)
        CHECK(rec.trend[i].second >= rec.trend[i - 1].second - 0.05);

    // The final point equals a direct evaluation of the stored final weights.
    ProofBundle proof = load_bundle(scratch("pol_exp_mini") / "proof");
    Dataset data = make_blobs(600, 2, 2, 2.0, 0.6, 9);
    EvalResult er = evaluate(proof.aux.model, proof.final_weights(), data.features, data.labels);
    CHECK(rec.trend.back().second == er.accuracy);
    CHECK(er.accuracy > 0.9);

    // Recomputing from the saved bundle reproduces the record bit for bit.
    auto again = accuracy_trend(proof, data, 5);
    CHECK(again == rec.trend);

    CHECK_THROWS_AS(accuracy_trend(proof, data, 1), ConfigError);
    CHECK_THROWS_AS(accuracy_trend(proof, data, 8), ConfigError);  // only 7 stored
}

TEST_CASE("JSON report mirrors the record") {
    const ExperimentRecord& rec = mini();
    std::ifstream in(rec.report_path);
    REQUIRE(in.good());
    nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j.at("scenario").at("name") == "mini");
    CHECK(j.at("rows").size() == 28);
    CHECK(j.at("totals").at("units").get<std::uint64_t>() == rec.totals.units());
    CHECK(j.at("d_ref").at("l2").get<double>() == rec.d_ref.at(Metric::l2));
    CHECK(j.at("proof").at("pass_rate").get<double>() == 1.0);
    CHECK(j.at("trend").size() == rec.trend.size());
    // honest rows carry JSON null where the CSV leaves the field empty
    bool saw_honest = false;
    for (const auto& row : j.at("rows"))
        if (row.at("attack") == "honest") {
            CHECK(row.at("spoof_norm_err").is_null());
            saw_honest = true;
        }
    CHECK(saw_honest);
}

TEST_CASE("disjoint split: proof on one half, spoof on the other still passes") {
    const char* text = R"({
      "name": "split",
      "seed": 21,
      "dataset": {"kind": "blobs", "n": 1200, "dim": 2, "classes": 2,
                   "separation": 2.0, "spread": 0.6, "split_fraction": 0.5},
      "model": {"widths": [2, 8, 2]},
      "train": {"epochs": 2, "steps_per_epoch": 15, "checkpoint_interval": 5,
                 "batch_size": 10, "learning_rate": 0.1, "noise": 1e-3},
      "metrics": ["l1", "l2", "linf", "cos"],
      "top_q": 3,
      "attacks": {"enabled": ["attack3"], "steps_grid": [150],
                   "checkpoint_interval": 5, "batch_size": 4, "epochs": 1,
                   "max_iters": 10, "eta": 0.01, "gamma2_scale": 0.5},
      "repeats": 2
    })";
    ExperimentRecord rec = run_experiment(parse_scenario(text), scratch("pol_exp_split"));
    CHECK(rec.proof_pass_rate == 1.0);
    for (Metric m : rec.scenario.metrics) {
        const ExperimentRow& r = find_row(rec, "attack3", 150, m);
        CHECK(r.repeats_ok == 2);
        CHECK(r.pass_rate == 1.0);
        CHECK(r.spoof_eps <= r.delta);
    }
    // the spoof truly saw only the second half
    auto parts = split_disjoint(make_blobs(1200, 2, 2, 2.0, 0.6, 21), 0.5, 21);
    CHECK(parts.first.n() == 600);
    CHECK(parts.second.n() == 600);
}

TEST_CASE("zero verifier noise: proof errors vanish and spoof rows stay populated") {
    const char* text = R"({
      "name": "nu0",
      "seed": 5,
      "dataset": {"kind": "blobs", "n": 600, "dim": 2, "classes": 2,
                   "separation": 2.0, "spread": 0.6},
      "model": {"widths": [2, 8, 2]},
      "train": {"epochs": 2, "steps_per_epoch": 15, "checkpoint_interval": 5,
                 "batch_size": 10, "learning_rate": 0.1, "noise": 0.0},
      "metrics": ["l2"],
      "top_q": 3,
      "attacks": {"enabled": ["attack2"], "steps_grid": [150],
                   "checkpoint_interval": 5, "batch_size": 4, "epochs": 1,
                   "max_iters": 10, "eta": 0.01, "gamma2_scale": 0.5},
      "repeats": 2
    })";
    ExperimentRecord rec = run_experiment(parse_scenario(text), scratch("pol_exp_nu0"));
    const ExperimentRow& honest = find_row(rec, "honest", 30, Metric::l2);
    CHECK(honest.proof_norm_err == 0.0);  // exact replay, exactly zero
    CHECK(honest.delta == 0.0);           // calibrated threshold collapses with it
    CHECK(honest.pass_rate == 1.0);       // 0 <= 0 still verifies
    // zero delta leaves no room for interpolation; the cell reports it per repeat
    const ExperimentRow& spoof = find_row(rec, "attack2", 150, Metric::l2);
    CHECK(spoof.repeats == 2);
    CHECK(spoof.repeats_ok == 0);
    CHECK(spoof.errors == "ConfigError:2");
}

TEST_CASE("infeasible calibration propagates after flushing the header") {
    // identical d_ref seeds give d_ref = 0; nothing can sit below it
    const char* text = R"({
      "name": "flat",
      "seed": 5,
      "dataset": {"kind": "blobs", "n": 600, "dim": 2, "classes": 2,
                   "separation": 2.0, "spread": 0.6},
      "model": {"widths": [2, 8, 2]},
      "train": {"epochs": 2, "steps_per_epoch": 15, "checkpoint_interval": 5,
                 "batch_size": 10, "learning_rate": 0.1, "noise": 0.0},
      "metrics": ["l2"],
      "dref_seeds": [3, 3],
      "repeats": 1
    })";
    const fs::path dir = scratch("pol_exp_flat");
    CHECK_THROWS_AS(run_experiment(parse_scenario(text), dir), CalibrationInfeasible);
    std::ifstream csv(dir / "results.csv");
    REQUIRE(csv.good());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(csv, line)) lines.push_back(line);
    REQUIRE(lines.size() == 1);  // header flushed before the failure
    CHECK(lines[0] == csv_header());
}
