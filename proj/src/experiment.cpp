#include "pol/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "pol/errors.hpp"
#include "pol/rng.hpp"

namespace pol {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Metric metric_or_throw(const std::string& s) {
    auto m = metric_from_string(s);
    if (!m) throw ConfigError("unknown metric: " + s);
    return *m;
}

MatchOrdering ordering_from_string(const std::string& s) {
    if (s == "signed_desc") return MatchOrdering::signed_desc;
    if (s == "magnitude_desc") return MatchOrdering::magnitude_desc;
    throw ConfigError("unknown match ordering: " + s);
}

const char* ordering_name(MatchOrdering o) {
    return o == MatchOrdering::signed_desc ? "signed_desc" : "magnitude_desc";
}

int attack_number(const std::string& name) {
    if (name == "attack1") return 1;
    if (name == "attack2") return 2;
    if (name == "attack3") return 3;
    throw ConfigError("unknown attack name: " + name + " (expected attack1|attack2|attack3)");
}

Dataset build_dataset(const ScenarioConfig& sc) {
    const DatasetSpec& d = sc.dataset;
    if (d.kind == "blobs")
        return make_blobs(d.n, d.dim, d.classes, d.separation, d.spread, sc.seed);
    if (d.kind == "moons") return make_moons(d.n, d.moons_noise, sc.seed);
    if (d.kind == "csv") return load_csv(d.path);
    if (d.kind == "cache") return load_cache(d.path);
    throw ConfigError("unknown dataset kind: " + d.kind);
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

void accumulate(Costs& total, const Costs& part) {
    total.loss_grad_calls += part.loss_grad_calls;
    total.input_grad_calls += part.input_grad_calls;
    total.bytes_written += part.bytes_written;
    total.wall_seconds += part.wall_seconds;
}

json row_to_json(const ExperimentRow& r) {
    json j;
    j["attack"] = r.attack;
    j["steps"] = r.steps;
    j["metric"] = to_string(r.metric);
    j["delta"] = r.delta;
    j["proof_norm_err"] = r.proof_norm_err;
    j["spoof_norm_err"] = std::isnan(r.spoof_norm_err) ? json() : json(r.spoof_norm_err);
    j["spoof_eps"] = std::isnan(r.spoof_eps) ? json() : json(r.spoof_eps);
    j["pass_rate"] = r.pass_rate;
    j["repeats_ok"] = r.repeats_ok;
    j["repeats"] = r.repeats;
    j["errors"] = r.errors;
    j["mean_opt_iters"] = std::isnan(r.mean_opt_iters) ? json() : json(r.mean_opt_iters);
    j["loss_grads"] = std::isnan(r.loss_grads) ? json() : json(r.loss_grads);
    j["input_grads"] = std::isnan(r.input_grads) ? json() : json(r.input_grads);
    j["units"] = std::isnan(r.units) ? json() : json(r.units);
    j["honest_units"] = r.honest_units;
    j["bundle_bytes"] = r.bundle_bytes;
    return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario parsing.
// ---------------------------------------------------------------------------

ScenarioConfig parse_scenario(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("scenario JSON must be an object");

    ScenarioConfig sc;
    try {
        sc.name = j.value("name", sc.name);
        sc.seed = j.value("seed", sc.seed);

        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            sc.dataset.kind = d.value("kind", sc.dataset.kind);
            sc.dataset.n = d.value("n", sc.dataset.n);
            sc.dataset.dim = d.value("dim", sc.dataset.dim);
            sc.dataset.classes = d.value("classes", sc.dataset.classes);
            sc.dataset.separation = d.value("separation", sc.dataset.separation);
            sc.dataset.spread = d.value("spread", sc.dataset.spread);
            sc.dataset.moons_noise = d.value("moons_noise", sc.dataset.moons_noise);
            sc.dataset.path = d.value("path", sc.dataset.path);
            sc.dataset.split_fraction = d.value("split_fraction", sc.dataset.split_fraction);
        }

        if (!j.contains("model")) throw ConfigError("scenario is missing the model block");
        {
            const json& m = j.at("model");
            sc.model.widths = m.at("widths").get<std::vector<std::size_t>>();
            sc.model.activation = activation_from_string(m.value("activation", "tanh"));
            sc.model.loss = loss_from_string(m.value("loss", "softmax_cross_entropy"));
            sc.model.use_bias = m.value("use_bias", true);
        }
        sc.init_scale = j.value("init_scale", sc.init_scale);

        if (!j.contains("train")) throw ConfigError("scenario is missing the train block");
        {
            const json& t = j.at("train");
            sc.train.epochs = t.value("epochs", sc.train.epochs);
            sc.train.steps_per_epoch = t.value("steps_per_epoch", sc.train.steps_per_epoch);
            sc.train.checkpoint_interval =
                t.value("checkpoint_interval", sc.train.checkpoint_interval);
            sc.train.batch_size = t.value("batch_size", sc.train.batch_size);
            sc.train.learning_rate = t.value("learning_rate", sc.train.learning_rate);
            sc.train.batch_seed = t.value("batch_seed", sc.seed);
            sc.train.noise.amplitude = t.value("noise", 0.0);
            sc.train.noise.seed = t.value("noise_seed", sc.seed);
        }

        if (j.contains("metrics")) {
            sc.metrics.clear();
            for (const auto& s : j.at("metrics"))
                sc.metrics.push_back(metric_or_throw(s.get<std::string>()));
        }
        sc.top_q = j.value("top_q", sc.top_q);
        sc.init_alpha = j.value("init_alpha", sc.init_alpha);
        sc.stages = j.value("stages", sc.stages);
        if (j.contains("dref_seeds")) {
            const json& s = j.at("dref_seeds");
            if (!s.is_array() || s.size() != 2)
                throw ConfigError("dref_seeds must be a two-element array");
            sc.dref_seeds = {s[0].get<std::uint64_t>(), s[1].get<std::uint64_t>()};
        }

        if (j.contains("attacks")) {
            const json& a = j.at("attacks");
            if (a.contains("enabled"))
                sc.attacks.enabled = a.at("enabled").get<std::vector<std::string>>();
            if (a.contains("steps_grid"))
                sc.attacks.steps_grid = a.at("steps_grid").get<std::vector<std::size_t>>();
            sc.attacks.checkpoint_interval =
                a.value("checkpoint_interval", sc.attacks.checkpoint_interval);
            sc.attacks.batch_size = a.value("batch_size", sc.attacks.batch_size);
            sc.attacks.epochs = a.value("epochs", sc.attacks.epochs);
            sc.attacks.max_iters = a.value("max_iters", sc.attacks.max_iters);
            sc.attacks.eta = a.value("eta", sc.attacks.eta);
            sc.attacks.eta_r = a.value("eta_r", sc.attacks.eta_r);
            sc.attacks.lambda = a.value("lambda", sc.attacks.lambda);
            sc.attacks.gamma2_scale = a.value("gamma2_scale", sc.attacks.gamma2_scale);
            sc.attacks.sigma_scale = a.value("sigma_scale", sc.attacks.sigma_scale);
            sc.attacks.gamma3_scale = a.value("gamma3_scale", sc.attacks.gamma3_scale);
            sc.attacks.shaping_amplitude =
                a.value("shaping_amplitude", sc.attacks.shaping_amplitude);
            if (a.contains("ordering"))
                sc.attacks.ordering = ordering_from_string(a.at("ordering").get<std::string>());
        }

        sc.repeats = j.value("repeats", sc.repeats);
        sc.trend_points = j.value("trend_points", sc.trend_points);
        sc.optimizer = j.value("optimizer", sc.optimizer);
        sc.parallel = j.value("parallel", sc.parallel);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario field has the wrong type: ") + e.what());
    }

    if (sc.optimizer != "gd")
        throw ConfigError("unsupported optimizer: " + sc.optimizer + " (only gd)");
    if (sc.metrics.empty()) throw ConfigError("scenario needs at least one metric");
    if (sc.repeats == 0) throw ConfigError("repeats must be positive");
    for (const std::string& a : sc.attacks.enabled) attack_number(a);
    return sc;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    ScenarioConfig sc = parse_scenario(ss.str());
    if (const char* env = std::getenv("POL_SEED")) {
        try {
            std::size_t used = 0;
            sc.seed = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("POL_SEED must be an unsigned integer, got: ") + env);
        }
    }
    return sc;
}

std::string scenario_to_json(const ScenarioConfig& sc) {
    json j;
    j["name"] = sc.name;
    j["seed"] = sc.seed;
    j["dataset"] = {{"kind", sc.dataset.kind},
                    {"n", sc.dataset.n},
                    {"dim", sc.dataset.dim},
                    {"classes", sc.dataset.classes},
                    {"separation", sc.dataset.separation},
                    {"spread", sc.dataset.spread},
                    {"moons_noise", sc.dataset.moons_noise},
                    {"path", sc.dataset.path},
                    {"split_fraction", sc.dataset.split_fraction}};
    j["model"] = {{"widths", sc.model.widths},
                  {"activation", to_string(sc.model.activation)},
                  {"loss", to_string(sc.model.loss)},
                  {"use_bias", sc.model.use_bias}};
    j["init_scale"] = sc.init_scale;
    j["train"] = {{"epochs", sc.train.epochs},
                  {"steps_per_epoch", sc.train.steps_per_epoch},
                  {"checkpoint_interval", sc.train.checkpoint_interval},
                  {"batch_size", sc.train.batch_size},
                  {"learning_rate", sc.train.learning_rate},
                  {"batch_seed", sc.train.batch_seed},
                  {"noise", sc.train.noise.amplitude},
                  {"noise_seed", sc.train.noise.seed}};
    json mets = json::array();
    for (Metric m : sc.metrics) mets.push_back(to_string(m));
    j["metrics"] = mets;
    j["top_q"] = sc.top_q;
    j["init_alpha"] = sc.init_alpha;
    j["stages"] = sc.stages;
    j["dref_seeds"] = {sc.dref_seeds.first, sc.dref_seeds.second};
    j["attacks"] = {{"enabled", sc.attacks.enabled},
                    {"steps_grid", sc.attacks.steps_grid},
                    {"checkpoint_interval", sc.attacks.checkpoint_interval},
                    {"batch_size", sc.attacks.batch_size},
                    {"epochs", sc.attacks.epochs},
                    {"max_iters", sc.attacks.max_iters},
                    {"eta", sc.attacks.eta},
                    {"eta_r", sc.attacks.eta_r},
                    {"lambda", sc.attacks.lambda},
                    {"gamma2_scale", sc.attacks.gamma2_scale},
                    {"sigma_scale", sc.attacks.sigma_scale},
                    {"gamma3_scale", sc.attacks.gamma3_scale},
                    {"shaping_amplitude", sc.attacks.shaping_amplitude},
                    {"ordering", ordering_name(sc.attacks.ordering)}};
    j["repeats"] = sc.repeats;
    j["trend_points"] = sc.trend_points;
    j["optimizer"] = sc.optimizer;
    j["parallel"] = sc.parallel;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// CSV schema.
// ---------------------------------------------------------------------------

std::string csv_header() {
    return "scenario,attack,steps,metric,delta,proof_norm_err,spoof_norm_err,spoof_eps,"
           "pass_rate,repeats_ok,repeats,errors,mean_opt_iters,loss_grads,input_grads,units,"
           "honest_units,bundle_bytes";
}

std::string csv_row(const std::string& scenario_name, const ExperimentRow& r) {
    std::ostringstream os;
    os << scenario_name << ',' << r.attack << ',' << r.steps << ',' << to_string(r.metric) << ','
       << fmt(r.delta) << ',' << fmt(r.proof_norm_err) << ',' << fmt(r.spoof_norm_err) << ','
       << fmt(r.spoof_eps) << ',' << fmt(r.pass_rate) << ',' << r.repeats_ok << ',' << r.repeats
       << ',' << r.errors << ',' << fmt(r.mean_opt_iters) << ',' << fmt(r.loss_grads) << ','
       << fmt(r.input_grads) << ',' << fmt(r.units) << ',' << r.honest_units << ','
       << r.bundle_bytes;
    return os.str();
}

// ---------------------------------------------------------------------------
// Accuracy trend.
// ---------------------------------------------------------------------------

std::vector<std::pair<double, double>> accuracy_trend(const ProofBundle& bundle,
                                                      const Dataset& data, std::size_t points) {
    const std::size_t total = bundle.aux.total_steps();
    const std::size_t k = bundle.aux.checkpoint_interval;
    const std::size_t slots = total / k;  // stored checkpoints are slots 0..slots
    if (points < 2) throw ConfigError("accuracy_trend needs at least two points");
    if (points > slots + 1)
        throw ConfigError("accuracy_trend: " + std::to_string(points) + " points but only " +
                          std::to_string(slots + 1) + " stored checkpoints");
    std::vector<std::pair<double, double>> out;
    out.reserve(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double f = static_cast<double>(i) / static_cast<double>(points - 1);
        const auto slot = static_cast<std::size_t>(std::llround(f * static_cast<double>(slots)));
        const std::size_t t = slot * k;
        EvalResult er = evaluate(bundle.aux.model, bundle.checkpoint(t), data.features, data.labels);
        out.emplace_back(static_cast<double>(t) / static_cast<double>(total), er.accuracy);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shared building blocks.
// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> scenario_datasets(const ScenarioConfig& sc) {
    Dataset base = build_dataset(sc);
    if (sc.dataset.split_fraction > 0.0)
        return split_disjoint(base, sc.dataset.split_fraction, sc.seed);
    Dataset copy = base;
    return {std::move(copy), std::move(base)};
}

AttackPlan plan_attack(const ScenarioConfig& sc, int attack, std::size_t steps,
                       const WeightVector& w_t, std::uint64_t attack_seed) {
    if (attack < 1 || attack > 3) throw ConfigError("attack must be 1, 2 or 3");
    AttackPlan plan;
    if (attack == 1) return plan;  // attack 1 needs no interpolation thresholds
    if (steps == 0) throw ConfigError("spoof steps must be positive");
    const InitSpec zeta{attack_seed, sc.init_scale};
    WeightVector w0 = init_w0_matched(sc.model, zeta, w_t, attack_seed, sc.attacks.ordering);
    plan.d0 = distance(w0.values, w_t.values, Metric::l2);
    const double k = static_cast<double>(sc.attacks.checkpoint_interval);
    plan.spacing = plan.d0 * k / static_cast<double>(steps);
    if (attack == 2) {
        plan.gamma = sc.attacks.gamma2_scale * plan.spacing / k;
    } else {
        plan.sigma = sc.attacks.sigma_scale * plan.spacing;
        plan.gamma = plan.sigma + sc.attacks.gamma3_scale * plan.spacing;
    }
    return plan;
}

AttackConfig make_attack_config(const ScenarioConfig& sc, std::size_t steps,
                                std::uint64_t seed) {
    AttackConfig acfg;
    acfg.steps = steps;
    acfg.checkpoint_interval = sc.attacks.checkpoint_interval;
    acfg.batch_size = sc.attacks.batch_size;
    acfg.epochs = sc.attacks.epochs;
    acfg.max_iters = sc.attacks.max_iters;
    acfg.eta = sc.attacks.eta > 0.0 ? sc.attacks.eta : sc.train.learning_rate;
    acfg.eta_r = sc.attacks.eta_r;
    acfg.lambda = sc.attacks.lambda;
    acfg.seed = seed;
    acfg.ordering = sc.attacks.ordering;
    acfg.shaping_amplitude = sc.attacks.shaping_amplitude;
    acfg.noise = sc.train.noise;
    acfg.parallel = sc.parallel;
    return acfg;
}

SpoofResult run_attack(const ScenarioConfig& sc, int attack, std::size_t steps,
                       const Dataset& data, const WeightVector& w_t, double delta_l2,
                       std::uint64_t seed) {
    AttackConfig acfg = make_attack_config(sc, steps, seed);
    const InitSpec zeta{seed, sc.init_scale};
    if (attack == 1) return attack_one(data, sc.model, w_t, delta_l2, zeta, acfg);
    AttackPlan plan = plan_attack(sc, attack, steps, w_t, seed);
    if (attack == 2)
        return attack_two(data, sc.model, w_t, delta_l2, plan.gamma, zeta, acfg);
    return attack_three(data, sc.model, w_t, delta_l2, plan.gamma, plan.sigma, zeta, acfg);
}

// ---------------------------------------------------------------------------
// Experiment driver.
// ---------------------------------------------------------------------------

namespace {

// Verifier-side noise for repeat r: same declared amplitude, fresh seed.
NoiseModel verifier_noise(const ScenarioConfig& sc, std::uint64_t r) {
    auto s = rng::Stream::derive(sc.seed, 0x7E51F1, r);
    return NoiseModel{sc.train.noise.amplitude, s.next_u64()};
}

std::uint64_t cell_seed(const ScenarioConfig& sc, int attack, std::size_t steps, std::size_t r) {
    auto s = rng::Stream::derive(sc.seed, static_cast<std::uint64_t>(attack) * 1000003u + steps, r);
    return s.next_u64();
}

struct CellOutcome {
    std::size_t ok = 0;
    std::size_t passed = 0;
    std::map<std::string, std::size_t> errors;
    std::map<Metric, double> eps_sum;
    double iters_sum = 0.0;
    std::uint64_t loss_grads = 0;
    std::uint64_t input_grads = 0;
    std::uint64_t bundle_bytes = 0;
};

std::string error_string(const std::map<std::string, std::size_t>& errors) {
    std::string out;
    for (const auto& [name, count] : errors) {
        if (!out.empty()) out += ';';
        out += name + ":" + std::to_string(count);
    }
    return out;
}

}  // namespace

ExperimentRecord run_experiment(const ScenarioConfig& sc, const std::filesystem::path& out_dir) {
    sc.model.validate();
    if (!sc.attacks.enabled.empty() && !sc.attacks.steps_grid.empty() &&
        std::find(sc.metrics.begin(), sc.metrics.end(), Metric::l2) == sc.metrics.end())
        throw ConfigError("attack thresholds are derived from l2; add it to metrics");

    auto [proof_data, spoof_data] = scenario_datasets(sc);
    sc.train.validate(proof_data.n());

    std::filesystem::create_directories(out_dir);
    ExperimentRecord rec;
    rec.scenario = sc;
    rec.csv_path = out_dir / "results.csv";
    rec.report_path = out_dir / "report.json";
    std::ofstream csv(rec.csv_path, std::ios::trunc);
    if (!csv) throw ConfigError("cannot write " + rec.csv_path.string());
    csv << csv_header() << '\n' << std::flush;

    std::vector<Costs> components;

    // --- honest proof ---
    const InitSpec zeta{sc.seed, sc.init_scale};
    CostLedger proof_ledger;
    ProofBundle proof = create_proof(sc.model, zeta, proof_data, sc.train, &proof_ledger);
    save_bundle(proof, out_dir / "proof", &proof_ledger);
    const Costs proof_costs = proof_ledger.snapshot();
    components.push_back(proof_costs);
    rec.proof_units = proof_costs.units();
    const std::uint64_t proof_bytes = bundle_size(proof);
    const std::size_t total_steps = sc.train.total_steps();
    const std::size_t k_honest = sc.train.checkpoint_interval;

    // --- reference distance and calibration ---
    rec.d_ref = compute_d_ref(sc.model, zeta, proof_data, sc.train, sc.metrics, sc.dref_seeds);

    CostLedger calib_ledger;
    ReplayErrors honest_errs = replay_all_intervals(proof, proof_data, sc.metrics,
                                                    verifier_noise(sc, 0), sc.parallel,
                                                    &calib_ledger);
    if (sc.stages <= 1) {
        rec.delta = calibrate_delta(honest_errs.max_eps, rec.d_ref);
        rec.schedule = to_schedule(rec.delta);
    } else {
        rec.schedule = calibrate_delta_schedule(honest_errs, total_steps, sc.stages, rec.d_ref);
        for (const auto& [m, sch] : rec.schedule) rec.delta[m] = sch.stage_values.front();
    }
    for (Metric m : sc.metrics) {
        const double ref = rec.d_ref.at(m);
        rec.proof_norm[m] = ref > 0.0 ? honest_errs.max_eps.at(m) / ref : 0.0;
    }

    // --- honest verification, one pass per repeat ---
    VerificationConfig vcfg;
    vcfg.metrics = sc.metrics;
    vcfg.delta = rec.schedule;
    vcfg.top_q = std::max<std::size_t>(
        1, std::min(sc.top_q, sc.train.steps_per_epoch / k_honest));
    vcfg.init_alpha = sc.init_alpha;
    vcfg.parallel = sc.parallel;

    std::size_t honest_pass = 0;
    for (std::size_t r = 0; r < sc.repeats; ++r) {
        auto report = verify_proof(proof, proof_data, vcfg, verifier_noise(sc, r), &calib_ledger);
        if (report.pass()) ++honest_pass;
    }
    rec.proof_pass_rate = static_cast<double>(honest_pass) / static_cast<double>(sc.repeats);
    const Costs calib_costs = calib_ledger.snapshot();
    components.push_back(calib_costs);
    rec.verify_units = calib_costs.units();

    for (Metric m : sc.metrics) {
        ExperimentRow row;
        row.attack = "honest";
        row.steps = total_steps;
        row.metric = m;
        row.delta = rec.delta.at(m);
        row.proof_norm_err = rec.proof_norm.at(m);
        row.spoof_norm_err = kNaN;
        row.spoof_eps = kNaN;
        row.pass_rate = rec.proof_pass_rate;
        row.repeats_ok = sc.repeats;
        row.repeats = sc.repeats;
        row.mean_opt_iters = 0.0;
        row.loss_grads = static_cast<double>(proof_costs.loss_grad_calls);
        row.input_grads = static_cast<double>(proof_costs.input_grad_calls);
        row.units = static_cast<double>(proof_costs.units());
        row.honest_units = rec.proof_units;
        row.bundle_bytes = proof_bytes;
        rec.rows.push_back(row);
        csv << csv_row(sc.name, row) << '\n' << std::flush;
    }

    rec.trend = accuracy_trend(proof, proof_data,
                               std::min(sc.trend_points, total_steps / k_honest + 1));

    // --- attack grid ---
    const WeightVector& w_t = proof.final_weights();

    double delta2 = 0.0;
    if (rec.schedule.count(Metric::l2)) {
        const auto& vals = rec.schedule.at(Metric::l2).stage_values;
        delta2 = *std::min_element(vals.begin(), vals.end());
    }

    for (const std::string& aname : sc.attacks.enabled) {
        const int anum = attack_number(aname);
        for (std::size_t steps : sc.attacks.steps_grid) {
            const std::size_t k_a = sc.attacks.checkpoint_interval;
            CellOutcome cell;
            for (std::size_t r = 0; r < sc.repeats; ++r) {
                const std::uint64_t seed_r = cell_seed(sc, anum, steps, r);
                try {
                    SpoofResult res = run_attack(sc, anum, steps, spoof_data, w_t, delta2, seed_r);

                    CostLedger vls;
                    VerificationConfig vc = vcfg;
                    vc.top_q = std::max<std::size_t>(
                        1, std::min(sc.top_q, steps / sc.attacks.epochs / k_a));
                    // The attacker publishes the dataset together with the proof;
                    // perturbed rows are part of what the digests bind.
                    auto report =
                        verify_proof(res.bundle, res.dataset, vc, verifier_noise(sc, r), &vls);
                    ReplayErrors errs =
                        replay_all_intervals(res.bundle, res.dataset, sc.metrics,
                                             verifier_noise(sc, r), sc.parallel, &vls);

                    ++cell.ok;
                    if (report.pass()) ++cell.passed;
                    for (Metric m : sc.metrics) cell.eps_sum[m] += errs.max_eps.at(m);
                    double iter_mean = 0.0;
                    for (std::size_t it : res.opt_iters) iter_mean += static_cast<double>(it);
                    if (!res.opt_iters.empty())
                        iter_mean /= static_cast<double>(res.opt_iters.size());
                    cell.iters_sum += iter_mean;
                    cell.loss_grads += res.costs.loss_grad_calls;
                    cell.input_grads += res.costs.input_grad_calls;
                    if (cell.ok == 1) cell.bundle_bytes = bundle_size(res.bundle);

                    components.push_back(res.costs);
                    const Costs vcosts = vls.snapshot();
                    components.push_back(vcosts);
                    rec.attack_units += res.costs.units();
                    rec.verify_units += vcosts.units();
                } catch (const SpacingExceedsDelta&) {
                    ++cell.errors["SpacingExceedsDelta"];
                } catch (const SigmaTooSmall&) {
                    ++cell.errors["SigmaTooSmall"];
                } catch (const NonConvergence&) {
                    ++cell.errors["NonConvergence"];
                } catch (const ConfigError&) {
                    ++cell.errors["ConfigError"];
                }
            }

            const std::string errors = error_string(cell.errors);
            const double okd = static_cast<double>(cell.ok);
            for (Metric m : sc.metrics) {
                ExperimentRow row;
                row.attack = aname;
                row.steps = steps;
                row.metric = m;
                row.delta = rec.delta.at(m);
                row.proof_norm_err = rec.proof_norm.at(m);
                const double ref = rec.d_ref.at(m);
                row.spoof_eps = cell.ok ? cell.eps_sum.at(m) / okd : kNaN;
                row.spoof_norm_err = cell.ok && ref > 0.0 ? row.spoof_eps / ref : kNaN;
                row.pass_rate = cell.ok ? static_cast<double>(cell.passed) / okd : 0.0;
                row.repeats_ok = cell.ok;
                row.repeats = sc.repeats;
                row.errors = errors;
                row.mean_opt_iters = cell.ok ? cell.iters_sum / okd : kNaN;
                row.loss_grads = cell.ok ? static_cast<double>(cell.loss_grads) / okd : kNaN;
                row.input_grads = cell.ok ? static_cast<double>(cell.input_grads) / okd : kNaN;
                row.units =
                    cell.ok
                        ? (static_cast<double>(cell.loss_grads) +
                           3.0 * static_cast<double>(cell.input_grads)) /
                              okd
                        : kNaN;
                row.honest_units = rec.proof_units;
                row.bundle_bytes = cell.bundle_bytes;
                rec.rows.push_back(row);
                csv << csv_row(sc.name, row) << '\n' << std::flush;
            }
        }
    }

    for (const Costs& c : components) accumulate(rec.totals, c);

    // --- JSON report ---
    json report;
    report["scenario"] = json::parse(scenario_to_json(sc));
    json dref, delta, sched, pnorm;
    for (const auto& [m, v] : rec.d_ref) dref[to_string(m)] = v;
    for (const auto& [m, v] : rec.delta) delta[to_string(m)] = v;
    for (const auto& [m, s] : rec.schedule) sched[to_string(m)] = s.stage_values;
    for (const auto& [m, v] : rec.proof_norm) pnorm[to_string(m)] = v;
    report["d_ref"] = dref;
    report["delta"] = delta;
    report["delta_schedule"] = sched;
    report["proof"] = {{"steps", total_steps},
                       {"norm_err", pnorm},
                       {"pass_rate", rec.proof_pass_rate},
                       {"units", rec.proof_units},
                       {"bytes", proof_bytes}};
    json rows = json::array();
    for (const ExperimentRow& r : rec.rows) rows.push_back(row_to_json(r));
    report["rows"] = rows;
    json trend = json::array();
    for (const auto& [f, acc] : rec.trend) trend.push_back({f, acc});
    report["trend"] = trend;
    report["totals"] = {{"loss_grad_calls", rec.totals.loss_grad_calls},
                        {"input_grad_calls", rec.totals.input_grad_calls},
                        {"units", rec.totals.units()},
                        {"bytes_written", rec.totals.bytes_written},
                        {"wall_seconds", rec.totals.wall_seconds},
                        {"proof_units", rec.proof_units},
                        {"verify_units", rec.verify_units},
                        {"attack_units", rec.attack_units}};
    std::ofstream rep(rec.report_path, std::ios::trunc);
    if (!rep) throw ConfigError("cannot write " + rec.report_path.string());
    rep << report.dump(2) << '\n';
    return rec;
}

}  // namespace pol
