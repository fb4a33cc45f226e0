// Command-line front end: prove / verify / spoof / calibrate / dref /
// experiment / report. Exit codes: 0 pass, 2 fail, 3 malformed bundle,
// 64 usage or configuration error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pol/errors.hpp"
#include "pol/experiment.hpp"
#include "pol/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pol;

namespace {

struct Options {
    std::string config;
    std::string bundle;
    std::string out;
    std::string dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
    std::vector<std::string> metrics;
    std::vector<std::string> deltas;
    int attack = 0;
    std::size_t steps = 0;
    std::size_t stages = 0;
};

Metric metric_or_usage(const std::string& s) {
    auto m = metric_from_string(s);
    if (!m) throw ConfigError("unknown metric: " + s);
    return *m;
}

ScenarioConfig load_with_overrides(const Options& opt) {
    ScenarioConfig sc = load_scenario(opt.config);
    if (opt.seed) sc.seed = *opt.seed;          // CLI wins over POL_SEED and the file
    if (opt.noise) sc.train.noise.amplitude = *opt.noise;
    if (!opt.metrics.empty()) {
        sc.metrics.clear();
        for (const std::string& s : opt.metrics) sc.metrics.push_back(metric_or_usage(s));
    }
    if (opt.stages > 0) sc.stages = opt.stages;
    return sc;
}

// "--delta 0.1" applies to every configured metric; "--delta l2=0.1" to one.
std::map<Metric, double> parse_deltas(const std::vector<std::string>& specs,
                                      const std::vector<Metric>& metrics) {
    std::map<Metric, double> out;
    for (const std::string& s : specs) {
        try {
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                const double v = std::stod(s);
                for (Metric m : metrics) out[m] = v;
            } else {
                out[metric_or_usage(s.substr(0, eq))] = std::stod(s.substr(eq + 1));
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad --delta value: " + s + " (number or metric=number)");
        }
    }
    for (Metric m : metrics)
        if (!out.count(m))
            throw ConfigError(std::string("--delta missing a value for metric ") + to_string(m));
    return out;
}

// The verifier's own noise draw (repeat-0 convention of the experiment driver).
NoiseModel verifier_noise(const ScenarioConfig& sc) {
    auto s = rng::Stream::derive(sc.seed, 0x7E51F1, 0);
    return NoiseModel{sc.train.noise.amplitude, s.next_u64()};
}

// Pick whichever split part the bundle was built on; verification rejects a
// mismatched dataset anyway, this only makes split scenarios convenient.
const Dataset& matching_part(const ProofBundle& b, const std::pair<Dataset, Dataset>& parts) {
    if (b.dataset_id == parts.second.id && parts.second.id != parts.first.id)
        return parts.second;
    return parts.first;
}

std::map<Metric, double> self_calibrate(const ScenarioConfig& sc, const ProofBundle& b,
                                        const Dataset& data) {
    const InitSpec zeta{sc.seed, sc.init_scale};
    auto d_ref = compute_d_ref(sc.model, zeta, data, sc.train, sc.metrics, sc.dref_seeds);
    auto errs = replay_all_intervals(b, data, sc.metrics, verifier_noise(sc), sc.parallel);
    return calibrate_delta(errs.max_eps, d_ref);
}

int cmd_prove(const Options& opt) {
    ScenarioConfig sc = load_with_overrides(opt);
    auto parts = scenario_datasets(sc);
    sc.train.validate(parts.first.n());
    CostLedger ledger;
    const InitSpec zeta{sc.seed, sc.init_scale};
    ProofBundle b = create_proof(sc.model, zeta, parts.first, sc.train, &ledger);
    save_bundle(b, opt.out, &ledger);
    const Costs costs = ledger.snapshot();
    std::cout << "proof written to " << opt.out << "\n"
              << "  steps " << sc.train.total_steps() << ", checkpoints "
              << sc.train.total_steps() / sc.train.checkpoint_interval + 1 << ", "
              << bundle_size(b) << " bytes\n"
              << "  gradient units " << costs.units() << "\n";
    return 0;
}

int cmd_verify(const Options& opt) {
    ScenarioConfig sc = load_with_overrides(opt);
    ProofBundle b = load_bundle(opt.bundle);
    auto parts = scenario_datasets(sc);
    // A spoof directory carries the dataset the prover published (perturbed
    // rows included); when present it is what the digests bind.
    Dataset local;
    bool bundle_local = false;
    const fs::path cache = fs::path(opt.bundle) / "dataset.cache";
    if (fs::exists(cache)) {
        local = load_cache(cache);
        // The id check guards against picking the wrong scenario dataset; a
        // bundle-local file is tied to its bundle by location, and the digest
        // comparison below is what actually binds the rows.
        local.id = b.dataset_id;
        bundle_local = true;
    }
    const Dataset& data = bundle_local ? local : matching_part(b, parts);

    VerificationConfig vcfg;
    vcfg.metrics = sc.metrics;
    vcfg.init_alpha = sc.init_alpha;
    vcfg.parallel = sc.parallel;
    const std::size_t per_epoch = b.aux.steps_per_epoch / b.aux.checkpoint_interval;
    vcfg.top_q = std::max<std::size_t>(1, std::min(sc.top_q, per_epoch));
    if (!opt.deltas.empty())
        vcfg.delta = to_schedule(parse_deltas(opt.deltas, sc.metrics));
    else
        vcfg.delta = to_schedule(self_calibrate(sc, b, data));

    VerificationReport report = verify_proof(b, data, vcfg, verifier_noise(sc));
    json out;
    out["verdict"] = to_string(report.verdict);
    out["dataset"] = bundle_local ? "bundle-local" : "scenario";
    out["init_p_value"] = report.init.min_p;
    json eps;
    for (const auto& [m, v] : report.max_eps) eps[to_string(m)] = v;
    out["max_eps"] = eps;
    out["replay_steps"] = report.replay_steps;
    if (!report.detail.empty()) out["detail"] = report.detail;
    std::cout << out.dump(2) << "\n";
    return report.pass() ? 0 : 2;
}

int cmd_spoof(const Options& opt) {
    ScenarioConfig sc = load_with_overrides(opt);
    ProofBundle honest = load_bundle(opt.bundle);
    if (honest.final_weights().size() != sc.model.dim())
        throw ConfigError("scenario model does not match the bundle's weight dimension");
    auto parts = scenario_datasets(sc);
    const Dataset& data = parts.second;

    std::size_t steps = opt.steps;
    if (steps == 0) {
        if (sc.attacks.steps_grid.empty())
            throw ConfigError("no --steps given and the scenario has an empty steps_grid");
        steps = sc.attacks.steps_grid.front();
    }

    double delta_l2 = 0.0;
    if (!opt.deltas.empty()) {
        delta_l2 = parse_deltas(opt.deltas, {Metric::l2}).at(Metric::l2);
    } else {
        const Dataset& honest_part = matching_part(honest, parts);
        delta_l2 = self_calibrate(sc, honest, honest_part).at(Metric::l2);
    }

    auto seed_stream = rng::Stream::derive(sc.seed, 1000003u * opt.attack + steps, 0);
    const std::uint64_t seed = seed_stream.next_u64();
    AttackPlan plan = plan_attack(sc, opt.attack, steps, honest.final_weights(), seed);
    SpoofResult res =
        run_attack(sc, opt.attack, steps, data, honest.final_weights(), delta_l2, seed);
    save_bundle(res.bundle, opt.out);
    // Publish the (possibly perturbed) dataset alongside the proof; the binary
    // cache keeps the row bytes digest-exact.
    save_cache(res.dataset, fs::path(opt.out) / "dataset.cache");

    double iters = 0.0;
    for (std::size_t it : res.opt_iters) iters += static_cast<double>(it);
    if (!res.opt_iters.empty()) iters /= static_cast<double>(res.opt_iters.size());
    json ledger;
    ledger["attack"] = opt.attack;
    ledger["steps"] = steps;
    ledger["delta_l2"] = delta_l2;
    ledger["gamma"] = plan.gamma;
    ledger["sigma"] = plan.sigma;
    ledger["spacing"] = plan.spacing;
    ledger["loss_grad_calls"] = res.costs.loss_grad_calls;
    ledger["input_grad_calls"] = res.costs.input_grad_calls;
    ledger["units"] = res.costs.units();
    ledger["mean_opt_iters"] = iters;
    ledger["bundle_bytes"] = bundle_size(res.bundle);
    ledger["dataset"] = "dataset.cache";
    {
        std::ofstream lf(fs::path(opt.out) / "ledger.json");
        lf << ledger.dump(2) << "\n";
    }
    std::cout << "spoof written to " << opt.out << "\n" << ledger.dump(2) << "\n";
    return 0;
}

int cmd_calibrate(const Options& opt) {
    ScenarioConfig sc = load_with_overrides(opt);
    ProofBundle b = load_bundle(opt.bundle);
    auto parts = scenario_datasets(sc);
    const Dataset& data = matching_part(b, parts);

    const InitSpec zeta{sc.seed, sc.init_scale};
    auto d_ref = compute_d_ref(sc.model, zeta, data, sc.train, sc.metrics, sc.dref_seeds);
    auto errs = replay_all_intervals(b, data, sc.metrics, verifier_noise(sc), sc.parallel);

    json out;
    for (const auto& [m, v] : d_ref) out["d_ref"][to_string(m)] = v;
    for (const auto& [m, v] : errs.max_eps) out["max_eps"][to_string(m)] = v;
    if (sc.stages <= 1) {
        for (const auto& [m, v] : calibrate_delta(errs.max_eps, d_ref))
            out["delta"][to_string(m)] = v;
    } else {
        auto sched = calibrate_delta_schedule(errs, b.aux.total_steps(), sc.stages, d_ref);
        for (const auto& [m, s] : sched) out["delta"][to_string(m)] = s.stage_values;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_dref(const Options& opt) {
    ScenarioConfig sc = load_with_overrides(opt);
    auto parts = scenario_datasets(sc);
    const InitSpec zeta{sc.seed, sc.init_scale};
    auto d_ref = compute_d_ref(sc.model, zeta, parts.first, sc.train, sc.metrics, sc.dref_seeds);
    json out;
    for (const auto& [m, v] : d_ref) out[to_string(m)] = v;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_experiment(const Options& opt) {
    ScenarioConfig sc = load_with_overrides(opt);
    ExperimentRecord rec = run_experiment(sc, opt.out);
    std::cout << "experiment '" << sc.name << "' finished\n"
              << "  honest pass rate " << rec.proof_pass_rate << "\n"
              << "  rows " << rec.rows.size() << " -> " << rec.csv_path.string() << "\n"
              << "  report -> " << rec.report_path.string() << "\n"
              << "  gradient units: proof " << rec.proof_units << ", verify "
              << rec.verify_units << ", attacks " << rec.attack_units << "\n";
    return 0;
}

int cmd_report(const Options& opt) {
    std::ifstream in(fs::path(opt.dir) / "report.json");
    if (!in) throw std::runtime_error("no report.json under " + opt.dir);
    json j = json::parse(in);
    std::cout << "scenario " << j.at("scenario").at("name").get<std::string>() << " (seed "
              << j.at("scenario").at("seed") << ")\n";
    std::cout << "honest: pass rate " << j.at("proof").at("pass_rate") << ", "
              << j.at("proof").at("steps") << " steps, " << j.at("proof").at("units")
              << " gradient units\n";
    std::cout << "d_ref:";
    for (const auto& [k, v] : j.at("d_ref").items()) std::cout << "  " << k << "=" << v;
    std::cout << "\ndelta:";
    for (const auto& [k, v] : j.at("delta").items()) std::cout << "  " << k << "=" << v;
    std::cout << "\n\nattack    steps  metric  pass   norm_err      units    errors\n";
    for (const auto& row : j.at("rows")) {
        if (row.at("attack") == "honest") continue;
        std::cout << row.at("attack").get<std::string>() << "   " << row.at("steps") << "   "
                  << row.at("metric").get<std::string>() << "   " << row.at("pass_rate") << "   ";
        if (row.at("spoof_norm_err").is_null())
            std::cout << "-";
        else
            std::cout << row.at("spoof_norm_err");
        std::cout << "   ";
        if (row.at("units").is_null())
            std::cout << "-";
        else
            std::cout << row.at("units");
        const std::string errs = row.at("errors").get<std::string>();
        std::cout << "   " << (errs.empty() ? "-" : errs) << "\n";
    }
    const auto& trend = j.at("trend");
    if (!trend.empty()) {
        std::cout << "\naccuracy trend:";
        for (const auto& p : trend) std::cout << "  " << p[0] << ":" << p[1];
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"proof-of-learning prover, verifier and spoof toolkit"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", opt.seed, "override the scenario seed");
        sub->add_option("--noise", opt.noise, "override the verifier noise amplitude");
        sub->add_option("--metric", opt.metrics, "restrict metrics (l1|l2|linf|cos)");
    };

    CLI::App* prove = app.add_subcommand("prove", "train and write a proof bundle");
    prove->add_option("--config", opt.config, "scenario JSON")->required();
    prove->add_option("--out", opt.out, "output bundle directory")->required();
    add_common(prove);

    CLI::App* verify = app.add_subcommand("verify", "verify a proof bundle");
    verify->add_option("--config", opt.config, "scenario JSON")->required();
    verify->add_option("--bundle", opt.bundle, "bundle directory")->required();
    verify->add_option("--delta", opt.deltas,
                       "verification threshold (number or metric=number, repeatable or "
                       "comma-separated); omitted: self-calibrate against this bundle")
        ->delimiter(',');
    add_common(verify);

    CLI::App* spoof = app.add_subcommand("spoof", "forge a proof for a trained model");
    spoof->add_option("--config", opt.config, "scenario JSON")->required();
    spoof->add_option("--bundle", opt.bundle, "honest bundle holding the target weights")
        ->required();
    spoof->add_option("--out", opt.out, "output bundle directory")->required();
    spoof->add_option("--attack", opt.attack, "attack number")
        ->required()
        ->check(CLI::Range(1, 3));
    spoof->add_option("--steps", opt.steps, "spoofed step count T' (default: grid front)");
    spoof->add_option("--delta", opt.deltas, "l2 threshold to target (default: self-calibrate)");
    add_common(spoof);

    CLI::App* calibrate = app.add_subcommand("calibrate", "derive thresholds from a bundle");
    calibrate->add_option("--config", opt.config, "scenario JSON")->required();
    calibrate->add_option("--bundle", opt.bundle, "honest bundle directory")->required();
    calibrate->add_option("--stages", opt.stages, "staged schedule with this many stages");
    add_common(calibrate);

    CLI::App* dref = app.add_subcommand("dref", "reference distance between two trainings");
    dref->add_option("--config", opt.config, "scenario JSON")->required();
    add_common(dref);

    CLI::App* experiment = app.add_subcommand("experiment", "run the full attack grid");
    experiment->add_option("--config", opt.config, "scenario JSON")->required();
    experiment->add_option("--out", opt.out, "output directory")->required();
    add_common(experiment);

    CLI::App* report = app.add_subcommand("report", "summarize an experiment directory");
    report->add_option("--dir", opt.dir, "experiment output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 64;
    }

    try {
        if (app.got_subcommand(prove)) return cmd_prove(opt);
        if (app.got_subcommand(verify)) return cmd_verify(opt);
        if (app.got_subcommand(spoof)) return cmd_spoof(opt);
        if (app.got_subcommand(calibrate)) return cmd_calibrate(opt);
        if (app.got_subcommand(dref)) return cmd_dref(opt);
        if (app.got_subcommand(experiment)) return cmd_experiment(opt);
        if (app.got_subcommand(report)) return cmd_report(opt);
    } catch (const MalformedBundle& e) {
        std::cerr << "malformed bundle: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 64;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 64;
}
