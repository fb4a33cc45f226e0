#include "pol/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pol/errors.hpp"
#include "pol/rng.hpp"

namespace pol {

namespace {

// Replay the k training steps starting at checkpoint step t with the
// verifier's own noise draw; returns the weights reached.
WeightVector replay_interval(const ProofBundle& b, const Dataset& data, std::size_t t,
                             const NoiseModel& nm, CostLedger* ledger) {
    const std::size_t k = b.aux.checkpoint_interval;
    WeightVector w = b.checkpoint(t);
    for (std::size_t i = t; i < t + k; ++i) {
        Matrix X = gather_rows(data.features, b.batch_indices[i].rows);
        auto y = gather_labels(data.labels, b.batch_indices[i].rows);
        auto lg = loss_grad(b.aux.model, w, X, y, ledger);
        inject_noise(lg.grad, nm, i);
        sgd_update_inplace(w, lg.grad, b.aux.learning_rate);
    }
    return w;
}

void check_interval_start(const ProofBundle& b, std::size_t t) {
    const std::size_t k = b.aux.checkpoint_interval;
    const std::size_t T = b.aux.total_steps();
    if (k == 0 || t % k != 0 || t + k > T)
        throw ConfigError("step " + std::to_string(t) + " does not start a checkpoint interval");
}

void check_row_ranges(const ProofBundle& b, const Dataset& data) {
    for (std::size_t t = 0; t < b.batch_indices.size(); ++t)
        for (std::size_t r : b.batch_indices[t].rows)
            if (r >= data.n())
                throw MalformedBundle("batch index at step " + std::to_string(t) +
                                      " addresses row " + std::to_string(r) +
                                      " outside the dataset");
}

}  // namespace

double DeltaSchedule::at(std::size_t t, std::size_t total_steps) const {
    if (stage_values.empty()) throw ConfigError("empty threshold schedule");
    if (total_steps == 0) return stage_values.front();
    std::size_t idx = stage_values.size() * t / total_steps;
    return stage_values[std::min(idx, stage_values.size() - 1)];
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::init_fail: return "init_fail";
        case Verdict::signature_fail: return "signature_fail";
        case Verdict::distance_fail: return "distance_fail";
    }
    return "?";
}

std::vector<std::size_t> top_q_indices(const std::vector<double>& mags, std::size_t q) {
    std::vector<std::size_t> idx(mags.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (mags[a] != mags[b]) return mags[a] > mags[b];
        return a < b;
    });
    idx.resize(std::min(q, idx.size()));
    return idx;
}

std::map<Metric, DeltaSchedule> to_schedule(const std::map<Metric, double>& delta) {
    std::map<Metric, DeltaSchedule> out;
    for (const auto& [m, v] : delta) out.emplace(m, DeltaSchedule{v});
    return out;
}

VerificationReport verify_proof(const ProofBundle& b, const Dataset& data,
                                const VerificationConfig& cfg, const NoiseModel& nm,
                                CostLedger* ledger) {
    validate_bundle(b);
    if (b.dataset_id != data.id)
        throw MalformedBundle("bundle was created for dataset '" + b.dataset_id +
                              "', got '" + data.id + "'");
    check_row_ranges(b, data);

    const std::size_t S = b.aux.steps_per_epoch;
    const std::size_t k = b.aux.checkpoint_interval;
    const std::size_t T = b.aux.total_steps();
    const std::size_t intervals_per_epoch = S / k;

    if (cfg.metrics.empty()) throw ConfigError("no metrics configured");
    if (cfg.top_q < 1 || cfg.top_q > intervals_per_epoch)
        throw ConfigError("Q must satisfy 1 <= Q <= S/k = " +
                          std::to_string(intervals_per_epoch));
    if (!(cfg.init_alpha > 0.0 && cfg.init_alpha < 1.0))
        throw ConfigError("init significance level must lie in (0, 1)");
    for (Metric m : cfg.metrics)
        if (!cfg.delta.count(m))
            throw ConfigError(std::string("no threshold configured for metric ") + to_string(m));

    VerificationReport rep;
    rep.init = verify_initialization(b.aux.model, b.aux.init, b.checkpoint(0), cfg.init_alpha);
    if (!rep.init.pass) {
        rep.verdict = Verdict::init_fail;
        std::ostringstream os;
        os << "initialization test rejected W_0 (min per-layer p = " << rep.init.min_p << ")";
        rep.detail = os.str();
        return rep;
    }

    // Magnitude scan + selection (cheap: stored checkpoints only). Movement is
    // always measured in l2 so the selection is metric-independent.
    struct WorkItem {
        std::size_t epoch, slot, start;
    };
    std::vector<WorkItem> work;
    rep.epochs.resize(b.aux.epochs);
    for (std::size_t e = 0; e < b.aux.epochs; ++e) {
        EpochCheck& ec = rep.epochs[e];
        ec.epoch = e;
        for (std::size_t t = e * S; t < (e + 1) * S; t += k) {
            ec.starts.push_back(t);
            ec.magnitudes.push_back(
                distance(b.checkpoint(t).values, b.checkpoint(t + k).values, Metric::l2));
        }
        auto sel = top_q_indices(ec.magnitudes, cfg.top_q);
        ec.checked.resize(sel.size());
        for (std::size_t s = 0; s < sel.size(); ++s) {
            ec.checked[s].start = ec.starts[sel[s]];
            ec.checked[s].magnitude = ec.magnitudes[sel[s]];
            work.push_back({e, s, ec.starts[sel[s]]});
        }
    }

    auto run_item = [&](std::size_t wi) {
        const WorkItem& item = work[wi];
        IntervalCheck& chk = rep.epochs[item.epoch].checked[item.slot];
        const std::size_t t = item.start;
        for (std::size_t i = t; i < t + k; ++i)
            if (!verify_signature(data, b.batch_indices[i], b.digests[i])) {
                chk.signatures_ok = false;
                return;  // replaying against tampered rows proves nothing
            }
        WeightVector w = replay_interval(b, data, t, nm, ledger);
        for (Metric m : cfg.metrics) {
            double eps = distance(w.values, b.checkpoint(t + k).values, m);
            double del = cfg.delta.at(m).at(t, T);
            chk.eps[m] = eps;
            chk.threshold[m] = del;
            if (eps > del) chk.distances_ok = false;
        }
    };

    bool ran = false;
#ifdef _OPENMP
    if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t wi = 0; wi < static_cast<std::ptrdiff_t>(work.size()); ++wi)
            run_item(static_cast<std::size_t>(wi));
        ran = true;
    }
#endif
    if (!ran)
        for (std::size_t wi = 0; wi < work.size(); ++wi) run_item(wi);

    // Aggregate: worst eps per metric, first failure in scan order decides
    // the verdict and names the offending step.
    for (const EpochCheck& ec : rep.epochs)
        for (const IntervalCheck& chk : ec.checked) {
            if (chk.signatures_ok) rep.replay_steps += k;
            for (const auto& [m, e] : chk.eps) {
                auto it = rep.max_eps.find(m);
                if (it == rep.max_eps.end() || e > it->second) rep.max_eps[m] = e;
            }
            if (!chk.pass() && rep.verdict == Verdict::pass) {
                std::ostringstream os;
                if (!chk.signatures_ok) {
                    rep.verdict = Verdict::signature_fail;
                    os << "batch digest mismatch in interval starting at step " << chk.start;
                } else {
                    rep.verdict = Verdict::distance_fail;
                    os << "replay distance exceeded threshold at step " << chk.start;
                    for (Metric m : cfg.metrics)
                        if (chk.eps.at(m) > chk.threshold.at(m))
                            os << " [" << to_string(m) << ": " << chk.eps.at(m) << " > "
                               << chk.threshold.at(m) << "]";
                }
                rep.detail = os.str();
            }
        }
    return rep;
}

double reproduction_error(const ProofBundle& b, const Dataset& data, std::size_t t,
                          Metric metric, const NoiseModel& nm, CostLedger* ledger) {
    check_interval_start(b, t);
    WeightVector w = replay_interval(b, data, t, nm, ledger);
    return distance(w.values, b.checkpoint(t + b.aux.checkpoint_interval).values, metric);
}

ReplayErrors replay_all_intervals(const ProofBundle& b, const Dataset& data,
                                  const std::vector<Metric>& metrics, const NoiseModel& nm,
                                  bool parallel, CostLedger* ledger) {
    const std::size_t k = b.aux.checkpoint_interval;
    const std::size_t T = b.aux.total_steps();
    ReplayErrors out;
    for (std::size_t t = 0; t + k <= T; t += k) out.starts.push_back(t);
    for (Metric m : metrics) out.eps[m].assign(out.starts.size(), 0.0);

    auto run_item = [&](std::size_t i) {
        WeightVector w = replay_interval(b, data, out.starts[i], nm, ledger);
        for (Metric m : metrics)
            out.eps[m][i] = distance(w.values, b.checkpoint(out.starts[i] + k).values, m);
    };

    bool ran = false;
#ifdef _OPENMP
    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(out.starts.size()); ++i)
            run_item(static_cast<std::size_t>(i));
        ran = true;
    }
#endif
    if (!ran)
        for (std::size_t i = 0; i < out.starts.size(); ++i) run_item(i);

    for (Metric m : metrics) {
        double mx = 0.0;
        for (double e : out.eps[m]) mx = std::max(mx, e);
        out.max_eps[m] = mx;
    }
    return out;
}

std::map<Metric, double> normalized_errors(const ProofBundle& b, const Dataset& data,
                                           const std::vector<Metric>& metrics,
                                           const NoiseModel& nm,
                                           const std::map<Metric, double>& d_ref) {
    auto errs = replay_all_intervals(b, data, metrics, nm);
    std::map<Metric, double> out;
    for (Metric m : metrics) {
        double ref = d_ref.at(m);
        if (!(ref > 0.0))
            throw ConfigError(std::string("d_ref must be positive for ") + to_string(m));
        out[m] = errs.max_eps.at(m) / ref;
    }
    return out;
}

std::map<Metric, double> compute_d_ref(const ModelSpec& m, const InitSpec& zeta,
                                       const Dataset& data, const TrainConfig& cfg,
                                       const std::vector<Metric>& metrics,
                                       std::pair<std::uint64_t, std::uint64_t> seeds) {
    auto member = [&](std::uint64_t s) {
        InitSpec z{s, zeta.scale};
        TrainConfig c = cfg;
        c.batch_seed = rng::mix64(s ^ 0xD5EFull);
        return train_final(m, z, data, c);
    };
    WeightVector w1 = member(seeds.first);
    WeightVector w2 = member(seeds.second);
    std::map<Metric, double> out;
    for (Metric mt : metrics) out[mt] = distance(w1.values, w2.values, mt);
    return out;
}

std::map<Metric, double> calibrate_delta(const std::map<Metric, double>& max_eps,
                                         const std::map<Metric, double>& d_ref) {
    std::map<Metric, double> out;
    for (const auto& [m, eps] : max_eps) {
        double ref = d_ref.at(m);
        if (eps >= ref)
            throw CalibrationInfeasible("max replay error " + std::to_string(eps) +
                                        " does not leave room below d_ref " +
                                        std::to_string(ref) + " for " + to_string(m));
        out[m] = std::sqrt(eps * ref);
    }
    return out;
}

std::map<Metric, DeltaSchedule> calibrate_delta_schedule(const ReplayErrors& errs,
                                                         std::size_t total_steps,
                                                         std::size_t stages,
                                                         const std::map<Metric, double>& d_ref) {
    if (stages == 0) throw ConfigError("need at least one stage");
    std::map<Metric, DeltaSchedule> out;
    for (const auto& [m, eps] : errs.eps) {
        // Worst error per stage; empty stages inherit the previous stage's.
        std::vector<double> stage_eps(stages, -1.0);
        for (std::size_t i = 0; i < errs.starts.size(); ++i) {
            std::size_t s = std::min(stages * errs.starts[i] / total_steps, stages - 1);
            stage_eps[s] = std::max(stage_eps[s], eps[i]);
        }
        for (std::size_t s = 1; s < stages; ++s)
            if (stage_eps[s] < 0.0) stage_eps[s] = stage_eps[s - 1];
        if (stage_eps[0] < 0.0) throw ConfigError("no intervals fall in the first stage");

        double eps_max = errs.max_eps.at(m);
        double ref = d_ref.at(m);
        if (eps_max >= ref)
            throw CalibrationInfeasible("max replay error " + std::to_string(eps_max) +
                                        " does not leave room below d_ref " +
                                        std::to_string(ref) + " for " + to_string(m));
        double factor = eps_max > 0.0 ? std::sqrt(ref / eps_max) : 0.0;
        std::vector<double> sched(stages);
        for (std::size_t s = 0; s < stages; ++s) {
            sched[s] = stage_eps[s] * factor;
            if (s > 0) sched[s] = std::min(sched[s], sched[s - 1]);  // never loosen later
        }
        out.emplace(m, DeltaSchedule{std::move(sched)});
    }
    return out;
}

}  // namespace pol
