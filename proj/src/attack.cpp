#include "pol/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <utility>

#include "pol/digest.hpp"
#include "pol/errors.hpp"
#include "pol/metric.hpp"
#include "pol/rng.hpp"

namespace pol {

namespace {

void validate_attack_cfg(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                         const AttackConfig& cfg) {
    m.validate();
    if (data.dim() != m.input_dim())
        throw ConfigError("dataset dimension does not match the model input");
    if (w_t.size() != m.dim()) throw ConfigError("target weights do not match the model");
    if (cfg.steps == 0) throw ConfigError("spoof needs at least one step");
    if (cfg.checkpoint_interval == 0 || cfg.steps % cfg.checkpoint_interval != 0)
        throw ConfigError("spoof step count must be a positive multiple of k");
    if (cfg.epochs == 0 || cfg.steps % cfg.epochs != 0)
        throw ConfigError("spoof epochs must divide the step count");
    if ((cfg.steps / cfg.epochs) % cfg.checkpoint_interval != 0)
        throw ConfigError("k must divide the spoof steps per epoch");
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (cfg.steps * cfg.batch_size > data.n())
        throw ConfigError("spoof schedule draws every batch from fresh rows and needs "
                          "T'*b <= n; have T'*b = " +
                          std::to_string(cfg.steps * cfg.batch_size) + " over n = " +
                          std::to_string(data.n()));
    if (!(cfg.eta > 0.0)) throw ConfigError("spoof learning rate must be positive");
    if (!(cfg.eta_r > 0.0)) throw ConfigError("perturbation step size must be positive");
    if (cfg.forced_iters == 0 && cfg.max_iters == 0)
        throw ConfigError("need an adversarial-optimization iteration budget");
}

// One batch schedule for the whole spoof: T' pairwise-disjoint batches.
// Disjointness matters because digests are taken over the final dataset —
// a row shared between two steps could not carry both steps' perturbations.
std::vector<BatchIndex> spoof_schedule(std::size_t n, std::size_t steps, std::size_t batch_size,
                                       std::uint64_t seed) {
    return get_batches(n, steps, batch_size, seed, 0);
}

void scatter_rows(Dataset& d, const std::vector<std::size_t>& rows, const Matrix& X) {
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(X.row(i), X.row(i) + X.cols, d.features.row(rows[i]));
}

// Outcome of optimizing one unit (a single step's batch, or an interval's
// joint batch) with the 1 + 3N cost discipline: one candidate-update
// gradient up front, then N objective evaluations each costing 3, where the
// accepting evaluation's inner gradient doubles as the recorded update.
struct OptResult {
    bool converged = true;
    std::size_t iters = 0;
    bool modified = false;
    double norm_before = 0.0;
    double norm_after = 0.0;
    double r_inf = 0.0;
    double guard_value = 0.0;  // guard quantity at acceptance (or last try)
    GradientVector update_grad;
    Matrix x_final;  // X + R, only meaningful when modified
};

template <typename GuardFn>
OptResult optimize_unit(const ModelSpec& m, const WeightVector& w, const Matrix& X0,
                        const std::vector<std::int64_t>& y, const ObjectiveSpec& obj,
                        double threshold, GuardFn&& guard, const AttackConfig& cfg,
                        CostLedger* ledger) {
    OptResult out;
    auto lg = loss_grad(m, w, X0, y, ledger);
    double gnorm = l2_norm(lg.grad.values);
    out.norm_before = gnorm;
    out.guard_value = guard(lg.grad, gnorm);

    const bool forced = cfg.forced_iters > 0;
    if (!forced && out.guard_value <= threshold) {
        // The honest update already satisfies the guard; nothing to perturb.
        out.norm_after = gnorm;
        out.update_grad = std::move(lg.grad);
        return out;
    }

    const std::size_t cap = forced ? cfg.forced_iters : cfg.max_iters;
    Matrix R(X0.rows, X0.cols, 0.0);
    for (std::size_t n = 1; n <= cap; ++n) {
        auto io = input_objective_grad(m, w, X0, R, y, obj, ledger);
        double q = guard(io.inner_grad, io.inner_grad_norm);
        out.guard_value = q;
        out.iters = n;
        const bool accept = forced ? n == cap : q <= threshold;
        if (accept) {
            out.norm_after = io.inner_grad_norm;
            out.update_grad = std::move(io.inner_grad);
            double ri = 0.0;
            for (double r : R.v) ri = std::max(ri, std::abs(r));
            out.r_inf = ri;
            out.modified = ri > 0.0;
            if (out.modified) {
                out.x_final = X0;
                for (std::size_t j = 0; j < R.size(); ++j) out.x_final.v[j] += R.v[j];
            }
            return out;
        }
        for (std::size_t j = 0; j < R.size(); ++j) R.v[j] -= cfg.eta_r * io.r_grad.v[j];
    }
    out.converged = false;
    return out;
}

std::vector<std::optional<WeightVector>> expand_checkpoints(std::vector<WeightVector>&& cps,
                                                            std::size_t steps, std::size_t k) {
    std::vector<std::optional<WeightVector>> out(steps + 1);
    for (std::size_t v = 0; v < cps.size(); ++v) out[v * k] = std::move(cps[v]);
    return out;
}

ProofBundle assemble_bundle(const Dataset& data, const ModelSpec& m, const InitSpec& init_rec,
                            const AttackConfig& cfg,
                            std::vector<std::optional<WeightVector>> checkpoints,
                            std::vector<BatchIndex> batches) {
    ProofBundle b;
    b.aux.epochs = cfg.epochs;
    b.aux.steps_per_epoch = cfg.steps / cfg.epochs;
    b.aux.checkpoint_interval = cfg.checkpoint_interval;
    b.aux.batch_size = cfg.batch_size;
    b.aux.learning_rate = cfg.eta;
    b.aux.batch_seed = cfg.seed;
    b.aux.noise = cfg.noise;
    b.aux.model = m;
    b.aux.init = init_rec;
    b.dataset_id = data.id;
    b.checkpoints = std::move(checkpoints);
    b.batch_indices = std::move(batches);
    return b;
}

// Digests are deferred until every perturbation has been written back; with
// the disjoint schedule this equals digesting each batch at perturbation
// time.
void finalize_digests(ProofBundle& b, const Dataset& data) {
    b.digests.resize(b.batch_indices.size());
    for (std::size_t i = 0; i < b.batch_indices.size(); ++i)
        b.digests[i] = batch_digest(data, b.batch_indices[i]);
}

// Optional report-only shaping: multiplicative noise on interior
// checkpoints, fading to zero toward the end of the claimed trajectory.
void apply_shaping(std::vector<WeightVector>& cps, const AttackConfig& cfg) {
    if (cfg.shaping_amplitude == 0.0) return;
    for (std::size_t v = 1; v + 1 < cps.size(); ++v) {
        auto st = rng::Stream::derive(cfg.seed, 0x5AAE, v);
        double amp = cfg.shaping_amplitude * (1.0 - double(v) / double(cps.size() - 1));
        for (auto& x : cps[v].values) x *= 1.0 + amp * st.next_normal();
    }
}

void finalize_norm_stats(SpoofResult& res, const std::vector<double>& before,
                         const std::vector<double>& after, const std::vector<double>& r_inf,
                         const std::vector<char>& modified) {
    double nb = 0.0, na = 0.0, ri = 0.0;
    std::size_t nmod = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        nb += before[i];
        na += after[i];
        if (modified[i]) {
            ri += r_inf[i];
            ++nmod;
        }
    }
    if (!before.empty()) {
        res.grad_norm_before = nb / double(before.size());
        res.grad_norm_after = na / double(before.size());
    }
    res.mean_r_inf = nmod ? ri / double(nmod) : 0.0;
}

struct WallClock {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

}  // namespace

WeightVector init_w0_matched(const ModelSpec& m, const InitSpec& zeta, const WeightVector& w_t,
                             std::uint64_t seed, MatchOrdering ordering) {
    m.validate();
    if (w_t.size() != m.dim()) throw ConfigError("target weights do not match the model");
    WeightVector out(m.layout());
    for (std::size_t l = 0; l < out.layers(); ++l) {
        auto st = rng::Stream::derive(seed, 0x117, l);
        const double sd = layer_init_std(m, l, zeta);
        auto block = out.layer(l);
        auto target = w_t.layer(l);

        std::vector<double> draws(block.size());
        for (auto& d : draws) d = sd * st.next_normal();

        // Pair the i-th largest draw with the position of the i-th largest
        // target element; "largest" by signed value or by magnitude.
        std::vector<std::size_t> pos(block.size());
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        if (ordering == MatchOrdering::signed_desc) {
            std::stable_sort(pos.begin(), pos.end(),
                             [&](std::size_t a, std::size_t b) { return target[a] > target[b]; });
            std::stable_sort(draws.begin(), draws.end(), std::greater<>());
        } else {
            std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
                return std::abs(target[a]) > std::abs(target[b]);
            });
            std::stable_sort(draws.begin(), draws.end(),
                             [](double a, double b) { return std::abs(a) > std::abs(b); });
        }
        for (std::size_t i = 0; i < pos.size(); ++i) block[pos[i]] = draws[i];
    }
    return out;
}

std::vector<WeightVector> interpolate_checkpoints(const WeightVector& w0, const WeightVector& w_t,
                                                  std::size_t steps, std::size_t k, double delta) {
    if (w0.size() != w_t.size()) throw ConfigError("interpolation endpoints differ in size");
    if (k == 0 || steps == 0 || steps % k != 0)
        throw ConfigError("steps must be a positive multiple of k");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");

    const double d0 = distance(w0.values, w_t.values, Metric::l2);
    const double spacing = d0 * double(k) / double(steps);
    if (spacing > delta) {
        std::size_t needed = static_cast<std::size_t>(std::ceil(double(k) * d0 / delta));
        needed = (needed + k - 1) / k * k;  // round up to a whole interval count
        std::ostringstream os;
        os << "checkpoint spacing " << spacing << " exceeds delta " << delta
           << "; need T' >= " << needed;
        throw SpacingExceedsDelta(os.str(), spacing, delta, needed);
    }

    const std::size_t n_cp = steps / k;
    std::vector<WeightVector> cps;
    cps.reserve(n_cp + 1);
    cps.push_back(w0);
    for (std::size_t v = 1; v < n_cp; ++v) {
        const double f = double(v * k) / double(steps);
        WeightVector w = w0;
        for (std::size_t i = 0; i < w.size(); ++i)
            w.values[i] = w0.values[i] + f * (w_t.values[i] - w0.values[i]);
        cps.push_back(std::move(w));
    }
    cps.push_back(w_t);  // exact, not recomputed through the lerp
    return cps;
}

SpoofResult attack_one(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                       double delta, const InitSpec& zeta, const AttackConfig& cfg) {
    validate_attack_cfg(data, m, w_t, cfg);
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");

    WallClock clock;
    CostLedger ledger;
    SpoofResult res;
    res.dataset = data;

    const std::size_t T = cfg.steps;
    const std::size_t k = cfg.checkpoint_interval;
    auto batches = spoof_schedule(data.n(), T, cfg.batch_size, cfg.seed);

    // A genuine draw from ζ — this attack's initialization is honest.
    InitSpec init_rec{cfg.seed, zeta.scale};
    WeightVector w = init_weights(m, init_rec);

    std::vector<std::optional<WeightVector>> cps(T + 1);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        if (t % k == 0) cps[t] = w;
        Matrix X = gather_rows(data.features, batches[t].rows);
        auto y = gather_labels(data.labels, batches[t].rows);
        auto lg = loss_grad(m, w, X, y, &ledger);
        sgd_update_inplace(w, lg.grad, cfg.eta);
    }

    // Final step: perturb its batch until one more update lands within
    // delta of the stolen weights.
    const std::size_t t_last = T - 1;
    if (t_last % k == 0) cps[t_last] = w;
    Matrix X = gather_rows(data.features, batches[t_last].rows);
    auto y = gather_labels(data.labels, batches[t_last].rows);

    ObjectiveSpec obj;
    obj.kind = ObjectiveKind::target_distance;
    obj.lambda = cfg.lambda;
    obj.eta = cfg.eta;
    obj.target = &w_t;
    auto guard = [&](const GradientVector& g, double) {
        WeightVector cand = sgd_update(w, g, cfg.eta);
        return distance(cand.values, w_t.values, Metric::l2);
    };
    OptResult opt = optimize_unit(m, w, X, y, obj, delta, guard, cfg, &ledger);
    if (!opt.converged)
        throw NonConvergence("final-step optimization still " + std::to_string(opt.guard_value) +
                                 " from the target after " + std::to_string(opt.iters) +
                                 " iterations",
                             opt.iters, opt.guard_value);
    if (opt.modified) scatter_rows(res.dataset, batches[t_last].rows, opt.x_final);

    cps[T] = w_t;
    res.opt_iters = {opt.iters};
    res.interval_gap.assign(T / k, 0.0);  // honest intervals replay exactly
    res.interval_gap.back() = opt.guard_value;
    finalize_norm_stats(res, {opt.norm_before}, {opt.norm_after}, {opt.r_inf},
                        {static_cast<char>(opt.modified)});

    res.bundle = assemble_bundle(res.dataset, m, init_rec, cfg, std::move(cps), std::move(batches));
    finalize_digests(res.bundle, res.dataset);
    ledger.add_wall_seconds(clock.elapsed());
    res.costs = ledger.snapshot();
    return res;
}

SpoofResult attack_two(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                       double delta, double gamma, const InitSpec& zeta, const AttackConfig& cfg) {
    validate_attack_cfg(data, m, w_t, cfg);
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");

    WallClock clock;
    CostLedger ledger;
    SpoofResult res;
    res.dataset = data;

    const std::size_t T = cfg.steps;
    const std::size_t k = cfg.checkpoint_interval;
    const std::size_t n_int = T / k;
    auto batches = spoof_schedule(data.n(), T, cfg.batch_size, cfg.seed);

    InitSpec init_rec{cfg.seed, zeta.scale};
    WeightVector w0 = init_w0_matched(m, zeta, w_t, init_rec.seed, cfg.ordering);
    auto cps = interpolate_checkpoints(w0, w_t, T, k, delta);
    apply_shaping(cps, cfg);

    res.opt_iters.assign(T, 0);
    res.interval_gap.assign(n_int, 0.0);
    std::vector<double> nb(T, 0.0), na(T, 0.0), ri(T, 0.0);
    std::vector<char> mod(T, 0);
    std::vector<std::optional<std::pair<std::size_t, double>>> failed(n_int);

    // Each interval chains its own weights from its interpolated start and
    // owns its batches' rows, so intervals are independent.
    auto work = [&](std::size_t v) {
        WeightVector w = cps[v];
        ObjectiveSpec obj;
        obj.kind = ObjectiveKind::grad_norm;
        obj.lambda = cfg.lambda;
        for (std::size_t i = v * k; i < (v + 1) * k; ++i) {
            Matrix X = gather_rows(data.features, batches[i].rows);
            auto y = gather_labels(data.labels, batches[i].rows);
            auto guard = [&](const GradientVector&, double gn) { return cfg.eta * gn; };
            OptResult o = optimize_unit(m, w, X, y, obj, gamma, guard, cfg, &ledger);
            if (!o.converged) {
                failed[v] = std::make_pair(o.iters, o.guard_value);
                return;
            }
            if (o.modified) scatter_rows(res.dataset, batches[i].rows, o.x_final);
            sgd_update_inplace(w, o.update_grad, cfg.eta);
            res.opt_iters[i] = o.iters;
            nb[i] = o.norm_before;
            na[i] = o.norm_after;
            ri[i] = o.r_inf;
            mod[i] = static_cast<char>(o.modified);
        }
        res.interval_gap[v] = distance(w.values, cps[v + 1].values, Metric::l2);
    };

    bool ran = false;
#ifdef _OPENMP
    if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(n_int); ++v)
            work(static_cast<std::size_t>(v));
        ran = true;
    }
#endif
    if (!ran)
        for (std::size_t v = 0; v < n_int; ++v) work(v);

    for (std::size_t v = 0; v < n_int; ++v)
        if (failed[v])
            throw NonConvergence("step movement still " + std::to_string(failed[v]->second) +
                                     " > gamma " + std::to_string(gamma) +
                                     " in interval starting at step " + std::to_string(v * k),
                                 failed[v]->first, failed[v]->second);

    finalize_norm_stats(res, nb, na, ri, mod);
    res.bundle = assemble_bundle(res.dataset, m, init_rec, cfg,
                                 expand_checkpoints(std::move(cps), T, k), std::move(batches));
    finalize_digests(res.bundle, res.dataset);
    ledger.add_wall_seconds(clock.elapsed());
    res.costs = ledger.snapshot();
    return res;
}

SpoofResult attack_three(const Dataset& data, const ModelSpec& m, const WeightVector& w_t,
                         double delta, double gamma, double sigma, const InitSpec& zeta,
                         const AttackConfig& cfg) {
    validate_attack_cfg(data, m, w_t, cfg);
    if (!(sigma > 0.0 && sigma < gamma)) throw ConfigError("need 0 < sigma < gamma");

    WallClock clock;
    CostLedger ledger;
    SpoofResult res;
    res.dataset = data;

    const std::size_t T = cfg.steps;
    const std::size_t k = cfg.checkpoint_interval;
    const std::size_t n_int = T / k;
    auto batches = spoof_schedule(data.n(), T, cfg.batch_size, cfg.seed);

    InitSpec init_rec{cfg.seed, zeta.scale};
    WeightVector w0 = init_w0_matched(m, zeta, w_t, init_rec.seed, cfg.ordering);
    auto cps = interpolate_checkpoints(w0, w_t, T, k, delta);
    apply_shaping(cps, cfg);

    // sigma must absorb the sequential-replay drift the verifier will see.
    // Estimated off-ledger: probing is not part of the attack's cost story.
    {
        std::vector<WeightVector> samples;
        std::size_t prev = cps.size();  // out-of-range sentinel
        for (std::size_t j = 0; j <= 4; ++j) {
            const std::size_t idx = j * (cps.size() - 1) / 4;
            if (idx != prev) samples.push_back(cps[idx]);
            prev = idx;
        }
        auto bounds = estimate_alpha_beta(m, data, samples, cfg.batch_size,
                                          rng::mix64(cfg.seed ^ 0xE57ull));
        double drift = corollary_bound(cfg.eta, bounds.alpha, bounds.beta, k, gamma, gamma);
        if (!(sigma > drift))
            throw SigmaTooSmall("sigma " + std::to_string(sigma) +
                                    " does not dominate the replay drift bound " +
                                    std::to_string(drift),
                                sigma, drift);
    }

    res.opt_iters.assign(n_int, 0);
    res.interval_gap.assign(n_int, 0.0);
    std::vector<double> nb(n_int, 0.0), na(n_int, 0.0), ri(n_int, 0.0);
    std::vector<char> mod(n_int, 0);
    std::vector<std::optional<std::pair<std::size_t, double>>> failed(n_int);
    const double threshold = gamma - sigma;

    auto work = [&](std::size_t v) {
        // Joint batch: all k batches of the interval, one optimization.
        std::vector<std::size_t> rows;
        rows.reserve(k * cfg.batch_size);
        for (std::size_t i = v * k; i < (v + 1) * k; ++i)
            rows.insert(rows.end(), batches[i].rows.begin(), batches[i].rows.end());
        Matrix X = gather_rows(data.features, rows);
        auto y = gather_labels(data.labels, rows);

        ObjectiveSpec obj;
        obj.kind = ObjectiveKind::grad_norm;
        obj.lambda = cfg.lambda;
        const double eta_joint = double(k) * cfg.eta;  // one stride for k steps
        auto guard = [&](const GradientVector& g, double) {
            WeightVector cand = sgd_update(cps[v], g, eta_joint);
            return distance(cand.values, cps[v + 1].values, Metric::l2);
        };
        OptResult o = optimize_unit(m, cps[v], X, y, obj, threshold, guard, cfg, &ledger);
        if (!o.converged) {
            failed[v] = std::make_pair(o.iters, o.guard_value);
            return;
        }
        if (o.modified) scatter_rows(res.dataset, rows, o.x_final);
        res.opt_iters[v] = o.iters;
        res.interval_gap[v] = o.guard_value;
        nb[v] = o.norm_before;
        na[v] = o.norm_after;
        ri[v] = o.r_inf;
        mod[v] = static_cast<char>(o.modified);
    };

    bool ran = false;
#ifdef _OPENMP
    if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(n_int); ++v)
            work(static_cast<std::size_t>(v));
        ran = true;
    }
#endif
    if (!ran)
        for (std::size_t v = 0; v < n_int; ++v) work(v);

    for (std::size_t v = 0; v < n_int; ++v)
        if (failed[v])
            throw NonConvergence("joint update still " + std::to_string(failed[v]->second) +
                                     " > gamma - sigma = " + std::to_string(threshold) +
                                     " in interval starting at step " + std::to_string(v * k),
                                 failed[v]->first, failed[v]->second);

    finalize_norm_stats(res, nb, na, ri, mod);
    res.bundle = assemble_bundle(res.dataset, m, init_rec, cfg,
                                 expand_checkpoints(std::move(cps), T, k), std::move(batches));
    finalize_digests(res.bundle, res.dataset);
    ledger.add_wall_seconds(clock.elapsed());
    res.costs = ledger.snapshot();
    return res;
}

double corollary_bound(double eta, double alpha, double beta, std::size_t k, double gamma,
                       double sigma) {
    double drift = 0.0;
    if (k >= 3)
        drift = eta * eta * alpha * beta * (double(k - 1) * double(k - 2)) / 2.0;
    return drift + gamma - sigma;
}

DerivativeBounds estimate_alpha_beta(const ModelSpec& m, const Dataset& data,
                                     const std::vector<WeightVector>& weight_samples,
                                     std::size_t batch_size, std::uint64_t seed,
                                     std::size_t directions) {
    if (weight_samples.empty()) throw ConfigError("need at least one weight sample");
    if (batch_size == 0) throw ConfigError("probe batch size must be positive");

    DerivativeBounds out;
    auto st = rng::Stream::derive(seed, 0xAB0);
    const double h = 1e-5;
    for (const auto& w : weight_samples) {
        std::vector<std::size_t> rows(batch_size);
        for (auto& r : rows) r = st.next_below(data.n());
        Matrix X = gather_rows(data.features, rows);
        auto y = gather_labels(data.labels, rows);

        auto g = loss_grad(m, w, X, y);
        out.alpha = std::max(out.alpha, l2_norm(g.grad.values));

        for (std::size_t d = 0; d < directions; ++d) {
            std::vector<double> u(w.size());
            for (auto& x : u) x = st.next_normal();
            double un = l2_norm(u);
            if (un == 0.0) continue;
            WeightVector wp = w, wm = w;
            for (std::size_t i = 0; i < u.size(); ++i) {
                const double step = h * u[i] / un;
                wp.values[i] += step;
                wm.values[i] -= step;
            }
            auto gp = loss_grad(m, wp, X, y);
            auto gm = loss_grad(m, wm, X, y);
            double s = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) {
                const double hv = (gp.grad.values[i] - gm.grad.values[i]) / (2.0 * h);
                s += hv * hv;
            }
            out.beta = std::max(out.beta, std::sqrt(s));
        }
        ++out.samples;
    }
    return out;
}

}  // namespace pol
