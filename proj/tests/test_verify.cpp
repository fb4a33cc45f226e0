#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pol/errors.hpp"
#include "pol/prove.hpp"
#include "pol/rng.hpp"
#include "pol/verify.hpp"

using namespace pol;

namespace {

struct Scenario {
    Dataset data;
    ModelSpec model;
    InitSpec init{7, 1.0};
    TrainConfig cfg;

    Scenario() {
        data = make_blobs(300, 4, 3, 1.5, 1.0, 21);
        model.widths = {4, 8, 3};
        cfg.epochs = 3;
        cfg.steps_per_epoch = 12;
        cfg.checkpoint_interval = 4;
        cfg.batch_size = 8;
        cfg.learning_rate = 0.2;
        cfg.batch_seed = 5;
    }
};

VerificationConfig all_metric_cfg(const std::map<Metric, double>& delta, std::size_t q) {
    VerificationConfig v;
    v.metrics.assign(kAllMetrics.begin(), kAllMetrics.end());
    v.delta = to_schedule(delta);
    v.top_q = q;
    return v;
}

}  // namespace

TEST_CASE("top-Q selection matches brute force on random lists") {
    // Spec'd example first: two largest of [0.5, 0.2, 0.9], largest first.
    CHECK(top_q_indices({0.5, 0.2, 0.9}, 2) == std::vector<std::size_t>{2, 0});

    rng::Stream st = rng::Stream::derive(123, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 1 + st.next_below(12);
        std::vector<double> mags(n);
        for (auto& m : mags) m = st.next_below(6) * 0.25;  // force ties
        std::size_t q = 1 + st.next_below(n);

        auto got = top_q_indices(mags, q);

        // Brute force: full index sort by (value desc, index asc), truncate.
        std::vector<std::size_t> want(n);
        for (std::size_t i = 0; i < n; ++i) want[i] = i;
        std::stable_sort(want.begin(), want.end(),
                         [&](std::size_t a, std::size_t b) { return mags[a] > mags[b]; });
        want.resize(q);
        REQUIRE(got == want);
    }
}

TEST_CASE("noise-free honest bundle passes with zero replay error") {
    Scenario sc;
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    // Determinism means even a zero threshold is satisfiable.
    auto cfg = all_metric_cfg({{Metric::l1, 0.0}, {Metric::l2, 0.0}, {Metric::linf, 0.0},
                               {Metric::cos, 0.0}},
                              3);
    auto rep = verify_proof(b, sc.data, cfg, NoiseModel{});
    CHECK(rep.pass());
    CHECK(rep.verdict == Verdict::pass);
    for (Metric m : kAllMetrics) CHECK(rep.max_eps.at(m) == 0.0);
    CHECK(rep.replay_steps == 3 * 3 * 4);  // epochs × Q × k
}

TEST_CASE("noisy end-to-end: calibration feasible, honest proof passes") {
    Scenario sc;
    sc.cfg.noise = {1e-3, 11};
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    std::vector<Metric> metrics(kAllMetrics.begin(), kAllMetrics.end());
    NoiseModel verifier_nm{1e-3, 4242};  // same amplitude, its own draw

    auto errs = replay_all_intervals(b, sc.data, metrics, verifier_nm);
    auto d_ref = compute_d_ref(sc.model, sc.init, sc.data, sc.cfg, metrics, {100, 200});
    for (Metric m : metrics) {
        CHECK(errs.max_eps.at(m) > 0.0);
        CHECK(errs.max_eps.at(m) < d_ref.at(m));  // room to calibrate
    }

    auto delta = calibrate_delta(errs.max_eps, d_ref);
    for (Metric m : metrics) {
        CHECK(delta.at(m) > errs.max_eps.at(m));
        CHECK(delta.at(m) < d_ref.at(m));
    }

    auto norm = normalized_errors(b, sc.data, metrics, verifier_nm, d_ref);
    for (Metric m : metrics) {
        CHECK(norm.at(m) > 0.0);
        CHECK(norm.at(m) < 1.0);
    }

    auto cfg = all_metric_cfg(delta, 3);  // Q = S/k: replay everything
    auto rep = verify_proof(b, sc.data, cfg, verifier_nm);
    CHECK(rep.pass());
    for (Metric m : metrics) CHECK(rep.max_eps.at(m) == errs.max_eps.at(m));
}

TEST_CASE("checkpoint tampering is caught via magnitude-based selection") {
    Scenario sc;
    sc.cfg.noise = {1e-3, 11};
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    // Overwrite one interior checkpoint with a fresh random draw.
    auto bad = b;
    bad.checkpoints[8] = init_weights(sc.model, InitSpec{999, 1.0});

    // Even Q=1 catches it: the tampered interval has outsized movement, so
    // selection gravitates to it.
    VerificationConfig cfg;
    cfg.metrics = {Metric::l2};
    cfg.delta = to_schedule({{Metric::l2, 0.05}});
    cfg.top_q = 1;
    auto rep = verify_proof(bad, sc.data, cfg, NoiseModel{1e-3, 4242});
    CHECK_FALSE(rep.pass());
    CHECK(rep.verdict == Verdict::distance_fail);
    CHECK(rep.detail.find("step") != std::string::npos);
}

TEST_CASE("dataset tampering is caught by digest checks") {
    Scenario sc;
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    Dataset tampered = sc.data;
    tampered.features.v[3] += 1e-9;  // touch one covered value

    auto cfg = all_metric_cfg({{Metric::l1, 1.0}, {Metric::l2, 1.0}, {Metric::linf, 1.0},
                               {Metric::cos, 1.0}},
                              3);
    auto rep = verify_proof(b, tampered, cfg, NoiseModel{});
    CHECK_FALSE(rep.pass());
    CHECK(rep.verdict == Verdict::signature_fail);
}

TEST_CASE("initialization test gates everything else") {
    Scenario sc;
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);
    auto bad = b;
    for (auto& v : bad.checkpoints[0]->values) v = 0.0;

    VerificationConfig cfg;
    cfg.delta = to_schedule({{Metric::l2, 1.0}});
    cfg.top_q = 1;
    auto rep = verify_proof(bad, sc.data, cfg, NoiseModel{});
    CHECK(rep.verdict == Verdict::init_fail);
    CHECK(rep.replay_steps == 0);  // early return, no replays spent
    CHECK(rep.epochs.empty());
}

TEST_CASE("reproduction_error at a specific interval") {
    Scenario sc;
    sc.cfg.noise = {1e-3, 11};
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    NoiseModel nm{1e-3, 777};
    double e = reproduction_error(b, sc.data, 8, Metric::l2, nm);
    CHECK(e > 0.0);
    CHECK(e < 0.05);

    // Same nm twice is deterministic.
    CHECK(reproduction_error(b, sc.data, 8, Metric::l2, nm) == e);

    CHECK_THROWS_AS(reproduction_error(b, sc.data, 3, Metric::l2, nm), ConfigError);
    CHECK_THROWS_AS(reproduction_error(b, sc.data, 36, Metric::l2, nm), ConfigError);
}

TEST_CASE("d_ref: degenerate pair collapses to zero, distinct pair does not") {
    Scenario sc;
    std::vector<Metric> metrics(kAllMetrics.begin(), kAllMetrics.end());
    auto zero = compute_d_ref(sc.model, sc.init, sc.data, sc.cfg, metrics, {42, 42});
    for (Metric m : metrics) CHECK(zero.at(m) == 0.0);
    auto ref = compute_d_ref(sc.model, sc.init, sc.data, sc.cfg, metrics, {1, 2});
    for (Metric m : metrics) CHECK(ref.at(m) > 0.0);
}

TEST_CASE("threshold calibration closed forms") {
    std::map<Metric, double> eps{{Metric::l2, 0.01}};
    std::map<Metric, double> ref{{Metric::l2, 1.0}};
    CHECK(calibrate_delta(eps, ref).at(Metric::l2) == doctest::Approx(0.1));

    eps[Metric::l2] = 1.5;
    CHECK_THROWS_AS(calibrate_delta(eps, ref), CalibrationInfeasible);

    // Staged: early-worst 0.04, late-worst 0.004 against d_ref 1.0 scales to
    // [0.2, 0.02], non-increasing.
    ReplayErrors errs;
    errs.starts = {0, 10, 50, 60};
    errs.eps[Metric::l2] = {0.04, 0.03, 0.004, 0.002};
    errs.max_eps[Metric::l2] = 0.04;
    auto sched = calibrate_delta_schedule(errs, 100, 2, ref);
    REQUIRE(sched.at(Metric::l2).stage_values.size() == 2);
    CHECK(sched.at(Metric::l2).stage_values[0] == doctest::Approx(0.2));
    CHECK(sched.at(Metric::l2).stage_values[1] == doctest::Approx(0.02));

    // An out-of-order error profile still yields a non-increasing schedule.
    errs.eps[Metric::l2] = {0.01, 0.02, 0.04, 0.004};
    auto clamped = calibrate_delta_schedule(errs, 100, 2, ref);
    auto& sv = clamped.at(Metric::l2).stage_values;
    CHECK(sv[1] <= sv[0]);
}

TEST_CASE("stage lookup boundaries") {
    DeltaSchedule s{std::vector<double>{4.0, 3.0, 2.0, 1.0}};
    CHECK(s.at(0, 100) == 4.0);
    CHECK(s.at(24, 100) == 4.0);
    CHECK(s.at(25, 100) == 3.0);
    CHECK(s.at(99, 100) == 1.0);
    CHECK(s.at(100, 100) == 1.0);  // clamped at the end
    DeltaSchedule c{0.5};
    CHECK(c.at(77, 100) == 0.5);
}

TEST_CASE("raising the threshold never flips a verdict to fail") {
    Scenario sc;
    sc.cfg.noise = {1e-3, 11};
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);
    NoiseModel nm{1e-3, 31337};

    std::vector<Metric> metrics(kAllMetrics.begin(), kAllMetrics.end());
    auto errs = replay_all_intervals(b, sc.data, metrics, nm);

    for (double scale : {0.25, 0.5, 1.0, 2.0, 8.0}) {
        std::map<Metric, double> delta;
        for (Metric m : metrics) delta[m] = errs.max_eps.at(m) * scale;
        auto rep = verify_proof(b, sc.data, all_metric_cfg(delta, 3), nm);
        // Replay is deterministic in nm, so eps is fixed; the verdict must be
        // monotone in delta: scale >= 1 passes, below must not pass "more".
        if (scale >= 1.0) CHECK(rep.pass());
        for (Metric m : metrics) CHECK(rep.max_eps.at(m) == errs.max_eps.at(m));
    }
}

TEST_CASE("raising verifier noise raises mean replay error") {
    Scenario sc;
    sc.cfg.noise = {1e-3, 11};
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    auto mean_max_eps = [&](double amplitude) {
        double acc = 0.0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            auto errs = replay_all_intervals(b, sc.data, {Metric::l2}, NoiseModel{amplitude, 1000 + s});
            acc += errs.max_eps.at(Metric::l2);
        }
        return acc / 20.0;
    };
    double lo = mean_max_eps(1e-3);
    double hi = mean_max_eps(5e-3);
    CHECK(hi > lo);
}

TEST_CASE("parallel and serial replay produce identical reports") {
    Scenario sc;
    sc.cfg.noise = {1e-3, 11};
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);
    NoiseModel nm{1e-3, 2024};

    auto cfg = all_metric_cfg({{Metric::l1, 1.0}, {Metric::l2, 1.0}, {Metric::linf, 1.0},
                               {Metric::cos, 1.0}},
                              3);
    cfg.parallel = true;
    auto par = verify_proof(b, sc.data, cfg, nm);
    cfg.parallel = false;
    auto ser = verify_proof(b, sc.data, cfg, nm);

    CHECK(par.verdict == ser.verdict);
    REQUIRE(par.epochs.size() == ser.epochs.size());
    for (std::size_t e = 0; e < par.epochs.size(); ++e) {
        REQUIRE(par.epochs[e].checked.size() == ser.epochs[e].checked.size());
        for (std::size_t i = 0; i < par.epochs[e].checked.size(); ++i) {
            CHECK(par.epochs[e].checked[i].start == ser.epochs[e].checked[i].start);
            for (Metric m : cfg.metrics)
                CHECK(par.epochs[e].checked[i].eps.at(m) ==
                      ser.epochs[e].checked[i].eps.at(m));  // bit-exact
        }
    }
}

TEST_CASE("verification costs less than proof creation when Q < S/k") {
    Scenario sc;  // S/k = 3 intervals per epoch
    CostLedger create_ledger;
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg, &create_ledger);

    VerificationConfig cfg;
    cfg.delta = to_schedule({{Metric::l2, 1.0}});
    cfg.top_q = 2;  // strictly below S/k
    CostLedger verify_ledger;
    auto rep = verify_proof(b, sc.data, cfg, NoiseModel{}, &verify_ledger);
    CHECK(rep.pass());
    CHECK(verify_ledger.units() == 3 * 2 * 4);  // epochs × Q × k
    CHECK(verify_ledger.units() < create_ledger.units());
}

TEST_CASE("configuration and bundle mismatch errors") {
    Scenario sc;
    auto b = create_proof(sc.model, sc.init, sc.data, sc.cfg);

    VerificationConfig cfg;
    cfg.delta = to_schedule({{Metric::l2, 1.0}});

    cfg.top_q = 0;
    CHECK_THROWS_AS(verify_proof(b, sc.data, cfg, NoiseModel{}), ConfigError);
    cfg.top_q = 4;  // S/k = 3
    CHECK_THROWS_AS(verify_proof(b, sc.data, cfg, NoiseModel{}), ConfigError);

    cfg.top_q = 1;
    cfg.metrics = {Metric::linf};  // no threshold for it
    CHECK_THROWS_AS(verify_proof(b, sc.data, cfg, NoiseModel{}), ConfigError);

    cfg.metrics = {Metric::l2};
    Dataset other = make_blobs(300, 4, 3, 1.5, 1.0, 22);
    CHECK_THROWS_AS(verify_proof(b, other, cfg, NoiseModel{}), MalformedBundle);
}
