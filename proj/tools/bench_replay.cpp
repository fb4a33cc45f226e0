// Benchmark of the parallel interval kernels against their serial reference
// paths. Both must produce bit-identical results; timings are reported for
// whatever thread count OpenMP provides (a single-core host shows parity
// rather than speedup).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pol/attack.hpp"
#include "pol/data.hpp"
#include "pol/prove.hpp"
#include "pol/verify.hpp"

using namespace pol;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

template <typename F>
std::pair<double, double> time_reps(std::size_t reps, F&& fn) {
    double best = 1e300;
    double total = 0.0;
    for (std::size_t i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        const double ms = ms_since(t0);
        best = std::min(best, ms);
        total += ms;
    }
    return {best, total / static_cast<double>(reps)};
}

bool same_weights(const WeightVector& a, const WeightVector& b) {
    return a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t reps = 5;
    std::size_t steps = 200;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--reps" && i + 1 < argc)
            reps = std::stoul(argv[++i]);
        else if (arg == "--steps" && i + 1 < argc)
            steps = std::stoul(argv[++i]);
        else {
            std::fprintf(stderr, "usage: pol_bench [--reps N] [--steps T]\n");
            return 64;
        }
    }

    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif

    Dataset data = make_blobs(2000, 8, 3, 2.0, 0.8, 42);
    ModelSpec model;
    model.widths = {8, 24, 3};
    const InitSpec zeta{7, 1.0};

    TrainConfig train;
    train.epochs = 1;
    train.steps_per_epoch = steps;
    train.checkpoint_interval = 5;
    train.batch_size = 10;
    train.learning_rate = 0.1;
    train.batch_seed = 7;
    train.noise = NoiseModel{1e-3, 7};
    train.validate(data.n());

    ProofBundle proof = create_proof(model, zeta, data, train, nullptr);
    const NoiseModel nm{1e-3, 99};
    const std::vector<Metric> metrics{Metric::l1, Metric::l2, Metric::linf, Metric::cos};

    std::printf("interval replay: T=%zu k=%zu intervals=%zu dim=%zu threads=%d\n", steps,
                train.checkpoint_interval, steps / train.checkpoint_interval, model.dim(),
                threads);

    ReplayErrors serial_errs, parallel_errs;
    auto [s_best, s_mean] = time_reps(
        reps, [&] { serial_errs = replay_all_intervals(proof, data, metrics, nm, false); });
    auto [p_best, p_mean] = time_reps(
        reps, [&] { parallel_errs = replay_all_intervals(proof, data, metrics, nm, true); });
    std::printf("  serial   best %8.2f ms   mean %8.2f ms\n", s_best, s_mean);
    std::printf("  parallel best %8.2f ms   mean %8.2f ms   (x%.2f)\n", p_best, p_mean,
                s_best / p_best);

    bool ok = serial_errs.starts == parallel_errs.starts;
    for (Metric m : metrics)
        ok = ok && serial_errs.eps.at(m) == parallel_errs.eps.at(m) &&
             serial_errs.max_eps.at(m) == parallel_errs.max_eps.at(m);
    std::printf("  results: %s\n", ok ? "bit-identical" : "MISMATCH");

    // Attack kernel: per-interval batch optimization, serial vs parallel.
    AttackConfig acfg;
    acfg.steps = 150;
    acfg.checkpoint_interval = 5;
    acfg.batch_size = 4;
    acfg.epochs = 1;
    acfg.max_iters = 10;
    acfg.eta = 0.01;
    acfg.seed = 11;
    acfg.noise = train.noise;

    const WeightVector& w_t = proof.final_weights();
    const InitSpec zeta_a{11, 1.0};
    WeightVector w0 = init_w0_matched(model, zeta_a, w_t, acfg.seed, acfg.ordering);
    const double spacing = distance(w0.values, w_t.values, Metric::l2) *
                           static_cast<double>(acfg.checkpoint_interval) /
                           static_cast<double>(acfg.steps);
    const double delta = 2.0 * spacing;  // roomy: the bench cares about the kernel
    const double gamma = 0.5 * spacing / static_cast<double>(acfg.checkpoint_interval);

    std::printf("spoof kernel: T'=%zu intervals=%zu gamma=%.3g\n", acfg.steps,
                acfg.steps / acfg.checkpoint_interval, gamma);
    SpoofResult serial_res, parallel_res;
    acfg.parallel = false;
    auto [as_best, as_mean] =
        time_reps(reps, [&] { serial_res = attack_two(data, model, w_t, delta, gamma, zeta_a, acfg); });
    acfg.parallel = true;
    auto [ap_best, ap_mean] =
        time_reps(reps, [&] { parallel_res = attack_two(data, model, w_t, delta, gamma, zeta_a, acfg); });
    std::printf("  serial   best %8.2f ms   mean %8.2f ms\n", as_best, as_mean);
    std::printf("  parallel best %8.2f ms   mean %8.2f ms   (x%.2f)\n", ap_best, ap_mean,
                as_best / ap_best);

    bool aok = serial_res.dataset.features.v == parallel_res.dataset.features.v;
    const auto& scp = serial_res.bundle.checkpoints;
    const auto& pcp = parallel_res.bundle.checkpoints;
    aok = aok && scp.size() == pcp.size();
    for (std::size_t i = 0; aok && i < scp.size(); ++i) {
        aok = scp[i].has_value() == pcp[i].has_value();
        if (aok && scp[i]) aok = same_weights(*scp[i], *pcp[i]);
    }
    std::printf("  results: %s\n", aok ? "bit-identical" : "MISMATCH");

    return ok && aok ? 0 : 1;
}
