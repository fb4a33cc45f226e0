#include "pol/prove.hpp"

#include "pol/errors.hpp"

namespace pol {

void TrainConfig::validate(std::size_t dataset_n) const {
    if (epochs == 0 || steps_per_epoch == 0) throw ConfigError("train: E and S must be positive");
    if (checkpoint_interval == 0) throw ConfigError("train: k must be positive");
    if (steps_per_epoch % checkpoint_interval != 0)
        throw ConfigError("train: k must divide S (whole intervals per epoch)");
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (steps_per_epoch * batch_size > dataset_n)
        throw ConfigError("train: S*b exceeds dataset size");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (noise.amplitude < 0.0) throw ConfigError("train: negative noise amplitude");
}

namespace {

// One implementation for both entry points; `bundle` may be null.
WeightVector run_training(const ModelSpec& m, const InitSpec& zeta, const Dataset& D,
                          const TrainConfig& cfg, ProofBundle* bundle, CostLedger* ledger) {
    m.validate();
    cfg.validate(D.n());
    if (D.dim() != m.input_dim()) throw ConfigError("train: dataset width != model input dim");

    const std::size_t T = cfg.total_steps();
    const std::size_t k = cfg.checkpoint_interval;
    WeightVector w = init_weights(m, zeta);

    if (bundle) {
        bundle->aux = AuxInfo{cfg.epochs,     cfg.steps_per_epoch, k,    cfg.batch_size,
                              cfg.learning_rate, cfg.batch_seed,   cfg.noise, m, zeta};
        bundle->dataset_id = D.id;
        bundle->checkpoints.assign(T + 1, std::nullopt);
        bundle->batch_indices.reserve(T);
        bundle->digests.reserve(T);
    }

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        auto batches = get_batches(D.n(), cfg.steps_per_epoch, cfg.batch_size, cfg.batch_seed, e);
        for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
            const std::size_t t = e * cfg.steps_per_epoch + s;
            if (bundle && t % k == 0) bundle->checkpoints[t] = w;

            const auto& bi = batches[s];
            Matrix Xb = gather_rows(D.features, bi.rows);
            auto yb = gather_labels(D.labels, bi.rows);
            auto lg = loss_grad(m, w, Xb, yb, ledger);
            inject_noise(lg.grad, cfg.noise, t);
            sgd_update_inplace(w, lg.grad, cfg.learning_rate);

            if (bundle) {
                bundle->digests.push_back(batch_digest(D, bi));
                bundle->batch_indices.push_back(std::move(batches[s]));
            }
        }
    }
    if (bundle) bundle->checkpoints[T] = w;
    return w;
}

}  // namespace

ProofBundle create_proof(const ModelSpec& m, const InitSpec& zeta, const Dataset& D,
                         const TrainConfig& cfg, CostLedger* ledger) {
    ProofBundle b;
    run_training(m, zeta, D, cfg, &b, ledger);
    return b;
}

WeightVector train_final(const ModelSpec& m, const InitSpec& zeta, const Dataset& D,
                         const TrainConfig& cfg, CostLedger* ledger) {
    return run_training(m, zeta, D, cfg, nullptr, ledger);
}

}  // namespace pol
