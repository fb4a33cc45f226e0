#include "pol/model.hpp"

#include <algorithm>
#include <cmath>

#include "act_detail.hpp"
#include "pol/errors.hpp"
#include "pol/rng.hpp"

namespace pol {

std::vector<LayerShape> ModelSpec::layout() const {
    std::vector<LayerShape> ls;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
        ls.push_back({widths[l + 1], widths[l], use_bias});
    return ls;
}

void ModelSpec::validate() const {
    if (widths.size() < 2 || widths.size() > 4)
        throw ConfigError("model: need 1..3 affine layers (0..2 hidden)");
    for (std::size_t wdt : widths)
        if (wdt == 0) throw ConfigError("model: zero-width layer");
    for (std::size_t l = 1; l + 1 < widths.size(); ++l)
        if (widths[l] > 64) throw ConfigError("model: hidden layer wider than 64 units");
    if (loss == LossKind::softmax_cross_entropy && n_classes() < 2)
        throw ConfigError("model: cross-entropy needs at least 2 classes");
}

double layer_init_std(const ModelSpec& m, std::size_t l, const InitSpec& z) {
    return z.scale / std::sqrt(static_cast<double>(m.widths[l]));
}

WeightVector init_weights(const ModelSpec& m, const InitSpec& z) {
    m.validate();
    WeightVector w(m.layout());
    for (std::size_t l = 0; l < w.layers(); ++l) {
        // independent stream per layer: layer contents don't shift when
        // another layer's width changes
        auto st = rng::Stream::derive(z.seed, l);
        const double sd = layer_init_std(m, l, z);
        for (double& x : w.layer(l)) x = sd * st.next_normal();
    }
    return w;
}

void forward_logits(const ModelSpec& m, const WeightVector& w, const Matrix& X, Matrix& logits) {
    const std::size_t L = m.n_layers();
    logits = Matrix(X.rows, m.n_classes());
    std::vector<double> cur, nxt;
    for (std::size_t s = 0; s < X.rows; ++s) {
        cur.assign(X.row(s), X.row(s) + X.cols);
        for (std::size_t l = 0; l < L; ++l) {
            const auto& sh = w.layout[l];
            const auto W = w.weights(l);
            const auto B = w.bias(l);
            nxt.assign(sh.out, 0.0);
            for (std::size_t i = 0; i < sh.out; ++i) {
                double z = sh.bias ? B[i] : 0.0;
                const double* wr = W.data() + i * sh.in;
                for (std::size_t j = 0; j < sh.in; ++j) z += wr[j] * cur[j];
                nxt[i] = (l + 1 < L) ? detail::act_value(m.activation, z) : z;
            }
            cur.swap(nxt);
        }
        std::copy(cur.begin(), cur.end(), logits.row(s));
    }
}

EvalResult evaluate(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                    const std::vector<std::int64_t>& y) {
    Matrix logits;
    forward_logits(m, w, X, logits);
    const std::size_t C = m.n_classes();
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < X.rows; ++s) {
        const double* z = logits.row(s);
        const std::size_t lab = static_cast<std::size_t>(y[s]);
        if (C == 1) {
            // scalar regression: label is the target value
            const double d = z[0] - static_cast<double>(y[s]);
            loss += 0.5 * d * d;
            if (std::abs(d) < 0.5) ++correct;
            continue;
        }
        std::size_t arg = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (z[c] > z[arg]) arg = c;
        if (arg == lab) ++correct;
        if (m.loss == LossKind::softmax_cross_entropy) {
            double mx = z[0];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
            double se = 0.0;
            for (std::size_t c = 0; c < C; ++c) se += std::exp(z[c] - mx);
            loss += std::log(se) - (z[lab] - mx);
        } else {
            for (std::size_t c = 0; c < C; ++c) {
                const double t = (c == lab) ? 1.0 : 0.0;
                loss += 0.5 * (z[c] - t) * (z[c] - t);
            }
        }
    }
    const double n = static_cast<double>(X.rows);
    return {loss / n, static_cast<double>(correct) / n};
}

const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "softplus"; }
const char* to_string(LossKind l) {
    return l == LossKind::squared_error ? "squared_error" : "softmax_cross_entropy";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "softplus") return Activation::softplus;
    throw ConfigError("unknown activation '" + s + "' (tanh|softplus; C2 smoothness required)");
}

LossKind loss_from_string(const std::string& s) {
    if (s == "squared_error") return LossKind::squared_error;
    if (s == "softmax_cross_entropy") return LossKind::softmax_cross_entropy;
    throw ConfigError("unknown loss '" + s + "'");
}

}  // namespace pol
