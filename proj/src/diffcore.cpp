#include "pol/diffcore.hpp"

#include <algorithm>
#include <cmath>

#include "act_detail.hpp"
#include "pol/errors.hpp"
#include "pol/rng.hpp"

// Second-order machinery, in one place.
//
// Forward / backward per sample (z-values of layer l live at index l,
// a[0] is the possibly-perturbed input, a[L] the logits):
//   z_l = W_l a_{l-1} + b_l,  a_l = φ(z_l) for l < L
//   δ_L = head'(z_L)/b,  s_l = W_{l+1}^T δ_{l+1},  δ_l = s_l ⊙ φ'(z_l)
//   g   = Σ_samples { δ_l a_{l-1}^T, δ_l }
//
// The attack objectives are scalars of the form ψ = v·g with a fixed
// weight-shaped vector v (v = g/‖g‖ for the gradient-norm objective, a
// scaled difference vector for the target-distance one). ∂ψ/∂x follows
// from reverse-mode through the backward pass itself; with V_l, c_l the
// blocks of v:
//   ascent  (δ̄_l = ∂ψ/∂δ_l):
//     δ̄_1 = V_1 a_0 + c_1
//     δ̄_l = V_l a_{l-1} + c_l + W_l (δ̄_{l-1} ⊙ φ'(z_{l-1}))
//   descent:
//     z̄_L = H_head δ̄_L / b     (CE: diag(p) − p p^T; SE: identity)
//     ā_l = V_{l+1}^T δ_{l+1} + W_{l+1}^T z̄_{l+1}
//     z̄_l = ā_l ⊙ φ'(z_l) + δ̄_l ⊙ s_l ⊙ φ''(z_l)
//     x̄   = V_1^T δ_1 + W_1^T z̄_1
// All δ, s, z̄ carry the 1/b batch factor; δ̄ does not. Verified against
// central finite differences in the tests.

namespace pol {

namespace {

struct Tape {
    std::vector<std::vector<double>> a;      // a[0..L]
    std::vector<std::vector<double>> phi1;   // phi1[1..L-1]
    std::vector<std::vector<double>> delta;  // delta[1..L]
    std::vector<std::vector<double>> s;      // s[1..L-1]
    std::vector<double> p;                   // softmax probs (CE)
};

void check_batch(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                 const std::vector<std::int64_t>& y) {
    if (X.cols != m.input_dim()) throw ConfigError("batch width != model input dim");
    if (y.size() != X.rows) throw ConfigError("label count != batch size");
    if (w.size() != m.dim()) throw ConfigError("weight vector size != model dim");
    if (X.rows == 0) throw ConfigError("empty batch");
}

// One sample's forward + backward; accumulates into g; returns the
// (unscaled) per-sample loss. δ entries carry the 1/b factor.
double forward_backward(const ModelSpec& m, const WeightVector& w, const double* x,
                        const double* r, std::int64_t label, double inv_b,
                        std::vector<double>& g, Tape& t) {
    const std::size_t L = m.n_layers();
    t.a.resize(L + 1);
    t.phi1.resize(L + 1);
    t.delta.resize(L + 1);
    t.s.resize(L + 1);

    t.a[0].resize(m.input_dim());
    for (std::size_t j = 0; j < m.input_dim(); ++j) t.a[0][j] = x[j] + (r ? r[j] : 0.0);

    for (std::size_t l = 1; l <= L; ++l) {
        const auto& sh = w.layout[l - 1];
        const auto W = w.weights(l - 1);
        const auto B = w.bias(l - 1);
        const auto& prev = t.a[l - 1];
        t.a[l].resize(sh.out);
        if (l < L) t.phi1[l].resize(sh.out);
        for (std::size_t i = 0; i < sh.out; ++i) {
            double z = sh.bias ? B[i] : 0.0;
            const double* wr = W.data() + i * sh.in;
            for (std::size_t j = 0; j < sh.in; ++j) z += wr[j] * prev[j];
            if (l < L) {
                const double av = detail::act_value(m.activation, z);
                t.a[l][i] = av;
                t.phi1[l][i] = detail::act_prime(m.activation, z, av);
            } else {
                t.a[l][i] = z;
            }
        }
    }

    // loss head
    const std::size_t C = m.n_classes();
    const auto& zL = t.a[L];
    const auto lab = static_cast<std::size_t>(label);
    double loss_s = 0.0;
    t.delta[L].resize(C);
    if (C == 1) {
        // scalar squared error; the label is the real-valued target
        const double d = zL[0] - static_cast<double>(label);
        loss_s = 0.5 * d * d;
        t.delta[L][0] = d * inv_b;
    } else if (m.loss == LossKind::softmax_cross_entropy) {
        double mx = zL[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, zL[c]);
        double se = 0.0;
        t.p.resize(C);
        for (std::size_t c = 0; c < C; ++c) {
            t.p[c] = std::exp(zL[c] - mx);
            se += t.p[c];
        }
        for (std::size_t c = 0; c < C; ++c) t.p[c] /= se;
        loss_s = std::log(se) - (zL[lab] - mx);
        for (std::size_t c = 0; c < C; ++c)
            t.delta[L][c] = (t.p[c] - (c == lab ? 1.0 : 0.0)) * inv_b;
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            const double d = zL[c] - (c == lab ? 1.0 : 0.0);
            loss_s += 0.5 * d * d;
            t.delta[L][c] = d * inv_b;
        }
    }

    // backward through hidden layers
    for (std::size_t l = L - 1; l >= 1; --l) {
        const auto& sh = w.layout[l];  // layer l+1 in math indexing
        const auto W = w.weights(l);
        t.s[l].assign(sh.in, 0.0);
        for (std::size_t i = 0; i < sh.out; ++i) {
            const double di = t.delta[l + 1][i];
            const double* wr = W.data() + i * sh.in;
            for (std::size_t j = 0; j < sh.in; ++j) t.s[l][j] += wr[j] * di;
        }
        t.delta[l].resize(sh.in);
        for (std::size_t j = 0; j < sh.in; ++j) t.delta[l][j] = t.s[l][j] * t.phi1[l][j];
    }

    // accumulate gradient blocks
    for (std::size_t l = 1; l <= L; ++l) {
        const auto& sh = w.layout[l - 1];
        const std::size_t off = w.layer_offset(l - 1);
        double* Gw = g.data() + off;
        double* Gb = g.data() + off + sh.out * sh.in;
        const auto& prev = t.a[l - 1];
        for (std::size_t i = 0; i < sh.out; ++i) {
            const double di = t.delta[l][i];
            double* gr = Gw + i * sh.in;
            for (std::size_t j = 0; j < sh.in; ++j) gr[j] += di * prev[j];
            if (sh.bias) Gb[i] += di;
        }
    }
    return loss_s;
}

// ∂(v·g_sample)/∂x for one sample, given its tape. Output added into xbar.
void second_sweep(const ModelSpec& m, const WeightVector& w, const std::vector<double>& v,
                  const Tape& t, double inv_b, std::vector<double>& xbar) {
    const std::size_t L = m.n_layers();
    auto vw = [&](std::size_t l) {
        return std::span<const double>(v.data() + w.layer_offset(l),
                                       w.layout[l].out * w.layout[l].in);
    };
    auto vb = [&](std::size_t l) {
        return std::span<const double>(
            v.data() + w.layer_offset(l) + w.layout[l].out * w.layout[l].in, w.layout[l].out);
    };

    // ascent: δ̄
    std::vector<std::vector<double>> dbar(L + 1);
    for (std::size_t l = 1; l <= L; ++l) {
        const auto& sh = w.layout[l - 1];
        const auto V = vw(l - 1);
        const auto c = vb(l - 1);
        const auto& prev = t.a[l - 1];
        dbar[l].resize(sh.out);
        std::vector<double> tmp;
        if (l >= 2) {
            tmp.resize(sh.in);
            for (std::size_t j = 0; j < sh.in; ++j) tmp[j] = dbar[l - 1][j] * t.phi1[l - 1][j];
        }
        const auto W = w.weights(l - 1);
        for (std::size_t i = 0; i < sh.out; ++i) {
            double acc = sh.bias ? c[i] : 0.0;
            const double* vr = V.data() + i * sh.in;
            for (std::size_t j = 0; j < sh.in; ++j) acc += vr[j] * prev[j];
            if (l >= 2) {
                const double* wr = W.data() + i * sh.in;
                for (std::size_t j = 0; j < sh.in; ++j) acc += wr[j] * tmp[j];
            }
            dbar[l][i] = acc;
        }
    }

    // descent: z̄ through the head…
    const std::size_t C = m.n_classes();
    std::vector<double> zbar(C);
    if (m.loss == LossKind::softmax_cross_entropy && C > 1) {
        double pq = 0.0;
        for (std::size_t c = 0; c < C; ++c) pq += t.p[c] * dbar[L][c];
        for (std::size_t c = 0; c < C; ++c) zbar[c] = inv_b * t.p[c] * (dbar[L][c] - pq);
    } else {
        for (std::size_t c = 0; c < C; ++c) zbar[c] = inv_b * dbar[L][c];
    }

    // …then down through the hidden layers
    for (std::size_t l = L - 1; l >= 1; --l) {
        const auto& sh = w.layout[l];  // layer l+1
        const auto V = vw(l);
        const auto W = w.weights(l);
        std::vector<double> abar(sh.in, 0.0);
        for (std::size_t i = 0; i < sh.out; ++i) {
            const double di = t.delta[l + 1][i];
            const double zi = zbar[i];
            const double* vr = V.data() + i * sh.in;
            const double* wr = W.data() + i * sh.in;
            for (std::size_t j = 0; j < sh.in; ++j) abar[j] += vr[j] * di + wr[j] * zi;
        }
        std::vector<double> znext(sh.in);
        for (std::size_t j = 0; j < sh.in; ++j) {
            const double phi2 = detail::act_second(m.activation, t.a[l][j], t.phi1[l][j]);
            znext[j] = abar[j] * t.phi1[l][j] + dbar[l][j] * t.s[l][j] * phi2;
        }
        zbar.swap(znext);
    }

    // input adjoint
    const auto& sh = w.layout[0];
    const auto V = vw(0);
    const auto W = w.weights(0);
    for (std::size_t i = 0; i < sh.out; ++i) {
        const double di = t.delta[1][i];
        const double zi = zbar[i];
        const double* vr = V.data() + i * sh.in;
        const double* wr = W.data() + i * sh.in;
        for (std::size_t j = 0; j < sh.in; ++j) xbar[j] += vr[j] * di + wr[j] * zi;
    }
}

}  // namespace

void inject_noise(GradientVector& g, const NoiseModel& nm, std::uint64_t step) {
    if (nm.amplitude == 0.0) return;  // exact no-noise path, bit for bit
    auto st = rng::Stream::derive(nm.seed, step);
    for (double& x : g.values) x += nm.amplitude * st.next_normal();
}

LossGrad loss_grad(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                   const std::vector<std::int64_t>& y, CostLedger* ledger) {
    check_batch(m, w, X, y);
    const double inv_b = 1.0 / static_cast<double>(X.rows);
    LossGrad out;
    out.grad = GradientVector(w.size());
    Tape t;  // reused across samples
    double loss = 0.0;
    for (std::size_t s = 0; s < X.rows; ++s)
        loss += forward_backward(m, w, X.row(s), nullptr, y[s], inv_b, out.grad.values, t);
    out.loss = loss * inv_b;
    if (ledger) ledger->add_loss_grad();
    return out;
}

void sgd_update_inplace(WeightVector& w, const GradientVector& g, double eta) {
    if (g.size() != w.size()) throw ConfigError("gradient/weight size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) w.values[i] -= eta * g.values[i];
}

WeightVector sgd_update(const WeightVector& w, const GradientVector& g, double eta) {
    WeightVector out = w;
    sgd_update_inplace(out, g, eta);
    return out;
}

InputObjective input_objective_grad(const ModelSpec& m, const WeightVector& w, const Matrix& X,
                                    const Matrix& R, const std::vector<std::int64_t>& y,
                                    const ObjectiveSpec& obj, CostLedger* ledger) {
    check_batch(m, w, X, y);
    if (R.rows != X.rows || R.cols != X.cols) throw ConfigError("R shape != batch shape");
    if (obj.kind == ObjectiveKind::target_distance && obj.target == nullptr)
        throw ConfigError("target_distance objective needs a target weight vector");

    const std::size_t b = X.rows;
    const double inv_b = 1.0 / static_cast<double>(b);

    InputObjective out;
    out.inner_grad = GradientVector(w.size());
    std::vector<Tape> tapes(b);
    for (std::size_t s = 0; s < b; ++s)
        forward_backward(m, w, X.row(s), R.row(s), y[s], inv_b, out.inner_grad.values, tapes[s]);

    const auto& g = out.inner_grad.values;
    out.inner_grad_norm = l2_norm(g);

    // v = ∂objective/∂g, and the objective's core value
    std::vector<double> v(w.size(), 0.0);
    double core = 0.0;
    if (obj.kind == ObjectiveKind::grad_norm) {
        core = out.inner_grad_norm;
        if (core > 0.0)
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = g[i] / core;
    } else {
        std::vector<double> u(w.size());
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = w.values[i] - obj.eta * g[i] - obj.target->values[i];
        core = l2_norm(u);
        if (core > 0.0)
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = -obj.eta * u[i] / core;
    }

    const double rn = l2_norm(R.v);
    out.value = core + obj.lambda * rn;

    out.r_grad = Matrix(b, X.cols);
    std::vector<double> xbar(X.cols);
    for (std::size_t s = 0; s < b; ++s) {
        std::fill(xbar.begin(), xbar.end(), 0.0);
        second_sweep(m, w, v, tapes[s], inv_b, xbar);
        double* gr = out.r_grad.row(s);
        const double* rr = R.row(s);
        for (std::size_t j = 0; j < X.cols; ++j)
            gr[j] = xbar[j] + (rn > 0.0 ? obj.lambda * rr[j] / rn : 0.0);
    }

    if (ledger) ledger->add_input_grad();
    return out;
}

}  // namespace pol
