#include "pol/ks.hpp"

#include <algorithm>
#include <cmath>

#include "pol/errors.hpp"

namespace pol {

namespace {
double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
}  // namespace

double ks_statistic_normal(std::span<const double> sample) {
    if (sample.empty()) throw ConfigError("ks: empty sample");
    std::vector<double> s(sample.begin(), sample.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = std_normal_cdf(s[i]);
        d = std::max(d, static_cast<double>(i + 1) / n - f);
        d = std::max(d, f - static_cast<double>(i) / n);
    }
    return d;
}

double ks_p_value(double d_stat, std::size_t n) {
    const double rn = std::sqrt(static_cast<double>(n));
    const double lambda = (rn + 0.12 + 0.11 / rn) * d_stat;
    if (lambda < 1e-3) return 1.0;
    double p = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * lambda * lambda * j * j);
        p += sign * term;
        sign = -sign;
        if (term < 1e-12) break;
    }
    return std::clamp(2.0 * p, 0.0, 1.0);
}

InitCheck verify_initialization(const ModelSpec& m, const InitSpec& zeta, const WeightVector& w0,
                                double alpha_sig) {
    if (w0.size() < 30) throw ConfigError("verify_initialization: need at least 30 params");
    InitCheck out;
    for (std::size_t l = 0; l < w0.layers(); ++l) {
        const double sd = layer_init_std(m, l, zeta);
        const auto block = w0.layer(l);
        std::vector<double> std_sample(block.size());
        for (std::size_t i = 0; i < block.size(); ++i) std_sample[i] = block[i] / sd;
        LayerKs lk;
        lk.layer = l;
        lk.n = block.size();
        lk.statistic = ks_statistic_normal(std_sample);
        lk.p_value = ks_p_value(lk.statistic, lk.n);
        out.min_p = std::min(out.min_p, lk.p_value);
        out.layers.push_back(lk);
    }
    out.pass = out.min_p >= alpha_sig;
    return out;
}

}  // namespace pol
