#include "pol/metric.hpp"

#include <algorithm>
#include <cmath>

#include "pol/errors.hpp"

namespace pol {

double distance(std::span<const double> a, std::span<const double> b, Metric m) {
    if (a.size() != b.size()) throw ConfigError("distance: length mismatch");
    switch (m) {
        case Metric::l1: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
            return s;
        }
        case Metric::l2: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                s += d * d;
            }
            return std::sqrt(s);
        }
        case Metric::linf: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
            return s;
        }
        case Metric::cos: {
            double ab = 0.0, aa = 0.0, bb = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                ab += a[i] * b[i];
                aa += a[i] * a[i];
                bb += b[i] * b[i];
            }
            if (aa == 0.0 || bb == 0.0) throw ConfigError("cos distance undefined for zero vector");
            // Identical vectors must measure exactly 0; the quotient below
            // only reaches 1 − O(ulp) for them.
            if (std::equal(a.begin(), a.end(), b.begin())) return 0.0;
            return 1.0 - ab / (std::sqrt(aa) * std::sqrt(bb));
        }
    }
    throw ConfigError("distance: unknown metric");
}

const char* to_string(Metric m) {
    switch (m) {
        case Metric::l1: return "l1";
        case Metric::l2: return "l2";
        case Metric::linf: return "linf";
        case Metric::cos: return "cos";
    }
    return "?";
}

std::optional<Metric> metric_from_string(const std::string& s) {
    if (s == "l1") return Metric::l1;
    if (s == "l2") return Metric::l2;
    if (s == "linf") return Metric::linf;
    if (s == "cos") return Metric::cos;
    return std::nullopt;
}

}  // namespace pol
