#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

namespace pol {

enum class Metric { l1, l2, linf, cos };

inline constexpr std::array<Metric, 4> kAllMetrics{Metric::l1, Metric::l2, Metric::linf,
                                                   Metric::cos};

// l1/l2/linf are norms of (a−b); cos is 1 − a·b/(‖a‖‖b‖) and is only
// defined for nonzero vectors (throws otherwise).
double distance(std::span<const double> a, std::span<const double> b, Metric m);

const char* to_string(Metric m);
std::optional<Metric> metric_from_string(const std::string& s);

}  // namespace pol
