#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pol {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration that violates a documented invariant (bad widths, k not
// dividing S, batch schedule larger than the dataset, ...).
struct ConfigError : Error {
    using Error::Error;
};

// A bundle directory or manifest that cannot be interpreted. Maps to CLI
// exit code 3.
struct MalformedBundle : Error {
    using Error::Error;
};

// Adversarial optimization ran out of iterations before meeting its
// termination threshold. Expected and surfaced, never swallowed.
struct NonConvergence : Error {
    std::size_t iterations;
    double last_value;  // guard quantity at the final iterate
    NonConvergence(const std::string& what, std::size_t iters, double last)
        : Error(what), iterations(iters), last_value(last) {}
};

// Interpolated checkpoint spacing exceeds the verification threshold;
// the caller must raise T'.
struct SpacingExceedsDelta : Error {
    double spacing;
    double delta;
    std::size_t needed_steps;  // smallest T' that would satisfy the bound
    SpacingExceedsDelta(const std::string& what, double sp, double d, std::size_t need)
        : Error(what), spacing(sp), delta(d), needed_steps(need) {}
};

// Attack III safety margin does not dominate the Corollary-1 drift term.
struct SigmaTooSmall : Error {
    double sigma;
    double required;
    SigmaTooSmall(const std::string& what, double s, double req)
        : Error(what), sigma(s), required(req) {}
};

// max reproduction error >= d_ref: no threshold can separate honest replay
// noise from retraining distance.
struct CalibrationInfeasible : Error {
    using Error::Error;
};

}  // namespace pol
