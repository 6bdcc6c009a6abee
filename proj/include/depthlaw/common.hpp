#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace depthlaw {

// Error taxonomy. Config/domain problems are caller mistakes; structural means
// an invalid graph; numeric means a non-finite value surfaced mid-computation;
// capacity guards the exact-enumeration code paths.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kDivergence = std::numeric_limits<double>::infinity();

// Relative comparison with an absolute floor so tolerances stay meaningful
// near zero (floor 1e-12 unless stated otherwise by a caller).
inline bool close_rel(double a, double b, double rel, double floor = 1e-12) {
    const double scale = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) <= rel * scale;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DomainError(msg);
}

}  // namespace depthlaw
