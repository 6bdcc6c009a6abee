#pragma once

#include <cmath>

#include "depthlaw/arch.hpp"
#include "depthlaw/rng.hpp"

namespace depthlaw {

// Standard normal pdf / cdf.
inline double norm_pdf(double x) {
    return std::exp(-0.5 * x * x) * 0.3989422804014326779;
}
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double act(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0 ? x : 0.0;
        case Activation::gelu: return x * norm_cdf(x);
        case Activation::identity: return x;
    }
    return x;
}

// Derivative; GELU uses the exact Phi-based form phi'(x) = Phi(x) + x pdf(x).
inline double dact(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0 ? 1.0 : 0.0;
        case Activation::gelu: return norm_cdf(x) + x * norm_pdf(x);
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

struct GatingEstimate {
    double q = 0.0;       // E[act'(Z)^2], Z ~ N(0,1)
    double stderr = 0.0;  // zero for the analytic cases
    long n_samples = 0;
};

// Gating factor q. ReLU and identity are returned analytically; GELU is a
// Monte Carlo mean with its standard error.
inline GatingEstimate gating_factor(Activation a, long n_samples, uint64_t seed) {
    if (n_samples < 1) throw DomainError("gating_factor: n_samples must be >= 1");
    if (a == Activation::relu) return {0.5, 0.0, 0};
    if (a == Activation::identity) return {1.0, 0.0, 0};
    Rng rng = Rng(seed).fork("gating");
    double sum = 0.0, sumsq = 0.0;
    for (long i = 0; i < n_samples; ++i) {
        const double d = dact(a, rng.normal());
        const double v = d * d;
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / double(n_samples);
    const double var = std::max(0.0, sumsq / double(n_samples) - mean * mean);
    return {mean, std::sqrt(var / double(n_samples)), n_samples};
}

// q used by the fan-in initialization rule for a given activation.
inline double init_gating(Activation a) {
    switch (a) {
        case Activation::relu: return 0.5;
        case Activation::identity: return 1.0;
        case Activation::gelu:
            // E[phi'(Z)^2] for exact GELU, computed once by quadrature; a
            // fixed constant keeps initialization deterministic.
            return 0.4558508656;
    }
    return 1.0;
}

}  // namespace depthlaw
