#pragma once

#include <cmath>

#include "depthlaw/tensor.hpp"

namespace depthlaw {

// LN(x) = gamma .* (x - mean(x)) / s(x) + beta,
// s(x) = sqrt(mean((x - mean(x))^2) + eps).

struct LnTokenCache {
    double s = 0.0;
    Vec xhat;  // (x - mean)/s
};

inline void ln_forward_token(const double* x, int d, const double* gamma,
                             const double* beta, double eps, double* y,
                             LnTokenCache* cache = nullptr) {
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += x[i];
    m /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        const double c = x[i] - m;
        var += c * c;
    }
    const double s = std::sqrt(var / d + eps);
    if (s == 0.0)
        throw NumericError("layernorm: zero normalizer (eps = 0 on constant input)");
    if (cache) {
        cache->s = s;
        cache->xhat.resize(d);
    }
    for (int i = 0; i < d; ++i) {
        const double xh = (x[i] - m) / s;
        if (cache) cache->xhat[i] = xh;
        y[i] = gamma[i] * xh + beta[i];
    }
}

inline Vec layernorm_forward(const Vec& x, const Vec& gamma, const Vec& beta,
                             double eps) {
    if (gamma.size() != x.size() || beta.size() != x.size())
        throw DomainError("layernorm: parameter size mismatch");
    if (eps < 0) throw DomainError("layernorm: eps must be >= 0");
    Vec y(x.size());
    ln_forward_token(x.data(), int(x.size()), gamma.data(), beta.data(), eps,
                     y.data());
    return y;
}

// Tangent of LN at a cached point: dy = gamma .* dxhat + dgamma .* xhat + dbeta
// with dxhat = (P dx - xhat <xhat, P dx>/d) / s and P the centering projection.
inline void ln_jvp_token(const LnTokenCache& c, const double* gamma,
                         const double* dx, const double* dgamma,
                         const double* dbeta, int d, double* dy) {
    double dm = 0.0;
    for (int i = 0; i < d; ++i) dm += dx[i];
    dm /= d;
    double h = 0.0;
    for (int i = 0; i < d; ++i) h += c.xhat[i] * (dx[i] - dm);
    h /= d;
    for (int i = 0; i < d; ++i) {
        const double dxh = ((dx[i] - dm) - c.xhat[i] * h) / c.s;
        dy[i] = gamma[i] * dxh + (dgamma ? dgamma[i] * c.xhat[i] : 0.0) +
                (dbeta ? dbeta[i] : 0.0);
    }
}

// Transpose of the tangent map; accumulates into xbar / gbar / bbar.
inline void ln_vjp_token(const LnTokenCache& c, const double* gamma,
                         const double* ybar, int d, double* xbar, double* gbar,
                         double* bbar) {
    if (gbar)
        for (int i = 0; i < d; ++i) gbar[i] += ybar[i] * c.xhat[i];
    if (bbar)
        for (int i = 0; i < d; ++i) bbar[i] += ybar[i];
    // hbar = gamma .* ybar; the xhat map (I - xhat xhat^T / d)/s and the
    // centering projection are both symmetric.
    double hdot = 0.0, hsum = 0.0;
    Vec hbar(d);
    for (int i = 0; i < d; ++i) {
        hbar[i] = gamma[i] * ybar[i];
        hdot += hbar[i] * c.xhat[i];
    }
    hdot /= d;
    Vec cbar(d);
    for (int i = 0; i < d; ++i) {
        cbar[i] = (hbar[i] - c.xhat[i] * hdot) / c.s;
        hsum += cbar[i];
    }
    hsum /= d;
    for (int i = 0; i < d; ++i) xbar[i] += cbar[i] - hsum;
}

// Full Jacobian matrix diag(gamma) (1/s) (I - 11^T/d - (Px)(Px)^T/(d s^2)).
inline std::vector<Vec> layernorm_jacobian(const Vec& x, const Vec& gamma,
                                           double eps) {
    const int d = int(x.size());
    if (int(gamma.size()) != d)
        throw DomainError("layernorm_jacobian: gamma size mismatch");
    if (eps < 0) throw DomainError("layernorm_jacobian: eps must be >= 0");
    double m = 0.0;
    for (double e : x) m += e;
    m /= d;
    double var = 0.0;
    for (double e : x) var += (e - m) * (e - m);
    const double s2 = var / d + eps;
    if (s2 == 0.0)
        throw NumericError("layernorm_jacobian: singular at constant input with eps = 0");
    const double s = std::sqrt(s2);
    std::vector<Vec> J(d, Vec(d, 0.0));
    for (int i = 0; i < d; ++i) {
        const double ci = x[i] - m;
        for (int j = 0; j < d; ++j) {
            const double cj = x[j] - m;
            double e = (i == j ? 1.0 : 0.0) - 1.0 / d - ci * cj / (d * s2);
            J[i][j] = gamma[i] * e / s;
        }
    }
    return J;
}

}  // namespace depthlaw
