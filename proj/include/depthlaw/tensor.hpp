#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "depthlaw/common.hpp"

namespace depthlaw {

using Vec = std::vector<double>;

struct Tensor {
    std::vector<int> shape;
    Vec v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel(shape), 0.0);
    }

    static size_t numel(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= size_t(d);
        return n;
    }
    size_t size() const { return v.size(); }
    double& operator[](size_t i) { return v[i]; }
    double operator[](size_t i) const { return v[i]; }
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double c, const Vec& x, Vec& y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline void scale(Vec& x, double c) {
    for (double& e : x) e *= c;
}

inline double norm2(const Vec& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    return s;
}

// y = W x, W row-major (rows x cols).
inline void matvec(const double* W, int rows, int cols, const double* x,
                   double* y) {
    for (int r = 0; r < rows; ++r) {
        const double* w = W + size_t(r) * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += w[c] * x[c];
        y[r] = s;
    }
}

// y += W^T x.
inline void matvec_t_acc(const double* W, int rows, int cols, const double* x,
                         double* y) {
    for (int r = 0; r < rows; ++r) {
        const double* w = W + size_t(r) * cols;
        const double xr = x[r];
        for (int c = 0; c < cols; ++c) y[c] += w[c] * xr;
    }
}

// W += outer(a, b), a length rows, b length cols.
inline void outer_acc(const double* a, int rows, const double* b, int cols,
                      double* W) {
    for (int r = 0; r < rows; ++r) {
        double* w = W + size_t(r) * cols;
        const double ar = a[r];
        for (int c = 0; c < cols; ++c) w[c] += ar * b[c];
    }
}

inline bool all_finite(const Vec& x) {
    for (double e : x)
        if (!std::isfinite(e)) return false;
    return true;
}

}  // namespace depthlaw
