#pragma once

#include <vector>

#include "depthlaw/autodiff.hpp"
#include "depthlaw/model.hpp"

namespace depthlaw {

enum class LossKind { mse, cross_entropy };

struct LossSpec {
    LossKind kind = LossKind::mse;
    int output_dim = 1;           // M_{L+1}
    double label_variance = 1.0;  // sigma_y^2 (mse label model)

    void validate() const {
        if (output_dim < 1) throw DomainError("loss: output_dim must be >= 1");
        if (label_variance < 0)
            throw DomainError("loss: label variance must be >= 0");
    }
};

// A batch holds inputs plus either regression targets (mse) or class labels
// (cross entropy).
struct Batch {
    std::vector<Vec> x;
    std::vector<Vec> y;        // mse targets, size output_dim each
    std::vector<int> label;    // ce labels

    size_t size() const { return x.size(); }
};

namespace detail {

inline double sample_loss(const LossSpec& loss, const Vec& out, const Batch& b,
                          size_t s) {
    const int M = int(out.size());
    if (loss.kind == LossKind::mse) {
        double acc = 0.0;
        for (int t = 0; t < M; ++t) {
            const double g = out[t] - b.y[s][t];
            acc += g * g;
        }
        return acc / (2.0 * M);
    }
    // Cross entropy with a stable log-sum-exp.
    double mx = out[0];
    for (int t = 1; t < M; ++t) mx = std::max(mx, out[t]);
    double lse = 0.0;
    for (int t = 0; t < M; ++t) lse += std::exp(out[t] - mx);
    return std::log(lse) + mx - out[b.label[s]];
}

// dL_s/dout (per sample, before the 1/B batch factor).
inline Vec sample_loss_grad(const LossSpec& loss, const Vec& out,
                            const Batch& b, size_t s) {
    const int M = int(out.size());
    Vec g(M);
    if (loss.kind == LossKind::mse) {
        for (int t = 0; t < M; ++t) g[t] = (out[t] - b.y[s][t]) / M;
        return g;
    }
    double mx = out[0];
    for (int t = 1; t < M; ++t) mx = std::max(mx, out[t]);
    double sum = 0.0;
    for (int t = 0; t < M; ++t) {
        g[t] = std::exp(out[t] - mx);
        sum += g[t];
    }
    for (int t = 0; t < M; ++t) g[t] /= sum;
    g[b.label[s]] -= 1.0;
    return g;
}

}  // namespace detail

// Mean training loss over the batch. Non-finite values are returned as-is;
// divergence handling is the caller's policy.
inline double loss_value(const Model& m, const Batch& b, const LossSpec& loss) {
    if (b.size() == 0) throw DomainError("loss: empty batch");
    double acc = 0.0;
    for (size_t s = 0; s < b.size(); ++s) {
        const ActivationTrace tr = forward(m, b.x[s]);
        acc += detail::sample_loss(loss, tr.out, b, s);
    }
    return acc / double(b.size());
}

// Mean-reduced parameter gradient of the batch loss.
inline ParamVector loss_gradient(const Model& m, const ParamLayout& lay,
                                 const Batch& b, const LossSpec& loss) {
    if (b.size() == 0) throw DomainError("loss_gradient: empty batch");
    ParamVector grad = ParamVector::zeros(lay);
    const double inv_b = 1.0 / double(b.size());
    for (size_t s = 0; s < b.size(); ++s) {
        const ForwardResult f = forward_cached(m, b.x[s]);
        const double ls = detail::sample_loss(loss, f.trace.out, b, s);
        if (!std::isfinite(ls))
            throw NumericError("loss_gradient: non-finite loss");
        Vec out_bar = detail::sample_loss_grad(loss, f.trace.out, b, s);
        scale(out_bar, inv_b);
        vjp_with_forward(m, f, lay, out_bar, grad);
    }
    return grad;
}

}  // namespace depthlaw
