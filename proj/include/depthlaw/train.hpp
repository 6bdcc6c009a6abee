#pragma once

#include <numeric>

#include "depthlaw/dataset.hpp"
#include "depthlaw/sensitivity.hpp"

namespace depthlaw {

enum class OptimizerKind { sgd, adam };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::sgd;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
};

enum class LossStatistic { last, epoch_mean, tail_mean };

namespace detail {

// Batch loss and gradient in a single pass over the samples.
inline double loss_and_gradient(const Model& m, const ParamLayout& lay,
                                const Batch& b, const LossSpec& loss,
                                ParamVector& grad) {
    const double inv_b = 1.0 / double(b.size());
    double acc = 0.0;
    for (size_t s = 0; s < b.size(); ++s) {
        const ForwardResult f = forward_cached(m, b.x[s]);
        acc += detail::sample_loss(loss, f.trace.out, b, s) * inv_b;
        Vec out_bar = detail::sample_loss_grad(loss, f.trace.out, b, s);
        scale(out_bar, inv_b);
        vjp_with_forward(m, f, lay, out_bar, grad);
    }
    return acc;
}

struct AdamState {
    ParamVector m, v;
    long t = 0;
};

inline void apply_step(Model& model, const ParamLayout& lay,
                       const ParamVector& grad, double eta,
                       const OptimizerSpec& opt, AdamState& adam) {
    auto update_tensor = [&](Tensor& w, size_t offset, const Vec& step) {
        for (size_t i = 0; i < w.size(); ++i) w.v[i] -= step[offset + i];
    };
    Vec step(lay.total);
    if (opt.kind == OptimizerKind::sgd) {
        for (size_t i = 0; i < lay.total; ++i) step[i] = eta * grad.v[i];
    } else {
        ++adam.t;
        const double bc1 = 1.0 - std::pow(opt.beta1, double(adam.t));
        const double bc2 = 1.0 - std::pow(opt.beta2, double(adam.t));
        for (size_t i = 0; i < lay.total; ++i) {
            adam.m.v[i] = opt.beta1 * adam.m.v[i] + (1 - opt.beta1) * grad.v[i];
            adam.v.v[i] =
                opt.beta2 * adam.v.v[i] + (1 - opt.beta2) * grad.v[i] * grad.v[i];
            step[i] = eta * (adam.m.v[i] / bc1) /
                      (std::sqrt(adam.v.v[i] / bc2) + opt.eps_adam);
        }
    }
    for (const auto& e : lay.entries) {
        Tensor& w = e.unit == model.depth() ? model.head.param(e.role)
                                            : model.units[e.unit].param(e.role);
        update_tensor(w, e.offset, step);
    }
}

}  // namespace detail

// One-epoch (by default) minibatch training; returns the chosen statistic of
// the per-step training losses, or +inf as the divergence sentinel the moment
// any loss is non-finite. Deterministic in (spec, dataset, eta, seed).
inline double train_one_epoch(const ArchSpec& spec_in, const SynthDataset& ds,
                              double eta, const OptimizerSpec& opt,
                              const LossSpec& loss, uint64_t seed,
                              int batch_size, int epochs = 1,
                              LossStatistic stat = LossStatistic::tail_mean) {
    if (batch_size < 1 || size_t(batch_size) > ds.size())
        throw DomainError("train: batch size must be in [1, dataset size]");
    ArchSpec spec = spec_in;
    spec.outputs = loss.output_dim;
    Model model = build_model(spec, Rng(seed).fork("init").next_u64());
    const ParamLayout lay = ParamLayout::of(model);
    detail::AdamState adam;
    if (opt.kind == OptimizerKind::adam) {
        adam.m = ParamVector::zeros(lay);
        adam.v = ParamVector::zeros(lay);
    }

    std::vector<double> step_losses;
    const int steps_per_epoch = int(ds.size()) / batch_size;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int> order(ds.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = Rng(seed).fork("order", epoch);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.below(i)]);
        for (int s = 0; s < steps_per_epoch; ++s) {
            std::vector<int> idx(order.begin() + size_t(s) * batch_size,
                                 order.begin() + size_t(s + 1) * batch_size);
            const Batch b = make_batch(ds, idx, loss);
            ParamVector grad = ParamVector::zeros(lay);
            double l;
            try {
                l = detail::loss_and_gradient(model, lay, b, loss, grad);
            } catch (const NumericError&) {
                return kDivergence;
            }
            if (!std::isfinite(l)) return kDivergence;
            step_losses.push_back(l);
            detail::apply_step(model, lay, grad, eta, opt, adam);
        }
    }
    if (step_losses.empty()) throw DomainError("train: no steps taken");
    switch (stat) {
        case LossStatistic::last: return step_losses.back();
        case LossStatistic::epoch_mean: {
            double s = 0.0;
            for (double l : step_losses) s += l;
            return s / double(step_losses.size());
        }
        case LossStatistic::tail_mean: {
            const size_t n = step_losses.size();
            const size_t tail = std::max<size_t>(1, (n + 3) / 4);  // last 25%
            double s = 0.0;
            for (size_t i = n - tail; i < n; ++i) s += step_losses[i];
            return s / double(tail);
        }
    }
    return step_losses.back();
}

}  // namespace depthlaw
