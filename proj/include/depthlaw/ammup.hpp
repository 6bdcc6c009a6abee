#pragma once

#include <algorithm>

#include "depthlaw/sensitivity.hpp"

namespace depthlaw {

// Depthwise transfer exponent predicted by the scaling analysis.
inline constexpr double kDepthExponent = -1.5;

struct EtaStar {
    double value = 0.0;
    double s_bar_at_one = 0.0;
    double stderr = 0.0;  // propagated from the MC error of S_bar(1)
    int depth = 0;
};

// Solves S_bar(eta*) = 1. The linearized update is exactly linear in eta, so
// S_bar(eta) = eta^2 S_bar(1) and the solution is closed-form.
inline EtaStar solve_eta_star(const ArchSpec& spec, const LossSpec& loss,
                              const McParams& mc, uint64_t seed) {
    const SensitivityReport rep = layer_energy(spec, loss, 1.0, mc, seed);
    if (!(rep.s_bar > 0.0))
        throw DomainError("solve_eta_star: S_bar(1) is zero for this network");
    EtaStar out;
    out.s_bar_at_one = rep.s_bar;
    out.value = 1.0 / std::sqrt(rep.s_bar);
    out.stderr = 0.5 * std::pow(rep.s_bar, -1.5) * rep.s_bar_stderr;
    out.depth = spec.effective_depth();
    return out;
}

struct TransferRule {
    double eta0 = 0.0;
    int L0 = 1;
    double exponent = kDepthExponent;
};

inline double transfer_eta(const TransferRule& rule, int L) {
    if (rule.eta0 <= 0) throw DomainError("transfer: eta0 must be positive");
    if (rule.L0 < 1 || L < 1)
        throw DomainError("transfer: depths must be positive");
    return rule.eta0 * std::pow(double(L) / double(rule.L0), rule.exponent);
}

inline std::vector<std::pair<int, double>> predict_curve(
    const TransferRule& rule, std::vector<int> depths) {
    if (depths.empty()) throw DomainError("predict_curve: no depths");
    std::sort(depths.begin(), depths.end());
    std::vector<std::pair<int, double>> out;
    out.reserve(depths.size());
    for (int L : depths) out.push_back({L, transfer_eta(rule, L)});
    return out;
}

// ---------------------------------------------------------------------------
// Validation fallback: the same MC cells, but with a literal SGD step instead
// of the linearization, solved by bisection in log(eta). The literal map is
// only approximately quadratic in eta, so this is a cross-check, not the
// primary path.

inline double literal_mean_energy(const ArchSpec& spec_in, const LossSpec& loss,
                                  double eta, const McParams& mc,
                                  uint64_t seed) {
    ArchSpec spec = spec_in;
    spec.outputs = loss.output_dim;
    const int L = spec.effective_depth();
    const CellSampler sample = gaussian_cell_sampler(arch_input_dim(spec), loss);
    const Rng root(seed);
    std::vector<double> cell_mean(size_t(mc.n_init), 0.0);
    parallel_for(mc.n_init, mc.jobs, [&](int i) {
        Model m = build_model(spec, root.fork("init", i).next_u64());
        const ParamLayout lay = ParamLayout::of(m);
        const ParamVector theta = flatten_params(m, lay);
        Model stepped = m;
        for (int j = 0; j < mc.n_data; ++j) {
            const CellData cell = sample(root.fork("data", i, j), mc.batch);
            ParamVector t2 = theta;
            t2.axpy(-eta, loss_gradient(m, lay, cell.batch, loss));
            unflatten_params(stepped, lay, t2);
            const ActivationTrace before = forward(m, cell.x_eval);
            const ActivationTrace after = forward(stepped, cell.x_eval);
            double bar = 0.0;
            for (int l = 0; l < L; ++l) {
                double e = 0.0;
                for (size_t a = 0; a < before.pre[l].size(); ++a) {
                    const double d = after.pre[l][a] - before.pre[l][a];
                    e += d * d;
                }
                bar += e / double(before.pre[l].size());
            }
            cell_mean[i] += bar / L / mc.n_data;
        }
    });
    double s = 0.0;
    for (double c : cell_mean) s += c;
    return s / mc.n_init;
}

inline EtaStar solve_eta_star_literal(const ArchSpec& spec, const LossSpec& loss,
                                      const McParams& mc, uint64_t seed,
                                      double rel_tol = 1e-3) {
    const EtaStar lin = solve_eta_star(spec, loss, mc, seed);
    auto excess = [&](double eta) {
        try {
            return literal_mean_energy(spec, loss, eta, mc, seed) - 1.0;
        } catch (const NumericError&) {
            return kDivergence;  // diverged forward: treat as over budget
        }
    };
    double lo = lin.value / 8.0, hi = lin.value * 8.0;
    for (int i = 0; i < 8 && excess(lo) > 0; ++i) lo /= 8.0;
    for (int i = 0; i < 8 && excess(hi) < 0; ++i) hi *= 8.0;
    if (excess(lo) > 0 || excess(hi) < 0)
        throw DomainError("solve_eta_star_literal: could not bracket the root");
    while (hi / lo - 1.0 > rel_tol) {
        const double mid = std::sqrt(lo * hi);
        (excess(mid) > 0 ? hi : lo) = mid;
    }
    EtaStar out = lin;
    out.value = std::sqrt(lo * hi);
    return out;
}

}  // namespace depthlaw
