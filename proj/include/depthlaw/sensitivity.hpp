#pragma once

#include <functional>
#include <vector>

#include "depthlaw/loss.hpp"
#include "depthlaw/parallel.hpp"

namespace depthlaw {

// ---------------------------------------------------------------------------
// Linearized one-step update of pre-activations:
//   dz^(l) = -eta * J_theta z^(l) . grad_theta L_B.

struct DeltaZ {
    std::vector<Vec> pre;  // dz^(l), l = 1..L
    Vec out;               // dz^(L+1)
};

inline DeltaZ delta_z_linearized_at(const Model& m, const ParamLayout& lay,
                                    const Batch& batch, double eta,
                                    const LossSpec& loss, const Vec& x_eval) {
    if (eta < 0) throw DomainError("delta_z: eta must be >= 0");
    ParamVector grad = loss_gradient(m, lay, batch, loss);
    const ForwardResult f = forward_cached(m, x_eval);
    TangentTrace tt = jvp_with_forward(m, f, lay, grad);
    DeltaZ dz;
    dz.pre = std::move(tt.pre);
    dz.out = std::move(tt.out);
    for (auto& z : dz.pre) scale(z, -eta);
    scale(dz.out, -eta);
    return dz;
}

inline DeltaZ delta_z_linearized(const Model& m, const ParamLayout& lay,
                                 const Batch& batch, double eta,
                                 const LossSpec& loss) {
    if (batch.size() == 0) throw DomainError("delta_z: empty batch");
    return delta_z_linearized_at(m, lay, batch, eta, loss, batch.x[0]);
}

// ---------------------------------------------------------------------------
// Layerwise update energies S_l(eta) and the AM budget S_bar.

struct McParams {
    int n_init = 64;
    int n_data = 8;
    int batch = 128;
    int jobs = 1;
};

struct LayerEnergy {
    int l = 0;
    double value = 0.0;
    double stderr = 0.0;
};

struct SensitivityReport {
    double eta = 0.0;
    int batch = 0;
    std::vector<LayerEnergy> layers;  // l = 1..L
    double s_bar = 0.0;
    double s_bar_stderr = 0.0;
    int n_init = 0;
    int n_data = 0;
    uint64_t seed = 0;
};

// One MC cell: a minibatch for the gradient plus an evaluation input; the
// default draws standard-normal inputs, N(0, sigma_y^2) regression targets,
// and uniform class labels.
struct CellData {
    Batch batch;
    Vec x_eval;
};

using CellSampler = std::function<CellData(Rng, int /*B*/)>;

inline CellSampler gaussian_cell_sampler(int input_dim, const LossSpec& loss) {
    const double sd = std::sqrt(loss.label_variance);
    const int M = loss.output_dim;
    return [input_dim, sd, M, kind = loss.kind](Rng rng, int B) {
        CellData cell;
        Rng rx = rng.fork("x");
        Rng ry = rng.fork("y");
        for (int s = 0; s < B; ++s) {
            Vec x(input_dim);
            for (auto& e : x) e = rx.normal();
            cell.batch.x.push_back(std::move(x));
            Vec y(M, 0.0);
            if (kind == LossKind::mse)
                for (auto& e : y) e = sd * ry.normal();
            cell.batch.y.push_back(std::move(y));
            cell.batch.label.push_back(int(ry.below(uint64_t(M))));
        }
        cell.x_eval.resize(input_dim);
        for (auto& e : cell.x_eval) e = rx.normal();
        return cell;
    };
}

// Monte Carlo estimate of S_l(eta) = E[(Delta_B z_i^(l))^2], averaged over
// fresh initializations, data draws, and coordinates. Standard errors are
// computed across per-initialization means (draws within one initialization
// share weights and are not independent).
inline SensitivityReport layer_energy(const ArchSpec& spec_in,
                                      const LossSpec& loss, double eta,
                                      const McParams& mc, uint64_t seed,
                                      const CellSampler* sampler = nullptr) {
    if (mc.n_init < 1 || mc.n_data < 1 || mc.batch < 1)
        throw DomainError("layer_energy: MC sizes must be >= 1");
    loss.validate();
    ArchSpec spec = spec_in;
    spec.outputs = loss.output_dim;
    const int L = spec.effective_depth();
    const CellSampler sample =
        sampler ? *sampler : gaussian_cell_sampler(arch_input_dim(spec), loss);

    // per-init, per-layer means; reduced sequentially afterwards
    std::vector<double> init_means(size_t(mc.n_init) * L, 0.0);
    const Rng root(seed);
    parallel_for(mc.n_init, mc.jobs, [&](int i) {
        const Model m = build_model(spec, root.fork("init", i).next_u64());
        const ParamLayout lay = ParamLayout::of(m);
        for (int j = 0; j < mc.n_data; ++j) {
            CellData cell = sample(root.fork("data", i, j), mc.batch);
            DeltaZ dz;
            try {
                dz = delta_z_linearized_at(m, lay, cell.batch, eta, loss,
                                           cell.x_eval);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (init stream " +
                                   std::to_string(i) + " of seed " +
                                   std::to_string(seed) + ")");
            }
            for (int l = 0; l < L; ++l)
                init_means[size_t(i) * L + l] +=
                    norm2(dz.pre[l]) / double(dz.pre[l].size()) / mc.n_data;
        }
    });

    SensitivityReport rep;
    rep.eta = eta;
    rep.batch = mc.batch;
    rep.n_init = mc.n_init;
    rep.n_data = mc.n_data;
    rep.seed = seed;
    rep.layers.resize(L);
    Vec bar_per_init(mc.n_init, 0.0);
    for (int l = 0; l < L; ++l) {
        double mean = 0.0;
        for (int i = 0; i < mc.n_init; ++i)
            mean += init_means[size_t(i) * L + l];
        mean /= mc.n_init;
        double var = 0.0;
        for (int i = 0; i < mc.n_init; ++i) {
            const double d = init_means[size_t(i) * L + l] - mean;
            var += d * d;
        }
        var = mc.n_init > 1 ? var / (mc.n_init - 1) : 0.0;
        rep.layers[l] = {l + 1, mean, std::sqrt(var / mc.n_init)};
    }
    for (int i = 0; i < mc.n_init; ++i) {
        double s = 0.0;
        for (int l = 0; l < L; ++l) s += init_means[size_t(i) * L + l];
        bar_per_init[i] = s / L;
    }
    double bar = 0.0;
    for (double b : bar_per_init) bar += b;
    bar /= mc.n_init;
    double bvar = 0.0;
    for (double b : bar_per_init) bvar += (b - bar) * (b - bar);
    bvar = mc.n_init > 1 ? bvar / (mc.n_init - 1) : 0.0;
    rep.s_bar = bar;
    rep.s_bar_stderr = std::sqrt(bvar / mc.n_init);
    return rep;
}

inline SensitivityReport layer_energy(const ArchSpec& spec, const LossSpec& loss,
                                      double eta, int n_init, int n_data, int B,
                                      uint64_t seed) {
    return layer_energy(spec, loss, eta, McParams{n_init, n_data, B, 1}, seed);
}

// Exact arithmetic mean of the S_l (Eq. for the AM budget).
inline double mean_energy(const SensitivityReport& rep) {
    const int L = int(rep.layers.size());
    if (L == 0) throw DomainError("mean_energy: no layers");
    for (int l = 0; l < L; ++l)
        if (rep.layers[l].l != l + 1)
            throw DomainError("mean_energy: missing layer " + std::to_string(l + 1));
    double s = 0.0;
    for (const auto& e : rep.layers) s += e.value;
    return s / L;
}

// ---------------------------------------------------------------------------
// Averaged Jacobian overlap T_h(mu1, mu2) = (1/M_h) sum_a d1_a d2_a, h <= L+1.

inline double overlap_T(const Model& m, const ParamLayout& lay, int h,
                        const ParamVector& mu1, const ParamVector& mu2,
                        const Vec& x) {
    if (h < 1 || h > m.depth() + 1)
        throw DomainError("overlap_T: depth out of range");
    const ForwardResult f = forward_cached(m, x);
    const TangentTrace t1 = jvp_with_forward(m, f, lay, mu1);
    const TangentTrace t2 = jvp_with_forward(m, f, lay, mu2);
    const Vec& a = h <= m.depth() ? t1.pre[h - 1] : t1.out;
    const Vec& b = h <= m.depth() ? t2.pre[h - 1] : t2.out;
    return dot(a, b) / double(a.size());
}

// ---------------------------------------------------------------------------
// A/B decomposition of E_y[(Delta z^(l))^2] under the MSE label model
// (y zero-mean, coordinate-independent, variance sigma_y^2): the label-
// diagonal part B carries sigma_y^2 and the top-layer overlaps; A carries the
// network's own output term. Both are exact sums over every pair of
// parameter directions, evaluated through the factorized per-direction sums.

struct AbDecomposition {
    std::vector<double> A;      // per depth, coordinate-averaged
    std::vector<double> B;
    std::vector<double> total;  // A + B
};

inline AbDecomposition ab_decomposition(const Model& m, const ParamLayout& lay,
                                        const Vec& x, double eta,
                                        const LossSpec& loss) {
    if (loss.kind != LossKind::mse)
        throw DomainError("ab_decomposition: defined for the MSE label model");
    if (lay.total > 10000)
        throw CapacityError("ab_decomposition: parameter count " +
                            std::to_string(lay.total) + " exceeds 10^4");
    const int L = m.depth();
    const int M = m.output_dim();
    const ForwardResult f = forward_cached(m, x);

    // G[l](a, t) = sum_mu dz^(l)_a/dmu * dz^(L+1)_t/dmu.
    std::vector<Vec> G(L);
    for (int l = 0; l < L; ++l)
        G[l].assign(f.trace.pre[l].size() * size_t(M), 0.0);

    ParamVector dir = ParamVector::zeros(lay);
    for (size_t mu = 0; mu < lay.total; ++mu) {
        dir.v[mu] = 1.0;
        const TangentTrace tt = jvp_with_forward(m, f, lay, dir);
        dir.v[mu] = 0.0;
        for (int l = 0; l < L; ++l) {
            const Vec& dz = tt.pre[l];
            Vec& g = G[l];
            for (size_t a = 0; a < dz.size(); ++a) {
                if (dz[a] == 0.0) continue;
                const double da = dz[a];
                for (int t = 0; t < M; ++t)
                    g[a * M + t] += da * tt.out[t];
            }
        }
    }

    AbDecomposition out;
    out.A.assign(L, 0.0);
    out.B.assign(L, 0.0);
    out.total.assign(L, 0.0);
    const double c = eta * eta / double(M) / double(M);
    for (int l = 0; l < L; ++l) {
        const size_t Ml = f.trace.pre[l].size();
        double A = 0.0, B = 0.0;
        for (size_t a = 0; a < Ml; ++a) {
            double zg = 0.0, gg = 0.0;
            for (int t = 0; t < M; ++t) {
                const double g = G[l][a * M + t];
                zg += f.trace.out[t] * g;
                gg += g * g;
            }
            A += c * zg * zg;
            B += c * loss.label_variance * gg;
        }
        out.A[l] = A / double(Ml);
        out.B[l] = B / double(Ml);
        out.total[l] = out.A[l] + out.B[l];
    }
    return out;
}

}  // namespace depthlaw
