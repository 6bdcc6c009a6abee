#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "depthlaw/activation.hpp"
#include "depthlaw/arch.hpp"
#include "depthlaw/layernorm.hpp"
#include "depthlaw/rng.hpp"
#include "depthlaw/tensor.hpp"

namespace depthlaw {

enum class Role : int {
    weight = 0,
    wq,
    wk,
    wv,
    wo,
    w1,
    w2,
    ln_gamma,
    ln_beta,
};

inline const char* to_string(Role r) {
    switch (r) {
        case Role::weight: return "weight";
        case Role::wq: return "wq";
        case Role::wk: return "wk";
        case Role::wv: return "wv";
        case Role::wo: return "wo";
        case Role::w1: return "w1";
        case Role::w2: return "w2";
        case Role::ln_gamma: return "ln_gamma";
        case Role::ln_beta: return "ln_beta";
    }
    return "?";
}

enum class UnitKind { dense, token_dense, conv, res_dense, res_conv, attn, ffn };

// Precomputed gather table for stride-1 convolutions: src[p*k + t] is the
// flat source site for output site p and kernel offset t, or -1 when the
// offset leaves the grid under zero padding.
struct ConvGeometry {
    std::vector<int> dims;
    KernelOffsets kernel;
    PaddingMode padding = PaddingMode::circular;
    int sites = 0;
    std::vector<int> src;

    static std::shared_ptr<const ConvGeometry> make(const std::vector<int>& dims,
                                                    int kernel_side,
                                                    PaddingMode padding) {
        auto g = std::make_shared<ConvGeometry>();
        g->dims = dims;
        g->kernel = KernelOffsets::centered(kernel_side, int(dims.size()));
        g->padding = padding;
        int n = 1;
        for (int d : dims) n *= d;
        g->sites = n;
        const int k = g->kernel.size();
        const int nd = int(dims.size());
        g->src.assign(size_t(n) * k, -1);
        std::vector<int> p(nd, 0);
        for (int flat = 0; flat < n; ++flat) {
            for (int t = 0; t < k; ++t) {
                int srcflat = 0;
                bool inside = true;
                for (int a = 0; a < nd; ++a) {
                    int q = p[a] + g->kernel.offsets[t][a];
                    if (padding == PaddingMode::circular) {
                        q = ((q % dims[a]) + dims[a]) % dims[a];
                    } else if (q < 0 || q >= dims[a]) {
                        inside = false;
                        break;
                    }
                    srcflat = srcflat * dims[a] + q;
                }
                if (inside) g->src[size_t(flat) * k + t] = srcflat;
            }
            int axis = nd - 1;
            while (axis >= 0 && ++p[axis] >= dims[axis]) p[axis--] = 0;
        }
        return g;
    }
};

struct Unit {
    UnitKind kind = UnitKind::dense;
    Activation in_act = Activation::relu;  // activation applied to the input
    std::vector<Role> roles;
    std::vector<Tensor> params;

    const Tensor& param(Role r) const {
        for (size_t i = 0; i < roles.size(); ++i)
            if (roles[i] == r) return params[i];
        throw DomainError(std::string("unit: missing role ") + to_string(r));
    }
    Tensor& param(Role r) {
        return const_cast<Tensor&>(static_cast<const Unit*>(this)->param(r));
    }
};

enum class HeadKind { dense, pooled_conv, pooled_tokens };

// Flat input size implied by an architecture.
inline int arch_input_dim(const ArchSpec& spec) {
    switch (spec.family) {
        case Family::mlp: return spec.width;
        case Family::cnn1d:
        case Family::cnn2d: return spec.channels * spec.grid_sites();
        case Family::resnet:
            return spec.residual_branch == ResidualBranch::conv
                       ? spec.channels * spec.grid_sites()
                       : spec.width;
        case Family::transformer: return spec.tokens * spec.width;
    }
    return 0;
}

struct Model {
    ArchSpec spec;
    std::vector<Unit> units;  // depth units, z^(1) .. z^(L)
    Unit head;                // produces z^(L+1)
    HeadKind head_kind = HeadKind::dense;
    std::shared_ptr<const ConvGeometry> geom;
    double ln_eps = 1e-5;
    uint64_t seed = 0;

    int depth() const { return int(units.size()); }

    int input_dim() const { return arch_input_dim(spec); }

    // M_l: coordinate count of z^(l); identical for every depth unit in the
    // homogeneous families built here.
    int unit_dim(int) const { return input_dim(); }
    int output_dim() const { return spec.outputs; }
};

// ---------------------------------------------------------------------------
// Initialization. Every weight tensor gets its own counter-based substream
// keyed by (seed, depth unit, role), so adding units never perturbs the draws
// of existing ones.

namespace detail {

inline Tensor gaussian_tensor(std::vector<int> shape, double variance, Rng rng) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(variance);
    for (auto& e : t.v) e = sd * rng.normal();
    return t;
}

}  // namespace detail

// Fan-in rule: i.i.d. N(0, 1/(q fan_in)).
inline Tensor init_fan_in(std::vector<int> shape, int fan_in, double q, Rng rng) {
    if (fan_in <= 0) throw DomainError("init: fan_in must be positive");
    if (q <= 0) throw DomainError("init: gating factor must be positive");
    return detail::gaussian_tensor(std::move(shape), 1.0 / (q * fan_in), rng);
}

// Residual-branch rule: fan-in variance divided by the block count K.
inline Tensor init_residual(std::vector<int> shape, int fan_in, double q, int K,
                            Rng rng) {
    if (K < 1) throw DomainError("init: K must be >= 1");
    if (fan_in <= 0) throw DomainError("init: fan_in must be positive");
    if (q <= 0) throw DomainError("init: gating factor must be positive");
    return detail::gaussian_tensor(std::move(shape), 1.0 / (q * K * fan_in), rng);
}

inline Model build_model(const ArchSpec& spec, uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.seed = seed;
    const Rng root(seed);
    const double q = init_gating(spec.activation);
    const int L = spec.effective_depth();

    auto stream = [&](int unit, Role role) {
        return root.fork("weight", uint64_t(unit), uint64_t(int(role)));
    };

    auto dense_unit = [&](int l, int n_out, int n_in, double qq,
                          Activation in_act, double var_scale = 1.0) {
        Unit u;
        u.kind = UnitKind::dense;
        u.in_act = in_act;
        u.roles = {Role::weight};
        u.params.push_back(detail::gaussian_tensor(
            {n_out, n_in}, var_scale / (qq * n_in), stream(l, Role::weight)));
        return u;
    };

    switch (spec.family) {
        case Family::mlp: {
            const int n = spec.width;
            for (int l = 0; l < L; ++l)
                m.units.push_back(dense_unit(l, n, n, q, spec.activation));
            m.head = dense_unit(L, spec.outputs, n, 1.0, spec.activation);
            m.head_kind = HeadKind::dense;
            break;
        }
        case Family::cnn1d:
        case Family::cnn2d: {
            const int C = spec.channels;
            m.geom = ConvGeometry::make(spec.grid, spec.kernel, spec.padding);
            const int k = m.geom->kernel.size();
            for (int l = 0; l < L; ++l) {
                Unit u;
                u.kind = UnitKind::conv;
                u.in_act = spec.activation;
                u.roles = {Role::weight};
                u.params.push_back(detail::gaussian_tensor(
                    {C, C, k}, 1.0 / (q * k * C), stream(l, Role::weight)));
                m.units.push_back(std::move(u));
            }
            m.head = dense_unit(L, spec.outputs, C, 1.0, spec.activation);
            m.head_kind = HeadKind::pooled_conv;
            break;
        }
        case Family::resnet: {
            const int K = spec.blocks;
            if (spec.residual_branch == ResidualBranch::dense) {
                const int n = spec.width;
                int l = 0;
                for (int i = 0; i < spec.plain_units; ++i, ++l)
                    m.units.push_back(dense_unit(l, n, n, q, spec.activation));
                for (int kb = 0; kb < K; ++kb, ++l) {
                    Unit u;
                    u.kind = UnitKind::res_dense;
                    u.in_act = spec.activation;
                    u.roles = {Role::weight};
                    u.params.push_back(detail::gaussian_tensor(
                        {n, n}, 1.0 / (q * K * n), stream(l, Role::weight)));
                    m.units.push_back(std::move(u));
                }
                m.head = dense_unit(L, spec.outputs, n, 1.0, spec.activation);
                m.head_kind = HeadKind::dense;
            } else {
                const int C = spec.channels;
                m.geom = ConvGeometry::make(spec.grid, spec.kernel, spec.padding);
                const int k = m.geom->kernel.size();
                int l = 0;
                for (int i = 0; i < spec.plain_units; ++i, ++l) {
                    Unit u;
                    u.kind = UnitKind::conv;
                    u.in_act = spec.activation;
                    u.roles = {Role::weight};
                    u.params.push_back(detail::gaussian_tensor(
                        {C, C, k}, 1.0 / (q * k * C), stream(l, Role::weight)));
                    m.units.push_back(std::move(u));
                }
                for (int kb = 0; kb < K; ++kb, ++l) {
                    Unit u;
                    u.kind = UnitKind::res_conv;
                    u.in_act = spec.activation;
                    u.roles = {Role::weight};
                    u.params.push_back(detail::gaussian_tensor(
                        {C, C, k}, 1.0 / (q * K * k * C), stream(l, Role::weight)));
                    m.units.push_back(std::move(u));
                }
                m.head = dense_unit(L, spec.outputs, C, 1.0, spec.activation);
                m.head_kind = HeadKind::pooled_conv;
            }
            break;
        }
        case Family::transformer: {
            const int d = spec.width;
            const int dff = 4 * d;
            int l = 0;
            if (spec.plain_units == 1) {
                // Embedding stem: a per-token linear map on raw inputs.
                Unit stem = dense_unit(l, d, d, 1.0, Activation::identity);
                stem.kind = UnitKind::token_dense;
                m.units.push_back(std::move(stem));
                ++l;
            }
            auto ln_params = [&](Unit& u, int ul) {
                Tensor gamma({d});
                gamma.v.assign(d, 1.0);
                Tensor beta({d});
                u.roles.push_back(Role::ln_gamma);
                u.params.push_back(std::move(gamma));
                u.roles.push_back(Role::ln_beta);
                u.params.push_back(std::move(beta));
                (void)ul;
            };
            for (int b = 0; b < spec.blocks; ++b) {
                Unit att;
                att.kind = UnitKind::attn;
                att.in_act = spec.activation;
                for (Role r : {Role::wq, Role::wk, Role::wv, Role::wo}) {
                    att.roles.push_back(r);
                    att.params.push_back(detail::gaussian_tensor(
                        {d, d}, 1.0 / d, stream(l, r)));
                }
                ln_params(att, l);
                m.units.push_back(std::move(att));
                ++l;
                Unit ffn;
                ffn.kind = UnitKind::ffn;
                ffn.in_act = spec.activation;
                ffn.roles = {Role::w1, Role::w2};
                ffn.params.push_back(detail::gaussian_tensor(
                    {dff, d}, 1.0 / d, stream(l, Role::w1)));
                ffn.params.push_back(detail::gaussian_tensor(
                    {d, dff}, 1.0 / (q * dff), stream(l, Role::w2)));
                ln_params(ffn, l);
                m.units.push_back(std::move(ffn));
                ++l;
            }
            m.head = dense_unit(L, spec.outputs, d, 1.0, Activation::identity);
            m.head_kind = HeadKind::pooled_tokens;
            break;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward pass with per-unit caches (reused by the reverse sweep).

struct UnitCache {
    Vec in;   // unit input z^(l-1)
    Vec a;    // act(in) for dense/conv units
    // transformer extras
    Vec u;                             // branch input (post-LN when pre-norm)
    std::vector<LnTokenCache> ln;      // per-token LN cache
    Vec q, k, v, attn, o;              // attention internals; attn is H*N*N
    Vec h1, a1;                        // ffn internals
    Vec sum;                           // post-norm residual sum
};

struct ActivationTrace {
    std::vector<Vec> pre;  // pre[l-1] = z^(l), l = 1..L
    Vec out;               // z^(L+1)
};

namespace detail {

inline void apply_act(Activation a, const Vec& x, Vec& out) {
    out.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = act(a, x[i]);
}

inline void conv_apply(const ConvGeometry& g, const double* W, int c_out,
                       int c_in, const double* a, double* y, bool accumulate) {
    const int N = g.sites;
    const int k = g.kernel.size();
    for (int j = 0; j < c_out; ++j) {
        double* yj = y + size_t(j) * N;
        if (!accumulate)
            for (int p = 0; p < N; ++p) yj[p] = 0.0;
        for (int i = 0; i < c_in; ++i) {
            const double* ai = a + size_t(i) * N;
            const double* w = W + (size_t(j) * c_in + i) * k;
            for (int t = 0; t < k; ++t) {
                const double wt = w[t];
                for (int p = 0; p < N; ++p) {
                    const int s = g.src[size_t(p) * k + t];
                    if (s >= 0) yj[p] += wt * ai[s];
                }
            }
        }
    }
}

inline void softmax_row(double* row, int n) {
    double mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (int i = 0; i < n; ++i) row[i] /= sum;
}

// Multi-head attention on token-major input u (N x d); fills cache.q/k/v,
// cache.attn (per head row-softmaxed scores) and cache.o, returns Wo applied.
inline void attention_branch(const Model& m, const Unit& unit, const Vec& u,
                             UnitCache& c, Vec& branch) {
    const int N = m.spec.tokens, d = m.spec.width, H = m.spec.heads;
    const int dh = d / H;
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    const Tensor& Wq = unit.param(Role::wq);
    const Tensor& Wk = unit.param(Role::wk);
    const Tensor& Wv = unit.param(Role::wv);
    const Tensor& Wo = unit.param(Role::wo);
    c.q.assign(size_t(N) * d, 0.0);
    c.k.assign(size_t(N) * d, 0.0);
    c.v.assign(size_t(N) * d, 0.0);
    for (int t = 0; t < N; ++t) {
        matvec(Wq.v.data(), d, d, u.data() + size_t(t) * d, c.q.data() + size_t(t) * d);
        matvec(Wk.v.data(), d, d, u.data() + size_t(t) * d, c.k.data() + size_t(t) * d);
        matvec(Wv.v.data(), d, d, u.data() + size_t(t) * d, c.v.data() + size_t(t) * d);
    }
    c.attn.assign(size_t(H) * N * N, 0.0);
    c.o.assign(size_t(N) * d, 0.0);
    for (int h = 0; h < H; ++h) {
        double* A = c.attn.data() + size_t(h) * N * N;
        for (int t = 0; t < N; ++t) {
            double* row = A + size_t(t) * N;
            const double* qt = c.q.data() + size_t(t) * d + size_t(h) * dh;
            for (int t2 = 0; t2 < N; ++t2) {
                const double* kt = c.k.data() + size_t(t2) * d + size_t(h) * dh;
                double s = 0.0;
                for (int e = 0; e < dh; ++e) s += qt[e] * kt[e];
                row[t2] = s * inv_sqrt_dh;
            }
            softmax_row(row, N);
            double* ot = c.o.data() + size_t(t) * d + size_t(h) * dh;
            for (int t2 = 0; t2 < N; ++t2) {
                const double* vt = c.v.data() + size_t(t2) * d + size_t(h) * dh;
                const double w = row[t2];
                for (int e = 0; e < dh; ++e) ot[e] += w * vt[e];
            }
        }
    }
    branch.assign(size_t(N) * d, 0.0);
    for (int t = 0; t < N; ++t)
        matvec(Wo.v.data(), d, d, c.o.data() + size_t(t) * d,
               branch.data() + size_t(t) * d);
}

inline void ffn_branch(const Model& m, const Unit& unit, const Vec& u,
                       UnitCache& c, Vec& branch) {
    const int N = m.spec.tokens, d = m.spec.width;
    const Tensor& W1 = unit.param(Role::w1);
    const Tensor& W2 = unit.param(Role::w2);
    const int dff = W1.shape[0];
    c.h1.assign(size_t(N) * dff, 0.0);
    c.a1.assign(size_t(N) * dff, 0.0);
    branch.assign(size_t(N) * d, 0.0);
    for (int t = 0; t < N; ++t) {
        double* h = c.h1.data() + size_t(t) * dff;
        matvec(W1.v.data(), dff, d, u.data() + size_t(t) * d, h);
        double* a = c.a1.data() + size_t(t) * dff;
        for (int i = 0; i < dff; ++i) a[i] = act(unit.in_act, h[i]);
        matvec(W2.v.data(), d, dff, a, branch.data() + size_t(t) * d);
    }
}

// Applies LN token-wise, filling per-token caches.
inline void ln_apply(const Model& m, const Unit& unit, const Vec& x, Vec& y,
                     std::vector<LnTokenCache>& caches) {
    const int N = m.spec.tokens, d = m.spec.width;
    const Tensor& gamma = unit.param(Role::ln_gamma);
    const Tensor& beta = unit.param(Role::ln_beta);
    y.resize(size_t(N) * d);
    caches.resize(N);
    for (int t = 0; t < N; ++t)
        ln_forward_token(x.data() + size_t(t) * d, d, gamma.v.data(),
                         beta.v.data(), m.ln_eps, y.data() + size_t(t) * d,
                         &caches[t]);
}

}  // namespace detail

// One depth unit forward; returns the unit output and fills the cache.
inline Vec unit_forward(const Model& m, int l, const Vec& x, UnitCache& c) {
    const Unit& unit = m.units[l];
    c.in = x;
    switch (unit.kind) {
        case UnitKind::dense: {
            detail::apply_act(unit.in_act, x, c.a);
            const Tensor& W = unit.param(Role::weight);
            Vec y(W.shape[0]);
            matvec(W.v.data(), W.shape[0], W.shape[1], c.a.data(), y.data());
            return y;
        }
        case UnitKind::token_dense: {
            detail::apply_act(unit.in_act, x, c.a);
            const Tensor& W = unit.param(Role::weight);
            const int d_out = W.shape[0], d_in = W.shape[1];
            const int nt = int(x.size()) / d_in;
            Vec y(size_t(nt) * d_out);
            for (int t = 0; t < nt; ++t)
                matvec(W.v.data(), d_out, d_in, c.a.data() + size_t(t) * d_in,
                       y.data() + size_t(t) * d_out);
            return y;
        }
        case UnitKind::conv: {
            detail::apply_act(unit.in_act, x, c.a);
            const Tensor& W = unit.param(Role::weight);
            Vec y(size_t(W.shape[0]) * m.geom->sites);
            detail::conv_apply(*m.geom, W.v.data(), W.shape[0], W.shape[1],
                               c.a.data(), y.data(), false);
            return y;
        }
        case UnitKind::res_dense: {
            detail::apply_act(unit.in_act, x, c.a);
            const Tensor& W = unit.param(Role::weight);
            Vec y = x;
            Vec b(W.shape[0]);
            matvec(W.v.data(), W.shape[0], W.shape[1], c.a.data(), b.data());
            axpy(1.0, b, y);
            return y;
        }
        case UnitKind::res_conv: {
            detail::apply_act(unit.in_act, x, c.a);
            const Tensor& W = unit.param(Role::weight);
            Vec y = x;
            Vec b(x.size());
            detail::conv_apply(*m.geom, W.v.data(), W.shape[0], W.shape[1],
                               c.a.data(), b.data(), false);
            axpy(1.0, b, y);
            return y;
        }
        case UnitKind::attn:
        case UnitKind::ffn: {
            const bool is_attn = unit.kind == UnitKind::attn;
            Vec branch;
            if (m.spec.norm_placement == NormPlacement::pre) {
                detail::ln_apply(m, unit, x, c.u, c.ln);
            } else {
                c.u = x;
            }
            if (is_attn)
                detail::attention_branch(m, unit, c.u, c, branch);
            else
                detail::ffn_branch(m, unit, c.u, c, branch);
            Vec y = x;
            axpy(1.0, branch, y);
            if (m.spec.norm_placement == NormPlacement::post) {
                c.sum = y;
                Vec z;
                detail::ln_apply(m, unit, c.sum, z, c.ln);
                return z;
            }
            return y;
        }
    }
    throw DomainError("unit_forward: unknown unit kind");
}

inline Vec head_forward(const Model& m, const Vec& x, UnitCache& c) {
    const Tensor& W = m.head.param(Role::weight);
    c.in = x;
    switch (m.head_kind) {
        case HeadKind::dense: {
            detail::apply_act(m.head.in_act, x, c.a);
            Vec y(W.shape[0]);
            matvec(W.v.data(), W.shape[0], W.shape[1], c.a.data(), y.data());
            return y;
        }
        case HeadKind::pooled_conv: {
            // Global average pooling of act(x) over sites, then linear.
            const int C = W.shape[1];
            const int N = int(x.size()) / C;
            c.a.assign(C, 0.0);
            for (int i = 0; i < C; ++i) {
                double s = 0.0;
                for (int p = 0; p < N; ++p)
                    s += act(m.head.in_act, x[size_t(i) * N + p]);
                c.a[i] = s / N;
            }
            Vec y(W.shape[0]);
            matvec(W.v.data(), W.shape[0], W.shape[1], c.a.data(), y.data());
            return y;
        }
        case HeadKind::pooled_tokens: {
            const int d = W.shape[1];
            const int N = int(x.size()) / d;
            c.a.assign(d, 0.0);
            for (int t = 0; t < N; ++t)
                for (int j = 0; j < d; ++j) c.a[j] += x[size_t(t) * d + j] / N;
            Vec y(W.shape[0]);
            matvec(W.v.data(), W.shape[0], W.shape[1], c.a.data(), y.data());
            return y;
        }
    }
    throw DomainError("head_forward: unknown head kind");
}

struct ForwardResult {
    ActivationTrace trace;
    std::vector<UnitCache> caches;  // one per depth unit
    UnitCache head_cache;
};

inline ForwardResult forward_cached(const Model& m, const Vec& x) {
    if (int(x.size()) != m.input_dim())
        throw DomainError("forward: input size " + std::to_string(x.size()) +
                          " != expected " + std::to_string(m.input_dim()));
    ForwardResult r;
    r.caches.resize(m.depth());
    Vec cur = x;
    for (int l = 0; l < m.depth(); ++l) {
        cur = unit_forward(m, l, cur, r.caches[l]);
        if (!all_finite(cur))
            throw NumericError("forward: non-finite value at depth unit " +
                               std::to_string(l + 1));
        r.trace.pre.push_back(cur);
    }
    r.trace.out = head_forward(m, cur, r.head_cache);
    if (!all_finite(r.trace.out))
        throw NumericError("forward: non-finite value at the output layer");
    return r;
}

inline ActivationTrace forward(const Model& m, const Vec& x) {
    return forward_cached(m, x).trace;
}

}  // namespace depthlaw
