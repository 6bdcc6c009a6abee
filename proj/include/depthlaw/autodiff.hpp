#pragma once

#include <vector>

#include "depthlaw/model.hpp"

namespace depthlaw {

// Flat view of every trainable tensor, in build order (depth units first,
// head last). ParamVector instances are only meaningful together with the
// layout of the model they were created for.
struct ParamLayout {
    struct Entry {
        int unit;  // depth-unit index; == L for the head
        Role role;
        size_t offset;
        size_t size;
    };
    std::vector<Entry> entries;
    std::vector<size_t> unit_first;  // first entry index per unit, then head
    size_t total = 0;

    static ParamLayout of(const Model& m) {
        ParamLayout lay;
        size_t off = 0;
        for (int l = 0; l < m.depth(); ++l) {
            lay.unit_first.push_back(lay.entries.size());
            const Unit& u = m.units[l];
            for (size_t j = 0; j < u.roles.size(); ++j) {
                lay.entries.push_back({l, u.roles[j], off, u.params[j].size()});
                off += u.params[j].size();
            }
        }
        lay.unit_first.push_back(lay.entries.size());
        lay.entries.push_back(
            {m.depth(), Role::weight, off, m.head.param(Role::weight).size()});
        off += m.head.param(Role::weight).size();
        lay.total = off;
        return lay;
    }
};

struct ParamVector {
    Vec v;

    static ParamVector zeros(const ParamLayout& lay) {
        ParamVector p;
        p.v.assign(lay.total, 0.0);
        return p;
    }
    static ParamVector gaussian(const ParamLayout& lay, Rng rng) {
        ParamVector p;
        p.v.resize(lay.total);
        for (auto& e : p.v) e = rng.normal();
        return p;
    }
    double dot(const ParamVector& o) const { return depthlaw::dot(v, o.v); }
    void scale(double c) { depthlaw::scale(v, c); }
    void axpy(double c, const ParamVector& x) { depthlaw::axpy(c, x.v, v); }
};

// Copies model weights into / out of the flat representation (optimizers and
// the finite-difference oracles need both directions).
inline ParamVector flatten_params(const Model& m, const ParamLayout& lay) {
    ParamVector p = ParamVector::zeros(lay);
    for (const auto& e : lay.entries) {
        const Tensor& t = e.unit == m.depth() ? m.head.param(e.role)
                                              : m.units[e.unit].param(e.role);
        std::copy(t.v.begin(), t.v.end(), p.v.begin() + e.offset);
    }
    return p;
}

inline void unflatten_params(Model& m, const ParamLayout& lay,
                             const ParamVector& p) {
    for (const auto& e : lay.entries) {
        Tensor& t = e.unit == m.depth() ? m.head.param(e.role)
                                        : m.units[e.unit].param(e.role);
        std::copy(p.v.begin() + e.offset, p.v.begin() + e.offset + e.size,
                  t.v.begin());
    }
}

struct TangentTrace {
    std::vector<Vec> pre;  // tangent of z^(l), l = 1..L
    Vec out;               // tangent of z^(L+1)
};

namespace detail {

// Pointer to the slice of `vec` holding (unit, role), or nullptr when the
// caller passed no vector.
struct SliceView {
    const ParamLayout* lay;
    const double* base;

    const double* get(size_t entry_idx) const {
        return base ? base + lay->entries[entry_idx].offset : nullptr;
    }
};

struct MutSliceView {
    const ParamLayout* lay;
    double* base;

    double* get(size_t entry_idx) const {
        return base ? base + lay->entries[entry_idx].offset : nullptr;
    }
};

inline void conv_apply_raw(const ConvGeometry& g, const double* W, int c_out,
                           int c_in, const double* a, double* y) {
    conv_apply(g, W, c_out, c_in, a, y, false);
}

// Transposed convolution scatter: abar[i, src] += W[j,i,t] * ybar[j,p].
inline void conv_transpose_acc(const ConvGeometry& g, const double* W,
                               int c_out, int c_in, const double* ybar,
                               double* abar) {
    const int N = g.sites;
    const int k = g.kernel.size();
    for (int j = 0; j < c_out; ++j) {
        const double* yj = ybar + size_t(j) * N;
        for (int i = 0; i < c_in; ++i) {
            double* ai = abar + size_t(i) * N;
            const double* w = W + (size_t(j) * c_in + i) * k;
            for (int t = 0; t < k; ++t) {
                const double wt = w[t];
                for (int p = 0; p < N; ++p) {
                    const int s = g.src[size_t(p) * k + t];
                    if (s >= 0) ai[s] += wt * yj[p];
                }
            }
        }
    }
}

// Wbar[j,i,t] += sum_p ybar[j,p] a[i, src[p,t]].
inline void conv_weight_grad_acc(const ConvGeometry& g, int c_out, int c_in,
                                 const double* ybar, const double* a,
                                 double* Wbar) {
    const int N = g.sites;
    const int k = g.kernel.size();
    for (int j = 0; j < c_out; ++j) {
        const double* yj = ybar + size_t(j) * N;
        for (int i = 0; i < c_in; ++i) {
            const double* ai = a + size_t(i) * N;
            double* w = Wbar + (size_t(j) * c_in + i) * k;
            for (int t = 0; t < k; ++t) {
                double s = 0.0;
                for (int p = 0; p < N; ++p) {
                    const int sp = g.src[size_t(p) * k + t];
                    if (sp >= 0) s += yj[p] * ai[sp];
                }
                w[t] += s;
            }
        }
    }
}

// Row-wise softmax tangent: dA = A .* dS - A .* rowsum(A .* dS).
inline void softmax_jvp_row(const double* A, const double* dS, int n,
                            double* dA) {
    double dotv = 0.0;
    for (int i = 0; i < n; ++i) dotv += A[i] * dS[i];
    for (int i = 0; i < n; ++i) dA[i] = A[i] * (dS[i] - dotv);
}

// Transpose of the softmax tangent (the map is symmetric row-wise).
inline void softmax_vjp_row(const double* A, const double* Abar, int n,
                            double* Sbar) {
    softmax_jvp_row(A, Abar, n, Sbar);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward-mode: exact directional derivative of every z^(l) and the output.

inline TangentTrace jvp_with_forward(const Model& m, const ForwardResult& f,
                                     const ParamLayout& lay,
                                     const ParamVector& dir) {
    if (dir.v.size() != lay.total)
        throw DomainError("jvp: direction size mismatch");
    detail::SliceView dv{&lay, dir.v.data()};
    TangentTrace tt;
    Vec dx(m.input_dim(), 0.0);  // inputs carry no parameter tangent
    const int N = m.spec.tokens, d = m.spec.width, H = m.spec.heads;
    const int dh = H > 0 ? d / H : 0;

    for (int l = 0; l < m.depth(); ++l) {
        const Unit& unit = m.units[l];
        const UnitCache& c = f.caches[l];
        const size_t e0 = lay.unit_first[l];
        Vec dy;
        switch (unit.kind) {
            case UnitKind::dense:
            case UnitKind::conv:
            case UnitKind::res_dense:
            case UnitKind::res_conv: {
                const Tensor& W = unit.param(Role::weight);
                const double* dW = dv.get(e0);
                Vec da(c.in.size());
                for (size_t i = 0; i < c.in.size(); ++i)
                    da[i] = dact(unit.in_act, c.in[i]) * dx[i];
                const bool is_conv = unit.kind == UnitKind::conv ||
                                     unit.kind == UnitKind::res_conv;
                const bool residual = unit.kind == UnitKind::res_dense ||
                                      unit.kind == UnitKind::res_conv;
                if (is_conv) {
                    dy.assign(size_t(W.shape[0]) * m.geom->sites, 0.0);
                    detail::conv_apply(*m.geom, W.v.data(), W.shape[0],
                                       W.shape[1], da.data(), dy.data(), true);
                    detail::conv_apply(*m.geom, dW, W.shape[0], W.shape[1],
                                       c.a.data(), dy.data(), true);
                } else {
                    dy.assign(W.shape[0], 0.0);
                    Vec tmp(W.shape[0]);
                    matvec(W.v.data(), W.shape[0], W.shape[1], da.data(),
                           tmp.data());
                    axpy(1.0, tmp, dy);
                    matvec(dW, W.shape[0], W.shape[1], c.a.data(), tmp.data());
                    axpy(1.0, tmp, dy);
                }
                if (residual) axpy(1.0, dx, dy);
                break;
            }
            case UnitKind::token_dense: {
                const Tensor& W = unit.param(Role::weight);
                const double* dW = dv.get(e0);
                const int d_out = W.shape[0], d_in = W.shape[1];
                const int nt = int(c.in.size()) / d_in;
                Vec da(c.in.size());
                for (size_t i = 0; i < c.in.size(); ++i)
                    da[i] = dact(unit.in_act, c.in[i]) * dx[i];
                dy.assign(size_t(nt) * d_out, 0.0);
                Vec tmp(d_out);
                for (int t = 0; t < nt; ++t) {
                    matvec(W.v.data(), d_out, d_in, da.data() + size_t(t) * d_in,
                           dy.data() + size_t(t) * d_out);
                    matvec(dW, d_out, d_in, c.a.data() + size_t(t) * d_in,
                           tmp.data());
                    for (int j = 0; j < d_out; ++j)
                        dy[size_t(t) * d_out + j] += tmp[j];
                }
                break;
            }
            case UnitKind::attn: {
                const Tensor& Wq = unit.param(Role::wq);
                const Tensor& Wk = unit.param(Role::wk);
                const Tensor& Wv = unit.param(Role::wv);
                const Tensor& Wo = unit.param(Role::wo);
                const double* dWq = dv.get(e0 + 0);
                const double* dWk = dv.get(e0 + 1);
                const double* dWv = dv.get(e0 + 2);
                const double* dWo = dv.get(e0 + 3);
                const double* dG = dv.get(e0 + 4);
                const double* dB = dv.get(e0 + 5);
                const Tensor& gamma = unit.param(Role::ln_gamma);
                Vec du(size_t(N) * d);
                if (m.spec.norm_placement == NormPlacement::pre) {
                    for (int t = 0; t < N; ++t)
                        ln_jvp_token(c.ln[t], gamma.v.data(),
                                     dx.data() + size_t(t) * d, dG, dB, d,
                                     du.data() + size_t(t) * d);
                } else {
                    du = dx;
                }
                Vec dq(size_t(N) * d), dk(size_t(N) * d), dvv(size_t(N) * d);
                Vec tmp(d);
                for (int t = 0; t < N; ++t) {
                    const double* ut = c.u.data() + size_t(t) * d;
                    const double* dut = du.data() + size_t(t) * d;
                    matvec(Wq.v.data(), d, d, dut, dq.data() + size_t(t) * d);
                    matvec(dWq, d, d, ut, tmp.data());
                    for (int j = 0; j < d; ++j) dq[size_t(t) * d + j] += tmp[j];
                    matvec(Wk.v.data(), d, d, dut, dk.data() + size_t(t) * d);
                    matvec(dWk, d, d, ut, tmp.data());
                    for (int j = 0; j < d; ++j) dk[size_t(t) * d + j] += tmp[j];
                    matvec(Wv.v.data(), d, d, dut, dvv.data() + size_t(t) * d);
                    matvec(dWv, d, d, ut, tmp.data());
                    for (int j = 0; j < d; ++j) dvv[size_t(t) * d + j] += tmp[j];
                }
                const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
                Vec dO(size_t(N) * d, 0.0);
                Vec dSrow(N), dArow(N);
                for (int h = 0; h < H; ++h) {
                    const double* A = c.attn.data() + size_t(h) * N * N;
                    for (int t = 0; t < N; ++t) {
                        const double* qt = c.q.data() + size_t(t) * d + size_t(h) * dh;
                        const double* dqt = dq.data() + size_t(t) * d + size_t(h) * dh;
                        for (int t2 = 0; t2 < N; ++t2) {
                            const double* kt = c.k.data() + size_t(t2) * d + size_t(h) * dh;
                            const double* dkt = dk.data() + size_t(t2) * d + size_t(h) * dh;
                            double s = 0.0;
                            for (int e = 0; e < dh; ++e)
                                s += dqt[e] * kt[e] + qt[e] * dkt[e];
                            dSrow[t2] = s * inv_sqrt_dh;
                        }
                        detail::softmax_jvp_row(A + size_t(t) * N, dSrow.data(),
                                                N, dArow.data());
                        double* dot_ = dO.data() + size_t(t) * d + size_t(h) * dh;
                        for (int t2 = 0; t2 < N; ++t2) {
                            const double* vt = c.v.data() + size_t(t2) * d + size_t(h) * dh;
                            const double* dvt = dvv.data() + size_t(t2) * d + size_t(h) * dh;
                            const double a = A[size_t(t) * N + t2];
                            const double da_ = dArow[t2];
                            for (int e = 0; e < dh; ++e)
                                dot_[e] += da_ * vt[e] + a * dvt[e];
                        }
                    }
                }
                Vec dbranch(size_t(N) * d, 0.0);
                for (int t = 0; t < N; ++t) {
                    matvec(Wo.v.data(), d, d, dO.data() + size_t(t) * d,
                           dbranch.data() + size_t(t) * d);
                    matvec(dWo, d, d, c.o.data() + size_t(t) * d, tmp.data());
                    for (int j = 0; j < d; ++j)
                        dbranch[size_t(t) * d + j] += tmp[j];
                }
                dy = dx;
                axpy(1.0, dbranch, dy);
                if (m.spec.norm_placement == NormPlacement::post) {
                    Vec dz(size_t(N) * d);
                    for (int t = 0; t < N; ++t)
                        ln_jvp_token(c.ln[t], gamma.v.data(),
                                     dy.data() + size_t(t) * d, dG, dB, d,
                                     dz.data() + size_t(t) * d);
                    dy = dz;
                }
                break;
            }
            case UnitKind::ffn: {
                const Tensor& W1 = unit.param(Role::w1);
                const Tensor& W2 = unit.param(Role::w2);
                const int dff = W1.shape[0];
                const double* dW1 = dv.get(e0 + 0);
                const double* dW2 = dv.get(e0 + 1);
                const double* dG = dv.get(e0 + 2);
                const double* dB = dv.get(e0 + 3);
                const Tensor& gamma = unit.param(Role::ln_gamma);
                Vec du(size_t(N) * d);
                if (m.spec.norm_placement == NormPlacement::pre) {
                    for (int t = 0; t < N; ++t)
                        ln_jvp_token(c.ln[t], gamma.v.data(),
                                     dx.data() + size_t(t) * d, dG, dB, d,
                                     du.data() + size_t(t) * d);
                } else {
                    du = dx;
                }
                Vec dbranch(size_t(N) * d, 0.0);
                Vec dh1(dff), tmp1(dff), tmp2(d);
                for (int t = 0; t < N; ++t) {
                    matvec(W1.v.data(), dff, d, du.data() + size_t(t) * d,
                           dh1.data());
                    matvec(dW1, dff, d, c.u.data() + size_t(t) * d, tmp1.data());
                    const double* h1 = c.h1.data() + size_t(t) * dff;
                    for (int i = 0; i < dff; ++i)
                        dh1[i] = dact(unit.in_act, h1[i]) * (dh1[i] + tmp1[i]);
                    matvec(W2.v.data(), d, dff, dh1.data(),
                           dbranch.data() + size_t(t) * d);
                    matvec(dW2, d, dff, c.a1.data() + size_t(t) * dff,
                           tmp2.data());
                    for (int j = 0; j < d; ++j)
                        dbranch[size_t(t) * d + j] += tmp2[j];
                }
                dy = dx;
                axpy(1.0, dbranch, dy);
                if (m.spec.norm_placement == NormPlacement::post) {
                    Vec dz(size_t(N) * d);
                    for (int t = 0; t < N; ++t)
                        ln_jvp_token(c.ln[t], gamma.v.data(),
                                     dy.data() + size_t(t) * d, dG, dB, d,
                                     dz.data() + size_t(t) * d);
                    dy = dz;
                }
                break;
            }
        }
        tt.pre.push_back(dy);
        dx = std::move(dy);
    }

    // Head.
    {
        const Tensor& W = m.head.param(Role::weight);
        const double* dW = dv.get(lay.unit_first[m.depth()]);
        const UnitCache& c = f.head_cache;
        Vec dpool;
        switch (m.head_kind) {
            case HeadKind::dense: {
                dpool.resize(c.in.size());
                for (size_t i = 0; i < c.in.size(); ++i)
                    dpool[i] = dact(m.head.in_act, c.in[i]) * dx[i];
                break;
            }
            case HeadKind::pooled_conv: {
                const int C = W.shape[1];
                const int Ns = int(c.in.size()) / C;
                dpool.assign(C, 0.0);
                for (int i = 0; i < C; ++i) {
                    double s = 0.0;
                    for (int p = 0; p < Ns; ++p)
                        s += dact(m.head.in_act, c.in[size_t(i) * Ns + p]) *
                             dx[size_t(i) * Ns + p];
                    dpool[i] = s / Ns;
                }
                break;
            }
            case HeadKind::pooled_tokens: {
                const int dd = W.shape[1];
                const int Nt = int(c.in.size()) / dd;
                dpool.assign(dd, 0.0);
                for (int t = 0; t < Nt; ++t)
                    for (int j = 0; j < dd; ++j)
                        dpool[j] += dx[size_t(t) * dd + j] / Nt;
                break;
            }
        }
        tt.out.assign(W.shape[0], 0.0);
        Vec tmp(W.shape[0]);
        matvec(W.v.data(), W.shape[0], W.shape[1], dpool.data(), tmp.data());
        axpy(1.0, tmp, tt.out);
        matvec(dW, W.shape[0], W.shape[1], c.a.data(), tmp.data());
        axpy(1.0, tmp, tt.out);
    }
    return tt;
}

inline TangentTrace jvp_preactivations(const Model& m, const Vec& x,
                                       const ParamLayout& lay,
                                       const ParamVector& dir) {
    const ForwardResult f = forward_cached(m, x);
    return jvp_with_forward(m, f, lay, dir);
}

// ---------------------------------------------------------------------------
// Reverse-mode: accumulates d<out_bar, z^(L+1)>/d(theta) into `grad` and
// returns nothing else. Callers loop over batch elements.

inline void vjp_with_forward(const Model& m, const ForwardResult& f,
                             const ParamLayout& lay, const Vec& out_bar,
                             ParamVector& grad) {
    if (grad.v.size() != lay.total)
        throw DomainError("vjp: gradient buffer size mismatch");
    detail::MutSliceView gv{&lay, grad.v.data()};
    const int N = m.spec.tokens, d = m.spec.width, H = m.spec.heads;
    const int dh = H > 0 ? d / H : 0;

    // Head first.
    Vec xbar;
    {
        const Tensor& W = m.head.param(Role::weight);
        double* Wbar = gv.get(lay.unit_first[m.depth()]);
        const UnitCache& c = f.head_cache;
        outer_acc(out_bar.data(), W.shape[0], c.a.data(), W.shape[1], Wbar);
        Vec poolbar(W.shape[1], 0.0);
        matvec_t_acc(W.v.data(), W.shape[0], W.shape[1], out_bar.data(),
                     poolbar.data());
        switch (m.head_kind) {
            case HeadKind::dense: {
                xbar.resize(c.in.size());
                for (size_t i = 0; i < c.in.size(); ++i)
                    xbar[i] = dact(m.head.in_act, c.in[i]) * poolbar[i];
                break;
            }
            case HeadKind::pooled_conv: {
                const int C = W.shape[1];
                const int Ns = int(c.in.size()) / C;
                xbar.assign(c.in.size(), 0.0);
                for (int i = 0; i < C; ++i)
                    for (int p = 0; p < Ns; ++p)
                        xbar[size_t(i) * Ns + p] =
                            dact(m.head.in_act, c.in[size_t(i) * Ns + p]) *
                            poolbar[i] / Ns;
                break;
            }
            case HeadKind::pooled_tokens: {
                const int dd = W.shape[1];
                const int Nt = int(c.in.size()) / dd;
                xbar.assign(c.in.size(), 0.0);
                for (int t = 0; t < Nt; ++t)
                    for (int j = 0; j < dd; ++j)
                        xbar[size_t(t) * dd + j] = poolbar[j] / Nt;
                break;
            }
        }
    }

    for (int l = m.depth() - 1; l >= 0; --l) {
        const Unit& unit = m.units[l];
        const UnitCache& c = f.caches[l];
        const size_t e0 = lay.unit_first[l];
        Vec ybar = std::move(xbar);
        switch (unit.kind) {
            case UnitKind::dense:
            case UnitKind::conv:
            case UnitKind::res_dense:
            case UnitKind::res_conv: {
                const Tensor& W = unit.param(Role::weight);
                double* Wbar = gv.get(e0);
                const bool is_conv = unit.kind == UnitKind::conv ||
                                     unit.kind == UnitKind::res_conv;
                const bool residual = unit.kind == UnitKind::res_dense ||
                                      unit.kind == UnitKind::res_conv;
                Vec abar(c.in.size(), 0.0);
                if (is_conv) {
                    detail::conv_weight_grad_acc(*m.geom, W.shape[0], W.shape[1],
                                                 ybar.data(), c.a.data(), Wbar);
                    detail::conv_transpose_acc(*m.geom, W.v.data(), W.shape[0],
                                               W.shape[1], ybar.data(),
                                               abar.data());
                } else {
                    outer_acc(ybar.data(), W.shape[0], c.a.data(), W.shape[1],
                              Wbar);
                    matvec_t_acc(W.v.data(), W.shape[0], W.shape[1], ybar.data(),
                                 abar.data());
                }
                xbar.assign(c.in.size(), 0.0);
                for (size_t i = 0; i < c.in.size(); ++i)
                    xbar[i] = dact(unit.in_act, c.in[i]) * abar[i];
                if (residual) axpy(1.0, ybar, xbar);
                break;
            }
            case UnitKind::token_dense: {
                const Tensor& W = unit.param(Role::weight);
                double* Wbar = gv.get(e0);
                const int d_out = W.shape[0], d_in = W.shape[1];
                const int nt = int(c.in.size()) / d_in;
                Vec abar(c.in.size(), 0.0);
                for (int t = 0; t < nt; ++t) {
                    outer_acc(ybar.data() + size_t(t) * d_out, d_out,
                              c.a.data() + size_t(t) * d_in, d_in, Wbar);
                    matvec_t_acc(W.v.data(), d_out, d_in,
                                 ybar.data() + size_t(t) * d_out,
                                 abar.data() + size_t(t) * d_in);
                }
                xbar.assign(c.in.size(), 0.0);
                for (size_t i = 0; i < c.in.size(); ++i)
                    xbar[i] = dact(unit.in_act, c.in[i]) * abar[i];
                break;
            }
            case UnitKind::attn: {
                const Tensor& Wq = unit.param(Role::wq);
                const Tensor& Wk = unit.param(Role::wk);
                const Tensor& Wv = unit.param(Role::wv);
                const Tensor& Wo = unit.param(Role::wo);
                double* Wqbar = gv.get(e0 + 0);
                double* Wkbar = gv.get(e0 + 1);
                double* Wvbar = gv.get(e0 + 2);
                double* Wobar = gv.get(e0 + 3);
                double* Gbar = gv.get(e0 + 4);
                double* Bbar = gv.get(e0 + 5);
                const Tensor& gamma = unit.param(Role::ln_gamma);

                Vec sumbar;
                if (m.spec.norm_placement == NormPlacement::post) {
                    sumbar.assign(size_t(N) * d, 0.0);
                    for (int t = 0; t < N; ++t)
                        ln_vjp_token(c.ln[t], gamma.v.data(),
                                     ybar.data() + size_t(t) * d, d,
                                     sumbar.data() + size_t(t) * d, Gbar, Bbar);
                } else {
                    sumbar = ybar;
                }
                // y = x + branch(u): the skip path and the branch both see
                // sumbar.
                Vec obar(size_t(N) * d, 0.0);
                for (int t = 0; t < N; ++t) {
                    outer_acc(sumbar.data() + size_t(t) * d, d,
                              c.o.data() + size_t(t) * d, d, Wobar);
                    matvec_t_acc(Wo.v.data(), d, d,
                                 sumbar.data() + size_t(t) * d,
                                 obar.data() + size_t(t) * d);
                }
                Vec qbar(size_t(N) * d, 0.0), kbar(size_t(N) * d, 0.0),
                    vbar(size_t(N) * d, 0.0);
                const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
                Vec Abar(N), Sbar(N);
                for (int h = 0; h < H; ++h) {
                    const double* A = c.attn.data() + size_t(h) * N * N;
                    for (int t = 0; t < N; ++t) {
                        const double* obt = obar.data() + size_t(t) * d + size_t(h) * dh;
                        for (int t2 = 0; t2 < N; ++t2) {
                            const double* vt = c.v.data() + size_t(t2) * d + size_t(h) * dh;
                            double s = 0.0;
                            for (int e = 0; e < dh; ++e) s += obt[e] * vt[e];
                            Abar[t2] = s;
                            double* vbt = vbar.data() + size_t(t2) * d + size_t(h) * dh;
                            const double a = A[size_t(t) * N + t2];
                            for (int e = 0; e < dh; ++e) vbt[e] += a * obt[e];
                        }
                        detail::softmax_vjp_row(A + size_t(t) * N, Abar.data(),
                                                N, Sbar.data());
                        double* qbt = qbar.data() + size_t(t) * d + size_t(h) * dh;
                        const double* qt = c.q.data() + size_t(t) * d + size_t(h) * dh;
                        for (int t2 = 0; t2 < N; ++t2) {
                            const double sb = Sbar[t2] * inv_sqrt_dh;
                            const double* kt = c.k.data() + size_t(t2) * d + size_t(h) * dh;
                            double* kbt = kbar.data() + size_t(t2) * d + size_t(h) * dh;
                            for (int e = 0; e < dh; ++e) {
                                qbt[e] += sb * kt[e];
                                kbt[e] += sb * qt[e];
                            }
                        }
                    }
                }
                Vec ubar(size_t(N) * d, 0.0);
                for (int t = 0; t < N; ++t) {
                    const double* ut = c.u.data() + size_t(t) * d;
                    outer_acc(qbar.data() + size_t(t) * d, d, ut, d, Wqbar);
                    outer_acc(kbar.data() + size_t(t) * d, d, ut, d, Wkbar);
                    outer_acc(vbar.data() + size_t(t) * d, d, ut, d, Wvbar);
                    matvec_t_acc(Wq.v.data(), d, d, qbar.data() + size_t(t) * d,
                                 ubar.data() + size_t(t) * d);
                    matvec_t_acc(Wk.v.data(), d, d, kbar.data() + size_t(t) * d,
                                 ubar.data() + size_t(t) * d);
                    matvec_t_acc(Wv.v.data(), d, d, vbar.data() + size_t(t) * d,
                                 ubar.data() + size_t(t) * d);
                }
                xbar = sumbar;  // skip connection
                if (m.spec.norm_placement == NormPlacement::pre) {
                    for (int t = 0; t < N; ++t)
                        ln_vjp_token(c.ln[t], gamma.v.data(),
                                     ubar.data() + size_t(t) * d, d,
                                     xbar.data() + size_t(t) * d, Gbar, Bbar);
                } else {
                    axpy(1.0, ubar, xbar);
                }
                break;
            }
            case UnitKind::ffn: {
                const Tensor& W1 = unit.param(Role::w1);
                const Tensor& W2 = unit.param(Role::w2);
                const int dff = W1.shape[0];
                double* W1bar = gv.get(e0 + 0);
                double* W2bar = gv.get(e0 + 1);
                double* Gbar = gv.get(e0 + 2);
                double* Bbar = gv.get(e0 + 3);
                const Tensor& gamma = unit.param(Role::ln_gamma);

                Vec sumbar;
                if (m.spec.norm_placement == NormPlacement::post) {
                    sumbar.assign(size_t(N) * d, 0.0);
                    for (int t = 0; t < N; ++t)
                        ln_vjp_token(c.ln[t], gamma.v.data(),
                                     ybar.data() + size_t(t) * d, d,
                                     sumbar.data() + size_t(t) * d, Gbar, Bbar);
                } else {
                    sumbar = ybar;
                }
                Vec ubar(size_t(N) * d, 0.0);
                Vec a1bar(dff), h1bar(dff);
                for (int t = 0; t < N; ++t) {
                    outer_acc(sumbar.data() + size_t(t) * d, d,
                              c.a1.data() + size_t(t) * dff, dff, W2bar);
                    a1bar.assign(dff, 0.0);
                    matvec_t_acc(W2.v.data(), d, dff,
                                 sumbar.data() + size_t(t) * d, a1bar.data());
                    const double* h1 = c.h1.data() + size_t(t) * dff;
                    for (int i = 0; i < dff; ++i)
                        h1bar[i] = dact(unit.in_act, h1[i]) * a1bar[i];
                    outer_acc(h1bar.data(), dff, c.u.data() + size_t(t) * d, d,
                              W1bar);
                    matvec_t_acc(W1.v.data(), dff, d, h1bar.data(),
                                 ubar.data() + size_t(t) * d);
                }
                xbar = sumbar;  // skip connection
                if (m.spec.norm_placement == NormPlacement::pre) {
                    for (int t = 0; t < N; ++t)
                        ln_vjp_token(c.ln[t], gamma.v.data(),
                                     ubar.data() + size_t(t) * d, d,
                                     xbar.data() + size_t(t) * d, Gbar, Bbar);
                } else {
                    axpy(1.0, ubar, xbar);
                }
                break;
            }
        }
    }
}

}  // namespace depthlaw
