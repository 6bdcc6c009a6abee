#include <catch2/catch_amalgamated.hpp>

#include "depthlaw/loss.hpp"

using namespace depthlaw;

namespace {

// A rotating set of small specs covering every family and option knob.
std::vector<ArchSpec> tiny_specs() {
    std::vector<ArchSpec> out;
    {
        ArchSpec s;
        s.family = Family::mlp;
        s.depth = 3;
        s.width = 4;
        s.outputs = 2;
        out.push_back(s);
        s.activation = Activation::gelu;
        out.push_back(s);
    }
    {
        ArchSpec s;
        s.family = Family::cnn1d;
        s.depth = 2;
        s.channels = 2;
        s.grid = {5};
        s.kernel = 3;
        s.outputs = 2;
        s.padding = PaddingMode::circular;
        out.push_back(s);
        s.padding = PaddingMode::zero;
        s.activation = Activation::gelu;
        out.push_back(s);
    }
    {
        ArchSpec s;
        s.family = Family::cnn2d;
        s.depth = 2;
        s.channels = 2;
        s.grid = {3, 3};
        s.kernel = 3;
        s.outputs = 3;
        s.padding = PaddingMode::zero;
        out.push_back(s);
    }
    {
        ArchSpec s;
        s.family = Family::resnet;
        s.plain_units = 1;
        s.blocks = 2;
        s.width = 4;
        s.outputs = 2;
        out.push_back(s);
        s.residual_branch = ResidualBranch::conv;
        s.channels = 2;
        s.grid = {4};
        s.kernel = 3;
        s.padding = PaddingMode::circular;
        out.push_back(s);
    }
    for (NormPlacement np :
         {NormPlacement::pre, NormPlacement::post, NormPlacement::none}) {
        ArchSpec s;
        s.family = Family::transformer;
        s.blocks = 1;
        s.plain_units = 1;
        s.width = 4;
        s.heads = 2;
        s.tokens = 3;
        s.outputs = 2;
        s.norm_placement = np;
        s.activation = Activation::gelu;
        out.push_back(s);
    }
    return out;
}

Vec random_input(const Model& m, Rng rng) {
    Vec x(m.input_dim());
    for (auto& e : x) e = rng.normal();
    return x;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1e-12});
}

double vec_rel_err(const Vec& got, const Vec& want) {
    double diff = 0.0, ref = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        diff += (got[i] - want[i]) * (got[i] - want[i]);
        ref += want[i] * want[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

}  // namespace

TEST_CASE("jvp matches central finite differences on all families") {
    int case_id = 0;
    for (const auto& spec : tiny_specs()) {
        ++case_id;
        CAPTURE(case_id, int(spec.family));
        Model m = build_model(spec, 100 + case_id);
        const auto lay = ParamLayout::of(m);
        Rng rng = Rng(900).fork("dir", case_id);
        const Vec x = random_input(m, rng.fork("x"));
        const ParamVector dir = ParamVector::gaussian(lay, rng.fork("d"));

        const auto tt = jvp_preactivations(m, x, lay, dir);

        const double h = 1e-5;
        const ParamVector theta = flatten_params(m, lay);
        Model mp = m, mm = m;
        ParamVector tp = theta, tm = theta;
        tp.axpy(h, dir);
        tm.axpy(-h, dir);
        unflatten_params(mp, lay, tp);
        unflatten_params(mm, lay, tm);
        const auto fp = forward(mp, x);
        const auto fm = forward(mm, x);

        for (size_t l = 0; l < tt.pre.size(); ++l) {
            Vec fd(tt.pre[l].size());
            for (size_t i = 0; i < fd.size(); ++i)
                fd[i] = (fp.pre[l][i] - fm.pre[l][i]) / (2 * h);
            CAPTURE(l);
            CHECK(vec_rel_err(tt.pre[l], fd) <= 1e-6);
        }
        Vec fd_out(tt.out.size());
        for (size_t i = 0; i < fd_out.size(); ++i)
            fd_out[i] = (fp.out[i] - fm.out[i]) / (2 * h);
        CHECK(vec_rel_err(tt.out, fd_out) <= 1e-6);
    }
}

TEST_CASE("loss gradient matches finite differences of the loss") {
    int case_id = 0;
    for (const auto& spec : tiny_specs()) {
        ++case_id;
        for (LossKind kind : {LossKind::mse, LossKind::cross_entropy}) {
            CAPTURE(case_id, int(kind));
            Model m = build_model(spec, 500 + case_id);
            const auto lay = ParamLayout::of(m);
            LossSpec loss;
            loss.kind = kind;
            loss.output_dim = spec.outputs;

            Rng rng = Rng(1300).fork("batch", case_id, int(kind));
            Batch b;
            for (int s = 0; s < 3; ++s) {
                b.x.push_back(random_input(m, rng.fork("x", s)));
                Vec y(spec.outputs);
                Rng ry = rng.fork("y", s);
                for (auto& e : y) e = ry.normal();
                b.y.push_back(y);
                b.label.push_back(int(rng.fork("l", s).below(spec.outputs)));
            }

            const ParamVector grad = loss_gradient(m, lay, b, loss);

            const double h = 1e-5;
            const ParamVector theta = flatten_params(m, lay);
            ParamVector fd = ParamVector::zeros(lay);
            Model scratch = m;
            for (size_t i = 0; i < lay.total; ++i) {
                ParamVector t = theta;
                t.v[i] += h;
                unflatten_params(scratch, lay, t);
                const double lp = loss_value(scratch, b, loss);
                t.v[i] -= 2 * h;
                unflatten_params(scratch, lay, t);
                const double lm = loss_value(scratch, b, loss);
                fd.v[i] = (lp - lm) / (2 * h);
            }
            CHECK(vec_rel_err(grad.v, fd.v) <= 1e-6);
        }
    }
}

TEST_CASE("jvp zero direction and DAG causality") {
    const auto spec = tiny_specs()[0];
    Model m = build_model(spec, 7);
    const auto lay = ParamLayout::of(m);
    Rng rng(3);
    const Vec x = random_input(m, rng);

    const auto tt0 =
        jvp_preactivations(m, x, lay, ParamVector::zeros(lay));
    for (const auto& z : tt0.pre)
        for (double e : z) CHECK(e == 0.0);
    for (double e : tt0.out) CHECK(e == 0.0);

    // A direction supported on the head leaves every z^(l) untouched.
    ParamVector head_dir = ParamVector::zeros(lay);
    const auto& he = lay.entries[lay.unit_first[m.depth()]];
    for (size_t i = 0; i < he.size; ++i) head_dir.v[he.offset + i] = 1.0;
    const auto tt = jvp_preactivations(m, x, lay, head_dir);
    for (const auto& z : tt.pre)
        for (double e : z) CHECK(e == 0.0);
    double out_mag = 0.0;
    for (double e : tt.out) out_mag += std::abs(e);
    CHECK(out_mag > 0.0);
}

TEST_CASE("jvp is linear in the direction") {
    const auto spec = tiny_specs()[2];
    Model m = build_model(spec, 17);
    const auto lay = ParamLayout::of(m);
    Rng rng(5);
    const Vec x = random_input(m, rng.fork("x"));
    const ParamVector d1 = ParamVector::gaussian(lay, rng.fork("a"));
    ParamVector d2 = d1;
    d2.scale(-2.5);
    const auto f = forward_cached(m, x);
    const auto t1 = jvp_with_forward(m, f, lay, d1);
    const auto t2 = jvp_with_forward(m, f, lay, d2);
    for (size_t l = 0; l < t1.pre.size(); ++l)
        for (size_t i = 0; i < t1.pre[l].size(); ++i)
            CHECK(t2.pre[l][i] == Catch::Approx(-2.5 * t1.pre[l][i]).margin(1e-14));
}

TEST_CASE("jvp and vjp are adjoint") {
    int case_id = 0;
    for (const auto& spec : tiny_specs()) {
        ++case_id;
        CAPTURE(case_id);
        Model m = build_model(spec, 40 + case_id);
        const auto lay = ParamLayout::of(m);
        Rng rng = Rng(60).fork("adj", case_id);
        const Vec x = random_input(m, rng.fork("x"));
        const ParamVector v = ParamVector::gaussian(lay, rng.fork("v"));
        Vec w(m.output_dim());
        Rng rw = rng.fork("w");
        for (auto& e : w) e = rw.normal();

        const auto f = forward_cached(m, x);
        const auto tt = jvp_with_forward(m, f, lay, v);
        ParamVector jt_w = ParamVector::zeros(lay);
        vjp_with_forward(m, f, lay, w, jt_w);

        const double lhs = dot(w, tt.out);
        const double rhs = jt_w.dot(v);
        CHECK(rel_err(lhs, rhs) <= 1e-8);
    }
}

TEST_CASE("hand-computed one-weight gradient") {
    // z = w_head * act(w1 * x) with identity activation, w1 = w_head = 1:
    // the loss (z - y)^2 / 2 at (x, y) = (1, 0) has dL/dw1 = 1.
    ArchSpec spec;
    spec.family = Family::mlp;
    spec.depth = 1;
    spec.width = 1;
    spec.outputs = 1;
    spec.activation = Activation::identity;
    Model m = build_model(spec, 0);
    m.units[0].param(Role::weight).v = {1.0};
    m.head.param(Role::weight).v = {1.0};
    const auto lay = ParamLayout::of(m);
    Batch b;
    b.x.push_back({1.0});
    b.y.push_back({0.0});
    b.label.push_back(0);
    LossSpec loss;
    loss.kind = LossKind::mse;
    loss.output_dim = 1;
    const ParamVector g = loss_gradient(m, lay, b, loss);
    REQUIRE(lay.total == 2);
    CHECK(g.v[0] == Catch::Approx(1.0));  // hidden weight
    CHECK(g.v[1] == Catch::Approx(1.0));  // head weight

    // Zero weights with zero labels give a zero gradient.
    m.units[0].param(Role::weight).v = {0.0};
    m.head.param(Role::weight).v = {0.0};
    const ParamVector g0 = loss_gradient(m, lay, b, loss);
    CHECK(g0.v[0] == 0.0);
    CHECK(g0.v[1] == 0.0);
}
