#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "depthlaw/ammup.hpp"
#include "depthlaw/sweep.hpp"

using namespace depthlaw;

namespace {

LossSpec ce(int classes) {
    LossSpec l;
    l.kind = LossKind::cross_entropy;
    l.output_dim = classes;
    return l;
}

// One-layer softmax probe trained by full-batch gradient descent.
double probe_accuracy(const SynthDataset& ds, int dim) {
    const int C = ds.classes;
    std::vector<Vec> W(C, Vec(dim, 0.0));
    for (int it = 0; it < 300; ++it) {
        std::vector<Vec> grad(C, Vec(dim, 0.0));
        for (size_t s = 0; s < ds.size(); ++s) {
            Vec logits(C, 0.0);
            for (int c = 0; c < C; ++c) logits[c] = dot(W[c], ds.x[s]);
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            double z = 0;
            for (int c = 0; c < C; ++c) z += std::exp(logits[c] - mx);
            for (int c = 0; c < C; ++c) {
                const double p = std::exp(logits[c] - mx) / z;
                const double g = p - (c == ds.label[s] ? 1.0 : 0.0);
                axpy(g / double(ds.size()), ds.x[s], grad[c]);
            }
        }
        for (int c = 0; c < C; ++c) axpy(-0.5, grad[c], W[c]);
    }
    int correct = 0;
    for (size_t s = 0; s < ds.size(); ++s) {
        int arg = 0;
        double best = -1e300;
        for (int c = 0; c < C; ++c) {
            const double v = dot(W[c], ds.x[s]);
            if (v > best) {
                best = v;
                arg = c;
            }
        }
        correct += arg == ds.label[s];
    }
    return double(correct) / double(ds.size());
}

}  // namespace

TEST_CASE("synthetic dataset determinism, balance, separability") {
    const auto a = synth_classification(100, 16, 10, 6.0, 42);
    const auto b = synth_classification(100, 16, 10, 6.0, 42);
    REQUIRE(a.size() == 100);
    CHECK(a.x == b.x);
    CHECK(a.label == b.label);

    std::vector<int> counts(10, 0);
    for (int l : a.label) ++counts[l];
    for (int c : counts) CHECK(c == 10);

    const auto two = synth_classification(200, 8, 2, 10.0, 7);
    CHECK(probe_accuracy(two, 8) >= 0.95);

    CHECK_THROWS_AS(synth_classification(1, 4, 2, 1.0, 0), DomainError);
    CHECK_THROWS_AS(synth_classification(10, 4, 1, 1.0, 0), DomainError);
}

TEST_CASE("lr grid endpoints and geometry") {
    const auto g = lr_grid(1e-4, 10.0, 80);
    REQUIRE(g.size() == 80);
    CHECK(g.front() == 1e-4);
    CHECK(g.back() == 10.0);
    for (size_t i = 1; i + 1 < g.size(); ++i) {
        const double r1 = g[i] / g[i - 1], r2 = g[i + 1] / g[i];
        CHECK(r1 == Catch::Approx(r2).epsilon(1e-12));
    }

    const auto three = lr_grid(1.0, 100.0, 3);
    CHECK(three[0] == Catch::Approx(1.0));
    CHECK(three[1] == Catch::Approx(10.0));
    CHECK(three[2] == Catch::Approx(100.0));

    CHECK_THROWS_AS(lr_grid(1.0, 1.0, 4), DomainError);
    CHECK_THROWS_AS(lr_grid(-1.0, 1.0, 4), DomainError);
    CHECK_THROWS_AS(lr_grid(1e-4, 1.0, 1), DomainError);
}

TEST_CASE("train_one_epoch zero step, descent, divergence") {
    ArchSpec spec;
    spec.family = Family::mlp;
    spec.depth = 2;
    spec.width = 8;
    const LossSpec loss = ce(2);
    const auto ds = synth_classification(32, 8, 2, 8.0, 3);
    OptimizerSpec sgd;

    // Single-batch dataset: at eta = 0 the reported loss is the initial loss.
    const double l0 = train_one_epoch(spec, ds, 0.0, sgd, loss, 5, 32);
    ArchSpec with_out = spec;
    with_out.outputs = 2;
    const Model init = build_model(with_out, Rng(5).fork("init").next_u64());
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    const double expect = loss_value(init, make_batch(ds, all, loss), loss);
    CHECK(l0 == Catch::Approx(expect).margin(1e-15));

    // A sane learning rate descends.
    const EtaStar es = solve_eta_star(with_out, loss, McParams{6, 2, 16, 1}, 5);
    const double l1 =
        train_one_epoch(spec, ds, es.value / 10.0, sgd, loss, 5, 8);
    CHECK(l1 < l0);

    // Over-large rates produce the sentinel, not an exception. MSE on a
    // wider, deeper net makes the blowup unbounded (narrow relu nets can
    // instead collapse dead and plateau, and CE saturates at ln C there).
    ArchSpec wide;
    wide.family = Family::mlp;
    wide.depth = 4;
    wide.width = 32;
    LossSpec mse;
    mse.kind = LossKind::mse;
    mse.output_dim = 2;
    const auto ds2 = synth_classification(64, 32, 2, 8.0, 3);
    const double l2 = train_one_epoch(wide, ds2, 10.0, sgd, mse, 5, 8);
    CHECK(l2 == kDivergence);
}

TEST_CASE("adam optimizer trains") {
    ArchSpec spec;
    spec.family = Family::mlp;
    spec.depth = 3;
    spec.width = 8;
    const LossSpec loss = ce(2);
    const auto ds = synth_classification(64, 8, 2, 8.0, 11);
    OptimizerSpec adam;
    adam.kind = OptimizerKind::adam;
    const double l0 = train_one_epoch(spec, ds, 0.0, adam, loss, 9, 64);
    const double l1 = train_one_epoch(spec, ds, 0.01, adam, loss, 9, 8);
    CHECK(l1 < l0);
}

TEST_CASE("run_sweep cardinality, determinism, resume") {
    SweepPlan plan;
    plan.arch.family = Family::mlp;
    plan.arch.width = 6;
    plan.arch_tag = "mlp";
    plan.depths = {2, 3};
    plan.lr_lo = 1e-3;
    plan.lr_hi = 1.0;
    plan.lr_points = 4;
    plan.seeds = {0, 1};
    plan.loss = ce(2);
    plan.data = {32, 2, 8.0};
    plan.batch = 16;
    plan.jobs = 2;

    const auto recs = run_sweep(plan);
    CHECK(recs.size() == 2 * 4 * 2);

    const std::string path = "sweep_test_tmp.csv";
    std::remove(path.c_str());
    run_sweep(plan, path);
    std::ifstream f1(path);
    std::stringstream s1;
    s1 << f1.rdbuf();
    // Rerun over the completed file: bytes must be identical.
    run_sweep(plan, path);
    std::ifstream f2(path);
    std::stringstream s2;
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());

    // Truncated file resumes and converges to the same bytes.
    {
        std::ifstream in(path);
        std::vector<std::string> lines;
        std::string l;
        while (std::getline(in, l)) lines.push_back(l);
        std::ofstream out(path, std::ios::trunc);
        for (size_t i = 0; i + 5 < lines.size(); ++i) out << lines[i] << '\n';
    }
    const auto resumed = run_sweep(plan, path);
    std::ifstream f3(path);
    std::stringstream s3;
    s3 << f3.rdbuf();
    CHECK(s3.str() == s1.str());
    for (size_t i = 0; i < recs.size(); ++i)
        CHECK(resumed[i].final_loss == recs[i].final_loss);
    std::remove(path.c_str());

    // CSV round trip.
    std::stringstream buf;
    write_sweep_csv(recs, buf);
    const auto parsed = parse_sweep_csv(buf);
    REQUIRE(parsed.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        CHECK(parsed[i].eta == recs[i].eta);
        CHECK(parsed[i].depth == recs[i].depth);
    }
}

TEST_CASE("optimum extraction argmin rules") {
    auto rec = [](int depth, uint64_t seed, double eta, double loss) {
        return SweepRecord{"mlp", depth, 8, seed, eta, loss};
    };
    // Losses (3, 1, 2) on grid (a, b, c): argmin is b.
    {
        const std::vector<SweepRecord> rs = {rec(2, 0, 0.1, 3), rec(2, 0, 0.2, 1),
                                             rec(2, 0, 0.4, 2)};
        const auto s = optimum_per_depth(rs);
        REQUIRE(s.points.size() == 1);
        CHECK(s.points[0].mean_log10_eta == Catch::Approx(std::log10(0.2)));
        CHECK(s.points[0].n_seeds == 1);
        CHECK(s.points[0].var_log10_eta == 0.0);
    }
    // Tie (1, 1, 2): smallest eta wins.
    {
        const std::vector<SweepRecord> rs = {rec(2, 0, 0.1, 1), rec(2, 0, 0.2, 1),
                                             rec(2, 0, 0.4, 2)};
        const auto s = optimum_per_depth(rs);
        CHECK(s.points[0].mean_log10_eta == Catch::Approx(std::log10(0.1)));
    }
    // Monotone transform of the loss column leaves the argmin unchanged.
    {
        std::vector<SweepRecord> rs = {rec(2, 0, 0.1, 3), rec(2, 0, 0.2, 1),
                                       rec(2, 0, 0.4, 2)};
        auto mono = rs;
        for (auto& r : mono) r.final_loss = std::exp(2.0 * r.final_loss) + 5.0;
        CHECK(optimum_per_depth(rs).points[0].mean_log10_eta ==
              optimum_per_depth(mono).points[0].mean_log10_eta);
    }
    // All-divergent depth is excluded and reported.
    {
        const std::vector<SweepRecord> rs = {
            rec(2, 0, 0.1, 1), rec(4, 0, 0.1, kDivergence),
            rec(4, 1, 0.2, kDivergence), rec(8, 0, 0.1, 2)};
        const auto s = optimum_per_depth(rs);
        REQUIRE(s.points.size() == 2);
        REQUIRE(s.excluded_depths.size() == 1);
        CHECK(s.excluded_depths[0] == 4);
    }
    // Divergent cells within a seed are skipped, not fatal.
    {
        const std::vector<SweepRecord> rs = {rec(2, 0, 0.1, kDivergence),
                                             rec(2, 0, 0.2, 4)};
        const auto s = optimum_per_depth(rs);
        CHECK(s.points[0].mean_log10_eta == Catch::Approx(std::log10(0.2)));
    }
}

TEST_CASE("wls fit closed forms") {
    auto pt = [](int L, double mean, double var, int n) {
        return DepthOptimum{L, mean, var, n};
    };
    // Exact line log10 eta = 1 - 1.5 log10 L with zero variance.
    {
        std::vector<DepthOptimum> pts;
        for (int L : {2, 4, 8, 16})
            pts.push_back(pt(L, 1.0 - 1.5 * std::log10(double(L)), 0.0, 3));
        const auto fit = wls_fit(pts);
        CHECK(fit.alpha == Catch::Approx(-1.5).epsilon(1e-12));
        CHECK(fit.beta0 == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(fit.r2 == Catch::Approx(1.0).margin(1e-12));
        CHECK(fit.ci95_lo == Catch::Approx(fit.alpha - 1.96 * fit.stderr_alpha));
        CHECK(fit.ci95_hi == Catch::Approx(fit.alpha + 1.96 * fit.stderr_alpha));
    }
    // Duplicate depth entries equal one collapsed weighted point.
    {
        std::vector<DepthOptimum> split = {pt(4, -0.5, 0.01, 1), pt(4, -0.7, 0.01, 1),
                                           pt(8, -1.0, 0.01, 2),
                                           pt(16, -1.4, 0.01, 2)};
        std::vector<DepthOptimum> merged = {pt(4, -0.6, 0.005, 2),
                                            pt(8, -1.0, 0.01, 2),
                                            pt(16, -1.4, 0.01, 2)};
        const auto f1 = wls_fit(split);
        const auto f2 = wls_fit(merged);
        CHECK(f1.alpha == Catch::Approx(f2.alpha).epsilon(1e-10));
        CHECK(f1.beta0 == Catch::Approx(f2.beta0).epsilon(1e-10));
    }
    // Equal weights reduce to ordinary least squares.
    {
        std::vector<DepthOptimum> pts = {pt(2, -0.2, 0.0, 3), pt(4, -0.9, 0.0, 3),
                                         pt(8, -1.2, 0.0, 3), pt(16, -1.9, 0.0, 3)};
        const auto fit = wls_fit(pts);
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const int n = int(pts.size());
        for (const auto& p : pts) {
            const double x = std::log10(double(p.depth));
            sx += x;
            sy += p.mean_log10_eta;
            sxx += x * x;
            sxy += x * p.mean_log10_eta;
        }
        const double alpha_ols = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        CHECK(fit.alpha == Catch::Approx(alpha_ols).epsilon(1e-10));
    }
    // A noisy outlier moves the fit less when it carries high variance.
    {
        std::vector<DepthOptimum> base = {pt(2, -0.45, 1e-4, 3), pt(4, -0.9, 1e-4, 3),
                                          pt(8, -1.35, 1e-4, 3)};
        auto clean = wls_fit(base).alpha;
        auto off_zero = base;
        off_zero.push_back(pt(16, -0.9, 0.0, 3));  // far off the line, tight
        auto off_var = base;
        off_var.push_back(pt(16, -0.9, 1.0, 3));  // far off the line, noisy
        const double d_zero = std::abs(wls_fit(off_zero).alpha - clean);
        const double d_var = std::abs(wls_fit(off_var).alpha - clean);
        CHECK(d_var < d_zero);
    }
    CHECK_THROWS_AS(wls_fit({pt(4, -0.5, 0.0, 3)}), DomainError);
    CHECK_THROWS_AS(
        wls_fit({pt(4, -0.5, 0.0, 3), pt(4, -0.6, 0.0, 3)}), DomainError);
}
