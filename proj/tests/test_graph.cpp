#include <catch2/catch_amalgamated.hpp>

#include "depthlaw/arch.hpp"
#include "depthlaw/graph.hpp"
#include "depthlaw/rng.hpp"

using namespace depthlaw;

namespace {

ComputationGraph chain_of_plain(int n) {
    ComputationGraph g;
    for (int i = 0; i < n; ++i) g.nodes.push_back({i, NodeKind::plain});
    for (int i = 1; i < n; ++i) g.edges.push_back({i - 1, i});
    g.input_id = 0;
    g.output_id = n - 1;
    return g;
}

// Residual backbone: m plain units then K residual units, each with
// `interior` zero-weight nodes on the branch.
ComputationGraph residual_backbone(int m, int K, int interior = 1) {
    ComputationGraph g;
    int next = 0;
    auto add = [&](NodeKind k) {
        g.nodes.push_back({next, k});
        return next++;
    };
    int prev = add(NodeKind::plain);
    g.input_id = prev;
    for (int i = 1; i < m; ++i) {
        const int u = add(NodeKind::plain);
        g.edges.push_back({prev, u});
        prev = u;
    }
    for (int k = 0; k < K; ++k) {
        int b = prev;
        for (int j = 0; j < interior; ++j) {
            const int u = add(NodeKind::branch_interior);
            g.edges.push_back({b, u});
            b = u;
        }
        const int sum = add(NodeKind::residual_add);
        g.edges.push_back({b, sum});
        g.edges.push_back({prev, sum});
        prev = sum;
    }
    g.output_id = prev;
    return g;
}

}  // namespace

TEST_CASE("effective depth of a plain chain") {
    CHECK(effective_depth(chain_of_plain(5)) == 5);
    CHECK(effective_depth(chain_of_plain(1)) == 1);
}

TEST_CASE("effective depth counts residual additions once") {
    // m = 2 plain units, K = 4 residual blocks -> L = m + K = 6.
    CHECK(effective_depth(residual_backbone(2, 4)) == 6);
    // Deep branches do not change the minimal path.
    CHECK(effective_depth(residual_backbone(2, 4, 7)) == 6);
}

TEST_CASE("transformer blocks contribute two depth units each") {
    ArchSpec spec;
    spec.family = Family::transformer;
    spec.blocks = 6;
    spec.plain_units = 0;
    spec.width = 4;
    spec.heads = 1;
    CHECK(effective_depth(build_graph(spec)) == 12);
}

TEST_CASE("depth_of_preset matches family conventions") {
    ArchSpec mlp;
    mlp.family = Family::mlp;
    mlp.depth = 8;
    CHECK(depth_of_preset(mlp) == 8);

    ArchSpec res;
    res.family = Family::resnet;
    res.plain_units = 2;
    res.blocks = 14;
    CHECK(depth_of_preset(res) == 16);

    ArchSpec tr;
    tr.family = Family::transformer;
    tr.blocks = 3;
    tr.plain_units = 1;
    tr.width = 4;
    CHECK(depth_of_preset(tr) == 7);
    tr.plain_units = 0;
    CHECK(depth_of_preset(tr) == 6);
}

TEST_CASE("structural errors") {
    ComputationGraph g = chain_of_plain(3);
    g.edges.push_back({2, 0});  // cycle
    CHECK_THROWS_AS(effective_depth(g), StructuralError);

    ComputationGraph h = chain_of_plain(3);
    h.nodes.push_back({9, NodeKind::plain});  // dangling node
    CHECK_THROWS_AS(effective_depth(h), StructuralError);

    ComputationGraph r = residual_backbone(1, 1);
    r.edges.pop_back();  // residual_add left with a single in-edge
    CHECK_THROWS_AS(effective_depth(r), StructuralError);
}

TEST_CASE("series composition adds depths") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int m1 = 1 + int(rng.below(3)), k1 = int(rng.below(4));
        const int m2 = 1 + int(rng.below(3)), k2 = int(rng.below(4));
        const auto g1 = residual_backbone(m1, k1);
        const auto g2 = residual_backbone(m2, k2);
        CHECK(effective_depth(series(g1, g2)) ==
              effective_depth(g1) + effective_depth(g2));
    }
}

TEST_CASE("graph text format round trip and strictness") {
    const auto g = residual_backbone(2, 3);
    std::ostringstream os;
    serialize_graph(g, os);
    const auto parsed = parse_graph(os.str());
    CHECK(effective_depth(parsed) == effective_depth(g));
    std::ostringstream os2;
    serialize_graph(parsed, os2);
    CHECK(os.str() == os2.str());

    CHECK_THROWS_AS(parse_graph("node 0 bogus\ninput 0\noutput 0\n"),
                    StructuralError);
    CHECK_THROWS_AS(parse_graph("node 0 plain\n"), StructuralError);
    CHECK_THROWS_AS(parse_graph("nod 0 plain\ninput 0\noutput 0\n"),
                    StructuralError);
    CHECK_THROWS_AS(parse_graph("node 0 plain extra\ninput 0\noutput 0\n"),
                    StructuralError);
}

TEST_CASE("boundary fraction closed cases") {
    SpatialGrid g1{{10}};
    const auto k1 = KernelOffsets::centered(3, 1);
    CHECK(boundary_fraction(g1, k1, PaddingMode::circular) == 0.0);
    CHECK(boundary_fraction(g1, k1, PaddingMode::zero) ==
          Catch::Approx(0.2).margin(0));

    SpatialGrid g2{{5, 5}};
    const auto k2 = KernelOffsets::centered(3, 2);
    CHECK(boundary_fraction(g2, k2, PaddingMode::zero) ==
          Catch::Approx(0.64).margin(0));
    CHECK(boundary_fraction(g2, k2, PaddingMode::circular) == 0.0);

    CHECK_THROWS_AS(boundary_fraction(SpatialGrid{{}}, k1, PaddingMode::zero),
                    DomainError);
    CHECK_THROWS_AS(boundary_fraction(g2, k1, PaddingMode::zero), DomainError);
}

TEST_CASE("boundary fraction monotonicity") {
    for (int n = 2; n <= 64; n *= 2) {
        SpatialGrid g{{n}};
        double prev = 0.0;
        for (int k = 1; k <= 7; k += 2) {
            const double f =
                boundary_fraction(g, KernelOffsets::centered(k, 1), PaddingMode::zero);
            CHECK(f >= prev);  // larger kernel never shrinks the fraction
            prev = f;
            // 1D bound: fraction <= 2 s / N with s the half-span.
            CHECK(f <= 2.0 * (k / 2) / double(n) + 1e-12);
        }
    }
    // Growing every grid dim with the kernel fixed never increases it.
    const auto k3 = KernelOffsets::centered(3, 2);
    double prev = 1.0;
    for (int n = 3; n <= 16; ++n) {
        const double f = boundary_fraction(SpatialGrid{{n, n}}, k3, PaddingMode::zero);
        CHECK(f <= prev + 1e-12);
        prev = f;
    }
}

TEST_CASE("depth invariant under branch interior insertion") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int m = 1 + int(rng.below(3));
        const int K = 1 + int(rng.below(5));
        const int base = effective_depth(residual_backbone(m, K, 1));
        const int fat = effective_depth(residual_backbone(m, K, 1 + int(rng.below(6))));
        CHECK(base == fat);
    }
}
