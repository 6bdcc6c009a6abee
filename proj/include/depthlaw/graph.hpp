#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "depthlaw/common.hpp"

namespace depthlaw {

enum class NodeKind { plain, residual_add, stem, head, branch_interior };
enum class PaddingMode { circular, zero };

inline const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::plain: return "plain";
        case NodeKind::residual_add: return "residual_add";
        case NodeKind::stem: return "stem";
        case NodeKind::head: return "head";
        case NodeKind::branch_interior: return "branch_interior";
    }
    return "?";
}

// branch_interior carries no depth; everything else on the minimal path is
// one depth unit.
inline int depth_weight(NodeKind k) {
    return k == NodeKind::branch_interior ? 0 : 1;
}

struct DepthNode {
    int id = 0;
    NodeKind kind = NodeKind::plain;
};

// Non-recurrent multi-path computation graph. Effective depth is the minimum
// over input->output paths of the summed depth weights of the nodes visited
// (endpoints included).
struct ComputationGraph {
    std::vector<DepthNode> nodes;
    std::vector<std::pair<int, int>> edges;  // (src, dst)
    int input_id = -1;
    int output_id = -1;

    int index_of(int id) const {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].id == id) return int(i);
        throw StructuralError("graph: unknown node id " + std::to_string(id));
    }
};

namespace detail {

struct GraphView {
    std::vector<std::vector<int>> in;   // in[i]  = indices of predecessors
    std::vector<std::vector<int>> out;  // out[i] = indices of successors
    std::vector<int> topo;              // topological order, throws on cycle
};

inline GraphView analyze(const ComputationGraph& g) {
    const size_t n = g.nodes.size();
    if (n == 0) throw StructuralError("graph: empty");
    GraphView v;
    v.in.resize(n);
    v.out.resize(n);
    std::vector<int> indeg(n, 0);
    for (auto [s, d] : g.edges) {
        const int si = g.index_of(s), di = g.index_of(d);
        v.out[si].push_back(di);
        v.in[di].push_back(si);
        ++indeg[di];
    }
    std::vector<int> stack;
    for (size_t i = 0; i < n; ++i)
        if (indeg[i] == 0) stack.push_back(int(i));
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        v.topo.push_back(u);
        for (int w : v.out[u])
            if (--indeg[w] == 0) stack.push_back(w);
    }
    if (v.topo.size() != n) throw StructuralError("graph: cycle detected");
    return v;
}

inline std::vector<bool> reachable_from(const std::vector<std::vector<int>>& adj,
                                        int start) {
    std::vector<bool> seen(adj.size(), false);
    std::vector<int> stack = {start};
    seen[start] = true;
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int w : adj[u])
            if (!seen[w]) {
                seen[w] = true;
                stack.push_back(w);
            }
    }
    return seen;
}

}  // namespace detail

inline void validate(const ComputationGraph& g) {
    const auto view = detail::analyze(g);
    const int in_idx = g.index_of(g.input_id);
    const int out_idx = g.index_of(g.output_id);
    const auto fwd = detail::reachable_from(view.out, in_idx);
    const auto bwd = detail::reachable_from(view.in, out_idx);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        if (!fwd[i])
            throw StructuralError("graph: node " + std::to_string(g.nodes[i].id) +
                                  " unreachable from input");
        if (!bwd[i])
            throw StructuralError("graph: output unreachable from node " +
                                  std::to_string(g.nodes[i].id));
        const auto k = g.nodes[i].kind;
        const size_t fanin = view.in[i].size();
        if (k == NodeKind::residual_add && fanin != 2)
            throw StructuralError("graph: residual_add node " +
                                  std::to_string(g.nodes[i].id) +
                                  " needs exactly two in-edges");
        if (k != NodeKind::residual_add) {
            const size_t want = (int(i) == in_idx) ? 0 : 1;
            if (fanin != want)
                throw StructuralError("graph: node " + std::to_string(g.nodes[i].id) +
                                      " has fan-in " + std::to_string(fanin));
        }
    }
}

// Minimal-path depth by dynamic programming in topological order.
inline int effective_depth(const ComputationGraph& g) {
    validate(g);
    const auto view = detail::analyze(g);
    const int in_idx = g.index_of(g.input_id);
    const int out_idx = g.index_of(g.output_id);
    constexpr int kInf = 1 << 29;
    std::vector<int> dist(g.nodes.size(), kInf);
    for (int u : view.topo) {
        int best = (u == in_idx) ? 0 : kInf;
        for (int p : view.in[u]) best = std::min(best, dist[p]);
        if (best < kInf) dist[u] = best + depth_weight(g.nodes[u].kind);
    }
    if (dist[out_idx] >= kInf)
        throw StructuralError("graph: no input->output path");
    return dist[out_idx];
}

// Chains g2 after g1 (output of g1 feeds input of g2); node ids of g2 are
// shifted past g1's.
inline ComputationGraph series(const ComputationGraph& g1,
                               const ComputationGraph& g2) {
    ComputationGraph g = g1;
    int shift = 0;
    for (const auto& n : g1.nodes) shift = std::max(shift, n.id + 1);
    for (const auto& n : g2.nodes) g.nodes.push_back({n.id + shift, n.kind});
    for (auto [s, d] : g2.edges) g.edges.push_back({s + shift, d + shift});
    g.edges.push_back({g1.output_id, g2.input_id + shift});
    g.output_id = g2.output_id + shift;
    return g;
}

// ---------------------------------------------------------------------------
// Line-based text format: `node <id> <kind>`, `edge <src> <dst>`,
// `input <id>`, `output <id>`. Blank lines and `#` comments are ignored.

inline ComputationGraph parse_graph(std::istream& is) {
    ComputationGraph g;
    std::string line;
    int lineno = 0;
    bool have_input = false, have_output = false;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        auto fail = [&](const std::string& why) {
            throw StructuralError("graph file line " + std::to_string(lineno) +
                                  ": " + why);
        };
        if (tag == "node") {
            int id;
            std::string kind;
            if (!(ls >> id >> kind)) fail("expected `node <id> <kind>`");
            NodeKind k;
            if (kind == "plain") k = NodeKind::plain;
            else if (kind == "residual_add") k = NodeKind::residual_add;
            else if (kind == "stem") k = NodeKind::stem;
            else if (kind == "head") k = NodeKind::head;
            else if (kind == "branch_interior") k = NodeKind::branch_interior;
            else { fail("unknown node kind `" + kind + "`"); return g; }
            for (const auto& n : g.nodes)
                if (n.id == id) fail("duplicate node id");
            g.nodes.push_back({id, k});
        } else if (tag == "edge") {
            int s, d;
            if (!(ls >> s >> d)) fail("expected `edge <src> <dst>`");
            g.edges.push_back({s, d});
        } else if (tag == "input") {
            if (!(ls >> g.input_id)) fail("expected `input <id>`");
            have_input = true;
        } else if (tag == "output") {
            if (!(ls >> g.output_id)) fail("expected `output <id>`");
            have_output = true;
        } else {
            fail("unknown directive `" + tag + "`");
        }
        std::string rest;
        if (ls >> rest) fail("trailing tokens");
    }
    if (!have_input || !have_output)
        throw StructuralError("graph file: missing input/output declaration");
    return g;
}

inline ComputationGraph parse_graph(const std::string& text) {
    std::istringstream is(text);
    return parse_graph(is);
}

inline void serialize_graph(const ComputationGraph& g, std::ostream& os) {
    for (const auto& n : g.nodes)
        os << "node " << n.id << ' ' << to_string(n.kind) << '\n';
    for (auto [s, d] : g.edges) os << "edge " << s << ' ' << d << '\n';
    os << "input " << g.input_id << '\n';
    os << "output " << g.output_id << '\n';
}

// ---------------------------------------------------------------------------
// Spatial grids and kernel offset sets (CNN boundary geometry).

struct SpatialGrid {
    std::vector<int> dims;  // N for 1D, {H, W} for 2D

    long long sites() const {
        if (dims.empty()) throw DomainError("grid: empty");
        long long n = 1;
        for (int d : dims) {
            if (d < 1) throw DomainError("grid: dim must be >= 1");
            n *= d;
        }
        return n;
    }
};

struct KernelOffsets {
    std::vector<std::vector<int>> offsets;

    int size() const { return int(offsets.size()); }
    int dim() const {
        if (offsets.empty()) throw DomainError("kernel: empty offset set");
        return int(offsets[0].size());
    }

    // Centered hypercube kernel of odd side `k` in `d` dimensions,
    // e.g. k=3, d=2 -> {-1,0,1}^2.
    static KernelOffsets centered(int k, int d) {
        if (k < 1 || k % 2 == 0)
            throw DomainError("kernel: side must be odd and positive");
        const int s = k / 2;
        KernelOffsets out;
        std::vector<int> cur(d, -s);
        for (;;) {
            out.offsets.push_back(cur);
            int axis = d - 1;
            while (axis >= 0 && ++cur[axis] > s) cur[axis--] = -s;
            if (axis < 0) break;
        }
        return out;
    }
};

// Fraction of sites whose kernel support leaves the grid under zero padding.
// Circular padding wraps, so no site is ever on the boundary.
inline double boundary_fraction(const SpatialGrid& grid,
                                const KernelOffsets& kernel,
                                PaddingMode padding) {
    const long long n = grid.sites();
    if (padding == PaddingMode::circular) return 0.0;
    if (kernel.dim() != int(grid.dims.size()))
        throw DomainError("boundary_fraction: kernel/grid dimension mismatch");
    const int d = int(grid.dims.size());
    std::vector<int> p(d, 0);
    long long boundary = 0;
    for (;;) {
        bool exits = false;
        for (const auto& off : kernel.offsets) {
            for (int a = 0; a < d && !exits; ++a) {
                const int q = p[a] + off[a];
                if (q < 0 || q >= grid.dims[a]) exits = true;
            }
            if (exits) break;
        }
        boundary += exits;
        int axis = d - 1;
        while (axis >= 0 && ++p[axis] >= grid.dims[axis]) p[axis--] = 0;
        if (axis < 0) break;
    }
    return double(boundary) / double(n);
}

}  // namespace depthlaw
