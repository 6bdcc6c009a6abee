#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "depthlaw/common.hpp"
#include "depthlaw/graph.hpp"

namespace depthlaw {

enum class Family { mlp, cnn1d, cnn2d, resnet, transformer };
enum class Activation { relu, gelu, identity };
enum class NormPlacement { pre, post, none };
enum class ResidualBranch { dense, conv };

inline const char* to_string(Family f) {
    switch (f) {
        case Family::mlp: return "mlp";
        case Family::cnn1d: return "cnn1d";
        case Family::cnn2d: return "cnn2d";
        case Family::resnet: return "resnet";
        case Family::transformer: return "transformer";
    }
    return "?";
}

struct ArchSpec {
    Family family = Family::mlp;
    int depth = 4;        // L for mlp / cnn
    int blocks = 0;       // K: residual blocks / transformer blocks
    int plain_units = 1;  // m for resnet; stem units (0 or 1) for transformer
    int width = 32;       // hidden width n (mlp, dense resnet) / model width d
    int channels = 8;     // C for conv families
    std::vector<int> grid = {8};
    int kernel = 3;       // odd kernel side, centered offsets
    Activation activation = Activation::relu;
    PaddingMode padding = PaddingMode::circular;
    NormPlacement norm_placement = NormPlacement::pre;
    int heads = 1;
    int tokens = 4;
    ResidualBranch residual_branch = ResidualBranch::dense;
    int outputs = 10;  // head dimension; set programmatically, not a config key
    double residual_variance_const = 1.0;  // c in the homogeneous residual model
    uint64_t seed = 0;

    bool is_conv() const {
        return family == Family::cnn1d || family == Family::cnn2d ||
               (family == Family::resnet &&
                residual_branch == ResidualBranch::conv);
    }

    int grid_sites() const {
        long long n = 1;
        for (int d : grid) n *= d;
        return int(n);
    }

    // Effective depth L implied by the spec (head/classifier excluded: the
    // model output z^(L+1) lies beyond the last depth unit).
    int effective_depth() const {
        switch (family) {
            case Family::mlp:
            case Family::cnn1d:
            case Family::cnn2d: return depth;
            case Family::resnet: return plain_units + blocks;
            case Family::transformer: return plain_units + 2 * blocks;
        }
        return 0;
    }

    void validate() const {
        auto chk = [](bool ok, const std::string& m) {
            if (!ok) throw ConfigError("arch: " + m);
        };
        chk(width >= 1, "width must be >= 1");
        chk(outputs >= 1, "outputs must be >= 1");
        switch (family) {
            case Family::mlp:
                chk(depth >= 1, "mlp depth must be >= 1");
                break;
            case Family::cnn1d:
            case Family::cnn2d: {
                chk(depth >= 1, "cnn depth must be >= 1");
                chk(channels >= 1, "channels must be >= 1");
                const int d = family == Family::cnn1d ? 1 : 2;
                chk(int(grid.size()) == d, "grid rank must match family");
                for (int g : grid) chk(g >= 1, "grid dims must be >= 1");
                chk(kernel >= 1 && kernel % 2 == 1, "kernel side must be odd");
                break;
            }
            case Family::resnet:
                chk(blocks >= 1, "resnet needs blocks >= 1");
                chk(plain_units >= 0, "plain_units must be >= 0");
                if (residual_branch == ResidualBranch::conv) {
                    chk(channels >= 1, "channels must be >= 1");
                    chk(!grid.empty() && int(grid.size()) <= 2,
                        "conv resnet grid must be 1D or 2D");
                    chk(kernel >= 1 && kernel % 2 == 1, "kernel side must be odd");
                }
                break;
            case Family::transformer:
                chk(blocks >= 1, "transformer needs blocks >= 1");
                chk(plain_units == 0 || plain_units == 1,
                    "transformer stem units must be 0 or 1");
                chk(tokens >= 1, "tokens must be >= 1");
                chk(heads >= 1 && width % heads == 0,
                    "heads must divide width");
                break;
        }
        chk(residual_variance_const > 0, "residual variance const must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Config file format: one `key = value` per line, `#` comments. Unknown keys
// are errors. Keys: family, depth, blocks, plain_units, width, channels,
// grid, kernel, activation, padding, norm_placement, heads, tokens, seed.

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_grid(const std::string& v) {
    std::vector<int> dims;
    std::string part;
    std::istringstream is(v);
    while (std::getline(is, part, 'x')) {
        try {
            dims.push_back(std::stoi(detail::trim(part)));
        } catch (const std::exception&) {
            throw ConfigError("config: bad grid value `" + v + "`");
        }
    }
    if (dims.empty()) throw ConfigError("config: empty grid value");
    return dims;
}

}  // namespace detail

inline void apply_config_entry(ArchSpec& spec, const std::string& key,
                               const std::string& value) {
    auto as_int = [&](const std::string& v) {
        try {
            return std::stoi(v);
        } catch (const std::exception&) {
            throw ConfigError("config: key `" + key + "` expects an integer, got `" +
                              v + "`");
        }
    };
    if (key == "family") {
        if (value == "mlp") spec.family = Family::mlp;
        else if (value == "cnn1d") spec.family = Family::cnn1d;
        else if (value == "cnn2d") spec.family = Family::cnn2d;
        else if (value == "resnet") spec.family = Family::resnet;
        else if (value == "transformer") spec.family = Family::transformer;
        else throw ConfigError("config: unknown family `" + value + "`");
        // Conv families default to the conv residual branch.
        if (spec.family == Family::cnn1d) spec.grid.resize(1, 8);
        if (spec.family == Family::cnn2d) spec.grid.resize(2, 8);
    } else if (key == "depth") {
        spec.depth = as_int(value);
    } else if (key == "blocks") {
        spec.blocks = as_int(value);
    } else if (key == "plain_units") {
        spec.plain_units = as_int(value);
    } else if (key == "width") {
        spec.width = as_int(value);
    } else if (key == "channels") {
        spec.channels = as_int(value);
    } else if (key == "grid") {
        spec.grid = detail::parse_grid(value);
    } else if (key == "kernel") {
        spec.kernel = as_int(value);
    } else if (key == "activation") {
        if (value == "relu") spec.activation = Activation::relu;
        else if (value == "gelu") spec.activation = Activation::gelu;
        else if (value == "identity") spec.activation = Activation::identity;
        else throw ConfigError("config: unknown activation `" + value + "`");
    } else if (key == "padding") {
        if (value == "circular") spec.padding = PaddingMode::circular;
        else if (value == "zero") spec.padding = PaddingMode::zero;
        else throw ConfigError("config: unknown padding `" + value + "`");
    } else if (key == "norm_placement") {
        if (value == "pre") spec.norm_placement = NormPlacement::pre;
        else if (value == "post") spec.norm_placement = NormPlacement::post;
        else if (value == "none") spec.norm_placement = NormPlacement::none;
        else throw ConfigError("config: unknown norm_placement `" + value + "`");
    } else if (key == "heads") {
        spec.heads = as_int(value);
    } else if (key == "tokens") {
        spec.tokens = as_int(value);
    } else if (key == "residual_branch") {
        if (value == "dense") spec.residual_branch = ResidualBranch::dense;
        else if (value == "conv") spec.residual_branch = ResidualBranch::conv;
        else throw ConfigError("config: unknown residual_branch `" + value + "`");
    } else if (key == "seed") {
        try {
            spec.seed = std::stoull(value);
        } catch (const std::exception&) {
            throw ConfigError("config: bad seed `" + value + "`");
        }
    } else {
        throw ConfigError("config: unknown key `" + key + "`");
    }
}

inline ArchSpec parse_arch_config(std::istream& is) {
    ArchSpec spec;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected `key = value`");
        apply_config_entry(spec, detail::trim(t.substr(0, eq)),
                           detail::trim(t.substr(eq + 1)));
    }
    spec.validate();
    return spec;
}

inline ArchSpec parse_arch_config_text(const std::string& text) {
    std::istringstream is(text);
    return parse_arch_config(is);
}

inline ArchSpec load_arch_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open `" + path + "`");
    return parse_arch_config(f);
}

// ---------------------------------------------------------------------------
// Graph presets mirroring each family's depth-unit layout.

inline ComputationGraph build_graph(const ArchSpec& spec) {
    spec.validate();
    ComputationGraph g;
    int next = 0;
    auto add = [&](NodeKind k) {
        g.nodes.push_back({next, k});
        return next++;
    };
    auto chain = [&](int from, int to) { g.edges.push_back({from, to}); };

    // One residual unit: skip edge prev->add plus a branch through an
    // interior node (depth weight zero).
    auto residual_unit = [&](int prev) {
        const int interior = add(NodeKind::branch_interior);
        const int sum = add(NodeKind::residual_add);
        chain(prev, interior);
        chain(interior, sum);
        chain(prev, sum);
        return sum;
    };

    switch (spec.family) {
        case Family::mlp:
        case Family::cnn1d:
        case Family::cnn2d: {
            int prev = add(NodeKind::plain);
            g.input_id = prev;
            for (int l = 1; l < spec.depth; ++l) {
                const int u = add(NodeKind::plain);
                chain(prev, u);
                prev = u;
            }
            g.output_id = prev;
            break;
        }
        case Family::resnet: {
            int prev = -1;
            for (int i = 0; i < spec.plain_units; ++i) {
                const int u = add(i == 0 ? NodeKind::stem : NodeKind::plain);
                if (prev >= 0) chain(prev, u);
                else g.input_id = u;
                prev = u;
            }
            if (prev < 0) {
                // m = 0: blocks hang off an uncounted entry node.
                prev = add(NodeKind::branch_interior);
                g.input_id = prev;
            }
            for (int k = 0; k < spec.blocks; ++k) prev = residual_unit(prev);
            g.output_id = prev;
            break;
        }
        case Family::transformer: {
            int prev;
            if (spec.plain_units == 1) {
                prev = add(NodeKind::stem);
            } else {
                prev = add(NodeKind::branch_interior);  // uncounted entry point
            }
            g.input_id = prev;
            for (int b = 0; b < spec.blocks; ++b) {
                prev = residual_unit(prev);  // attention half
                prev = residual_unit(prev);  // feedforward half
            }
            g.output_id = prev;
            break;
        }
    }
    return g;
}

inline int depth_of_preset(const ArchSpec& spec) {
    return effective_depth(build_graph(spec));
}

}  // namespace depthlaw
