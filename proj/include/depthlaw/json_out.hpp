#pragma once

#include <json.hpp>

#include "depthlaw/ammup.hpp"
#include "depthlaw/oracles.hpp"
#include "depthlaw/sweep.hpp"

namespace depthlaw {

inline nlohmann::json to_json(const SensitivityReport& rep) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : rep.layers)
        layers.push_back({{"l", l.l}, {"S", l.value}, {"stderr", l.stderr}});
    return {{"eta", rep.eta},
            {"B", rep.batch},
            {"layers", layers},
            {"S_bar", rep.s_bar},
            {"S_bar_stderr", rep.s_bar_stderr},
            {"n_init", rep.n_init},
            {"n_data", rep.n_data},
            {"seed", rep.seed}};
}

inline nlohmann::json to_json(const EtaStar& es) {
    return {{"eta_star", es.value},
            {"S_bar_at_one", es.s_bar_at_one},
            {"stderr", es.stderr},
            {"L", es.depth}};
}

inline nlohmann::json to_json(const PowerLawFit& fit) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : fit.points)
        points.push_back({{"L", p.depth},
                          {"mean_log_eta", p.mean_log10_eta},
                          {"var", p.var_log10_eta},
                          {"n", p.n_seeds}});
    return {{"alpha", fit.alpha},
            {"beta0", fit.beta0},
            {"stderr_alpha", fit.stderr_alpha},
            {"ci95", {fit.ci95_lo, fit.ci95_hi}},
            {"r2", fit.r2},
            {"points", points}};
}

inline nlohmann::json to_json(const oracles::OracleReport& r) {
    nlohmann::json j = {{"name", r.name},     {"params", r.params},
                        {"observed", r.observed}, {"reference", r.reference},
                        {"tolerance", r.tolerance}, {"pass", r.pass}};
    if (r.stderr >= 0) {
        j["stderr"] = r.stderr;
        j["z"] = r.z;
    }
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

}  // namespace depthlaw
