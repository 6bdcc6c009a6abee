// Command-line front end: depth inspection, update-energy measurement,
// maximal-update learning-rate solving, sweeps, power-law fits, depthwise
// transfer, and the numerical verification suite.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "depthlaw/json_out.hpp"
#include "depthlaw/svgplot.hpp"

using namespace depthlaw;

namespace {

struct CommonArchArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

// Precedence: --set > DEPTHLAW_SEED > config file > defaults.
ArchSpec resolve_arch(const CommonArchArgs& args) {
    ArchSpec spec =
        args.config_path.empty() ? ArchSpec{} : load_arch_config(args.config_path);
    if (const char* env = std::getenv("DEPTHLAW_SEED")) {
        try {
            spec.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("DEPTHLAW_SEED is not an integer");
        }
    }
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got `" + kv + "`");
        apply_config_entry(spec, detail::trim(kv.substr(0, eq)),
                           detail::trim(kv.substr(eq + 1)));
    }
    spec.validate();
    return spec;
}

LossSpec make_loss(const std::string& kind, int outputs, double label_var) {
    LossSpec loss;
    if (kind == "mse") loss.kind = LossKind::mse;
    else if (kind == "ce") loss.kind = LossKind::cross_entropy;
    else throw ConfigError("loss must be mse or ce");
    loss.output_dim = outputs;
    loss.label_variance = label_var;
    loss.validate();
    return loss;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::istringstream is(csv);
    std::string part;
    while (std::getline(is, part, ',')) {
        try {
            out.push_back(std::stoi(detail::trim(part)));
        } catch (const std::exception&) {
            throw ConfigError("bad integer list `" + csv + "`");
        }
    }
    return out;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write `" + path + "`");
    f << content;
}

int cmd_verify(uint64_t seed, bool quick, const std::string& only_csv,
               const std::string& out_path) {
    oracles::OracleSuiteConfig cfg;
    cfg.seed = seed;
    if (quick) {
        cfg.min_sum_max_l = 50;
        cfg.merge_trials = 25;
        cfg.top_reduction_mc = 300;
        cfg.finite_channel_mc = 1200;
        cfg.resnet_mc = 300;
        cfg.ln_samples = 150;
        cfg.boundary_trials = 30;
        cfg.isotropy_mc = 150;
        cfg.gelu_samples = 100000;
    }
    std::vector<std::string> only;
    if (!only_csv.empty()) {
        std::istringstream is(only_csv);
        std::string part;
        while (std::getline(is, part, ',')) only.push_back(detail::trim(part));
    }
    const auto reports = oracles::run_oracle_suite(cfg, only);
    if (reports.empty()) throw ConfigError("verify: no oracle matches --only");

    nlohmann::json arr = nlohmann::json::array();
    int failed = 0;
    for (const auto& r : reports) {
        const auto j = to_json(r);
        std::cout << j.dump() << "\n";
        arr.push_back(j);
        failed += r.pass ? 0 : 1;
    }
    nlohmann::json summary = {{"summary", true},
                              {"total", reports.size()},
                              {"passed", reports.size() - failed},
                              {"failed", failed}};
    std::cout << summary.dump() << "\n";
    if (!out_path.empty()) write_file(out_path, arr.dump(2) + "\n");

    std::fprintf(stderr, "%-32s %-5s %14s %14s %12s\n", "name", "pass",
                 "observed", "reference", "tolerance");
    for (const auto& r : reports)
        std::fprintf(stderr, "%-32s %-5s %14.6g %14.6g %12.4g\n",
                     r.name.c_str(), r.pass ? "ok" : "FAIL", r.observed,
                     r.reference, r.tolerance);
    std::fprintf(stderr, "%d/%zu oracles passed\n",
                 int(reports.size()) - failed, reports.size());
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depth-scaling laws for non-recurrent multi-path networks"};
    app.require_subcommand(1);

    CommonArchArgs arch_args;
    std::string graph_path;

    auto add_arch_opts = [&](CLI::App* sub, bool required) {
        auto* opt = sub->add_option("--config", arch_args.config_path,
                                    "architecture config file");
        if (required) opt->required();
        sub->add_option("--set", arch_args.overrides,
                        "override config entries (key=value, repeatable)");
    };

    auto* depth_cmd =
        app.add_subcommand("depth", "effective depth of a config or graph file");
    add_arch_opts(depth_cmd, false);
    depth_cmd->add_option("--graph", graph_path, "graph file (node/edge format)");

    double eta = 1.0;
    std::string loss_kind = "mse";
    int outputs = 10;
    double label_var = 1.0;
    McParams mc;
    std::string out_path;
    bool literal = false;

    auto* measure_cmd =
        app.add_subcommand("measure", "layerwise update energies S_l and S_bar");
    add_arch_opts(measure_cmd, true);
    measure_cmd->add_option("--eta", eta, "learning rate")->required();
    auto add_mc_opts = [&](CLI::App* sub) {
        sub->add_option("--loss", loss_kind, "mse|ce");
        sub->add_option("--outputs", outputs, "output dimension M");
        sub->add_option("--label-variance", label_var, "sigma_y^2 (mse)");
        sub->add_option("--n-init", mc.n_init, "initialization samples");
        sub->add_option("--n-data", mc.n_data, "data draws per init");
        sub->add_option("--batch", mc.batch, "batch size B");
        sub->add_option("--jobs", mc.jobs, "worker threads");
        sub->add_option("--out", out_path, "also write the JSON here");
    };
    add_mc_opts(measure_cmd);

    auto* solve_cmd =
        app.add_subcommand("solve", "maximal-update learning rate eta*");
    add_arch_opts(solve_cmd, true);
    add_mc_opts(solve_cmd);
    solve_cmd->add_flag("--literal", literal,
                        "bisect the literal one-step budget instead");

    auto* sweep_cmd =
        app.add_subcommand("sweep", "LR grid search over depths and seeds");
    add_arch_opts(sweep_cmd, true);
    std::string depths_csv = "2,4,8,16", tag, optimizer = "sgd",
                stat = "tail_mean", sweep_loss = "ce", sweep_out;
    int n_seeds = 3, lr_points = 20, classes = 4, data_n = 2048, batch = 64,
        epochs = 1, jobs = 1;
    double lr_lo = 1e-4, lr_hi = 10.0, separation = 5.0;
    sweep_cmd->add_option("--depths", depths_csv, "comma list of effective depths");
    sweep_cmd->add_option("--tag", tag, "arch tag for the CSV (default family)");
    sweep_cmd->add_option("--lr-lo", lr_lo, "grid low end");
    sweep_cmd->add_option("--lr-hi", lr_hi, "grid high end");
    sweep_cmd->add_option("--lr-points", lr_points, "grid points");
    sweep_cmd->add_option("--seeds", n_seeds, "number of seeds (0..n-1)");
    sweep_cmd->add_option("--optimizer", optimizer, "sgd|adam");
    sweep_cmd->add_option("--loss", sweep_loss, "ce|mse");
    sweep_cmd->add_option("--classes", classes, "synthetic class count");
    sweep_cmd->add_option("--data-n", data_n, "synthetic dataset size");
    sweep_cmd->add_option("--separation", separation, "class mean separation");
    sweep_cmd->add_option("--batch", batch, "batch size");
    sweep_cmd->add_option("--epochs", epochs, "training epochs");
    sweep_cmd->add_option("--loss-statistic", stat, "last|epoch_mean|tail_mean");
    sweep_cmd->add_option("--jobs", jobs, "worker threads");
    sweep_cmd->add_option("--out", sweep_out, "CSV output path")->required();

    auto* fit_cmd =
        app.add_subcommand("fit", "weighted power-law fit of sweep results");
    std::string fit_input, fit_arch, svg_path;
    fit_cmd->add_option("--input", fit_input, "sweep CSV")->required();
    fit_cmd->add_option("--arch", fit_arch, "arch tag to fit (when several present)");
    fit_cmd->add_option("--svg", svg_path, "write a log-log scatter+fit SVG here");
    fit_cmd->add_option("--out", out_path, "also write fit JSON here");

    auto* transfer_cmd =
        app.add_subcommand("transfer", "depthwise learning-rate transfer");
    double eta0 = 0.0, exponent = kDepthExponent;
    int L0 = 0, L_single = 0;
    std::string transfer_depths;
    transfer_cmd->add_option("--eta0", eta0, "calibrated learning rate")->required();
    transfer_cmd->add_option("--L0", L0, "calibration depth")->required();
    transfer_cmd->add_option("--L", L_single, "target depth");
    transfer_cmd->add_option("--depths", transfer_depths, "comma list of target depths");
    transfer_cmd->add_option("--exponent", exponent, "transfer exponent");

    auto* verify_cmd = app.add_subcommand("verify", "numerical oracle suite");
    uint64_t verify_seed = 0;
    bool quick = false;
    std::string only_csv;
    verify_cmd->add_option("--seed", verify_seed, "suite seed");
    verify_cmd->add_flag("--quick", quick, "reduced MC sizes");
    verify_cmd->add_option("--only", only_csv, "comma list of name substrings");
    verify_cmd->add_option("--out", out_path, "write the JSON report array here");

    try {
        app.parse(argc, argv);

        if (depth_cmd->parsed()) {
            int L = 0;
            if (!graph_path.empty()) {
                std::ifstream f(graph_path);
                if (!f) throw ConfigError("cannot open `" + graph_path + "`");
                L = effective_depth(parse_graph(f));
            } else if (!arch_args.config_path.empty() ||
                       !arch_args.overrides.empty()) {
                L = depth_of_preset(resolve_arch(arch_args));
            } else {
                throw ConfigError("depth: need --config or --graph");
            }
            std::cout << L << "\n";
            return 0;
        }
        if (measure_cmd->parsed()) {
            const ArchSpec spec = resolve_arch(arch_args);
            const LossSpec loss = make_loss(loss_kind, outputs, label_var);
            const auto rep = layer_energy(spec, loss, eta, mc, spec.seed);
            const std::string doc = to_json(rep).dump(2) + "\n";
            std::cout << doc;
            if (!out_path.empty()) write_file(out_path, doc);
            return 0;
        }
        if (solve_cmd->parsed()) {
            const ArchSpec spec = resolve_arch(arch_args);
            const LossSpec loss = make_loss(loss_kind, outputs, label_var);
            const EtaStar es =
                literal ? solve_eta_star_literal(spec, loss, mc, spec.seed)
                        : solve_eta_star(spec, loss, mc, spec.seed);
            const std::string doc = to_json(es).dump(2) + "\n";
            std::cout << doc;
            if (!out_path.empty()) write_file(out_path, doc);
            return 0;
        }
        if (sweep_cmd->parsed()) {
            SweepPlan plan;
            plan.arch = resolve_arch(arch_args);
            plan.arch_tag = tag.empty() ? to_string(plan.arch.family) : tag;
            plan.depths = parse_int_list(depths_csv);
            plan.lr_lo = lr_lo;
            plan.lr_hi = lr_hi;
            plan.lr_points = lr_points;
            plan.seeds.clear();
            for (int s = 0; s < n_seeds; ++s) plan.seeds.push_back(uint64_t(s));
            if (optimizer == "adam") plan.optimizer.kind = OptimizerKind::adam;
            else if (optimizer != "sgd")
                throw ConfigError("optimizer must be sgd or adam");
            plan.loss = make_loss(sweep_loss, classes, 1.0);
            plan.data = {data_n, classes, separation};
            plan.batch = batch;
            plan.epochs = epochs;
            if (stat == "last") plan.stat = LossStatistic::last;
            else if (stat == "epoch_mean") plan.stat = LossStatistic::epoch_mean;
            else if (stat == "tail_mean") plan.stat = LossStatistic::tail_mean;
            else throw ConfigError("loss-statistic must be last|epoch_mean|tail_mean");
            plan.jobs = jobs;
            const auto records = run_sweep(plan, sweep_out);
            std::cerr << records.size() << " records -> " << sweep_out << "\n";
            return 0;
        }
        if (fit_cmd->parsed()) {
            std::ifstream f(fit_input);
            if (!f) throw ConfigError("cannot open `" + fit_input + "`");
            const auto records = parse_sweep_csv(f);
            std::map<std::string, std::vector<SweepRecord>> by_arch;
            for (const auto& r : records) by_arch[r.arch].push_back(r);
            if (by_arch.empty()) throw DomainError("fit: no records");
            std::string selected = fit_arch;
            if (selected.empty()) {
                if (by_arch.size() > 1) {
                    std::string names;
                    for (const auto& [k, v] : by_arch) names += " " + k;
                    throw ConfigError("fit: several archs present (" + names +
                                      " ); choose one with --arch");
                }
                selected = by_arch.begin()->first;
            }
            if (!by_arch.count(selected))
                throw ConfigError("fit: arch `" + selected + "` not in the CSV");

            std::vector<SvgSeries> series;
            PowerLawFit chosen;
            for (const auto& [name, recs] : by_arch) {
                const auto summary = optimum_per_depth(recs);
                for (int d : summary.excluded_depths)
                    std::cerr << "warning: arch " << name << " depth " << d
                              << " excluded (all seeds divergent)\n";
                const auto fit = wls_fit(summary.points);
                if (name == selected) chosen = fit;
                series.push_back({name, fit});
            }
            const std::string doc = to_json(chosen).dump(2) + "\n";
            std::cout << doc;
            if (!out_path.empty()) write_file(out_path, doc);
            if (!svg_path.empty()) write_file(svg_path, emit_svg_plot(series));
            return 0;
        }
        if (transfer_cmd->parsed()) {
            TransferRule rule{eta0, L0, exponent};
            std::vector<int> targets;
            if (!transfer_depths.empty()) targets = parse_int_list(transfer_depths);
            if (L_single > 0) targets.push_back(L_single);
            if (targets.empty()) throw ConfigError("transfer: need --L or --depths");
            for (const auto& [L, value] : predict_curve(rule, targets)) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%d %.10g\n", L, value);
                std::cout << buf;
            }
            return 0;
        }
        if (verify_cmd->parsed())
            return cmd_verify(verify_seed, quick, only_csv, out_path);
        throw ConfigError("no subcommand");
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
