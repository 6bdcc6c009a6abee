#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "depthlaw/train.hpp"

namespace depthlaw {

// Geometric learning-rate grid from lo to hi inclusive, strictly increasing.
inline std::vector<double> lr_grid(double lo, double hi, int n) {
    if (!(0 < lo && lo < hi)) throw DomainError("lr_grid: need 0 < lo < hi");
    if (n < 2) throw DomainError("lr_grid: need at least two points");
    std::vector<double> grid(n);
    const double ratio = std::log(hi / lo) / double(n - 1);
    for (int i = 0; i < n; ++i) grid[i] = lo * std::exp(ratio * i);
    grid.front() = lo;
    grid.back() = hi;
    return grid;
}

struct DatasetSpec {
    int n = 2048;
    int classes = 4;
    double separation = 5.0;
};

struct SweepPlan {
    ArchSpec arch;  // template; the depth dimension is overridden per point
    std::string arch_tag = "mlp";
    std::vector<int> depths;
    double lr_lo = 1e-4;
    double lr_hi = 10.0;
    int lr_points = 20;
    std::vector<uint64_t> seeds = {0, 1, 2};
    OptimizerSpec optimizer;
    LossSpec loss;
    DatasetSpec data;
    int batch = 64;
    int epochs = 1;
    LossStatistic stat = LossStatistic::tail_mean;
    int jobs = 1;

    void validate() const {
        if (depths.empty()) throw DomainError("sweep: no depths");
        for (size_t i = 1; i < depths.size(); ++i)
            if (depths[i] <= depths[i - 1])
                throw DomainError("sweep: depths must be strictly increasing");
        if (seeds.empty()) throw DomainError("sweep: no seeds");
        if (!(0 < lr_lo && lr_lo < lr_hi) || lr_points < 2)
            throw DomainError("sweep: bad learning-rate grid");
    }
};

struct SweepRecord {
    std::string arch;
    int depth = 0;
    int width = 0;
    uint64_t seed = 0;
    double eta = 0.0;
    double final_loss = 0.0;
};

// The template with its depth knob set to effective depth L.
inline ArchSpec arch_at_depth(const ArchSpec& tmpl, int L) {
    ArchSpec spec = tmpl;
    switch (tmpl.family) {
        case Family::mlp:
        case Family::cnn1d:
        case Family::cnn2d:
            spec.depth = L;
            break;
        case Family::resnet:
            if (L <= tmpl.plain_units)
                throw DomainError("sweep: depth too small for resnet template");
            spec.blocks = L - tmpl.plain_units;
            break;
        case Family::transformer: {
            const int rest = L - tmpl.plain_units;
            if (rest < 2 || rest % 2 != 0)
                throw DomainError(
                    "sweep: transformer depth must be stem + 2*blocks");
            spec.blocks = rest / 2;
            break;
        }
    }
    spec.validate();
    return spec;
}

inline int arch_width(const ArchSpec& spec) {
    return spec.is_conv() ? spec.channels : spec.width;
}

namespace detail {

inline std::string format_eta(double eta) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", eta);
    return buf;
}

inline std::string format_loss(double loss) {
    if (loss == kDivergence) return "inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", loss);
    return buf;
}

inline std::string record_key(const SweepRecord& r) {
    return r.arch + "|" + std::to_string(r.depth) + "|" +
           std::to_string(r.seed) + "|" + format_eta(r.eta);
}

}  // namespace detail

inline void write_sweep_csv(const std::vector<SweepRecord>& records,
                            std::ostream& os) {
    os << "arch,depth,width,seed,eta,final_loss\n";
    for (const auto& r : records)
        os << r.arch << ',' << r.depth << ',' << r.width << ',' << r.seed << ','
           << detail::format_eta(r.eta) << ',' << detail::format_loss(r.final_loss)
           << '\n';
}

inline std::vector<SweepRecord> parse_sweep_csv(std::istream& is) {
    std::vector<SweepRecord> out;
    std::string line;
    if (!std::getline(is, line))
        throw DomainError("sweep csv: empty file");
    if (line != "arch,depth,width,seed,eta,final_loss")
        throw DomainError("sweep csv: unexpected header `" + line + "`");
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        SweepRecord r;
        std::string field;
        try {
            std::getline(ls, r.arch, ',');
            std::getline(ls, field, ',');
            r.depth = std::stoi(field);
            std::getline(ls, field, ',');
            r.width = std::stoi(field);
            std::getline(ls, field, ',');
            r.seed = std::stoull(field);
            std::getline(ls, field, ',');
            r.eta = std::stod(field);
            std::getline(ls, field);
            r.final_loss = field == "inf" ? kDivergence : std::stod(field);
        } catch (const std::exception&) {
            throw DomainError("sweep csv: bad record at line " +
                              std::to_string(lineno));
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Runs every (depth, eta, seed) cell of the plan. Completed cells found in
// `csv_path` are reused, new ones are appended as they finish (so an
// interrupted sweep resumes at record granularity); on completion the file is
// rewritten in plan order, which makes the final bytes independent of the
// resume history and of `jobs`.
inline std::vector<SweepRecord> run_sweep(const SweepPlan& plan,
                                          const std::string& csv_path = "") {
    plan.validate();
    const std::vector<double> grid = lr_grid(plan.lr_lo, plan.lr_hi, plan.lr_points);

    std::map<std::string, double> done;
    if (!csv_path.empty()) {
        std::ifstream f(csv_path);
        if (f) {
            for (const auto& r : parse_sweep_csv(f))
                done[detail::record_key(r)] = r.final_loss;
        }
    }

    std::vector<SweepRecord> records;
    for (int L : plan.depths) {
        const ArchSpec spec = arch_at_depth(plan.arch, L);
        for (double eta : grid)
            for (uint64_t seed : plan.seeds)
                records.push_back({plan.arch_tag, L, arch_width(spec), seed, eta,
                                   kDivergence});
    }

    std::ofstream append;
    if (!csv_path.empty()) {
        const bool fresh = done.empty();
        append.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (!append) throw DomainError("sweep: cannot open `" + csv_path + "`");
        if (fresh) append << "arch,depth,width,seed,eta,final_loss\n";
    }

    std::vector<char> computed(records.size(), 0);
    std::mutex io_mtx;
    parallel_for(int(records.size()), plan.jobs, [&](int i) {
        SweepRecord& r = records[i];
        const auto it = done.find(detail::record_key(r));
        if (it != done.end()) {
            r.final_loss = it->second;
            return;
        }
        const ArchSpec spec = arch_at_depth(plan.arch, r.depth);
        const SynthDataset ds = synth_classification(
            plan.data.n, InputShape::of(spec), plan.data.classes,
            plan.data.separation, Rng(r.seed).fork("data").next_u64());
        const uint64_t train_seed =
            Rng(r.seed).fork("train", uint64_t(r.depth)).next_u64();
        r.final_loss = train_one_epoch(spec, ds, r.eta, plan.optimizer, plan.loss,
                                       train_seed, plan.batch, plan.epochs,
                                       plan.stat);
        computed[i] = 1;
        if (append) {
            std::lock_guard<std::mutex> lock(io_mtx);
            append << r.arch << ',' << r.depth << ',' << r.width << ',' << r.seed
                   << ',' << detail::format_eta(r.eta) << ','
                   << detail::format_loss(r.final_loss) << '\n'
                   << std::flush;
        }
    });

    if (!csv_path.empty()) {
        append.close();
        std::ofstream out(csv_path, std::ios::trunc);
        write_sweep_csv(records, out);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Per-depth optimum extraction and the weighted power-law fit.

struct DepthOptimum {
    int depth = 0;
    double mean_log10_eta = 0.0;
    double var_log10_eta = 0.0;  // unbiased across seeds; 0 for a single seed
    int n_seeds = 0;
};

struct OptimumSummary {
    std::vector<DepthOptimum> points;
    std::vector<int> excluded_depths;  // all seeds divergent
};

// Per seed: grid argmin of the final loss (ties break toward the smallest
// eta); per depth: mean and unbiased variance of log10(eta*) across seeds.
inline OptimumSummary optimum_per_depth(const std::vector<SweepRecord>& records) {
    std::map<int, std::map<uint64_t, std::pair<double, double>>> best;
    std::set<int> depths;
    for (const auto& r : records) {
        depths.insert(r.depth);
        if (r.final_loss == kDivergence || !std::isfinite(r.final_loss)) continue;
        auto& slot = best[r.depth];
        const auto it = slot.find(r.seed);
        // Strictly-better keeps the first (smallest) eta on ties; records
        // arrive grid-ascending within a seed, and out-of-order input still
        // resolves ties toward the smaller eta below.
        if (it == slot.end() || r.final_loss < it->second.second ||
            (r.final_loss == it->second.second && r.eta < it->second.first))
            slot[r.seed] = {r.eta, r.final_loss};
    }
    OptimumSummary out;
    for (int d : depths) {
        const auto it = best.find(d);
        if (it == best.end() || it->second.empty()) {
            out.excluded_depths.push_back(d);
            continue;
        }
        DepthOptimum p;
        p.depth = d;
        p.n_seeds = int(it->second.size());
        for (const auto& [seed, eta_loss] : it->second)
            p.mean_log10_eta += std::log10(eta_loss.first) / p.n_seeds;
        if (p.n_seeds > 1) {
            for (const auto& [seed, eta_loss] : it->second) {
                const double d2 = std::log10(eta_loss.first) - p.mean_log10_eta;
                p.var_log10_eta += d2 * d2 / (p.n_seeds - 1);
            }
        }
        out.points.push_back(p);
    }
    return out;
}

struct PowerLawFit {
    double alpha = 0.0;        // slope of log10 eta* on log10 L
    double beta0 = 0.0;        // intercept
    double stderr_alpha = 0.0;
    double ci95_lo = 0.0;
    double ci95_hi = 0.0;
    double r2 = 0.0;
    std::vector<DepthOptimum> points;
};

inline constexpr double kWlsVarianceFloor = 1e-6;  // (log10 eta)^2 units

// Closed-form weighted least squares of log10(eta*) on log10(L), weights
// 1 / max(variance, floor).
inline PowerLawFit wls_fit(const std::vector<DepthOptimum>& points,
                           double var_floor = kWlsVarianceFloor) {
    std::set<int> distinct;
    for (const auto& p : points) distinct.insert(p.depth);
    if (distinct.size() < 2)
        throw DomainError("wls_fit: need at least two distinct depths");
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : points) {
        const double w = 1.0 / std::max(p.var_log10_eta, var_floor);
        const double x = std::log10(double(p.depth));
        const double y = p.mean_log10_eta;
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    const double delta = sw * sxx - sx * sx;
    PowerLawFit fit;
    fit.alpha = (sw * sxy - sx * sy) / delta;
    fit.beta0 = (sxx * sy - sx * sxy) / delta;
    fit.stderr_alpha = std::sqrt(sw / delta);
    fit.ci95_lo = fit.alpha - 1.96 * fit.stderr_alpha;
    fit.ci95_hi = fit.alpha + 1.96 * fit.stderr_alpha;
    double ss_res = 0, ss_tot = 0;
    const double ybar = sy / sw;
    for (const auto& p : points) {
        const double w = 1.0 / std::max(p.var_log10_eta, var_floor);
        const double x = std::log10(double(p.depth));
        const double pred = fit.beta0 + fit.alpha * x;
        ss_res += w * (p.mean_log10_eta - pred) * (p.mean_log10_eta - pred);
        ss_tot += w * (p.mean_log10_eta - ybar) * (p.mean_log10_eta - ybar);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    fit.points = points;
    return fit;
}

}  // namespace depthlaw
