#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "depthlaw/sweep.hpp"

namespace {

std::string bin() {
    const char* b = std::getenv("DEPTHLAW_BIN");
    REQUIRE(b != nullptr);
    return b;
}

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + bin() + " " + args +
                            " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    RunResult r;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string write_tmp(const std::string& name, const std::string& content) {
    const std::string path = "cli_tmp_" + name;
    std::ofstream f(path, std::ios::trunc);
    f << content;
    return path;
}

}  // namespace

TEST_CASE("transfer prints the rescaled rate") {
    const auto r = run("transfer --eta0 0.1 --L0 4 --L 16");
    CHECK(r.exit_code == 0);
    CHECK(r.out == "16 0.0125\n");

    const auto multi = run("transfer --eta0 0.1 --L0 4 --depths 16,4");
    CHECK(multi.out == "4 0.1\n16 0.0125\n");

    CHECK(run("transfer --eta0 -1 --L0 4 --L 8").exit_code == 2);
    CHECK(run("transfer --eta0 0.1 --L0 4").exit_code == 2);
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("--bogus").exit_code == 2);
    CHECK(run("depth --bogus").exit_code == 2);
    CHECK(run("measure --eta 1").exit_code == 2);       // missing --config
    CHECK(run("depth").exit_code == 2);                 // neither config nor graph
    CHECK(run("fit --input missing_file.csv").exit_code == 2);
}

TEST_CASE("depth subcommand reads configs and graph files") {
    const auto cfg = write_tmp("mlp8.cfg", "family = mlp\ndepth = 8\nwidth = 4\n");
    const auto r = run("depth --config " + cfg);
    CHECK(r.exit_code == 0);
    CHECK(r.out == "8\n");

    const auto over = run("depth --config " + cfg + " --set depth=5");
    CHECK(over.out == "5\n");

    const auto res = run("depth --set family=resnet --set plain_units=2 --set blocks=14 --set width=4");
    CHECK(res.out == "16\n");

    depthlaw::ComputationGraph g;
    for (int i = 0; i < 3; ++i) g.nodes.push_back({i, depthlaw::NodeKind::plain});
    g.edges = {{0, 1}, {1, 2}};
    g.input_id = 0;
    g.output_id = 2;
    std::ostringstream os;
    depthlaw::serialize_graph(g, os);
    const auto gpath = write_tmp("chain.graph", os.str());
    CHECK(run("depth --graph " + gpath).out == "3\n");

    const auto bad = write_tmp("bad.graph", "node 0 bogus\ninput 0\noutput 0\n");
    CHECK(run("depth --graph " + bad).exit_code == 1);
    std::remove(cfg.c_str());
    std::remove(gpath.c_str());
    std::remove(bad.c_str());
}

TEST_CASE("config file with unknown key is rejected") {
    const auto cfg = write_tmp("bad.cfg", "family = mlp\nbogus = 1\n");
    CHECK(run("depth --config " + cfg).exit_code == 2);
    std::remove(cfg.c_str());
}

TEST_CASE("measure scales as eta squared across invocations") {
    const auto cfg = write_tmp("meas.cfg",
                               "family = mlp\ndepth = 3\nwidth = 8\nseed = 3\n");
    const std::string mcargs =
        " --outputs 3 --n-init 4 --n-data 2 --batch 8";
    const auto r1 = run("measure --config " + cfg + " --eta 1" + mcargs);
    const auto r2 = run("measure --config " + cfg + " --eta 2" + mcargs);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    const auto j1 = nlohmann::json::parse(r1.out);
    const auto j2 = nlohmann::json::parse(r2.out);
    const double ratio = j2["S_bar"].get<double>() / j1["S_bar"].get<double>();
    CHECK(ratio == Catch::Approx(4.0).epsilon(1e-12));

    // DEPTHLAW_SEED overrides the config seed; --set beats both.
    const auto env_run =
        run("measure --config " + cfg + " --eta 1" + mcargs, "DEPTHLAW_SEED=9");
    const auto set_run =
        run("measure --config " + cfg + " --eta 1 --set seed=9" + mcargs);
    CHECK(nlohmann::json::parse(env_run.out)["seed"] == 9);
    CHECK(env_run.out == set_run.out);
    CHECK(env_run.out != r1.out);
    std::remove(cfg.c_str());
}

TEST_CASE("solve emits a positive eta star consistent with S_bar") {
    const auto cfg = write_tmp("solve.cfg",
                               "family = mlp\ndepth = 3\nwidth = 8\nseed = 1\n");
    const auto r = run("solve --config " + cfg +
                       " --outputs 3 --n-init 4 --n-data 2 --batch 8");
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    const double eta_star = j["eta_star"].get<double>();
    const double s1 = j["S_bar_at_one"].get<double>();
    CHECK(eta_star > 0.0);
    CHECK(eta_star == Catch::Approx(1.0 / std::sqrt(s1)).epsilon(1e-12));
    CHECK(j["L"] == 3);
    std::remove(cfg.c_str());
}

TEST_CASE("fit recovers an exact line and renders deterministic svg") {
    // eta values put each depth's argmin exactly on
    // log10(eta) = 1 - 1.5 log10(L); variances are zero (single seed).
    std::ostringstream csv;
    csv.precision(17);
    csv << "arch,depth,width,seed,eta,final_loss\n";
    for (int L : {2, 4, 8, 16}) {
        const double eta = std::pow(10.0, 1.0 - 1.5 * std::log10(double(L)));
        csv << "mlp," << L << ",8,0," << eta << ",0.1\n";
        csv << "mlp," << L << ",8,0," << eta * 3 << ",0.9\n";
        csv << "mlp," << L << ",8,0," << eta / 3 << ",0.5\n";
    }
    const auto path = write_tmp("line.csv", csv.str());
    const auto r = run("fit --input " + path);
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["alpha"].get<double>() == Catch::Approx(-1.5).epsilon(1e-9));
    CHECK(j["beta0"].get<double>() == Catch::Approx(1.0).epsilon(1e-9));
    CHECK(j["r2"].get<double>() == Catch::Approx(1.0).margin(1e-9));

    const auto svg1 = run("fit --input " + path + " --svg cli_tmp_a.svg");
    const auto svg2 = run("fit --input " + path + " --svg cli_tmp_b.svg");
    REQUIRE(svg1.exit_code == 0);
    std::ifstream f1("cli_tmp_a.svg"), f2("cli_tmp_b.svg");
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    // One fit line element per arch series; a single arch here.
    size_t lines = 0, at = 0;
    while ((at = s1.str().find("<line ", at)) != std::string::npos) {
        ++lines;
        ++at;
    }
    CHECK(lines == 1);
    CHECK(s1.str().find("slope = -1.500") != std::string::npos);
    std::remove(path.c_str());
    std::remove("cli_tmp_a.svg");
    std::remove("cli_tmp_b.svg");
}

TEST_CASE("sweep then fit round trip through the CLI") {
    const auto cfg = write_tmp("sweep.cfg", "family = mlp\nwidth = 6\n");
    const auto r = run("sweep --config " + cfg +
                       " --depths 2,3 --lr-points 4 --seeds 2 --data-n 64"
                       " --classes 2 --batch 16 --jobs 2 --out cli_tmp_sweep.csv");
    REQUIRE(r.exit_code == 0);
    std::ifstream f("cli_tmp_sweep.csv");
    REQUIRE(f.good());
    const auto records = depthlaw::parse_sweep_csv(f);
    CHECK(records.size() == 2 * 4 * 2);
    const auto fit = run("fit --input cli_tmp_sweep.csv");
    CHECK(fit.exit_code == 0);
    CHECK(nlohmann::json::parse(fit.out).contains("alpha"));
    std::remove(cfg.c_str());
    std::remove("cli_tmp_sweep.csv");
}

TEST_CASE("verify subcommand filters and reports") {
    const auto r = run("verify --only min_sum");
    CHECK(r.exit_code == 0);
    std::istringstream lines(r.out);
    std::string line;
    int reports = 0;
    bool summary_seen = false;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("summary")) {
            summary_seen = true;
            CHECK(j["failed"] == 0);
        } else {
            ++reports;
            CHECK(j["pass"] == true);
            CHECK(j["name"] == "min_sum");
        }
    }
    CHECK(reports == 1);
    CHECK(summary_seen);

    CHECK(run("verify --only no_such_oracle").exit_code == 2);
}
