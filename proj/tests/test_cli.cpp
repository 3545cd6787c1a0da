#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include <catsyn/cli.hpp>

namespace cli = catsyn::cli;
namespace fs = std::filesystem;

namespace {

struct Proc {
    int code = -1;
    std::string out;
};

Proc run_cli(const std::string& args) {
    const std::string cmd = std::string(CATSYN_CLI_PATH) + " " + args + " 2>&1";
    Proc p;
    FILE* f = popen(cmd.c_str(), "r");
    if (!f) return p;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, f)) p.out += buf;
    const int st = pclose(f);
    p.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "catsyn_cli_test";
    fs::create_directories(d);
    return d / name;
}

double summary_value(const fs::path& p, const std::string& key) {
    return nlohmann::ordered_json::parse(slurp(p))["summary"][key].get<double>();
}

}  // namespace

TEST(Registry, UniqueIdsAndCoverage) {
    std::set<std::string> ids, figures;
    for (const auto& e : cli::registry()) {
        EXPECT_TRUE(ids.insert(e.id).second) << e.id;
        figures.insert(e.figure);
        std::set<std::string> names;
        for (const auto& f : e.fields) EXPECT_TRUE(names.insert(f.name).second) << e.id << "." << f.name;
        EXPECT_TRUE(names.count("integrator.rtol")) << e.id;
    }
    EXPECT_GE(ids.size(), 14u);
    for (const char* f : {"Fig. 2", "Fig. 3", "Fig. 5", "Fig. 6", "Fig. 7", "Fig. 8", "Fig. 9", "Fig. 10", "Fig. 11",
                          "Fig. 12", "Fig. 13", "Table 1"})
        EXPECT_TRUE(figures.count(f)) << f;
}

TEST(Registry, ToricDefaults) {
    const auto p = cli::resolve(cli::find_experiment("fig2-toric-z"), {});
    EXPECT_DOUBLE_EQ(std::get<double>(p.at("chi0")), 1.0 / 20.0);
    const double beta = std::get<double>(p.at("beta")), K = std::get<double>(p.at("K"));
    EXPECT_DOUBLE_EQ(K * beta * beta, 4.0);
}

TEST(Resolve, OverridesAndValidation) {
    const auto& e = cli::find_experiment("fig2-toric-z");
    const auto p = cli::resolve(e, {{"kappa", "0.005"}, {"parity", "even"}, {"integrator.rtol", "1e-9"}});
    EXPECT_DOUBLE_EQ(std::get<double>(p.at("kappa")), 0.005);
    EXPECT_EQ(std::get<std::string>(p.at("parity")), "even");
    EXPECT_DOUBLE_EQ(std::get<double>(p.at("integrator.rtol")), 1e-9);
    EXPECT_THROW(cli::resolve(e, {{"kappa", "fast"}}), catsyn::ConfigError);
    EXPECT_THROW(cli::resolve(e, {{"kappa", "inf"}}), catsyn::ConfigError);
    EXPECT_THROW(cli::resolve(e, {{"shape", "square"}}), catsyn::ConfigError);
    EXPECT_THROW(cli::Config(cli::resolve(e, {{"n_qubits", "2.5"}})).integer("n_qubits"), catsyn::ConfigError);
}

TEST(Resolve, NearestFieldHint) {
    const auto& e = cli::find_experiment("fig2-toric-z");
    try {
        cli::resolve(e, {{"kapa", "0.1"}});
        FAIL() << "expected ConfigError";
    } catch (const catsyn::ConfigError& err) {
        EXPECT_NE(std::string(err.what()).find("'kappa'"), std::string::npos) << err.what();
    }
    EXPECT_EQ(cli::nearest("rtol", {"kappa", "integrator.rtol"}), "integrator.rtol");
    EXPECT_EQ(cli::edit_distance("kapa", "kappa"), 1u);
    EXPECT_THROW(cli::find_experiment("fig2-toric"), catsyn::ConfigError);
}

TEST(ConfigText, SectionsCommentsAndErrors) {
    const auto kv = cli::parse_config_text("# comment\nbeta = 1.5  # inline\n\n[integrator]\nrtol = 1e-9\n");
    ASSERT_EQ(kv.size(), 2u);
    EXPECT_EQ(kv[0].first, "beta");
    EXPECT_EQ(kv[0].second, "1.5");
    EXPECT_EQ(kv[1].first, "integrator.rtol");
    EXPECT_THROW(cli::parse_config_text("beta 2\n"), catsyn::ConfigError);
    EXPECT_THROW(cli::parse_config_text("[integrator\n"), catsyn::ConfigError);
}

TEST(Json, NonFiniteSummaryRoundTrips) {
    catsyn::ExperimentResult r;
    r.id = "x";
    r.summary["v"] = std::numeric_limits<double>::infinity();
    r.summary["w"] = 0.25;
    const auto back = catsyn::from_json(catsyn::to_json(r));
    EXPECT_TRUE(std::isinf(back.summary.at("v")));
    EXPECT_EQ(cli::dump(catsyn::to_json(back)), cli::dump(catsyn::to_json(r)));
}

TEST(CliProcess, ListShowsCatalog) {
    const Proc p = run_cli("list");
    EXPECT_EQ(p.code, 0);
    for (const auto& e : cli::registry()) EXPECT_NE(p.out.find(e.id), std::string::npos) << e.id;
}

TEST(CliProcess, GapAtBetaZeroAndRoundTrip) {
    const fs::path out = scratch("gap.json");
    const Proc p = run_cli("run fig6-gap --set beta=0 --out " + out.string());
    ASSERT_EQ(p.code, 0) << p.out;
    EXPECT_NEAR(summary_value(out, "gap"), 2.0, 1e-10);
    const std::string text = slurp(out);
    const auto j = nlohmann::ordered_json::parse(text);
    EXPECT_EQ(j["schema_version"], catsyn::kSchemaVersion);
    EXPECT_EQ(j["grid_axis"], "beta");
    EXPECT_EQ(cli::dump(catsyn::to_json(catsyn::from_json(j))), text);
}

TEST(CliProcess, ToricRoundTripAndCsv) {
    const fs::path out = scratch("toric.json"), csv = scratch("toric.csv");
    ASSERT_EQ(run_cli("run fig2-toric-z --set samples=5 --out " + out.string()).code, 0);
    const std::string text = slurp(out);
    EXPECT_EQ(cli::dump(catsyn::to_json(catsyn::from_json(nlohmann::ordered_json::parse(text)))), text);
    // resolved defaults echoed in full
    const auto params = nlohmann::ordered_json::parse(text)["params"];
    for (const auto& f : cli::find_experiment("fig2-toric-z").fields) EXPECT_TRUE(params.contains(f.name)) << f.name;
    ASSERT_EQ(run_cli("run fig2-toric-z --set samples=5 --format csv --out " + csv.string()).code, 0);
    const std::string c = slurp(csv);
    EXPECT_EQ(c.substr(0, 2), "t,");
    EXPECT_EQ(std::count(c.begin(), c.end(), '\n'), 6);
}

TEST(CliProcess, DeterministicOutput) {
    const fs::path a = scratch("det_a.json"), b = scratch("det_b.json");
    ASSERT_EQ(run_cli("run table1-verify --out " + a.string()).code, 0);
    ASSERT_EQ(run_cli("run table1-verify --out " + b.string()).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
}

TEST(CliProcess, ConfigFileAndSetOrdering) {
    const fs::path cfg = scratch("gap.cfg"), out = scratch("gap2.json");
    std::ofstream(cfg) << "beta = 0\n[integrator]\nrtol = 1e-9\n";
    ASSERT_EQ(run_cli("run fig6-gap --config " + cfg.string() + " --set beta=1 --out " + out.string()).code, 0);
    const auto j = nlohmann::ordered_json::parse(slurp(out));
    EXPECT_DOUBLE_EQ(j["params"]["beta"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j["params"]["integrator.rtol"].get<double>(), 1e-9);
}

TEST(CliProcess, UsageErrorsExitTwo) {
    const std::string out = "--out " + scratch("bad.json").string();
    Proc p = run_cli("run fig2-toric-z --set kapa=0.1 " + out);
    EXPECT_EQ(p.code, 2);
    EXPECT_NE(p.out.find("kappa"), std::string::npos) << p.out;
    p = run_cli("run fig99-nothing " + out);
    EXPECT_EQ(p.code, 2);
    EXPECT_NE(p.out.find("catsyn list"), std::string::npos) << p.out;
    EXPECT_EQ(run_cli("run fig6-gap --set beta=abc " + out).code, 2);
    EXPECT_EQ(run_cli("run fig6-gap --format xml " + out).code, 2);
    EXPECT_EQ(run_cli("run fig6-gap").code, 2);
    EXPECT_EQ(run_cli("frobnicate").code, 2);
}

TEST(CliProcess, NumericalFailureExitsThreeWithDiagnostic) {
    const fs::path out = scratch("fail.json");
    const Proc p = run_cli("run fig3-cat-parity --set storage_dim=8 --out " + out.string());
    EXPECT_EQ(p.code, 3) << p.out;
    const auto j = nlohmann::ordered_json::parse(slurp(out));
    EXPECT_EQ(j["diagnostic"]["error"], "truncation");
    EXPECT_GT(j["diagnostic"]["measured"].get<double>(), 1e-9);
    EXPECT_DOUBLE_EQ(j["params"]["storage_dim"].get<double>(), 8.0);
}
