#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* cli_bin() { return ENTROFLUX_CLI_BIN; }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_bin()) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("entroflux_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream f(p);
    f << j.dump(2);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

json small_curve_config() {
    return json{{"mixture", {{"random", {{"D", 1}, {"K", 2}, {"side", 3.0}, {"var", 0.5},
                                         {"seed", 7}}}}},
                {"process", {{"kind", "VP"}, {"beta_min", 2.0}, {"beta_max", 2.0}}},
                {"grid", 40},
                {"points", 200},
                {"seed", 3}};
}

}  // namespace

TEST_CASE("missing config is a config error", "[cli]") {
    const auto dir = fresh_dir("missing");
    CHECK(run_cli("entropy-curve --config " + (dir / "nope.json").string() +
                  " --out " + dir.string()) == 2);
}

TEST_CASE("schema violations exit with code 2", "[cli]") {
    const auto dir = fresh_dir("schema");
    write_json(dir / "bad.json", json{{"mixture", {{"random", {{"D", 1}, {"K", 1}}}}}});
    // no "process" key
    CHECK(run_cli("entropy-curve --config " + (dir / "bad.json").string() + " --out " +
                  dir.string()) == 2);

    write_json(dir / "badkind.json",
               json{{"mixture", {{"random", {{"D", 1}, {"K", 1}}}}},
                    {"process", {{"kind", "bogus"}}}});
    CHECK(run_cli("entropy-curve --config " + (dir / "badkind.json").string() + " --out " +
                  dir.string()) == 2);
}

TEST_CASE("entropy-curve pipeline writes curves, checks and a manifest", "[cli]") {
    const auto dir = fresh_dir("curve");
    write_json(dir / "cfg.json", small_curve_config());
    REQUIRE(run_cli("entropy-curve --config " + (dir / "cfg.json").string() + " --out " +
                    dir.string()) == 0);
    CHECK(fs::exists(dir / "ideal_tot.csv"));
    CHECK(fs::exists(dir / "score_match.csv"));
    CHECK(fs::exists(dir / "checks.json"));
    CHECK(fs::exists(dir / "manifest.json"));

    const json checks = json::parse(slurp(dir / "checks.json"));
    const double a = checks["jarzynski"]["path_integral"].get<double>();
    const double b = checks["jarzynski"]["kl_identity"].get<double>();
    CHECK(std::abs(a - b) < 0.2);

    const std::string csv = slurp(dir / "ideal_tot.csv");
    CHECK(csv.rfind("s,rate,", 0) == 0);
}

TEST_CASE("seeded reruns are byte-identical", "[cli]") {
    const auto d1 = fresh_dir("repro1");
    const auto d2 = fresh_dir("repro2");
    write_json(d1 / "cfg.json", small_curve_config());
    REQUIRE(run_cli("entropy-curve --config " + (d1 / "cfg.json").string() + " --out " +
                    d1.string()) == 0);
    REQUIRE(run_cli("entropy-curve --config " + (d1 / "cfg.json").string() + " --out " +
                    d2.string()) == 0);
    CHECK(slurp(d1 / "ideal_tot.csv") == slurp(d2 / "ideal_tot.csv"));
    CHECK(slurp(d1 / "score_match.csv") == slurp(d2 / "score_match.csv"));
    CHECK(slurp(d1 / "checks.json") == slurp(d2 / "checks.json"));

    // a different worker cap must not change any byte either
    const auto d3 = fresh_dir("repro3");
    REQUIRE(run_cli("--threads 1 entropy-curve --config " + (d1 / "cfg.json").string() +
                    " --out " + d3.string()) == 0);
    CHECK(slurp(d1 / "ideal_tot.csv") == slurp(d3 / "ideal_tot.csv"));
}

TEST_CASE("lattice pipeline emits the entropy table and convergence data", "[cli]") {
    const auto dir = fresh_dir("lattice");
    write_json(dir / "cfg.json", json{{"ell_levels", {0.1, 0.05}},
                                      {"total_time", 2.0},
                                      {"start_mean", 1.0},
                                      {"start_var", 0.25},
                                      {"domain_sigmas", 7.0},
                                      {"endpoint", true},
                                      {"endpoint_stride", 50}});
    REQUIRE(run_cli("lattice --config " + (dir / "cfg.json").string() + " --out " +
                    dir.string()) == 0);
    CHECK(fs::exists(dir / "lattice_ell_0.1.csv"));
    CHECK(fs::exists(dir / "lattice_ell_0.05.csv"));
    CHECK(fs::exists(dir / "convergence.csv"));
    CHECK(fs::exists(dir / "endpoint_ell_0.1.json"));

    const std::string conv = slurp(dir / "convergence.csv");
    CHECK(conv.rfind("ell,dt,steps,sites,stot,continuum,abs_error,observed_order", 0) == 0);

    const json ep = json::parse(slurp(dir / "endpoint_ell_0.1.json"));
    CHECK(ep["stot"].get<double>() >= ep["kl_endpoint"].get<double>());

    const std::string head = slurp(dir / "lattice_ell_0.1.csv");
    CHECK(head.rfind("step,s,stot_cumulative,kl_endpoint_running", 0) == 0);
}

TEST_CASE("sample pipeline writes csv with a config comment header", "[cli]") {
    const auto dir = fresh_dir("sample");
    write_json(dir / "cfg.json",
               json{{"mixture", {{"random", {{"D", 2}, {"K", 2}, {"seed", 5}}}}},
                    {"process", {{"kind", "VP"}, {"beta_min", 2.0}, {"beta_max", 2.0}}},
                    {"model", {{"oracle", true}}},
                    {"method", "pf_ode"},
                    {"sampler", {{"steps", 64}, {"scheme", "heun"}}},
                    {"n", 50},
                    {"seed", 9}});
    REQUIRE(run_cli("sample --config " + (dir / "cfg.json").string() + " --out " +
                    dir.string()) == 0);
    const std::string csv = slurp(dir / "samples.csv");
    CHECK(csv.rfind("# entroflux sample", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 51);  // header + 50 rows
}

TEST_CASE("density pipeline reports the KL upper bound", "[cli]") {
    const auto dir = fresh_dir("density");
    write_json(dir / "cfg.json",
               json{{"mixture", {{"random", {{"D", 1}, {"K", 2}, {"seed", 5}}}}},
                    {"process", {{"kind", "VP"}}},
                    {"model", {{"oracle", true}}},
                    {"n_x", 16},
                    {"n_s", 50},
                    {"n_eps", 20},
                    {"seed", 2}});
    REQUIRE(run_cli("density --config " + (dir / "cfg.json").string() + " --out " +
                    dir.string()) == 0);
    const json summary = json::parse(slurp(dir / "summary.json"));
    CHECK(summary.contains("kl_upper_bound_estimate"));
    CHECK(summary.contains("cross_entropy"));
    CHECK(std::abs(summary["kl_upper_bound_estimate"].get<double>()) < 0.5);
    const std::string csv = slurp(dir / "density.csv");
    CHECK(csv.rfind("x_index,logp_bound,std_err", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
}

TEST_CASE("numerical aborts exit with code 3", "[cli]") {
    const auto dir = fresh_dir("abort");
    // absurd learning rate forces the divergence guard
    write_json(dir / "cfg.json",
               json{{"mixture", {{"random", {{"D", 1}, {"K", 2}, {"seed", 5}}}}},
                    {"process", {{"kind", "VP"}}},
                    {"samples", 64},
                    {"seeds", {1}},
                    {"train",
                     {{"epochs", 3},
                      {"batch_size", 16},
                      {"lr", 1e6},
                      {"fourier_features", 4},
                      {"hidden", {8}},
                      {"time_samples_per_datum", 1},
                      {"snn_grid", 4},
                      {"snn_probes", 8}}},
                    {"eval", {{"curve_grid", 8}, {"curve_points", 8}, {"kl_n_x", 4},
                              {"kl_n_s", 4}, {"kl_n_eps", 4}}}});
    CHECK(run_cli("transport --config " + (dir / "cfg.json").string() + " --out " +
                  dir.string()) == 3);
}

TEST_CASE("transport smoke run produces logs, curves and summaries", "[cli]") {
    const auto dir = fresh_dir("transport");
    write_json(dir / "cfg.json",
               json{{"mixture", {{"random", {{"D", 1}, {"K", 2}, {"seed", 5}}}}},
                    {"process", {{"kind", "VP"}}},
                    {"samples", 64},
                    {"seeds", {1, 2}},
                    {"data_seed", 42},
                    {"train",
                     {{"epochs", 2},
                      {"batch_size", 32},
                      {"lr", 1e-3},
                      {"fourier_features", 4},
                      {"hidden", {8}},
                      {"time_samples_per_datum", 2},
                      {"snn_grid", 4},
                      {"snn_probes", 8}}},
                    {"eval", {{"curve_grid", 16}, {"curve_points", 32}, {"kl_n_x", 8},
                              {"kl_n_s", 8}, {"kl_n_eps", 8}}}});
    REQUIRE(run_cli("transport --config " + (dir / "cfg.json").string() + " --out " +
                    dir.string()) == 0);
    CHECK(fs::exists(dir / "ideal_tot.csv"));
    CHECK(fs::exists(dir / "seed1_training_log.csv"));
    CHECK(fs::exists(dir / "seed2_neural.csv"));
    CHECK(fs::exists(dir / "seed1_checkpoint.json"));
    CHECK(fs::exists(dir / "kl_summary.json"));
    CHECK(fs::exists(dir / "mixture.json"));
    const json summary = json::parse(slurp(dir / "kl_summary.json"));
    CHECK(summary["per_seed"].size() == 2);
    const std::string log = slurp(dir / "seed1_training_log.csv");
    CHECK(log.rfind("epoch,loss,snn_T,wallclock_s", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 4);  // header + epochs 0..2

    // sampling from the written checkpoint round-trips through the CLI
    write_json(dir / "sample.json",
               json{{"mixture", {{"random", {{"D", 1}, {"K", 2}, {"seed", 5}}}}},
                    {"process", {{"kind", "VP"}}},
                    {"model", {{"checkpoint", (dir / "seed1_checkpoint.json").string()}}},
                    {"method", "reverse_sde"},
                    {"sampler", {{"steps", 32}}},
                    {"n", 20},
                    {"seed", 3}});
    CHECK(run_cli("sample --config " + (dir / "sample.json").string() + " --out " +
                  dir.string()) == 0);
    CHECK(fs::exists(dir / "samples.csv"));
}

TEST_CASE("sweep-n emits one row per training-set size", "[cli]") {
    const auto dir = fresh_dir("sweepn");
    write_json(dir / "cfg.json",
               json{{"mixture", {{"random", {{"D", 1}, {"K", 2}, {"seed", 5}}}}},
                    {"process", {{"kind", "VP"}}},
                    {"seeds", {1}},
                    {"train",
                     {{"epochs", 1},
                      {"batch_size", 16},
                      {"fourier_features", 4},
                      {"hidden", {8}},
                      {"time_samples_per_datum", 1},
                      {"snn_grid", 4},
                      {"snn_probes", 8}}},
                    {"eval", {{"curve_grid", 8}, {"curve_points", 8}, {"kl_n_x", 4},
                              {"kl_n_s", 4}, {"kl_n_eps", 4}}}});
    REQUIRE(run_cli("sweep-n --config " + (dir / "cfg.json").string() + " --n 16,32 --out " +
                    dir.string()) == 0);
    const std::string table = slurp(dir / "sweep_n.csv");
    CHECK(table.rfind("N,snn_T_mean", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}
