#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return EFKF_CLI_PATH; }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path make_temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("efkf_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli bench: minimal config produces a one-row table") {
    const fs::path dir = make_temp_dir("minimal");
    write_file(dir / "cfg.json", R"({
        "seed": 5, "horizon_t": 2, "n_runs": 1,
        "filters": ["ekf"], "assumed_q": ["true"],
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    CHECK(run_cli("bench --config " + (dir / "cfg.json").string()) == 0);

    const std::string csv = read_file(dir / "out" / "rmse_table.csv");
    CHECK(csv.rfind("filter,assumed_q_label,mean_rmse,stderr_rmse,n_failed_runs\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one row
    CHECK(csv.find("ekf,Q_CV,") != std::string::npos);
}

TEST_CASE("cli bench: unknown keys are a config error") {
    const fs::path dir = make_temp_dir("badkey");
    write_file(dir / "cfg.json", R"({"n_runs": 1, "horzon_t": 2})");
    CHECK(run_cli("bench --config " + (dir / "cfg.json").string()) == 2);

    write_file(dir / "cfg2.json", R"({"ef": {"samples": 8, "iter": 3}})");
    CHECK(run_cli("bench --config " + (dir / "cfg2.json").string()) == 2);

    write_file(dir / "cfg3.json", R"(not json)");
    CHECK(run_cli("bench --config " + (dir / "cfg3.json").string()) == 2);

    CHECK(run_cli("bench --config " + (dir / "missing.json").string()) == 2);
}

TEST_CASE("cli bench: invalid filter and value errors") {
    const fs::path dir = make_temp_dir("badval");
    write_file(dir / "cfg.json", R"({"filters": ["warp"]})");
    CHECK(run_cli("bench --config " + (dir / "cfg.json").string()) == 2);

    write_file(dir / "cfg2.json", R"({"n_runs": 0})");
    CHECK(run_cli("bench --config " + (dir / "cfg2.json").string()) == 2);

    write_file(dir / "cfg3.json",
               R"({"filters": ["kalman"], "measurement": "range", "n_runs": 1, "horizon_t": 2})");
    CHECK(run_cli("bench --config " + (dir / "cfg3.json").string()) == 2);
}

TEST_CASE("cli bench: deterministic and parallelism-independent output") {
    const fs::path dir = make_temp_dir("determinism");
    const std::string cfg = R"({
        "seed": 99, "horizon_t": 6, "n_runs": 4,
        "filters": ["ekf", "ukf", "pf", "enkf", "ef_0.5"],
        "assumed_q": [0.1, "true"],
        "pf": {"particles": 200}, "enkf": {"members": 64},
        "ef": {"samples": 16, "iters": 12},
        "write_paths": true, "paths_runs": [0],
        "output_dir": ")";
    write_file(dir / "a.json", cfg + (dir / "out_a").string() + R"("})");
    write_file(dir / "b.json", cfg + (dir / "out_b").string() + R"("})");

    REQUIRE(run_cli("bench --config " + (dir / "a.json").string() + " --threads 1") == 0);
    REQUIRE(run_cli("bench --config " + (dir / "b.json").string() + " --threads 4") == 0);

    CHECK(read_file(dir / "out_a" / "rmse_table.csv") ==
          read_file(dir / "out_b" / "rmse_table.csv"));
    for (const char* f : {"paths_ekf_0.csv", "paths_ef_0.5_0.csv", "paths_pf_0.csv"}) {
        const std::string pa = read_file(dir / "out_a" / f);
        CHECK(pa == read_file(dir / "out_b" / f));
        CHECK(pa.rfind("t,true_px,true_py,est_px,est_py\n", 0) == 0);
    }
}

TEST_CASE("cli bench: default filter set spans the full grid") {
    const fs::path dir = make_temp_dir("defaults");
    write_file(dir / "cfg.json", R"({
        "seed": 3, "horizon_t": 2, "n_runs": 1,
        "pf": {"particles": 50}, "enkf": {"members": 30},
        "ef": {"samples": 12, "iters": 6},
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    REQUIRE(run_cli("bench --config " + (dir / "cfg.json").string()) == 0);
    const std::string csv = read_file(dir / "out" / "rmse_table.csv");
    // 9 filters x 5 assumed-noise columns.
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 9 * 5);
    for (const char* name :
         {"ef_0.01", "ef_0.1", "ef_0.3", "ef_0.5", "ef_0.7", "ekf", "ukf", "pf", "enkf"})
        CHECK(csv.find(std::string(name) + ",0.01I,") != std::string::npos);
    for (const char* col : {"0.01I", "0.05I", "0.1I", "0.5I", "Q_CV"})
        CHECK(csv.find(std::string("ekf,") + col + ",") != std::string::npos);
}

TEST_CASE("cli energy-trace: final energy matches the closed-form evidence") {
    const fs::path dir = make_temp_dir("trace_evidence");
    write_file(dir / "cfg.json", R"({
        "seed": 77, "horizon_t": 2, "n_runs": 1, "measurement": "linear",
        "filters": ["ef_0.5"], "assumed_q": ["true"],
        "ef": {"samples": 256, "iters": 120},
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    const fs::path csv = dir / "trace.csv";
    REQUIRE(run_cli("energy-trace --config " + (dir / "cfg.json").string() +
                    " --filter ef_0.5 --step 0 --out " + csv.string()) == 0);

    double final_energy = 0.0;
    {
        std::ifstream in(csv);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            const auto c1 = line.find(','), c2 = line.rfind(',');
            final_energy = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        }
    }

    // Replay the simulation stream the command consumed.
    efkf::Scenario sc = efkf::default_scenario(77);
    sc.horizon_T = 2;
    sc.n_runs = 1;
    sc.measurement = efkf::MeasurementKind::Linear;
    sc.assumed_q = {efkf::assumed_q_column(sc.cv, std::nullopt)};
    efkf::Rng sim(efkf::sim_stream_seed(sc.seed, 0, 0));
    const Eigen::MatrixXd traj =
        efkf::simulate_trajectory(sc.cv, sc.init_state, sc.horizon_T, sim);
    const Eigen::MatrixXd stub = efkf::linear_stub_matrix();
    const Eigen::VectorXd y =
        stub * traj.row(0).transpose() +
        efkf::cholesky(sc.meas_noise).lower() * sim.normal_vector(3);
    const efkf::GaussianBelief prior = efkf::predict(
        sc.init_belief(), sc.cv.transition(), sc.cv.process_noise());
    const efkf::GaussianBelief marginal(
        stub * prior.mean(), stub * prior.cov() * stub.transpose() + sc.meas_noise);
    const double neg_log_evidence = -efkf::log_density(marginal, y);

    // Monte-Carlo standard error of the estimate at the converged
    // posterior, from fresh replicate evaluations.
    const efkf::GaussianBelief exact =
        efkf::kalman_update(prior, y, stub, sc.meas_noise);
    efkf::MeasurementModel model{
        [stub](const Eigen::VectorXd& x) { return Eigen::VectorXd(stub * x); },
        [stub](const Eigen::VectorXd&) { return stub; }, sc.meas_noise};
    efkf::Rng rng(5151);
    Eigen::VectorXd values(16);
    for (int r = 0; r < 16; ++r)
        values[r] =
            efkf::energy_estimate(rng.normal_matrix(256, 4), y, model, exact, prior, 0.5)
                .value;
    const double mean = values.mean();
    const double se = std::sqrt((values.array() - mean).square().sum() / 15.0 / 16.0);
    CHECK(std::abs(final_energy - neg_log_evidence) <= 3 * se + 1e-5);
}

TEST_CASE("cli bench: a cell with every run failed exits 3") {
    const fs::path dir = make_temp_dir("fail3");
    write_file(dir / "cfg.json", R"({
        "seed": 1, "horizon_t": 3, "n_runs": 2,
        "filters": ["ekf"], "assumed_q": [-20.0],
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    CHECK(run_cli("bench --config " + (dir / "cfg.json").string()) == 3);
}

TEST_CASE("cli gradcheck: exit codes") {
    CHECK(run_cli("gradcheck --trials 8 --seed 3") == 0);
    CHECK(run_cli("gradcheck --trials 0") == 2);
    CHECK(run_cli("gradcheck --dims nope") == 2);
    CHECK(run_cli("gradcheck --trials 6 --corrupt") == 1);
}

TEST_CASE("cli energy-trace: monotone trace with fixed draws") {
    const fs::path dir = make_temp_dir("trace");
    write_file(dir / "cfg.json", R"({
        "seed": 21, "horizon_t": 3, "n_runs": 1,
        "filters": ["ef_0.5"], "assumed_q": ["true"],
        "ef": {"samples": 32, "iters": 30, "step0": 0.2, "fixed_crn": true},
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    const fs::path csv = dir / "trace.csv";
    REQUIRE(run_cli("energy-trace --config " + (dir / "cfg.json").string() +
                    " --filter ef_0.5 --run 0 --step 1 --out " + csv.string()) == 0);

    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "iteration,energy,step_size");
    double prev = std::numeric_limits<double>::infinity();
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        const auto c1 = line.find(','), c2 = line.rfind(',');
        REQUIRE(c1 != std::string::npos);
        const double energy = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        CHECK(energy <= prev + 1e-8);
        prev = energy;
        ++rows;
    }
    CHECK(rows == 30);
}

TEST_CASE("cli energy-trace: single iteration gives a single row") {
    const fs::path dir = make_temp_dir("trace1");
    write_file(dir / "cfg.json", R"({
        "seed": 22, "horizon_t": 2, "n_runs": 1,
        "filters": ["ef_0.7"], "assumed_q": ["true"],
        "ef": {"samples": 8, "iters": 1},
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    const fs::path csv = dir / "trace.csv";
    REQUIRE(run_cli("energy-trace --config " + (dir / "cfg.json").string() +
                    " --filter ef_0.7 --out " + csv.string()) == 0);
    const std::string content = read_file(csv);
    CHECK(std::count(content.begin(), content.end(), '\n') == 2);
}

TEST_CASE("cli energy-trace: rejects non-ef filters and bad indices") {
    const fs::path dir = make_temp_dir("trace_bad");
    write_file(dir / "cfg.json", R"({
        "seed": 23, "horizon_t": 2, "n_runs": 1,
        "filters": ["ekf"], "assumed_q": ["true"],
        "output_dir": ")" + (dir / "out").string() + R"("
    })");
    const std::string base = "energy-trace --config " + (dir / "cfg.json").string();
    CHECK(run_cli(base + " --filter ekf") == 2);
    CHECK(run_cli(base + " --filter ef_0.5 --run 7") == 2);
    CHECK(run_cli(base + " --filter ef_0.5 --step 9") == 2);
}
