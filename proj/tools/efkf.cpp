// Command-line front end: benchmark execution, gradient checking, and
// energy-trace export.
//
// Exit codes: 0 success, 1 gradient-check tolerance violation,
// 2 config/usage error, 3 every run of some benchmark cell failed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "efkf/gradcheck.hpp"
#include "efkf/tracking.hpp"

using json = nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BenchConfig {
    efkf::Scenario scenario;
    std::vector<efkf::FilterSpec> filters;
    std::string output_dir = ".";
    bool write_paths = false;
    std::vector<int> paths_runs = {0};
};

std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void require_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

Eigen::MatrixXd parse_matrix3(const json& rows, const std::string& where) {
    if (!rows.is_array() || rows.size() != 3) throw ConfigError(where + " must be 3 rows");
    Eigen::MatrixXd m(3, 3);
    for (int i = 0; i < 3; ++i) {
        if (!rows[i].is_array() || rows[i].size() != 3)
            throw ConfigError(where + " rows must have 3 entries");
        for (int j = 0; j < 3; ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}

BenchConfig parse_bench_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be an object");

    require_keys(root, "config",
                 {"seed", "dt", "sigma_cv", "horizon_t", "n_runs", "meas_noise_diag",
                  "meas_noise", "sensors", "init_state", "init_cov_scale", "assumed_q",
                  "measurement", "filters", "ef", "pf", "enkf", "ukf", "output_dir",
                  "write_paths", "paths_runs"});

    BenchConfig cfg;
    cfg.scenario = efkf::default_scenario(root.value("seed", std::uint64_t{20240809}));
    efkf::Scenario& sc = cfg.scenario;

    if (root.contains("dt")) sc.cv.dt = root["dt"].get<double>();
    if (root.contains("sigma_cv")) sc.cv.sigma_cv = root["sigma_cv"].get<double>();
    if (root.contains("horizon_t")) sc.horizon_T = root["horizon_t"].get<int>();
    if (root.contains("n_runs")) sc.n_runs = root["n_runs"].get<int>();
    if (root.contains("init_cov_scale")) sc.init_cov_scale = root["init_cov_scale"].get<double>();

    if (root.contains("meas_noise_diag") && root.contains("meas_noise"))
        throw ConfigError("give either meas_noise_diag or meas_noise, not both");
    if (root.contains("meas_noise_diag")) {
        const auto& diag = root["meas_noise_diag"];
        if (!diag.is_array() || diag.size() != 3)
            throw ConfigError("meas_noise_diag must have 3 entries");
        sc.meas_noise.setZero();
        for (int i = 0; i < 3; ++i) sc.meas_noise(i, i) = diag[i].get<double>();
    }
    if (root.contains("meas_noise"))
        sc.meas_noise = parse_matrix3(root["meas_noise"], "meas_noise");

    if (root.contains("init_state")) {
        const auto& st = root["init_state"];
        if (!st.is_array() || st.size() != 4)
            throw ConfigError("init_state must be [px, vx, py, vy]");
        for (int i = 0; i < 4; ++i) sc.init_state[i] = st[i].get<double>();
    }

    if (root.contains("sensors")) {
        const json& sens = root["sensors"];
        require_keys(sens, "sensors", {"grid", "positions", "active_rule"});
        if (sens.contains("grid") && sens.contains("positions"))
            throw ConfigError("give either sensors.grid or sensors.positions, not both");
        if (sens.contains("active_rule"))
            sc.sensors.active_rule = sens["active_rule"].get<std::string>();
        if (sens.contains("positions")) {
            sc.sensors.positions.clear();
            for (const auto& p : sens["positions"]) {
                if (!p.is_array() || p.size() != 2)
                    throw ConfigError("sensors.positions entries must be [x, y]");
                sc.sensors.positions.emplace_back(p[0].get<double>(), p[1].get<double>());
            }
        } else if (sens.contains("grid")) {
            const json& grid = sens["grid"];
            require_keys(grid, "sensors.grid", {"nx", "ny", "min", "max"});
            const int nx = grid.value("nx", 3), ny = grid.value("ny", 3);
            if (nx < 1 || ny < 1) throw ConfigError("sensors.grid counts must be >= 1");
            double x0 = -50, y0 = -50, x1 = 50, y1 = 50;
            if (grid.contains("min")) {
                x0 = grid["min"][0].get<double>();
                y0 = grid["min"][1].get<double>();
            }
            if (grid.contains("max")) {
                x1 = grid["max"][0].get<double>();
                y1 = grid["max"][1].get<double>();
            }
            sc.sensors.positions.clear();
            for (int iy = 0; iy < ny; ++iy)
                for (int ix = 0; ix < nx; ++ix)
                    sc.sensors.positions.emplace_back(
                        nx == 1 ? x0 : x0 + (x1 - x0) * ix / (nx - 1),
                        ny == 1 ? y0 : y0 + (y1 - y0) * iy / (ny - 1));
        }
    }

    if (root.contains("assumed_q")) {
        sc.assumed_q.clear();
        for (const auto& entry : root["assumed_q"]) {
            if (entry.is_string()) {
                if (entry.get<std::string>() != "true")
                    throw ConfigError("assumed_q entries are numbers or \"true\"");
                sc.assumed_q.push_back(efkf::assumed_q_column(sc.cv, std::nullopt));
            } else {
                sc.assumed_q.push_back(efkf::assumed_q_column(sc.cv, entry.get<double>()));
            }
        }
    } else {
        // Scales were built with default_scenario's cv; rebuild with overrides.
        sc.assumed_q.clear();
        for (double s : {0.01, 0.05, 0.1, 0.5})
            sc.assumed_q.push_back(efkf::assumed_q_column(sc.cv, s));
        sc.assumed_q.push_back(efkf::assumed_q_column(sc.cv, std::nullopt));
    }

    if (root.contains("measurement")) {
        const std::string kind = root["measurement"].get<std::string>();
        if (kind == "range")
            sc.measurement = efkf::MeasurementKind::Range;
        else if (kind == "linear")
            sc.measurement = efkf::MeasurementKind::Linear;
        else
            throw ConfigError("measurement must be \"range\" or \"linear\"");
    }

    efkf::AlphaConfig ef_defaults;
    if (root.contains("ef")) {
        const json& ef = root["ef"];
        require_keys(ef, "ef", {"samples", "iters", "step0", "step_decay", "fixed_crn"});
        ef_defaults.samples_S = ef.value("samples", ef_defaults.samples_S);
        ef_defaults.iters_I = ef.value("iters", ef_defaults.iters_I);
        ef_defaults.step0 = ef.value("step0", ef_defaults.step0);
        ef_defaults.step_decay = ef.value("step_decay", ef_defaults.step_decay);
        ef_defaults.fixed_crn = ef.value("fixed_crn", ef_defaults.fixed_crn);
    }
    int pf_particles = 2000;
    if (root.contains("pf")) {
        require_keys(root["pf"], "pf", {"particles"});
        pf_particles = root["pf"].value("particles", pf_particles);
    }
    int enkf_members = 500;
    if (root.contains("enkf")) {
        require_keys(root["enkf"], "enkf", {"members"});
        enkf_members = root["enkf"].value("members", enkf_members);
    }
    efkf::UkfParams ukf_params;
    if (root.contains("ukf")) {
        const json& ukf = root["ukf"];
        require_keys(ukf, "ukf", {"spread", "beta", "kappa"});
        ukf_params.spread = ukf.value("spread", ukf_params.spread);
        ukf_params.beta = ukf.value("beta", ukf_params.beta);
        if (ukf.contains("kappa")) ukf_params.kappa = ukf["kappa"].get<double>();
    }

    std::vector<std::string> filter_ids = {"ef_0.01", "ef_0.1", "ef_0.3", "ef_0.5",
                                           "ef_0.7",  "ekf",    "ukf",    "pf",
                                           "enkf"};
    if (root.contains("filters")) {
        filter_ids.clear();
        for (const auto& f : root["filters"]) filter_ids.push_back(f.get<std::string>());
        if (filter_ids.empty()) throw ConfigError("filters must not be empty");
    }
    for (const std::string& id : filter_ids) {
        efkf::FilterSpec spec;
        try {
            spec = efkf::FilterSpec::from_id(id);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        const double alpha = spec.ef.alpha;
        spec.ef = ef_defaults;
        spec.ef.alpha = alpha;
        spec.pf_particles = pf_particles;
        spec.enkf_members = enkf_members;
        spec.ukf = ukf_params;
        cfg.filters.push_back(std::move(spec));
    }

    cfg.output_dir = root.value("output_dir", cfg.output_dir);
    cfg.write_paths = root.value("write_paths", cfg.write_paths);
    if (root.contains("paths_runs")) {
        cfg.paths_runs.clear();
        for (const auto& r : root["paths_runs"]) cfg.paths_runs.push_back(r.get<int>());
    }
    return cfg;
}

void write_rmse_table(const efkf::RunResult& result, const std::string& dir) {
    std::ofstream out(std::filesystem::path(dir) / "rmse_table.csv", std::ios::binary);
    out << "filter,assumed_q_label,mean_rmse,stderr_rmse,n_failed_runs\n";
    for (const efkf::CellStats& cell : result.cells)
        out << cell.filter << ',' << cell.column << ',' << format_g6(cell.mean_rmse) << ','
            << format_g6(cell.stderr_rmse) << ',' << cell.n_failed << '\n';
}

void write_paths(const efkf::RunResult& result, const std::string& dir) {
    for (const efkf::CellStats& cell : result.cells) {
        for (const auto& [run, rec] : cell.paths) {
            const std::string name = "paths_" + cell.filter + "_" + std::to_string(run) + ".csv";
            std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
            out << "t,true_px,true_py,est_px,est_py\n";
            for (int t = 0; t < rec.true_xy.rows(); ++t)
                out << (t + 1) << ',' << format_g6(rec.true_xy(t, 0)) << ','
                    << format_g6(rec.true_xy(t, 1)) << ',' << format_g6(rec.est_xy(t, 0)) << ','
                    << format_g6(rec.est_xy(t, 1)) << '\n';
        }
    }
}

void print_table(const efkf::RunResult& result) {
    std::printf("%-10s", "filter");
    for (const std::string& col : result.columns) std::printf("  %-18s", col.c_str());
    std::printf("\n");
    for (const std::string& filter : result.filters) {
        std::printf("%-10s", filter.c_str());
        for (const std::string& col : result.columns) {
            const efkf::CellStats& cell = result.at(filter, col);
            std::string entry = format_g6(cell.mean_rmse) + " (" +
                                format_g6(cell.stderr_rmse) + ")";
            if (cell.n_failed > 0) entry += " !" + std::to_string(cell.n_failed);
            std::printf("  %-18s", entry.c_str());
        }
        std::printf("\n");
    }
}

int cmd_bench(const std::string& config_path, int threads) {
    BenchConfig cfg;
    try {
        cfg = parse_bench_config(config_path);
        cfg.scenario.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    efkf::RunResult result;
    try {
        result = efkf::benchmark_table(cfg.scenario, cfg.filters, threads,
                                       cfg.write_paths ? cfg.paths_runs : std::vector<int>{});
    } catch (const std::exception& e) {
        std::cerr << "benchmark failed: " << e.what() << "\n";
        return 2;
    }

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    write_rmse_table(result, cfg.output_dir);
    if (cfg.write_paths) write_paths(result, cfg.output_dir);
    print_table(result);

    for (const efkf::CellStats& cell : result.cells) {
        if (cell.n_failed == cfg.scenario.n_runs) {
            std::cerr << "all " << cell.n_failed << " runs failed in cell (" << cell.filter
                      << ", " << cell.column << ")\n";
            return 3;
        }
    }
    return 0;
}

int cmd_gradcheck(const std::string& dims_csv, int trials, std::uint64_t seed, double tol_mean,
                  double tol_cov, bool corrupt) {
    if (trials < 1) {
        std::cerr << "usage error: trials must be >= 1\n";
        return 2;
    }
    std::vector<int> dims;
    std::stringstream ss(dims_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            dims.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            std::cerr << "usage error: bad dimension '" << tok << "'\n";
            return 2;
        }
        if (dims.back() < 2) {
            std::cerr << "usage error: dimensions must be >= 2\n";
            return 2;
        }
    }
    if (dims.empty()) {
        std::cerr << "usage error: no dimensions given\n";
        return 2;
    }

    const efkf::GradCheckResult result =
        efkf::run_gradient_check(dims, trials, seed, tol_mean, tol_cov, corrupt);
    std::printf("instances:            %d\n", static_cast<int>(result.instances.size()));
    std::printf("worst mean rel err:   %.3e (tolerance %.1e)\n", result.worst_mean_rel_err,
                tol_mean);
    std::printf("worst cov rel err:    %.3e (tolerance %.1e)\n", result.worst_cov_rel_err,
                tol_cov);
    std::printf("%s\n", result.pass ? "PASS" : "FAIL");
    return result.pass ? 0 : 1;
}

int cmd_energy_trace(const std::string& config_path, const std::string& filter_id, int run,
                     int step, const std::string& out_path) {
    BenchConfig cfg;
    efkf::FilterSpec spec;
    try {
        cfg = parse_bench_config(config_path);
        cfg.scenario.validate();
        bool found = false;
        for (const efkf::FilterSpec& s : cfg.filters)
            if (s.id == filter_id) {
                spec = s;
                found = true;
            }
        if (!found) spec = [&] {
            efkf::FilterSpec s = efkf::FilterSpec::from_id(filter_id);
            for (const efkf::FilterSpec& base : cfg.filters)
                if (base.kind == efkf::FilterKind::Ef) {
                    const double alpha = s.ef.alpha;
                    s.ef = base.ef;
                    s.ef.alpha = alpha;
                    break;
                }
            return s;
        }();
        if (spec.kind != efkf::FilterKind::Ef)
            throw ConfigError("energy-trace requires an ef_<alpha> filter");
        if (run < 0 || run >= cfg.scenario.n_runs) throw ConfigError("run index out of range");
        if (step < 0 || step >= cfg.scenario.horizon_T)
            throw ConfigError("step index out of range");
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    // Re-run the selected run with the same streams the benchmark uses,
    // exporting the trace of the measurement update at `step`.
    const efkf::Scenario& sc = cfg.scenario;
    int column = static_cast<int>(sc.assumed_q.size()) - 1;
    for (std::size_t c = 0; c < sc.assumed_q.size(); ++c)
        if (sc.assumed_q[c].first == "Q_CV") column = static_cast<int>(c);
    const Eigen::MatrixXd& assumed = sc.assumed_q[column].second;

    try {
        efkf::Rng sim(efkf::sim_stream_seed(sc.seed, column, run));
        const Eigen::MatrixXd traj = efkf::simulate_trajectory(sc.cv, sc.init_state,
                                                               sc.horizon_T, sim);
        efkf::Rng frng(efkf::filter_stream_seed(sc.seed, spec.id, column, run));
        efkf::GaussianBelief belief = sc.init_belief();
        const Eigen::MatrixXd f = sc.cv.transition();
        efkf::CholeskyFactor chol_r = efkf::cholesky(sc.meas_noise);
        const Eigen::MatrixXd stub = efkf::linear_stub_matrix();

        for (int t = 0; t <= step; ++t) {
            Eigen::VectorXd y;
            efkf::MeasurementModel model;
            const Eigen::Vector4d x = traj.row(t).transpose();
            if (sc.measurement == efkf::MeasurementKind::Range) {
                efkf::Measurement meas = efkf::measure(x, sc.sensors, t, sc.meas_noise, sim);
                y = std::move(meas.y);
                model = std::move(meas.model);
            } else {
                model.noise_cov = sc.meas_noise;
                model.h = [stub](const Eigen::VectorXd& s) { return Eigen::VectorXd(stub * s); };
                model.jacobian_h = [stub](const Eigen::VectorXd&) { return stub; };
                y = stub * x + chol_r.lower() * sim.normal_vector(3);
            }
            belief = efkf::predict(belief, f, assumed);
            efkf::AlphaConfig c = spec.ef;
            c.seed = frng.next_u64();
            auto [posterior, trace] = efkf::efkf_update(belief, y, model, c);
            if (t == step) {
                std::ofstream out(out_path, std::ios::binary);
                if (!out) {
                    std::cerr << "cannot write '" << out_path << "'\n";
                    return 2;
                }
                out << "iteration,energy,step_size\n";
                for (std::size_t i = 0; i < trace.iterations.size(); ++i)
                    out << i << ',' << format_g6(trace.iterations[i].energy) << ','
                        << format_g6(trace.iterations[i].step) << '\n';
                std::printf("wrote %s (%d iterations)\n", out_path.c_str(),
                            static_cast<int>(trace.iterations.size()));
                return 0;
            }
            belief = posterior;
        }
    } catch (const std::exception& e) {
        std::cerr << "trace failed: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"alpha-divergence energy-minimization Kalman filtering benchmark"};
    app.require_subcommand(1);

    std::string config_path;
    int threads = 1;
    CLI::App* bench = app.add_subcommand("bench", "run the tracking benchmark grid");
    bench->add_option("--config", config_path, "JSON configuration file")->required();
    bench->add_option("--threads", threads, "worker threads (results do not depend on this)");

    std::string dims_csv = "2,4";
    int trials = 24;
    std::uint64_t gc_seed = 20240809;
    double tol_mean = 1e-5, tol_cov = 1e-4;
    bool corrupt = false;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of the energy gradients");
    gradcheck->add_option("--dims", dims_csv, "comma-separated state dimensions");
    gradcheck->add_option("--trials", trials, "number of random instances");
    gradcheck->add_option("--seed", gc_seed, "random seed");
    gradcheck->add_option("--tol-mean", tol_mean, "relative tolerance, mean gradient");
    gradcheck->add_option("--tol-cov", tol_cov, "relative tolerance, covariance gradient");
    gradcheck->add_flag("--corrupt", corrupt)->group("");  // negative-control hook

    std::string trace_config, trace_filter = "ef_0.7", trace_out = "energy_trace.csv";
    int trace_run = 0, trace_step = 0;
    CLI::App* trace =
        app.add_subcommand("energy-trace", "export per-iteration energies of one update");
    trace->add_option("--config", trace_config, "JSON configuration file")->required();
    trace->add_option("--filter", trace_filter, "ef_<alpha> filter id");
    trace->add_option("--run", trace_run, "run index");
    trace->add_option("--step", trace_step, "time step of the traced update");
    trace->add_option("--out", trace_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (bench->parsed()) return cmd_bench(config_path, threads);
    if (gradcheck->parsed())
        return cmd_gradcheck(dims_csv, trials, gc_seed, tol_mean, tol_cov, corrupt);
    if (trace->parsed())
        return cmd_energy_trace(trace_config, trace_filter, trace_run, trace_step, trace_out);
    return 2;
}
