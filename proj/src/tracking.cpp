#include "efkf/tracking.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "efkf/numerics.hpp"

namespace efkf {

namespace {

constexpr std::uint64_t kSimTag = 0x73696d;      // trajectory + measurement stream
constexpr std::uint64_t kFilterTag = 0x666c74;   // per-filter sampling stream

Eigen::Vector2d position_of(const Eigen::Vector4d& state) {
    return Eigen::Vector2d(state[0], state[2]);
}

}  // namespace

Eigen::MatrixXd CvModel::transition() const {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(4, 4);
    Eigen::Matrix2d block;
    block << 1.0, dt, 0.0, 1.0;
    f.block<2, 2>(0, 0) = block;
    f.block<2, 2>(2, 2) = block;
    return f;
}

Eigen::MatrixXd CvModel::process_noise() const {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 4);
    Eigen::Matrix2d block;
    const double d2 = dt * dt;
    block << d2 * d2 / 4.0, d2 * dt / 2.0, d2 * dt / 2.0, d2;
    block *= sigma_cv;
    q.block<2, 2>(0, 0) = block;
    q.block<2, 2>(2, 2) = block;
    return q;
}

std::vector<int> SensorField::active_for(const Eigen::Vector2d& target) const {
    if (active_rule != "nearest3")
        throw std::invalid_argument("SensorField: unknown active_rule '" + active_rule + "'");
    if (positions.size() < 3)
        throw std::invalid_argument("SensorField: need at least 3 sensors");
    std::vector<int> order(positions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return (positions[a] - target).squaredNorm() < (positions[b] - target).squaredNorm();
    });
    order.resize(3);
    return order;
}

Eigen::MatrixXd linear_stub_matrix() {
    Eigen::MatrixXd h(3, 4);
    h << 1.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 1.0, 0.0,
         0.5, 0.0, 0.5, 0.0;
    return h;
}

GaussianBelief Scenario::init_belief() const {
    return GaussianBelief(init_state, init_cov_scale * Eigen::MatrixXd::Identity(4, 4));
}

void Scenario::validate() const {
    if (horizon_T < 1) throw std::invalid_argument("Scenario: horizon_T must be >= 1");
    if (n_runs < 1) throw std::invalid_argument("Scenario: n_runs must be >= 1");
    if (assumed_q.empty()) throw std::invalid_argument("Scenario: no assumed-Q columns");
    if (meas_noise.rows() != 3 || meas_noise.cols() != 3)
        throw std::invalid_argument("Scenario: meas_noise must be 3x3");
    if (!(cv.dt > 0.0)) throw std::invalid_argument("Scenario: dt must be > 0");
    if (!(cv.sigma_cv >= 0.0)) throw std::invalid_argument("Scenario: sigma_cv must be >= 0");
    if (!(init_cov_scale > 0.0))
        throw std::invalid_argument("Scenario: init_cov_scale must be > 0");
    if (measurement == MeasurementKind::Range) sensors.active_for(position_of(init_state));
    cholesky(meas_noise);
}

std::pair<std::string, Eigen::MatrixXd> assumed_q_column(const CvModel& cv,
                                                         std::optional<double> scale) {
    if (!scale) return {"Q_CV", cv.process_noise()};
    char label[32];
    std::snprintf(label, sizeof(label), "%.6gI", *scale);
    return {label, *scale * Eigen::MatrixXd::Identity(4, 4)};
}

Scenario default_scenario(std::uint64_t seed) {
    Scenario sc;
    sc.seed = seed;
    sc.init_state << 0.0, 1.0, 0.0, 1.0;
    sc.meas_noise = 16.0 * Eigen::MatrixXd::Identity(3, 3);
    const double extent = 50.0;
    for (double gy : {-extent, 0.0, extent})
        for (double gx : {-extent, 0.0, extent})
            sc.sensors.positions.emplace_back(gx, gy);
    for (double s : {0.01, 0.05, 0.1, 0.5})
        sc.assumed_q.push_back(assumed_q_column(sc.cv, s));
    sc.assumed_q.push_back(assumed_q_column(sc.cv, std::nullopt));
    return sc;
}

Eigen::MatrixXd simulate_trajectory(const CvModel& cv, const Eigen::Vector4d& init_state, int T,
                                    Rng& rng) {
    if (T < 1) throw std::invalid_argument("simulate_trajectory: T must be >= 1");
    const Eigen::MatrixXd f = cv.transition();
    const Eigen::MatrixXd noise_sqrt = psd_sqrt(cv.process_noise());
    Eigen::MatrixXd traj(T, 4);
    Eigen::Vector4d x = init_state;
    for (int t = 0; t < T; ++t) {
        x = f * x + noise_sqrt * rng.normal_vector(4);
        traj.row(t) = x.transpose();
    }
    return traj;
}

MeasurementModel make_range_model(const std::vector<Eigen::Vector2d>& active,
                                  const Eigen::MatrixXd& R, int ix, int iy, int state_dim) {
    const int m = static_cast<int>(active.size());
    MeasurementModel model;
    model.noise_cov = R;
    model.h = [active, ix, iy, m](const Eigen::VectorXd& x) {
        Eigen::VectorXd out(m);
        const Eigen::Vector2d pos(x[ix], x[iy]);
        for (int i = 0; i < m; ++i) out[i] = (pos - active[i]).norm();
        return out;
    };
    model.jacobian_h = [active, ix, iy, m, state_dim](const Eigen::VectorXd& x) {
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m, state_dim);
        const Eigen::Vector2d pos(x[ix], x[iy]);
        for (int i = 0; i < m; ++i) {
            const Eigen::Vector2d diff = pos - active[i];
            const double r = diff.norm();
            if (r > 0.0) {  // zero row at zero range: sensor uninformative
                jac(i, ix) = diff[0] / r;
                jac(i, iy) = diff[1] / r;
            }
        }
        return jac;
    };
    return model;
}

Measurement measure(const Eigen::Vector4d& state, const SensorField& sensors, int /*t*/,
                    const Eigen::MatrixXd& R, Rng& rng) {
    const std::vector<int> ids = sensors.active_for(position_of(state));
    std::vector<Eigen::Vector2d> active;
    for (int id : ids) active.push_back(sensors.positions[id]);
    MeasurementModel model = make_range_model(active, R, 0, 2, 4);
    const Eigen::VectorXd y =
        model.h(state) + cholesky(R).lower() * rng.normal_vector(static_cast<int>(R.rows()));
    return Measurement{y, ids, std::move(model)};
}

std::uint64_t sim_stream_seed(std::uint64_t master, int column, int run) {
    return derive_seed(master, {kSimTag, static_cast<std::uint64_t>(column),
                                static_cast<std::uint64_t>(run)});
}

std::uint64_t filter_stream_seed(std::uint64_t master, const std::string& filter_id, int column,
                                 int run) {
    return derive_seed(master, {kFilterTag, fnv1a(filter_id),
                                static_cast<std::uint64_t>(column),
                                static_cast<std::uint64_t>(run)});
}

FilterSpec FilterSpec::from_id(const std::string& id) {
    FilterSpec spec;
    spec.id = id;
    if (id.rfind("ef_", 0) == 0) {
        spec.kind = FilterKind::Ef;
        try {
            spec.ef.alpha = std::stod(id.substr(3));
        } catch (const std::exception&) {
            throw std::invalid_argument("FilterSpec: bad alpha in '" + id + "'");
        }
        if (!(spec.ef.alpha > 0.0 && spec.ef.alpha <= 1.0))
            throw std::invalid_argument("FilterSpec: alpha out of (0, 1] in '" + id + "'");
    } else if (id == "ekf") {
        spec.kind = FilterKind::Ekf;
    } else if (id == "ukf") {
        spec.kind = FilterKind::Ukf;
    } else if (id == "pf") {
        spec.kind = FilterKind::Pf;
    } else if (id == "enkf") {
        spec.kind = FilterKind::Enkf;
    } else if (id == "kalman") {
        spec.kind = FilterKind::Kalman;
    } else {
        throw std::invalid_argument("FilterSpec: unknown filter '" + id + "'");
    }
    return spec;
}

const CellStats& RunResult::at(const std::string& filter, const std::string& column) const {
    for (const CellStats& cell : cells)
        if (cell.filter == filter && cell.column == column) return cell;
    throw std::invalid_argument("RunResult: no cell (" + filter + ", " + column + ")");
}

namespace {

struct RunData {
    Eigen::MatrixXd traj;                 // T x 4
    std::vector<Eigen::VectorXd> ys;
    std::vector<MeasurementModel> models;
};

/// Trajectory first, then per-step measurement noise, all from the
/// (column, run) stream; filters never touch this stream.
RunData simulate_run(const Scenario& sc, int column_index, int run) {
    Rng rng(sim_stream_seed(sc.seed, column_index, run));
    RunData data;
    data.traj = simulate_trajectory(sc.cv, sc.init_state, sc.horizon_T, rng);
    data.ys.reserve(sc.horizon_T);
    data.models.reserve(sc.horizon_T);
    CholeskyFactor chol_r = cholesky(sc.meas_noise);
    const Eigen::MatrixXd stub = linear_stub_matrix();
    for (int t = 0; t < sc.horizon_T; ++t) {
        const Eigen::Vector4d x = data.traj.row(t).transpose();
        if (sc.measurement == MeasurementKind::Range) {
            Measurement meas = measure(x, sc.sensors, t, sc.meas_noise, rng);
            data.ys.push_back(std::move(meas.y));
            data.models.push_back(std::move(meas.model));
        } else {
            MeasurementModel model;
            model.noise_cov = sc.meas_noise;
            model.h = [stub](const Eigen::VectorXd& s) { return Eigen::VectorXd(stub * s); };
            model.jacobian_h = [stub](const Eigen::VectorXd&) { return stub; };
            data.ys.push_back(stub * x + chol_r.lower() * rng.normal_vector(3));
            data.models.push_back(std::move(model));
        }
    }
    return data;
}

struct RunOutcome {
    bool ok = false;
    double rmse = 0.0;
    Eigen::MatrixXd est_xy;  // T x 2
};

RunOutcome execute_run(const FilterSpec& spec, const Scenario& sc, const Eigen::MatrixXd& Qa,
                       const RunData& data, std::uint64_t filter_seed) {
    const int T = sc.horizon_T;
    const Eigen::MatrixXd f = sc.cv.transition();
    Rng rng(filter_seed);
    RunOutcome out;
    out.est_xy.resize(T, 2);

    try {
        if (spec.kind == FilterKind::Pf) {
            const int n = spec.pf_particles;
            CholeskyFactor chol0 = cholesky(sc.init_belief().cov());
            ParticleEnsemble ens{Eigen::MatrixXd(n, 4),
                                 Eigen::VectorXd::Constant(n, 1.0 / n)};
            for (int i = 0; i < n; ++i)
                ens.particles.row(i) =
                    (sc.init_state + chol0.lower() * rng.normal_vector(4)).transpose();
            for (int t = 0; t < T; ++t) {
                ens = pf_step(ens, data.ys[t], f, Qa, data.models[t], rng);
                const Eigen::VectorXd mean = ens.mean();
                out.est_xy(t, 0) = mean[0];
                out.est_xy(t, 1) = mean[2];
            }
        } else if (spec.kind == FilterKind::Enkf) {
            const int n = spec.enkf_members;
            CholeskyFactor chol0 = cholesky(sc.init_belief().cov());
            Eigen::MatrixXd members(n, 4);
            for (int i = 0; i < n; ++i)
                members.row(i) =
                    (sc.init_state + chol0.lower() * rng.normal_vector(4)).transpose();
            const Eigen::MatrixXd noise_sqrt = psd_sqrt(Qa);
            for (int t = 0; t < T; ++t) {
                for (int i = 0; i < n; ++i)
                    members.row(i) =
                        (f * members.row(i).transpose() + noise_sqrt * rng.normal_vector(4))
                            .transpose();
                members = enkf_update(members, data.ys[t], data.models[t], rng);
                const Eigen::VectorXd mean = members.colwise().mean();
                out.est_xy(t, 0) = mean[0];
                out.est_xy(t, 1) = mean[2];
            }
        } else {
            GaussianBelief belief = sc.init_belief();
            for (int t = 0; t < T; ++t) {
                belief = predict(belief, f, Qa);
                switch (spec.kind) {
                    case FilterKind::Ef: {
                        AlphaConfig cfg = spec.ef;
                        cfg.seed = rng.next_u64();
                        belief = efkf_update(belief, data.ys[t], data.models[t], cfg).first;
                        break;
                    }
                    case FilterKind::Ekf:
                        belief = ekf_update(belief, data.ys[t], data.models[t]);
                        break;
                    case FilterKind::Ukf:
                        belief = ukf_update(belief, data.ys[t], data.models[t], spec.ukf);
                        break;
                    case FilterKind::Kalman: {
                        if (sc.measurement != MeasurementKind::Linear)
                            throw std::invalid_argument(
                                "kalman filter requires the linear measurement stub");
                        belief = kalman_update(belief, data.ys[t], linear_stub_matrix(),
                                               sc.meas_noise);
                        break;
                    }
                    default:
                        throw std::invalid_argument("unsupported filter kind");
                }
                out.est_xy(t, 0) = belief.mean()[0];
                out.est_xy(t, 1) = belief.mean()[2];
            }
        }
    } catch (const Error&) {
        return out;  // recorded as a failed run
    }

    double sq = 0.0;
    for (int t = 0; t < T; ++t) {
        const double ex = out.est_xy(t, 0) - data.traj(t, 0);
        const double ey = out.est_xy(t, 1) - data.traj(t, 2);
        sq += ex * ex + ey * ey;
    }
    out.rmse = std::sqrt(sq / T);
    out.ok = true;
    return out;
}

CellStats finalize_cell(const FilterSpec& spec, const std::string& column,
                        const std::vector<RunOutcome>& outcomes, const Scenario& sc,
                        const std::vector<int>& paths_runs,
                        const std::vector<RunData>* run_data) {
    CellStats cell;
    cell.filter = spec.id;
    cell.column = column;
    std::vector<double> ok_rmse;
    for (const RunOutcome& o : outcomes) {
        if (o.ok)
            ok_rmse.push_back(o.rmse);
        else
            ++cell.n_failed;
    }
    cell.per_run_rmse.resize(static_cast<int>(ok_rmse.size()));
    for (std::size_t i = 0; i < ok_rmse.size(); ++i)
        cell.per_run_rmse[static_cast<int>(i)] = ok_rmse[i];
    if (!ok_rmse.empty()) {
        cell.mean_rmse = cell.per_run_rmse.mean();
        if (ok_rmse.size() > 1) {
            const double var =
                (cell.per_run_rmse.array() - cell.mean_rmse).square().sum() /
                (ok_rmse.size() - 1);
            cell.stderr_rmse = std::sqrt(var / ok_rmse.size());
        }
    }
    for (int run : paths_runs) {
        if (run < 0 || run >= sc.n_runs || !outcomes[run].ok) continue;
        PathRecord rec;
        const Eigen::MatrixXd& traj = (*run_data)[run].traj;
        rec.true_xy.resize(sc.horizon_T, 2);
        rec.true_xy.col(0) = traj.col(0);
        rec.true_xy.col(1) = traj.col(2);
        rec.est_xy = outcomes[run].est_xy;
        cell.paths[run] = std::move(rec);
    }
    return cell;
}

}  // namespace

CellStats run_filter_on_scenario(const FilterSpec& spec, const Scenario& scenario,
                                 const Eigen::MatrixXd& assumed_Q, int column_index,
                                 const std::vector<int>& paths_runs) {
    scenario.validate();
    if (spec.kind == FilterKind::Ef) spec.ef.validate();

    std::vector<RunData> run_data(scenario.n_runs);
    std::vector<RunOutcome> outcomes(scenario.n_runs);
    for (int run = 0; run < scenario.n_runs; ++run) {
        run_data[run] = simulate_run(scenario, column_index, run);
        outcomes[run] = execute_run(spec, scenario, assumed_Q, run_data[run],
                                    filter_stream_seed(scenario.seed, spec.id, column_index, run));
    }
    const std::string column =
        column_index < static_cast<int>(scenario.assumed_q.size())
            ? scenario.assumed_q[column_index].first
            : std::to_string(column_index);
    return finalize_cell(spec, column, outcomes, scenario, paths_runs, &run_data);
}

RunResult benchmark_table(const Scenario& scenario, const std::vector<FilterSpec>& filters,
                          int threads, const std::vector<int>& paths_runs) {
    scenario.validate();
    if (filters.empty()) throw std::invalid_argument("benchmark_table: no filters");
    for (const FilterSpec& spec : filters)
        if (spec.kind == FilterKind::Ef) spec.ef.validate();

    RunResult result;
    for (const FilterSpec& spec : filters) result.filters.push_back(spec.id);
    for (const auto& [label, q] : scenario.assumed_q) result.columns.push_back(label);

    // Paths come from the matched column when present, else the last one.
    int paths_column = static_cast<int>(scenario.assumed_q.size()) - 1;
    for (std::size_t c = 0; c < scenario.assumed_q.size(); ++c)
        if (scenario.assumed_q[c].first == "Q_CV") paths_column = static_cast<int>(c);

    struct Task {
        int filter;
        int column;
        int run;
    };
    std::vector<Task> tasks;
    for (int fi = 0; fi < static_cast<int>(filters.size()); ++fi)
        for (int ci = 0; ci < static_cast<int>(scenario.assumed_q.size()); ++ci)
            for (int run = 0; run < scenario.n_runs; ++run) tasks.push_back({fi, ci, run});

    // Simulation data is shared across filters of the same (column, run).
    std::vector<RunData> run_data(scenario.assumed_q.size() * scenario.n_runs);
    {
        std::atomic<int> next{0};
        auto sim_worker = [&] {
            for (;;) {
                const int idx = next.fetch_add(1);
                if (idx >= static_cast<int>(run_data.size())) return;
                const int ci = idx / scenario.n_runs;
                const int run = idx % scenario.n_runs;
                run_data[idx] = simulate_run(scenario, ci, run);
            }
        };
        std::vector<std::thread> pool;
        for (int i = 1; i < threads; ++i) pool.emplace_back(sim_worker);
        sim_worker();
        for (std::thread& t : pool) t.join();
    }

    std::vector<RunOutcome> outcomes(tasks.size());
    {
        std::atomic<int> next{0};
        auto worker = [&] {
            for (;;) {
                const int idx = next.fetch_add(1);
                if (idx >= static_cast<int>(tasks.size())) return;
                const Task& task = tasks[idx];
                const FilterSpec& spec = filters[task.filter];
                outcomes[idx] =
                    execute_run(spec, scenario, scenario.assumed_q[task.column].second,
                                run_data[task.column * scenario.n_runs + task.run],
                                filter_stream_seed(scenario.seed, spec.id, task.column,
                                                   task.run));
            }
        };
        std::vector<std::thread> pool;
        for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
        worker();
        for (std::thread& t : pool) t.join();
    }

    for (int fi = 0; fi < static_cast<int>(filters.size()); ++fi) {
        for (int ci = 0; ci < static_cast<int>(scenario.assumed_q.size()); ++ci) {
            std::vector<RunOutcome> cell_outcomes(scenario.n_runs);
            for (int run = 0; run < scenario.n_runs; ++run)
                cell_outcomes[run] = outcomes[(fi * scenario.assumed_q.size() + ci) *
                                                  scenario.n_runs +
                                              run];
            std::vector<RunData> cell_data(run_data.begin() + ci * scenario.n_runs,
                                           run_data.begin() + (ci + 1) * scenario.n_runs);
            result.cells.push_back(finalize_cell(
                filters[fi], scenario.assumed_q[ci].first, cell_outcomes, scenario,
                ci == paths_column ? paths_runs : std::vector<int>{}, &cell_data));
        }
    }
    return result;
}

}  // namespace efkf
