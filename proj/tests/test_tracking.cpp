#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "efkf/baselines.hpp"
#include "efkf/energy.hpp"
#include "efkf/tracking.hpp"

using namespace efkf;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<int>(v.size()));
    int i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

Scenario small_scenario(std::uint64_t seed) {
    Scenario sc = default_scenario(seed);
    sc.horizon_T = 8;
    sc.n_runs = 5;
    sc.assumed_q = {assumed_q_column(sc.cv, std::nullopt)};
    return sc;
}

}  // namespace

TEST_CASE("CvModel: transition and noise blocks") {
    CvModel cv{1.0, 1.0};
    const Eigen::MatrixXd f = cv.transition();
    CHECK(f(0, 0) == 1.0);
    CHECK(f(0, 1) == 1.0);
    CHECK(f(1, 0) == 0.0);
    CHECK(f(1, 1) == 1.0);
    CHECK(f(0, 2) == 0.0);
    CHECK(f(2, 3) == 1.0);

    const Eigen::MatrixXd q = cv.process_noise();
    CHECK(q(0, 0) == doctest::Approx(0.25));
    CHECK(q(0, 1) == doctest::Approx(0.5));
    CHECK(q(1, 0) == doctest::Approx(0.5));
    CHECK(q(1, 1) == doctest::Approx(1.0));
    CHECK(q(2, 2) == doctest::Approx(0.25));
    CHECK(q(0, 2) == 0.0);

    CvModel half{0.5, 2.0};
    CHECK(half.transition()(0, 1) == doctest::Approx(0.5));
    CHECK(half.process_noise()(1, 1) == doctest::Approx(2.0 * 0.25));
}

TEST_CASE("simulate_trajectory: noiseless straight line") {
    CvModel cv{1.0, 0.0};
    Rng rng(81);
    const Eigen::MatrixXd traj =
        simulate_trajectory(cv, Eigen::Vector4d(0.0, 1.0, 0.0, 0.0), 3, rng);
    CHECK(traj(0, 0) == doctest::Approx(1.0));
    CHECK(traj(1, 0) == doctest::Approx(2.0));
    CHECK(traj(2, 0) == doctest::Approx(3.0));
    CHECK(traj.col(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("measure: distances, zero-range rule, Jacobian consistency") {
    SensorField field;
    field.positions = {{0.0, 0.0}, {50.0, 0.0}, {0.0, 50.0}, {50.0, 50.0}};
    Rng rng(82);

    // 3-4-5 triangle from the origin sensor; zero noise via tiny R.
    const Eigen::MatrixXd tiny = 1e-20 * Eigen::MatrixXd::Identity(3, 3);
    const Measurement meas =
        measure(Eigen::Vector4d(3.0, 0.0, 4.0, 0.0), field, 0, tiny, rng);
    CHECK(meas.active_ids[0] == 0);  // nearest first
    CHECK(meas.y[0] == doctest::Approx(5.0).epsilon(1e-9));

    // Position exactly on a sensor: zero distance, zero Jacobian row.
    const Measurement on_sensor =
        measure(Eigen::Vector4d(0.0, 0.0, 0.0, 0.0), field, 1, tiny, rng);
    CHECK(on_sensor.model.h(vec({0, 0, 0, 0}))[0] == 0.0);
    CHECK(on_sensor.model.jacobian_h(vec({0, 0, 0, 0})).row(0).norm() == 0.0);

    // Away from singular points the Jacobian matches finite differences.
    std::vector<Eigen::VectorXd> points;
    for (int i = 0; i < 5; ++i) points.push_back(10.0 * rng.normal_vector(4));
    CHECK(jacobian_deviation(meas.model, points) < 1e-6);
}

TEST_CASE("nearest3 selection is ordered by distance") {
    SensorField field;
    field.positions = {{10.0, 0.0}, {1.0, 0.0}, {5.0, 0.0}, {-20.0, 0.0}};
    const std::vector<int> ids = field.active_for(Eigen::Vector2d(0.0, 0.0));
    CHECK(ids == std::vector<int>{1, 2, 0});
    SensorField bad;
    bad.positions = {{0.0, 0.0}, {1.0, 1.0}};
    CHECK_THROWS_AS(bad.active_for(Eigen::Vector2d(0, 0)), std::invalid_argument);
}

TEST_CASE("run_filter_on_scenario: kalman self-consistency, bit for bit") {
    Scenario sc = small_scenario(4242);
    sc.measurement = MeasurementKind::Linear;
    const FilterSpec spec = FilterSpec::from_id("kalman");
    const CellStats cell = run_filter_on_scenario(spec, sc, sc.cv.process_noise(), 0);

    // Oracle: replay the same streams with an explicit update recursion.
    const Eigen::MatrixXd stub = linear_stub_matrix();
    const Eigen::MatrixXd f = sc.cv.transition();
    for (int run = 0; run < sc.n_runs; ++run) {
        Rng sim(sim_stream_seed(sc.seed, 0, run));
        const Eigen::MatrixXd traj = simulate_trajectory(sc.cv, sc.init_state, sc.horizon_T, sim);
        CholeskyFactor chol_r = cholesky(sc.meas_noise);
        std::vector<Eigen::VectorXd> ys;
        for (int t = 0; t < sc.horizon_T; ++t)
            ys.push_back(stub * traj.row(t).transpose() + chol_r.lower() * sim.normal_vector(3));

        GaussianBelief belief = sc.init_belief();
        double sq = 0.0;
        for (int t = 0; t < sc.horizon_T; ++t) {
            belief = predict(belief, f, sc.cv.process_noise());
            belief = kalman_update(belief, ys[t], stub, sc.meas_noise);
            const double ex = belief.mean()[0] - traj(t, 0);
            const double ey = belief.mean()[2] - traj(t, 2);
            sq += ex * ex + ey * ey;
        }
        const double rmse = std::sqrt(sq / sc.horizon_T);
        CHECK(cell.per_run_rmse[run] == rmse);  // identical operations, identical bits
    }
}

TEST_CASE("benchmark_table: filters consume identical trajectories") {
    Scenario sc = small_scenario(7);
    const std::vector<FilterSpec> filters = {FilterSpec::from_id("ekf"),
                                             FilterSpec::from_id("ukf")};
    const RunResult result = benchmark_table(sc, filters, 1, {0, 1});
    const CellStats& a = result.at("ekf", "Q_CV");
    const CellStats& b = result.at("ukf", "Q_CV");
    REQUIRE(a.paths.count(0) == 1);
    REQUIRE(b.paths.count(0) == 1);
    CHECK((a.paths.at(0).true_xy - b.paths.at(0).true_xy).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.paths.at(1).true_xy - b.paths.at(1).true_xy).cwiseAbs().maxCoeff() == 0.0);
    // Estimates differ (different filters), truths do not.
    CHECK((a.paths.at(0).est_xy - b.paths.at(0).est_xy).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("benchmark_table: one cell equals run_filter_on_scenario") {
    Scenario sc = small_scenario(11);
    sc.n_runs = 3;
    const std::vector<FilterSpec> filters = {FilterSpec::from_id("ekf")};
    const RunResult grid = benchmark_table(sc, filters, 1);
    const CellStats direct = run_filter_on_scenario(filters[0], sc, sc.assumed_q[0].second, 0);
    CHECK(grid.cells.size() == 1);
    CHECK(grid.cells[0].mean_rmse == direct.mean_rmse);
    CHECK(grid.cells[0].stderr_rmse == direct.stderr_rmse);
}

TEST_CASE("benchmark_table: thread count does not change results") {
    Scenario sc = small_scenario(13);
    sc.n_runs = 6;
    std::vector<FilterSpec> filters = {FilterSpec::from_id("ekf"), FilterSpec::from_id("pf")};
    filters[1].pf_particles = 200;
    const RunResult serial = benchmark_table(sc, filters, 1);
    const RunResult parallel = benchmark_table(sc, filters, 4);
    for (std::size_t i = 0; i < serial.cells.size(); ++i) {
        CHECK(serial.cells[i].mean_rmse == parallel.cells[i].mean_rmse);
        CHECK(serial.cells[i].stderr_rmse == parallel.cells[i].stderr_rmse);
    }
}

TEST_CASE("rmse is invariant to sensor relabeling and scene translation") {
    Scenario base = small_scenario(17);
    base.n_runs = 3;
    const FilterSpec spec = FilterSpec::from_id("ekf");
    const CellStats cell0 = run_filter_on_scenario(spec, base, base.assumed_q[0].second, 0);

    Scenario relabeled = base;
    std::reverse(relabeled.sensors.positions.begin(), relabeled.sensors.positions.end());
    const CellStats cell1 =
        run_filter_on_scenario(spec, relabeled, relabeled.assumed_q[0].second, 0);
    for (int run = 0; run < base.n_runs; ++run)
        CHECK(cell1.per_run_rmse[run] ==
              doctest::Approx(cell0.per_run_rmse[run]).epsilon(1e-9));

    Scenario shifted = base;
    const Eigen::Vector2d offset(137.0, -54.0);
    for (Eigen::Vector2d& s : shifted.sensors.positions) s += offset;
    shifted.init_state[0] += offset[0];
    shifted.init_state[2] += offset[1];
    const CellStats cell2 =
        run_filter_on_scenario(spec, shifted, shifted.assumed_q[0].second, 0);
    for (int run = 0; run < base.n_runs; ++run)
        CHECK(cell2.per_run_rmse[run] ==
              doctest::Approx(cell0.per_run_rmse[run]).epsilon(1e-6));
}

TEST_CASE("kalman filter attains the minimum rmse on the linear scenario") {
    Scenario sc = default_scenario(23);
    sc.measurement = MeasurementKind::Linear;
    sc.horizon_T = 10;
    sc.n_runs = 100;
    sc.assumed_q = {assumed_q_column(sc.cv, std::nullopt)};

    std::vector<FilterSpec> filters = {FilterSpec::from_id("kalman"), FilterSpec::from_id("ekf"),
                                       FilterSpec::from_id("ukf"), FilterSpec::from_id("pf"),
                                       FilterSpec::from_id("enkf"), FilterSpec::from_id("ef_0.5")};
    filters[3].pf_particles = 500;
    filters[4].enkf_members = 200;
    filters[5].ef.samples_S = 48;
    filters[5].ef.iters_I = 60;
    const RunResult result = benchmark_table(sc, filters, 4);

    const CellStats& kalman = result.at("kalman", "Q_CV");
    for (const std::string& other : {"ekf", "ukf", "pf", "enkf", "ef_0.5"}) {
        const CellStats& cell = result.at(other, "Q_CV");
        const double slack =
            5.0 * std::sqrt(cell.stderr_rmse * cell.stderr_rmse +
                            kalman.stderr_rmse * kalman.stderr_rmse);
        CHECK(kalman.mean_rmse <= cell.mean_rmse + slack);
    }
}

TEST_CASE("zero measurement noise lowers every filter's rmse") {
    Scenario noisy = default_scenario(29);
    noisy.horizon_T = 12;
    noisy.n_runs = 8;
    noisy.assumed_q = {assumed_q_column(noisy.cv, std::nullopt)};

    Scenario quiet = noisy;
    quiet.meas_noise = 1e-4 * Eigen::MatrixXd::Identity(3, 3);

    std::vector<FilterSpec> filters = {FilterSpec::from_id("ekf"), FilterSpec::from_id("ukf"),
                                       FilterSpec::from_id("pf")};
    filters[2].pf_particles = 500;
    const RunResult loud_result = benchmark_table(noisy, filters, 2);
    const RunResult quiet_result = benchmark_table(quiet, filters, 2);
    for (const std::string& f : {"ekf", "ukf", "pf"})
        CHECK(quiet_result.at(f, "Q_CV").mean_rmse < loud_result.at(f, "Q_CV").mean_rmse);
}

TEST_CASE("filter failures are counted, not silently dropped") {
    Scenario sc = small_scenario(31);
    sc.n_runs = 3;
    const FilterSpec spec = FilterSpec::from_id("ekf");
    // An indefinite assumed process noise destroys the predicted
    // covariance; every run fails and must be counted.
    const Eigen::MatrixXd bad = -20.0 * Eigen::MatrixXd::Identity(4, 4);
    const CellStats cell = run_filter_on_scenario(spec, sc, bad, 0);
    CHECK(cell.n_failed == sc.n_runs);
    CHECK(cell.per_run_rmse.size() == 0);
}

TEST_CASE("FilterSpec: id parsing") {
    CHECK(FilterSpec::from_id("ef_0.7").kind == FilterKind::Ef);
    CHECK(FilterSpec::from_id("ef_0.7").ef.alpha == doctest::Approx(0.7));
    CHECK(FilterSpec::from_id("ekf").kind == FilterKind::Ekf);
    CHECK_THROWS_AS(FilterSpec::from_id("ef_1.5"), std::invalid_argument);
    CHECK_THROWS_AS(FilterSpec::from_id("magic"), std::invalid_argument);
}
