#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efkf/baselines.hpp"
#include "efkf/energy.hpp"
#include "efkf/gaussian.hpp"
#include "efkf/model.hpp"
#include "efkf/rng.hpp"

namespace efkf {

/// Constant-velocity dynamics on the state [px, vx, py, vy].
struct CvModel {
    double dt = 1.0;
    double sigma_cv = 1.0;

    /// 4x4 block diagonal of [[1, dt], [0, 1]].
    Eigen::MatrixXd transition() const;

    /// 4x4 block diagonal of sigma_cv * [[dt^4/4, dt^3/2], [dt^3/2, dt^2]].
    /// Rank 2 (one white-acceleration driver per axis).
    Eigen::MatrixXd process_noise() const;
};

/// Range sensors on a plane. At every step exactly 3 are active.
struct SensorField {
    std::vector<Eigen::Vector2d> positions;
    std::string active_rule = "nearest3";

    /// Indices of the 3 active sensors for a target position, ordered by
    /// increasing distance. Only "nearest3" is implemented.
    std::vector<int> active_for(const Eigen::Vector2d& target) const;
};

enum class MeasurementKind { Range, Linear };

/// Fixed observation matrix used by the linear measurement stub
/// (positions plus a redundant mix; velocities unobserved).
Eigen::MatrixXd linear_stub_matrix();

struct Scenario {
    CvModel cv;
    SensorField sensors;
    int horizon_T = 30;
    Eigen::MatrixXd meas_noise = Eigen::MatrixXd::Identity(3, 3);
    std::vector<std::pair<std::string, Eigen::MatrixXd>> assumed_q;  // label -> 4x4 PSD
    int n_runs = 100;
    std::uint64_t seed = 0;
    Eigen::Vector4d init_state = Eigen::Vector4d::Zero();
    double init_cov_scale = 10.0;
    MeasurementKind measurement = MeasurementKind::Range;

    GaussianBelief init_belief() const;
    void validate() const;
};

/// Default benchmark scenario: dt=1, sigma_cv=1, T=30, R=I, 9 sensors on
/// a 3x3 grid, mismatch columns {0.01, 0.05, 0.1, 0.5} * I plus the true
/// process noise, 100 runs.
Scenario default_scenario(std::uint64_t seed);

/// Labeled assumed-process-noise column: scale * I, or the model's true
/// noise when scale is absent.
std::pair<std::string, Eigen::MatrixXd> assumed_q_column(const CvModel& cv,
                                                         std::optional<double> scale);

/// Exact linear-Gaussian rollout; returns T x 4 (states at t = 1..T).
Eigen::MatrixXd simulate_trajectory(const CvModel& cv, const Eigen::Vector4d& init_state, int T,
                                    Rng& rng);

/// Range model over the given active sensor positions; rows of the
/// Jacobian are unit direction vectors on the position components
/// (ix, iy) and zero elsewhere. A zero row is substituted at zero range.
MeasurementModel make_range_model(const std::vector<Eigen::Vector2d>& active,
                                  const Eigen::MatrixXd& R, int ix, int iy, int state_dim);

struct Measurement {
    Eigen::VectorXd y;
    std::vector<int> active_ids;
    MeasurementModel model;  // noiseless h and Jacobian for the active set
};

/// Selects active sensors, measures Euclidean distances from the position
/// components of the state, and adds N(0, R) noise.
Measurement measure(const Eigen::Vector4d& state, const SensorField& sensors, int t,
                    const Eigen::MatrixXd& R, Rng& rng);

/// Seed of the shared simulation stream for (column, run): the trajectory
/// is drawn first (T steps), then per-step measurement noise. Identical
/// for every filter.
std::uint64_t sim_stream_seed(std::uint64_t master, int column, int run);

/// Seed of the private sampling stream for (filter, column, run).
std::uint64_t filter_stream_seed(std::uint64_t master, const std::string& filter_id, int column,
                                 int run);

enum class FilterKind { Ef, Ekf, Ukf, Pf, Enkf, Kalman };

struct FilterSpec {
    std::string id;
    FilterKind kind = FilterKind::Ekf;
    AlphaConfig ef;          // Ef only
    int pf_particles = 2000;
    int enkf_members = 500;
    UkfParams ukf;

    /// Parses "ef_<alpha>", "ekf", "ukf", "pf", "enkf", "kalman".
    static FilterSpec from_id(const std::string& id);
};

struct PathRecord {
    Eigen::MatrixXd true_xy;  // T x 2
    Eigen::MatrixXd est_xy;   // T x 2
};

struct CellStats {
    std::string filter;
    std::string column;
    double mean_rmse = 0.0;
    double stderr_rmse = 0.0;
    int n_failed = 0;
    Eigen::VectorXd per_run_rmse;          // successful runs only
    std::map<int, PathRecord> paths;       // run index -> paths, when requested
};

struct RunResult {
    std::vector<std::string> filters;
    std::vector<std::string> columns;
    std::vector<CellStats> cells;  // filter-major order

    const CellStats& at(const std::string& filter, const std::string& column) const;
};

/// Runs one filter over all runs of one assumed-noise column. Trajectories
/// and measurements are simulated with the true process noise and derive
/// from (column, run) streams only, so every filter consumes identical
/// data. Per-run filter failures are excluded and counted, never dropped
/// silently. `paths_runs` selects runs whose trajectories are retained.
CellStats run_filter_on_scenario(const FilterSpec& spec, const Scenario& scenario,
                                 const Eigen::MatrixXd& assumed_Q, int column_index,
                                 const std::vector<int>& paths_runs = {});

/// Full filters x columns grid. Deterministic for a given scenario seed
/// regardless of `threads`; paths are retained for `paths_runs` of the
/// column labeled "Q_CV" (the last column when none is).
RunResult benchmark_table(const Scenario& scenario, const std::vector<FilterSpec>& filters,
                          int threads = 1, const std::vector<int>& paths_runs = {});

}  // namespace efkf
