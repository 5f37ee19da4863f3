#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "efkf/energy.hpp"

namespace efkf {

/// Central finite differences of energy_estimate(...).value at fixed
/// draws. Covariance entries are perturbed symmetrically (both (i,j) and
/// (j,i)), matching the symmetrized-gradient convention. Independent of
/// the analytic gradient path.
EnergyReport finite_difference_energy_gradients(const Eigen::MatrixXd& eps_draws,
                                                const Eigen::VectorXd& y,
                                                const MeasurementModel& model,
                                                const GaussianBelief& q,
                                                const GaussianBelief& prior, double alpha,
                                                double step = 1e-5);

struct GradCheckInstance {
    int dim;
    double alpha;
    int samples;
    double mean_rel_err;
    double cov_rel_err;
};

struct GradCheckResult {
    std::vector<GradCheckInstance> instances;
    double worst_mean_rel_err = 0.0;
    double worst_cov_rel_err = 0.0;
    bool pass = false;
};

/// Random range-sensor instances (d in `dims`, 3 sensors, alpha cycling
/// {0.1, 0.5, 0.9}, S cycling {1, 8}); compares analytic and
/// finite-difference gradients. `corrupt` deliberately scales the
/// analytic mean gradient, as a negative control.
GradCheckResult run_gradient_check(const std::vector<int>& dims, int trials, std::uint64_t seed,
                                   double tol_mean = 1e-5, double tol_cov = 1e-4,
                                   bool corrupt = false);

}  // namespace efkf
