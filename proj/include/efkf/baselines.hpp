#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "efkf/gaussian.hpp"
#include "efkf/model.hpp"
#include "efkf/rng.hpp"

namespace efkf {

/// Exact conjugate measurement update for y = H x + v, v ~ N(0, R).
/// Innovation covariance is factorized, not inverted.
GaussianBelief kalman_update(const GaussianBelief& prior, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& H, const Eigen::MatrixXd& R);

/// First-order linearization of the model at the prior mean.
GaussianBelief ekf_update(const GaussianBelief& prior, const Eigen::VectorXd& y,
                          const MeasurementModel& model);

/// Scaled unscented-transform constants. kappa defaults to 3 - d when NaN.
struct UkfParams {
    double spread = 0.5;
    double beta = 2.0;
    double kappa = std::numeric_limits<double>::quiet_NaN();

    double kappa_for(int dim) const;
};

struct SigmaPoints {
    Eigen::MatrixXd points;     // (2d+1) x d, row 0 is the mean
    Eigen::VectorXd mean_w;     // sums to 1
    Eigen::VectorXd cov_w;
};

SigmaPoints sigma_points(const GaussianBelief& belief, const UkfParams& params);

/// Unscented measurement update with 2d+1 sigma points.
GaussianBelief ukf_update(const GaussianBelief& prior, const Eigen::VectorXd& y,
                          const MeasurementModel& model, const UkfParams& params);

/// Weighted particle set. Weights form a simplex.
struct ParticleEnsemble {
    Eigen::MatrixXd particles;  // N x d
    Eigen::VectorXd weights;    // length N

    int count() const { return static_cast<int>(particles.rows()); }
    Eigen::VectorXd mean() const;
};

/// Systematic resampling: n offsets (u + i)/n against the cumulative
/// weights. Returns selected particle indices.
std::vector<int> systematic_resample(const Eigen::VectorXd& weights, int n, double u);

/// Bootstrap step: propagate through x <- F x + w, w ~ N(0, Q), reweight
/// by the measurement likelihood, and resample systematically when the
/// effective sample size drops below N/2 (weights come back uniform).
ParticleEnsemble pf_step(const ParticleEnsemble& ensemble, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& F, const Eigen::MatrixXd& Q,
                         const MeasurementModel& model, Rng& rng);

/// Stochastic (perturbed-observation) ensemble update. Gain is built from
/// sample cross-covariances; member i is shifted by K (y + v_i - h(x_i)).
/// Throws SingularEnsemble when the predicted-measurement ensemble has
/// collapsed or its covariance cannot be factorized even with jitter.
Eigen::MatrixXd enkf_update(const Eigen::MatrixXd& states, const Eigen::VectorXd& y,
                            const MeasurementModel& model, Rng& rng);

}  // namespace efkf
