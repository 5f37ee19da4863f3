#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "efkf/gaussian.hpp"
#include "efkf/model.hpp"

namespace efkf {

/// Hyperparameters of the energy-minimization measurement update.
struct AlphaConfig {
    double alpha = 0.7;        // divergence index, (0, 1]
    int samples_S = 64;        // Monte-Carlo draws per iteration
    int iters_I = 100;         // gradient iterations
    double step0 = 0.5;        // initial step size
    double step_decay = 0.0;   // rho_i = step0 / (1 + i)^step_decay
    std::uint64_t seed = 0;
    bool fixed_crn = false;    // reuse one eps draw across all iterations

    double step_at(int i) const;

    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

/// One stabilized Monte-Carlo evaluation of the energy. `weights` is the
/// softmax of the per-sample log integrand; gradients are filled only by
/// energy_gradients.
struct EnergyReport {
    double value = 0.0;
    double psi_max = 0.0;
    Eigen::VectorXd weights;
    Eigen::VectorXd grad_mean;
    Eigen::MatrixXd grad_cov;
};

struct IterationRecord {
    double energy;         // estimate at the pre-step iterate, this iteration's draws
    Eigen::VectorXd mean;  // post-step mean
    Eigen::MatrixXd cov;   // post-step covariance
    double step;           // step size actually accepted (0 for a rejected no-op)
};

struct FilterTrace {
    std::vector<IterationRecord> iterations;
    GaussianBelief posterior;
};

/// Per-sample log integrand:
///   Psi(s) = alpha * log N(y; h(x_s), R) - alpha * log f(x_s),
/// with x_s = L eps_s + mu_q, L = chol(Sigma_q), and log f the cavity
/// correction between q and the prior. eps_draws is S x d.
Eigen::VectorXd psi_values(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                           const MeasurementModel& model, const GaussianBelief& q,
                           const GaussianBelief& prior, double alpha);

/// Assembles the stabilized estimate from precomputed Psi values:
///   value = logZ_prior - logZ_q - (1/alpha) log[(1/S) sum exp(Psi - max)] - max/alpha.
/// Pure function; exposed so the log-sum-exp identities are testable.
EnergyReport energy_from_psi(const Eigen::VectorXd& psi, double log_z_prior, double log_z_q,
                             double alpha);

/// Monte-Carlo energy estimate at fixed draws (value, psi_max, weights).
EnergyReport energy_estimate(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                             const MeasurementModel& model, const GaussianBelief& q,
                             const GaussianBelief& prior, double alpha);

/// Exact gradients of energy_estimate(...).value with respect to the mean
/// and covariance of q at fixed draws. Covers the log-partition term, the
/// reparametrization pathway through x_s = L eps_s + mu (including the
/// Cholesky map), and the dependence of the cavity factor on q's natural
/// parameters. grad_cov is the symmetrized gradient: for a symmetric
/// perturbation V, d value = sum_ij grad_cov[i][j] V[i][j].
EnergyReport energy_gradients(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                              const MeasurementModel& model, const GaussianBelief& q,
                              const GaussianBelief& prior, double alpha);

struct StepResult {
    GaussianBelief belief;
    double rho_used;
};

/// Preconditioned update
///   mu    <- mu - rho Sigma grad_mean
///   Sigma <- Sigma - rho Sigma grad_cov Sigma
/// Steps that destroy positive definiteness are retried with rho/2, up to
/// 10 halvings, then StepFailed.
StepResult natural_gradient_step(const GaussianBelief& q, const Eigen::VectorXd& grad_mean,
                                 const Eigen::MatrixXd& grad_cov, double rho);

/// Full measurement update: iterates Monte-Carlo energy evaluation and
/// natural-gradient descent starting from the prior.
///
/// Stabilization on top of the raw iteration: draws are antithetic and
/// batch-standardized; steps are capped to a 25% whitened covariance
/// change and a 0.3-sigma mean move per iteration; a step must not raise
/// the current-draw energy estimate by more than 1e-8 or it is halved
/// (and the iterate kept when halving runs out). None of these move the
/// stationary points. With fixed_crn the draws are frozen, so the
/// recorded energy sequence is non-increasing; in the fresh-draw mode
/// the returned posterior averages the last 30% of iterates.
std::pair<GaussianBelief, FilterTrace> efkf_update(const GaussianBelief& prior,
                                                   const Eigen::VectorXd& y,
                                                   const MeasurementModel& model,
                                                   const AlphaConfig& config);

/// Moment summary of the tilted distribution ~ p(x|y)^alpha q(x)^{1-alpha},
/// by self-normalized importance sampling with proposal q. Standard errors
/// are delta-method SNIS errors, elementwise.
struct TiltedSummary {
    GaussianBelief moments;
    double ess;
    Eigen::VectorXd se_mean;
    Eigen::MatrixXd se_cov;
};

/// Unnormalized log-weight alpha * [log p0(x) + log p(y|x) - log q(x)];
/// the tilted normalizer cancels in self-normalization. Throws
/// DegenerateWeights when the effective sample size falls below 10.
TiltedSummary tilted_moments_snis(const GaussianBelief& q, const Eigen::VectorXd& y,
                                  const MeasurementModel& model, const GaussianBelief& prior,
                                  double alpha, int n_samples, std::uint64_t seed);

/// Linear-Gaussian time update: N(F mu, F Sigma F^T + Q).
GaussianBelief predict(const GaussianBelief& posterior, const Eigen::MatrixXd& transition,
                       const Eigen::MatrixXd& process_noise);

namespace detail {

/// Pullback of a Cholesky-factor adjoint to a symmetric covariance
/// gradient: given dF = tr(l_bar^T dL) with L = chol(Sigma), returns
/// symmetric G with dF = sum_ij G[i][j] dSigma[i][j] for symmetric
/// perturbations.
Eigen::MatrixXd cholesky_pullback(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& l_bar);

}  // namespace detail

}  // namespace efkf
