#pragma once

#include <Eigen/Dense>

#include "efkf/errors.hpp"

namespace efkf {

/// Lower-triangular Cholesky factor with strictly positive diagonal.
class CholeskyFactor {
  public:
    explicit CholeskyFactor(Eigen::MatrixXd lower);

    const Eigen::MatrixXd& lower() const { return lower_; }
    int dim() const { return static_cast<int>(lower_.rows()); }

    /// log|L L^T| = 2 * sum(log(diag(L))).
    double log_det() const;

    /// Solves (L L^T) x = b.
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

    /// Solves (L L^T) X = B columnwise.
    Eigen::MatrixXd solve_matrix(const Eigen::MatrixXd& b) const;

    /// Solves L z = b (half-solve, for Mahalanobis norms).
    Eigen::VectorXd forward_solve(const Eigen::VectorXd& b) const;

    /// (L L^T)^{-1} via triangular solves.
    Eigen::MatrixXd inverse() const;

  private:
    Eigen::MatrixXd lower_;
};

/// Cholesky factorization of a symmetric positive definite matrix.
/// Throws NotPositiveDefinite when a pivot is not strictly positive;
/// callers decide whether to retry with jitter.
CholeskyFactor cholesky(const Eigen::MatrixXd& cov);

/// Canonical-form Gaussian. Immutable after construction: the covariance
/// is symmetrized as (M + M^T)/2 and validated positive definite.
class GaussianBelief {
  public:
    GaussianBelief(Eigen::VectorXd mean, Eigen::MatrixXd cov);

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& cov() const { return cov_; }
    int dim() const { return static_cast<int>(mean_.size()); }

  private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
};

/// Exponential-family natural parameterization (precision * mean, precision).
/// Differences of two values of this type (cavity parameters) are
/// representable, so the precision field is not required to be PD.
struct NaturalParams {
    Eigen::VectorXd eta;
    Eigen::MatrixXd precision;
};

NaturalParams to_natural(const GaussianBelief& belief);
GaussianBelief to_canonical(const NaturalParams& params);

/// log Z(mu, Sigma) = 1/2 mu^T Sigma^{-1} mu + 1/2 log|Sigma|,
/// computed by factorization and solve, never an explicit inverse.
double log_partition(const GaussianBelief& belief);

struct LogPartitionGradients {
    Eigen::VectorXd mean;  // Sigma^{-1} mu
    Eigen::MatrixXd cov;   // 1/2 (Sigma^{-1} - Sigma^{-1} mu mu^T Sigma^{-1})
};

LogPartitionGradients log_partition_gradients(const GaussianBelief& belief);

/// x = L eps + mean. Deterministic in eps.
Eigen::VectorXd sample_reparam(const Eigen::VectorXd& mean, const CholeskyFactor& factor,
                               const Eigen::VectorXd& eps);

/// Exact multivariate normal log-density.
double log_density(const GaussianBelief& belief, const Eigen::VectorXd& x);

/// log f(x) = (eta_q - eta_0)^T x - 1/2 x^T (Lambda_q - Lambda_0) x,
/// the log correction factor for the cavity parameter q - prior.
double cavity_log_f(const Eigen::VectorXd& x, const NaturalParams& q, const NaturalParams& prior);

/// Closed-form alpha divergence between two Gaussians, alpha in (0, 1).
/// Diagnostic companion to the energy machinery; zero iff p == q.
double alpha_divergence_gaussian(const GaussianBelief& p, const GaussianBelief& q, double alpha);

/// Closed-form KL[p || q] between Gaussians (diagnostic).
double gaussian_kl(const GaussianBelief& p, const GaussianBelief& q);

struct JitterResult {
    Eigen::MatrixXd matrix;
    double delta;  // total diagonal shift applied, 0 when none was needed
};

/// Adds delta*I with delta starting at 1e-10 and doubling until the matrix
/// factorizes, giving up above 1e-6 (NotPositiveDefinite propagates).
JitterResult jitter_to_pd(const Eigen::MatrixXd& sym);

}  // namespace efkf
