#pragma once

#include <Eigen/Dense>

namespace efkf {

/// log(sum(exp(v))) with max-shift stabilization.
double logsumexp(const Eigen::VectorXd& v);

/// exp(v) normalized to a simplex; stable under any finite shift of v.
Eigen::VectorXd softmax(const Eigen::VectorXd& v);

/// 1 / sum(w^2) for a simplex weight vector; lies in [1, len(w)].
double effective_sample_size(const Eigen::VectorXd& weights);

/// (M + M^T) / 2.
inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

/// B with B B^T = m for symmetric positive semidefinite m.
/// Tiny negative eigenvalues (roundoff) are clamped to zero; genuinely
/// indefinite input throws std::invalid_argument.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

}  // namespace efkf
