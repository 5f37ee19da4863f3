#include "efkf/gaussian.hpp"

#include <cmath>

#include "efkf/numerics.hpp"

namespace efkf {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

void require_square(const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() < 1)
        throw DimensionMismatch(std::string(what) + ": matrix must be square, d >= 1");
}

}  // namespace

CholeskyFactor::CholeskyFactor(Eigen::MatrixXd lower) : lower_(std::move(lower)) {
    require_square(lower_, "CholeskyFactor");
    for (int i = 0; i < lower_.rows(); ++i) {
        if (!(lower_(i, i) > 0.0))
            throw NotPositiveDefinite("CholeskyFactor: diagonal must be strictly positive");
        for (int j = i + 1; j < lower_.cols(); ++j) lower_(i, j) = 0.0;
    }
}

double CholeskyFactor::log_det() const {
    return 2.0 * lower_.diagonal().array().log().sum();
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd z = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.triangularView<Eigen::Lower>().transpose().solve(z);
}

Eigen::MatrixXd CholeskyFactor::solve_matrix(const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd z = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.triangularView<Eigen::Lower>().transpose().solve(z);
}

Eigen::VectorXd CholeskyFactor::forward_solve(const Eigen::VectorXd& b) const {
    return lower_.triangularView<Eigen::Lower>().solve(b);
}

Eigen::MatrixXd CholeskyFactor::inverse() const {
    return solve_matrix(Eigen::MatrixXd::Identity(dim(), dim()));
}

CholeskyFactor cholesky(const Eigen::MatrixXd& cov) {
    require_square(cov, "cholesky");
    if (!cov.allFinite()) throw NotPositiveDefinite("cholesky: non-finite entries");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("cholesky: matrix is not positive definite");
    return CholeskyFactor(Eigen::MatrixXd(llt.matrixL()));
}

GaussianBelief::GaussianBelief(Eigen::VectorXd mean, Eigen::MatrixXd cov)
    : mean_(std::move(mean)), cov_(symmetrize(cov)) {
    if (mean_.size() != cov_.rows())
        throw DimensionMismatch("GaussianBelief: mean/cov dimensions disagree");
    cholesky(cov_);  // validates
}

NaturalParams to_natural(const GaussianBelief& belief) {
    CholeskyFactor chol = cholesky(belief.cov());
    return NaturalParams{chol.solve(belief.mean()), chol.inverse()};
}

GaussianBelief to_canonical(const NaturalParams& params) {
    CholeskyFactor chol = cholesky(params.precision);
    return GaussianBelief(chol.solve(params.eta), chol.inverse());
}

double log_partition(const GaussianBelief& belief) {
    CholeskyFactor chol = cholesky(belief.cov());
    const Eigen::VectorXd half = chol.forward_solve(belief.mean());
    return 0.5 * half.squaredNorm() + 0.5 * chol.log_det();
}

LogPartitionGradients log_partition_gradients(const GaussianBelief& belief) {
    CholeskyFactor chol = cholesky(belief.cov());
    const Eigen::VectorXd eta = chol.solve(belief.mean());
    const Eigen::MatrixXd precision = chol.inverse();
    return LogPartitionGradients{eta, 0.5 * (precision - eta * eta.transpose())};
}

Eigen::VectorXd sample_reparam(const Eigen::VectorXd& mean, const CholeskyFactor& factor,
                               const Eigen::VectorXd& eps) {
    if (mean.size() != factor.dim() || eps.size() != factor.dim())
        throw DimensionMismatch("sample_reparam: dimensions disagree");
    return factor.lower() * eps + mean;
}

double log_density(const GaussianBelief& belief, const Eigen::VectorXd& x) {
    if (x.size() != belief.dim()) throw DimensionMismatch("log_density: dimensions disagree");
    CholeskyFactor chol = cholesky(belief.cov());
    const Eigen::VectorXd half = chol.forward_solve(x - belief.mean());
    return -0.5 * (belief.dim() * kLogTwoPi + chol.log_det() + half.squaredNorm());
}

double cavity_log_f(const Eigen::VectorXd& x, const NaturalParams& q,
                    const NaturalParams& prior) {
    if (x.size() != q.eta.size() || x.size() != prior.eta.size())
        throw DimensionMismatch("cavity_log_f: dimensions disagree");
    const Eigen::VectorXd d_eta = q.eta - prior.eta;
    const Eigen::MatrixXd d_prec = q.precision - prior.precision;
    return d_eta.dot(x) - 0.5 * x.dot(d_prec * x);
}

double alpha_divergence_gaussian(const GaussianBelief& p, const GaussianBelief& q, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("alpha_divergence_gaussian: alpha must be in (0, 1)");
    if (p.dim() != q.dim())
        throw DimensionMismatch("alpha_divergence_gaussian: dimensions disagree");

    const NaturalParams np = to_natural(p);
    const NaturalParams nq = to_natural(q);
    const Eigen::MatrixXd blend = alpha * np.precision + (1.0 - alpha) * nq.precision;
    CholeskyFactor chol_blend = [&] {
        try {
            return cholesky(blend);
        } catch (const NotPositiveDefinite&) {
            throw BlendNotPositiveDefinite(
                "alpha_divergence_gaussian: blended precision is not PD");
        }
    }();

    // log integral of p^alpha q^(1-alpha): Gaussian in x with precision
    // `blend` and linear term alpha*eta_p + (1-alpha)*eta_q.
    const Eigen::VectorXd eta = alpha * np.eta + (1.0 - alpha) * nq.eta;
    const double quad = alpha * p.mean().dot(np.eta) + (1.0 - alpha) * q.mean().dot(nq.eta);
    const double log_det_p = cholesky(p.cov()).log_det();
    const double log_det_q = cholesky(q.cov()).log_det();
    const double log_integral = -0.5 * alpha * log_det_p - 0.5 * (1.0 - alpha) * log_det_q -
                                0.5 * chol_blend.log_det() -
                                0.5 * (quad - eta.dot(chol_blend.solve(eta)));
    return (1.0 - std::exp(log_integral)) / (alpha * (1.0 - alpha));
}

double gaussian_kl(const GaussianBelief& p, const GaussianBelief& q) {
    if (p.dim() != q.dim()) throw DimensionMismatch("gaussian_kl: dimensions disagree");
    CholeskyFactor chol_p = cholesky(p.cov());
    CholeskyFactor chol_q = cholesky(q.cov());
    const Eigen::VectorXd diff = q.mean() - p.mean();
    const double trace = chol_q.solve_matrix(p.cov()).trace();
    const double maha = diff.dot(chol_q.solve(diff));
    return 0.5 * (trace + maha - p.dim() + chol_q.log_det() - chol_p.log_det());
}

JitterResult jitter_to_pd(const Eigen::MatrixXd& sym) {
    require_square(sym, "jitter_to_pd");
    Eigen::MatrixXd m = symmetrize(sym);
    try {
        cholesky(m);
        return JitterResult{m, 0.0};
    } catch (const NotPositiveDefinite&) {
    }
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m.rows(), m.cols());
    for (double delta = 1e-10; delta <= 1e-6; delta *= 2.0) {
        Eigen::MatrixXd shifted = m + delta * eye;
        try {
            cholesky(shifted);
            return JitterResult{shifted, delta};
        } catch (const NotPositiveDefinite&) {
        }
    }
    throw NotPositiveDefinite("jitter_to_pd: not recoverable within the jitter budget");
}

}  // namespace efkf
