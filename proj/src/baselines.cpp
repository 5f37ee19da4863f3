#include "efkf/baselines.hpp"

#include <cmath>

#include "efkf/numerics.hpp"

namespace efkf {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Shared conjugate core: posterior from a linearized observation with the
/// given innovation. Joseph-form covariance update.
GaussianBelief kalman_core(const GaussianBelief& prior, const Eigen::MatrixXd& H,
                           const Eigen::MatrixXd& R, const Eigen::VectorXd& innovation) {
    const int d = prior.dim();
    const int m = static_cast<int>(H.rows());
    if (H.cols() != d || R.rows() != m || R.cols() != m || innovation.size() != m)
        throw DimensionMismatch("kalman_update: dimensions disagree");

    const Eigen::MatrixXd cross = prior.cov() * H.transpose();          // d x m
    const Eigen::MatrixXd innov_cov = H * cross + R;                    // m x m
    CholeskyFactor chol_s = cholesky(symmetrize(innov_cov));
    const Eigen::MatrixXd gain = chol_s.solve_matrix(cross.transpose()).transpose();  // d x m

    const Eigen::VectorXd mean = prior.mean() + gain * innovation;
    const Eigen::MatrixXd left = Eigen::MatrixXd::Identity(d, d) - gain * H;
    const Eigen::MatrixXd cov =
        left * prior.cov() * left.transpose() + gain * R * gain.transpose();
    return GaussianBelief(mean, cov);
}

}  // namespace

GaussianBelief kalman_update(const GaussianBelief& prior, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& H, const Eigen::MatrixXd& R) {
    if (y.size() != H.rows()) throw DimensionMismatch("kalman_update: y/H disagree");
    return kalman_core(prior, H, R, y - H * prior.mean());
}

GaussianBelief ekf_update(const GaussianBelief& prior, const Eigen::VectorXd& y,
                          const MeasurementModel& model) {
    const Eigen::MatrixXd H = model.jacobian_h(prior.mean());
    return kalman_core(prior, H, model.noise_cov, y - model.h(prior.mean()));
}

double UkfParams::kappa_for(int dim) const {
    return std::isnan(kappa) ? 3.0 - dim : kappa;
}

SigmaPoints sigma_points(const GaussianBelief& belief, const UkfParams& params) {
    const int d = belief.dim();
    const double lambda = params.spread * params.spread * (d + params.kappa_for(d)) - d;
    if (!(d + lambda > 0.0))
        throw std::invalid_argument("sigma_points: spread/kappa give d + lambda <= 0");

    const Eigen::MatrixXd scaled = std::sqrt(d + lambda) * cholesky(belief.cov()).lower();
    SigmaPoints sp{Eigen::MatrixXd(2 * d + 1, d), Eigen::VectorXd(2 * d + 1),
                   Eigen::VectorXd(2 * d + 1)};
    sp.points.row(0) = belief.mean().transpose();
    for (int i = 0; i < d; ++i) {
        sp.points.row(1 + i) = (belief.mean() + scaled.col(i)).transpose();
        sp.points.row(1 + d + i) = (belief.mean() - scaled.col(i)).transpose();
    }
    sp.mean_w.setConstant(0.5 / (d + lambda));
    sp.cov_w.setConstant(0.5 / (d + lambda));
    sp.mean_w[0] = lambda / (d + lambda);
    sp.cov_w[0] = sp.mean_w[0] + 1.0 - params.spread * params.spread + params.beta;
    return sp;
}

GaussianBelief ukf_update(const GaussianBelief& prior, const Eigen::VectorXd& y,
                          const MeasurementModel& model, const UkfParams& params) {
    const int d = prior.dim();
    const int m = model.meas_dim();
    if (y.size() != m) throw DimensionMismatch("ukf_update: y/R disagree");

    const SigmaPoints sp = sigma_points(prior, params);
    const int n = 2 * d + 1;
    Eigen::MatrixXd through(n, m);
    for (int i = 0; i < n; ++i) through.row(i) = model.h(sp.points.row(i).transpose()).transpose();

    const Eigen::VectorXd y_pred = through.transpose() * sp.mean_w;
    Eigen::MatrixXd innov_cov = model.noise_cov;
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(d, m);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd dy = through.row(i).transpose() - y_pred;
        const Eigen::VectorXd dx = sp.points.row(i).transpose() - prior.mean();
        innov_cov += sp.cov_w[i] * dy * dy.transpose();
        cross += sp.cov_w[i] * dx * dy.transpose();
    }

    CholeskyFactor chol_s = cholesky(symmetrize(innov_cov));
    const Eigen::MatrixXd gain = chol_s.solve_matrix(cross.transpose()).transpose();
    const Eigen::VectorXd mean = prior.mean() + gain * (y - y_pred);
    const Eigen::MatrixXd cov = prior.cov() - gain * innov_cov * gain.transpose();
    return GaussianBelief(mean, cov);
}

Eigen::VectorXd ParticleEnsemble::mean() const {
    return particles.transpose() * weights;
}

std::vector<int> systematic_resample(const Eigen::VectorXd& weights, int n, double u) {
    if (n < 1) throw std::invalid_argument("systematic_resample: n must be >= 1");
    if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("systematic_resample: u in [0,1)");
    std::vector<int> picked(n);
    double cum = weights[0];
    int j = 0;
    const int last = static_cast<int>(weights.size()) - 1;
    for (int i = 0; i < n; ++i) {
        // Select min{j : cum_j > pos}.
        const double pos = (u + i) / n;
        while (cum <= pos && j < last) cum += weights[++j];
        picked[i] = j;
    }
    return picked;
}

ParticleEnsemble pf_step(const ParticleEnsemble& ensemble, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& F, const Eigen::MatrixXd& Q,
                         const MeasurementModel& model, Rng& rng) {
    const int n = ensemble.count();
    const int d = static_cast<int>(ensemble.particles.cols());
    if (n < 1) throw std::invalid_argument("pf_step: empty ensemble");
    if (F.rows() != d || F.cols() != d || Q.rows() != d || Q.cols() != d)
        throw DimensionMismatch("pf_step: dynamics dimensions disagree");

    const Eigen::MatrixXd noise_sqrt = psd_sqrt(Q);
    CholeskyFactor chol_r = cholesky(model.noise_cov);
    const double lik_const = -0.5 * (model.meas_dim() * kLogTwoPi + chol_r.log_det());

    ParticleEnsemble out{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
    Eigen::VectorXd logw(n);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd x =
            F * ensemble.particles.row(i).transpose() + noise_sqrt * rng.normal_vector(d);
        out.particles.row(i) = x.transpose();
        const Eigen::VectorXd resid = y - model.h(x);
        logw[i] = std::log(ensemble.weights[i]) + lik_const -
                  0.5 * chol_r.forward_solve(resid).squaredNorm();
    }
    const double top = logw.maxCoeff();
    if (!std::isfinite(top) || logw.hasNaN())
        throw AllWeightsZero("pf_step: all likelihoods non-finite");

    out.weights = softmax(logw);
    if (effective_sample_size(out.weights) < 0.5 * n) {
        const std::vector<int> picked = systematic_resample(out.weights, n, rng.uniform());
        Eigen::MatrixXd resampled(n, d);
        for (int i = 0; i < n; ++i) resampled.row(i) = out.particles.row(picked[i]);
        out.particles = std::move(resampled);
        out.weights.setConstant(1.0 / n);
    }
    return out;
}

Eigen::MatrixXd enkf_update(const Eigen::MatrixXd& states, const Eigen::VectorXd& y,
                            const MeasurementModel& model, Rng& rng) {
    const int n = static_cast<int>(states.rows());
    const int d = static_cast<int>(states.cols());
    const int m = model.meas_dim();
    if (n < 2) throw std::invalid_argument("enkf_update: need at least 2 members");
    if (y.size() != m) throw DimensionMismatch("enkf_update: y/R disagree");

    Eigen::MatrixXd predicted(n, m);
    for (int i = 0; i < n; ++i)
        predicted.row(i) = model.h(states.row(i).transpose()).transpose();

    const Eigen::MatrixXd noise_sqrt = psd_sqrt(model.noise_cov);
    Eigen::MatrixXd perturb(n, m);
    for (int i = 0; i < n; ++i) perturb.row(i) = (noise_sqrt * rng.normal_vector(m)).transpose();

    const Eigen::MatrixXd xc = states.rowwise() - states.colwise().mean();
    const Eigen::MatrixXd yc = predicted.rowwise() - predicted.colwise().mean();
    if (yc.cwiseAbs().maxCoeff() == 0.0)
        throw SingularEnsemble("enkf_update: predicted-measurement ensemble collapsed");
    const Eigen::MatrixXd vc = perturb.rowwise() - perturb.colwise().mean();

    const Eigen::MatrixXd cross = xc.transpose() * yc / (n - 1);
    const Eigen::MatrixXd innov_cov =
        (yc.transpose() * yc + vc.transpose() * vc) / (n - 1);
    CholeskyFactor chol_s = [&] {
        try {
            return cholesky(jitter_to_pd(innov_cov).matrix);
        } catch (const NotPositiveDefinite&) {
            throw SingularEnsemble("enkf_update: innovation covariance not PD after jitter");
        }
    }();
    const Eigen::MatrixXd gain = chol_s.solve_matrix(cross.transpose()).transpose();

    Eigen::MatrixXd updated(n, d);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd shift =
            gain * (y + perturb.row(i).transpose() - predicted.row(i).transpose());
        updated.row(i) = states.row(i) + shift.transpose();
    }
    return updated;
}

}  // namespace efkf
