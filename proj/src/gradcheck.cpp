#include "efkf/gradcheck.hpp"

#include <cmath>

#include "efkf/numerics.hpp"
#include "efkf/rng.hpp"
#include "efkf/tracking.hpp"

namespace efkf {

namespace {

double energy_value(const Eigen::MatrixXd& eps, const Eigen::VectorXd& y,
                    const MeasurementModel& model, const Eigen::VectorXd& mean,
                    const Eigen::MatrixXd& cov, const GaussianBelief& prior, double alpha) {
    return energy_estimate(eps, y, model, GaussianBelief(mean, cov), prior, alpha).value;
}

/// Random well-conditioned SPD matrix with eigenvalues in [lo, hi].
Eigen::MatrixXd random_spd(int d, double lo, double hi, Rng& rng) {
    const Eigen::MatrixXd a = rng.normal_matrix(d, d);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd ev(d);
    for (int i = 0; i < d; ++i) ev[i] = lo + (hi - lo) * rng.uniform();
    return symmetrize(q * ev.asDiagonal() * q.transpose());
}

}  // namespace

EnergyReport finite_difference_energy_gradients(const Eigen::MatrixXd& eps_draws,
                                                const Eigen::VectorXd& y,
                                                const MeasurementModel& model,
                                                const GaussianBelief& q,
                                                const GaussianBelief& prior, double alpha,
                                                double step) {
    const int d = q.dim();
    EnergyReport report = energy_estimate(eps_draws, y, model, q, prior, alpha);
    report.grad_mean.resize(d);
    report.grad_cov.resize(d, d);

    for (int i = 0; i < d; ++i) {
        Eigen::VectorXd hi = q.mean(), lo = q.mean();
        hi[i] += step;
        lo[i] -= step;
        report.grad_mean[i] =
            (energy_value(eps_draws, y, model, hi, q.cov(), prior, alpha) -
             energy_value(eps_draws, y, model, lo, q.cov(), prior, alpha)) /
            (2.0 * step);
    }

    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            Eigen::MatrixXd hi = q.cov(), lo = q.cov();
            hi(i, j) += step;
            lo(i, j) -= step;
            if (i != j) {
                hi(j, i) += step;
                lo(j, i) -= step;
            }
            const double delta =
                (energy_value(eps_draws, y, model, q.mean(), hi, prior, alpha) -
                 energy_value(eps_draws, y, model, q.mean(), lo, prior, alpha)) /
                (2.0 * step);
            // Symmetric pair perturbation doubles the off-diagonal response.
            report.grad_cov(i, j) = i == j ? delta : 0.5 * delta;
            report.grad_cov(j, i) = report.grad_cov(i, j);
        }
    }
    return report;
}

GradCheckResult run_gradient_check(const std::vector<int>& dims, int trials, std::uint64_t seed,
                                   double tol_mean, double tol_cov, bool corrupt) {
    if (trials < 1) throw std::invalid_argument("run_gradient_check: trials must be >= 1");
    if (dims.empty()) throw std::invalid_argument("run_gradient_check: no dimensions");

    const double alphas[] = {0.1, 0.5, 0.9};
    const int sample_counts[] = {1, 8};
    Rng rng(seed);

    GradCheckResult result;
    for (int trial = 0; trial < trials; ++trial) {
        const int d = dims[trial % dims.size()];
        const double alpha = alphas[trial % 3];
        const int S = sample_counts[trial % 2];
        const int m = 3;

        // Range sensing over the first two position-like coordinates.
        std::vector<Eigen::Vector2d> sensors;
        for (int i = 0; i < m; ++i)
            sensors.emplace_back(6.0 * rng.normal(), 6.0 * rng.normal());
        const int iy = d >= 4 ? 2 : 1;
        MeasurementModel model =
            make_range_model(sensors, random_spd(m, 0.5, 2.0, rng), 0, iy, d);

        const GaussianBelief prior(rng.normal_vector(d), random_spd(d, 0.5, 3.0, rng));
        const GaussianBelief q(prior.mean() + 0.5 * rng.normal_vector(d),
                               random_spd(d, 0.5, 3.0, rng));
        const Eigen::VectorXd y =
            model.h(prior.mean()) + 0.5 * rng.normal_vector(m);
        const Eigen::MatrixXd eps = rng.normal_matrix(S, d);

        EnergyReport analytic = energy_gradients(eps, y, model, q, prior, alpha);
        if (corrupt) analytic.grad_mean *= 1.01;
        const EnergyReport fd =
            finite_difference_energy_gradients(eps, y, model, q, prior, alpha);

        const double mean_err = (fd.grad_mean - analytic.grad_mean).norm() /
                                std::max(fd.grad_mean.norm(), 1e-12);
        const double cov_err = (fd.grad_cov - analytic.grad_cov).norm() /
                               std::max(fd.grad_cov.norm(), 1e-12);
        result.instances.push_back(GradCheckInstance{d, alpha, S, mean_err, cov_err});
        result.worst_mean_rel_err = std::max(result.worst_mean_rel_err, mean_err);
        result.worst_cov_rel_err = std::max(result.worst_cov_rel_err, cov_err);
    }
    result.pass =
        result.worst_mean_rel_err <= tol_mean && result.worst_cov_rel_err <= tol_cov;
    return result;
}

}  // namespace efkf
