#include "efkf/energy.hpp"

#include <cmath>

#include "efkf/numerics.hpp"
#include "efkf/rng.hpp"

namespace efkf {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
constexpr double kDescentSlack = 1e-8;

struct EnergyWorkspace {
    CholeskyFactor chol_q;
    CholeskyFactor chol_r;
    NaturalParams nq;
    NaturalParams n0;
    double log_z_q;
    double log_z_0;
    Eigen::MatrixXd xs;   // S x d samples
    Eigen::VectorXd psi;  // length S
};

EnergyWorkspace make_workspace(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                               const MeasurementModel& model, const GaussianBelief& q,
                               const GaussianBelief& prior, double alpha) {
    if (q.dim() != prior.dim())
        throw DimensionMismatch("energy: q and prior dimensions disagree");
    if (eps_draws.cols() != q.dim())
        throw DimensionMismatch("energy: eps draws must be S x d");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("energy: alpha must be in (0, 1]");
    if (!eps_draws.allFinite()) throw NonFinite("energy: non-finite eps draws");

    const int S = static_cast<int>(eps_draws.rows());
    const int d = q.dim();
    const int m = model.meas_dim();
    if (y.size() != m) throw DimensionMismatch("energy: measurement dimension disagrees with R");

    EnergyWorkspace ws{cholesky(q.cov()),
                       cholesky(model.noise_cov),
                       to_natural(q),
                       to_natural(prior),
                       0.0,
                       0.0,
                       Eigen::MatrixXd(S, d),
                       Eigen::VectorXd(S)};
    ws.log_z_q = 0.5 * ws.nq.eta.dot(q.mean()) + 0.5 * ws.chol_q.log_det();
    ws.log_z_0 = log_partition(prior);

    const double loglik_const = -0.5 * (m * kLogTwoPi + ws.chol_r.log_det());
    for (int s = 0; s < S; ++s) {
        const Eigen::VectorXd x = ws.chol_q.lower() * eps_draws.row(s).transpose() + q.mean();
        ws.xs.row(s) = x.transpose();
        const Eigen::VectorXd hx = model.h(x);
        if (hx.size() != m) throw DimensionMismatch("energy: h(x) dimension disagrees with R");
        const Eigen::VectorXd half = ws.chol_r.forward_solve(y - hx);
        const double loglik = loglik_const - 0.5 * half.squaredNorm();
        ws.psi[s] = alpha * (loglik - cavity_log_f(x, ws.nq, ws.n0));
    }
    return ws;
}

EnergyReport assemble(const EnergyWorkspace& ws, double alpha) {
    EnergyReport report = energy_from_psi(ws.psi, ws.log_z_0, ws.log_z_q, alpha);
    return report;
}

}  // namespace

double AlphaConfig::step_at(int i) const {
    return step0 / std::pow(1.0 + i, step_decay);
}

void AlphaConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("AlphaConfig: alpha must be in (0, 1]");
    if (samples_S < 1) throw std::invalid_argument("AlphaConfig: samples_S must be >= 1");
    if (iters_I < 1) throw std::invalid_argument("AlphaConfig: iters_I must be >= 1");
    if (!(step0 >= 0.0)) throw std::invalid_argument("AlphaConfig: step0 must be >= 0");
    if (!(step_decay >= 0.0)) throw std::invalid_argument("AlphaConfig: step_decay must be >= 0");
}

Eigen::VectorXd psi_values(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                           const MeasurementModel& model, const GaussianBelief& q,
                           const GaussianBelief& prior, double alpha) {
    return make_workspace(eps_draws, y, model, q, prior, alpha).psi;
}

EnergyReport energy_from_psi(const Eigen::VectorXd& psi, double log_z_prior, double log_z_q,
                             double alpha) {
    if (psi.size() < 1) throw DimensionMismatch("energy_from_psi: need at least one sample");
    if (psi.hasNaN()) throw NonFinite("energy_from_psi: NaN log integrand");
    const double psi_max = psi.maxCoeff();
    if (!std::isfinite(psi_max)) throw NonFinite("energy_from_psi: log integrand diverged");

    const int S = static_cast<int>(psi.size());
    const Eigen::ArrayXd shifted = psi.array() - psi_max;
    const Eigen::VectorXd expw = shifted.exp().matrix();
    const double sum = expw.sum();

    EnergyReport report;
    report.psi_max = psi_max;
    report.weights = expw / sum;
    report.value = log_z_prior - log_z_q - std::log(sum / S) / alpha - psi_max / alpha;
    if (!std::isfinite(report.value)) throw NonFinite("energy_from_psi: non-finite estimate");
    return report;
}

EnergyReport energy_estimate(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                             const MeasurementModel& model, const GaussianBelief& q,
                             const GaussianBelief& prior, double alpha) {
    return assemble(make_workspace(eps_draws, y, model, q, prior, alpha), alpha);
}

namespace detail {

Eigen::MatrixXd cholesky_pullback(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& l_bar) {
    // X = l_bar^T L; fold its upper triangle (half diagonal) back through
    // the factorization: G = 1/2 L^{-T} (U + U^T) L^{-1}.
    const Eigen::MatrixXd x = l_bar.transpose() * lower;
    Eigen::MatrixXd u = x.triangularView<Eigen::Upper>();
    u.diagonal() *= 0.5;
    const Eigen::MatrixXd s = u + u.transpose();
    const auto lt = lower.triangularView<Eigen::Lower>();
    const Eigen::MatrixXd t = lt.transpose().solve(s);
    const Eigen::MatrixXd g = lt.transpose().solve(t.transpose()).transpose();
    return 0.5 * symmetrize(g);
}

}  // namespace detail

EnergyReport energy_gradients(const Eigen::MatrixXd& eps_draws, const Eigen::VectorXd& y,
                              const MeasurementModel& model, const GaussianBelief& q,
                              const GaussianBelief& prior, double alpha) {
    const EnergyWorkspace ws = make_workspace(eps_draws, y, model, q, prior, alpha);
    EnergyReport report = assemble(ws, alpha);

    const int S = static_cast<int>(eps_draws.rows());
    const int d = q.dim();
    const Eigen::VectorXd& w = report.weights;
    const Eigen::MatrixXd d_prec = ws.nq.precision - ws.n0.precision;
    const Eigen::VectorXd d_eta = ws.nq.eta - ws.n0.eta;

    // Per-sample score of log N(y; h(x), R) - log f(x) through x, plus the
    // weighted moments feeding the cavity-parameter pathway.
    Eigen::VectorXd sum_a = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd xbar = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd l_bar = Eigen::MatrixXd::Zero(d, d);
    for (int s = 0; s < S; ++s) {
        const Eigen::VectorXd x = ws.xs.row(s).transpose();
        const Eigen::MatrixXd jac = model.jacobian_h(x);
        if (jac.rows() != model.meas_dim() || jac.cols() != d)
            throw DimensionMismatch("energy_gradients: Jacobian must be m x d");
        const Eigen::VectorXd a = jac.transpose() * ws.chol_r.solve(Eigen::VectorXd(y - model.h(x)));
        const Eigen::VectorXd score = a - d_eta + d_prec * x;
        sum_a += w[s] * a;
        xbar += w[s] * x;
        second += w[s] * x * x.transpose();
        l_bar -= (w[s] * score) * eps_draws.row(s);
    }

    report.grad_mean = -(sum_a + ws.n0.precision * (prior.mean() - xbar));

    const Eigen::MatrixXd cavity_path =
        ws.nq.precision * (q.mean() * xbar.transpose() - 0.5 * second) * ws.nq.precision;
    report.grad_cov = symmetrize(-0.5 * ws.nq.precision +
                                 0.5 * ws.nq.eta * ws.nq.eta.transpose() - cavity_path) +
                      detail::cholesky_pullback(ws.chol_q.lower(), l_bar);
    if (!report.grad_mean.allFinite() || !report.grad_cov.allFinite())
        throw NonFinite("energy_gradients: non-finite gradient");
    return report;
}

StepResult natural_gradient_step(const GaussianBelief& q, const Eigen::VectorXd& grad_mean,
                                 const Eigen::MatrixXd& grad_cov, double rho) {
    if (grad_mean.size() != q.dim() || grad_cov.rows() != q.dim() || grad_cov.cols() != q.dim())
        throw DimensionMismatch("natural_gradient_step: gradient dimensions disagree");
    if (!(rho >= 0.0)) throw std::invalid_argument("natural_gradient_step: rho must be >= 0");

    const Eigen::MatrixXd& cond = q.cov();
    double r = rho;
    for (int attempt = 0; attempt <= 10; ++attempt) {
        try {
            Eigen::VectorXd mean = q.mean() - r * (cond * grad_mean);
            Eigen::MatrixXd cov = q.cov() - r * (cond * grad_cov * cond);
            return StepResult{GaussianBelief(std::move(mean), std::move(cov)), r};
        } catch (const NotPositiveDefinite&) {
            r *= 0.5;
        }
    }
    throw StepFailed("natural_gradient_step: no PD iterate within 10 halvings");
}

namespace {

/// Antithetic batch: pairs (eps, -eps) cancel the odd-moment sampling
/// noise of the weighted moments, which otherwise scales with the mean.
/// Batches large enough are additionally standardized to exact zero mean
/// and identity sample covariance, which makes a conjugate posterior an
/// exact fixed point of the iteration.
Eigen::MatrixXd antithetic_draws(Rng& rng, int samples, int dim) {
    Eigen::MatrixXd eps(samples, dim);
    const int half = samples / 2;
    for (int s = 0; s < samples - half; ++s) eps.row(s) = rng.normal_vector(dim).transpose();
    for (int s = 0; s < half; ++s) eps.row(samples - half + s) = -eps.row(s);
    if (samples >= 2 * dim + 2) {
        eps.rowwise() -= eps.colwise().mean();
        const Eigen::MatrixXd sample_cov = eps.transpose() * eps / samples;
        const Eigen::MatrixXd lower = cholesky(sample_cov).lower();
        eps = lower.triangularView<Eigen::Lower>()
                  .solve(eps.transpose())
                  .transpose();
    }
    return eps;
}

}  // namespace

std::pair<GaussianBelief, FilterTrace> efkf_update(const GaussianBelief& prior,
                                                   const Eigen::VectorXd& y,
                                                   const MeasurementModel& model,
                                                   const AlphaConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const int d = prior.dim();
    Eigen::MatrixXd eps;
    if (config.fixed_crn) eps = antithetic_draws(rng, config.samples_S, d);

    GaussianBelief q = prior;
    FilterTrace trace{{}, q};
    trace.iterations.reserve(config.iters_I);

    // Tail averaging for the stochastic mode: the returned posterior is
    // the average of the last 30% of the iterates, which removes the
    // last-draw noise of a single SGD iterate. The deterministic
    // fixed-draw mode returns the final (best) iterate instead.
    const int tail_window = std::max(1, (3 * config.iters_I) / 10);
    const int tail_start = config.fixed_crn ? config.iters_I : config.iters_I - tail_window;
    Eigen::VectorXd mean_acc = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd cov_acc = Eigen::MatrixXd::Zero(d, d);
    int tail_count = 0;

    for (int i = 0; i < config.iters_I; ++i) {
        if (!config.fixed_crn) eps = antithetic_draws(rng, config.samples_S, d);
        const EnergyReport report = energy_gradients(eps, y, model, q, prior, config.alpha);

        // Trust cap: in whitened coordinates the covariance may change by
        // at most 25% and the mean may move at most one standard
        // deviation per iteration. Oversized noisy gradients only shrink
        // the step, never change the fixed point.
        const Eigen::MatrixXd lower = cholesky(q.cov()).lower();
        const Eigen::MatrixXd whitened =
            lower.transpose() * report.grad_cov * lower;
        const double cov_scale =
            whitened.cwiseAbs().maxCoeff() > 0.0
                ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(whitened)
                      .eigenvalues()
                      .cwiseAbs()
                      .maxCoeff()
                : 0.0;
        const double mean_scale = (lower.transpose() * report.grad_mean).norm();
        double rho = config.step_at(i);
        if (cov_scale > 0.0) rho = std::min(rho, 0.25 / cov_scale);
        if (mean_scale > 0.0) rho = std::min(rho, 0.3 / mean_scale);

        // A step is accepted only if it keeps the current-draw estimate
        // from rising by more than the slack; otherwise halve further.
        // Under fixed draws this makes the recorded sequence monotone.
        StepResult step = natural_gradient_step(q, report.grad_mean, report.grad_cov, rho);
        bool accepted = false;
        for (int k = 0; k < 30; ++k) {
            const double next =
                energy_estimate(eps, y, model, step.belief, prior, config.alpha).value;
            if (next <= report.value + kDescentSlack) {
                accepted = true;
                break;
            }
            rho = 0.5 * step.rho_used;
            step = natural_gradient_step(q, report.grad_mean, report.grad_cov, rho);
        }
        if (!accepted) step = StepResult{q, 0.0};
        trace.iterations.push_back(
            IterationRecord{report.value, step.belief.mean(), step.belief.cov(), step.rho_used});
        q = step.belief;
        if (i >= tail_start) {
            mean_acc += q.mean();
            cov_acc += q.cov();
            ++tail_count;
        }
    }
    if (tail_count > 0) q = GaussianBelief(mean_acc / tail_count, cov_acc / tail_count);
    trace.posterior = q;
    return {q, trace};
}

TiltedSummary tilted_moments_snis(const GaussianBelief& q, const Eigen::VectorXd& y,
                                  const MeasurementModel& model, const GaussianBelief& prior,
                                  double alpha, int n_samples, std::uint64_t seed) {
    if (n_samples < 100)
        throw std::invalid_argument("tilted_moments_snis: n_samples must be >= 100");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("tilted_moments_snis: alpha must be in (0, 1]");
    if (q.dim() != prior.dim())
        throw DimensionMismatch("tilted_moments_snis: dimensions disagree");

    const int d = q.dim();
    const int m = model.meas_dim();
    CholeskyFactor chol_q = cholesky(q.cov());
    CholeskyFactor chol_r = cholesky(model.noise_cov);
    CholeskyFactor chol_0 = cholesky(prior.cov());
    const double lik_const = -0.5 * (m * kLogTwoPi + chol_r.log_det());
    const double q_const = -0.5 * (d * kLogTwoPi + chol_q.log_det());
    const double p0_const = -0.5 * (d * kLogTwoPi + chol_0.log_det());

    Rng rng(seed);
    Eigen::MatrixXd xs(n_samples, d);
    Eigen::VectorXd logw(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        const Eigen::VectorXd x = chol_q.lower() * rng.normal_vector(d) + q.mean();
        xs.row(i) = x.transpose();
        const double log_q = q_const - 0.5 * chol_q.forward_solve(x - q.mean()).squaredNorm();
        const double log_p0 = p0_const - 0.5 * chol_0.forward_solve(x - prior.mean()).squaredNorm();
        const Eigen::VectorXd hx = model.h(x);
        const double log_lik = lik_const - 0.5 * chol_r.forward_solve(y - hx).squaredNorm();
        logw[i] = alpha * (log_p0 + log_lik - log_q);
    }
    if (logw.hasNaN() || !std::isfinite(logw.maxCoeff()))
        throw NonFinite("tilted_moments_snis: non-finite log-weights");

    const Eigen::VectorXd w = softmax(logw);
    const double ess = effective_sample_size(w);
    if (ess < 10.0) throw DegenerateWeights("tilted_moments_snis: effective sample size < 10");

    const Eigen::VectorXd mean = xs.transpose() * w;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n_samples; ++i) {
        const Eigen::VectorXd diff = xs.row(i).transpose() - mean;
        cov += w[i] * diff * diff.transpose();
    }

    Eigen::VectorXd se_mean = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd se_cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n_samples; ++i) {
        const Eigen::VectorXd diff = xs.row(i).transpose() - mean;
        se_mean.array() += (w[i] * diff.array()).square();
        const Eigen::MatrixXd dev = diff * diff.transpose() - cov;
        se_cov.array() += (w[i] * dev.array()).square();
    }
    se_mean = se_mean.array().sqrt();
    se_cov = se_cov.array().sqrt();

    return TiltedSummary{GaussianBelief(mean, jitter_to_pd(cov).matrix), ess, se_mean, se_cov};
}

GaussianBelief predict(const GaussianBelief& posterior, const Eigen::MatrixXd& transition,
                       const Eigen::MatrixXd& process_noise) {
    const int d = posterior.dim();
    if (transition.rows() != d || transition.cols() != d || process_noise.rows() != d ||
        process_noise.cols() != d)
        throw DimensionMismatch("predict: dimensions disagree");
    return GaussianBelief(transition * posterior.mean(),
                          transition * posterior.cov() * transition.transpose() + process_noise);
}

}  // namespace efkf
