#include "efkf/numerics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace efkf {

double logsumexp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    Eigen::VectorXd w = (v.array() - m).exp();
    return w / w.sum();
}

double effective_sample_size(const Eigen::VectorXd& weights) {
    return 1.0 / weights.squaredNorm();
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    if (es.info() != Eigen::Success) throw std::invalid_argument("psd_sqrt: factorization failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double floor = -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < floor) throw std::invalid_argument("psd_sqrt: matrix is indefinite");
        ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
    }
    return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace efkf
