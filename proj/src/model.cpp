#include "efkf/model.hpp"

#include <algorithm>
#include <cmath>

namespace efkf {

double jacobian_deviation(const MeasurementModel& model,
                          const std::vector<Eigen::VectorXd>& points, double step) {
    double worst = 0.0;
    for (const Eigen::VectorXd& x : points) {
        const Eigen::MatrixXd jac = model.jacobian_h(x);
        Eigen::MatrixXd fd(jac.rows(), jac.cols());
        for (int j = 0; j < x.size(); ++j) {
            Eigen::VectorXd hi = x, lo = x;
            hi[j] += step;
            lo[j] -= step;
            fd.col(j) = (model.h(hi) - model.h(lo)) / (2.0 * step);
        }
        const double scale = std::max(1.0, jac.norm());
        worst = std::max(worst, (fd - jac).norm() / scale);
    }
    return worst;
}

}  // namespace efkf
