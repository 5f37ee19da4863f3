#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace efkf {

/// Nonlinear observation model y ~ N(h(x), R).
struct MeasurementModel {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian_h;
    Eigen::MatrixXd noise_cov;  // R, m x m symmetric PD

    int meas_dim() const { return static_cast<int>(noise_cov.rows()); }
};

/// Largest relative deviation between jacobian_h and central finite
/// differences of h over the given test points. Validation utility.
double jacobian_deviation(const MeasurementModel& model,
                          const std::vector<Eigen::VectorXd>& points, double step = 1e-6);

}  // namespace efkf
