#pragma once

#include <stdexcept>
#include <string>

namespace efkf {

/// Base class for all recoverable numerical failures raised by this library.
/// Contract violations (bad dimensions excepted) use std::invalid_argument.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A matrix that must factorize (Cholesky) did not.
struct NotPositiveDefinite : Error {
    using Error::Error;
};

/// Operand shapes do not agree.
struct DimensionMismatch : Error {
    using Error::Error;
};

/// The precision blend of two Gaussians is not factorizable, so the
/// geometric-mixture integral diverges.
struct BlendNotPositiveDefinite : Error {
    using Error::Error;
};

/// A NaN/Inf appeared where a finite value is required (usually a
/// measurement function returning non-finite output).
struct NonFinite : Error {
    using Error::Error;
};

/// A gradient step could not be made positive definite after the
/// maximum number of step-size halvings.
struct StepFailed : Error {
    using Error::Error;
};

/// Importance weights collapsed; the estimate is unusable.
struct DegenerateWeights : Error {
    using Error::Error;
};

/// Every particle weight underflowed to zero (non-finite likelihoods).
struct AllWeightsZero : Error {
    using Error::Error;
};

/// The ensemble carries no usable spread.
struct SingularEnsemble : Error {
    using Error::Error;
};

}  // namespace efkf
