#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace mgwm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using Vec2 = Eigen::Vector2d;
using cplx = std::complex<double>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad input files, inconsistent models, invalid scenario fields.
struct ConfigError : Error {
    using Error::Error;
};

// Iterative solver gave up or hit a singular system.
struct NumericalError : Error {
    using Error::Error;
};

// Raised when a simulation leaves the finite or bounded regime.
struct DivergenceError : Error {
    using Error::Error;
};

} // namespace mgwm
