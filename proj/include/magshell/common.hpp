#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace magshell {

using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;
using Mat3 = Eigen::Matrix3d;
using CMat3 = Eigen::Matrix3cd;
using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

// Error taxonomy shared across the library.  Everything derives from
// std::runtime_error so callers can catch broadly; the CLI maps
// ArgumentError-family failures to exit code 2 and numerical ones to 3.
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SingularityError : std::runtime_error {
    explicit SingularityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ResourceError : std::runtime_error {
    explicit ResourceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConditioningError : std::runtime_error {
    ConditioningError(const std::string& msg, double rcond_estimate)
        : std::runtime_error(msg + " (rcond ~ " + std::to_string(rcond_estimate) + ")"),
          rcond(rcond_estimate) {}
    double rcond;
};

struct SolveError : std::runtime_error {
    explicit SolveError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContrastError : std::runtime_error {
    explicit ContrastError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvergenceError : std::runtime_error {
    explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CoverageError : std::runtime_error {
    explicit CoverageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace magshell
