#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace mixedns {

using Vec2 = Eigen::Vector2d;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed mesh, wrong dimensions, invalid parameters.
class InvalidArgument : public Error {
 public:
    using Error::Error;
};

/// A numerical procedure broke down (singular system, no convergence).
class NumericalError : public Error {
 public:
    using Error::Error;
};

/// Saddle-point system singular: discrete inf-sup condition violated.
class InfSupError : public NumericalError {
 public:
    using NumericalError::NumericalError;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidArgument(what);
}

inline constexpr double pi = 3.14159265358979323846;

}  // namespace mixedns
