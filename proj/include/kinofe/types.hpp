#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kinofe {

inline constexpr int kStateDim = 6;
inline constexpr int kEmbedDim = 8;
inline constexpr int kInputDim = kStateDim + 2 * kEmbedDim;  // 22
inline constexpr int kControlDim = 2;
inline constexpr int kNetInputDim = kInputDim + kControlDim;  // 24

inline constexpr double kPi = 3.14159265358979323846;

template <typename Scalar>
using Vec6T = Eigen::Matrix<Scalar, kStateDim, 1>;
template <typename Scalar>
using VecXT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatXT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec2 = Eigen::Vector2d;
using Vec6 = Vec6T<double>;
using Vec8 = Eigen::Matrix<double, kEmbedDim, 1>;
using Vec22 = Eigen::Matrix<double, kInputDim, 1>;
using Vec24 = Eigen::Matrix<double, kNetInputDim, 1>;
using VecX = VecXT<double>;
using MatX = MatXT<double>;

/// Raised for malformed arguments: wrong dimensions, non-finite values, bad configs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a usable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on malformed or truncated files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace kinofe
