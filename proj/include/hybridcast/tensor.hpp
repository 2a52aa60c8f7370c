#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace hybridcast {

/// Dense 2-D array of 64-bit reals stored row-major. Every array in the
/// library (positions, noise, flow parameters, logits) is one of these.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Raised when an operation produces NaN/Inf or a matrix is numerically singular.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller breaks an operation's precondition (shape, symmetry, domain).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

inline std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

/// Reads row `r` of a tensor with 9 columns as a 3x3 matrix (row-major layout).
inline Mat3 row_as_mat3(const Tensor& t, Eigen::Index r) {
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = t(r, 3 * i + j);
  return m;
}

inline void set_row_mat3(Tensor& t, Eigen::Index r, const Mat3& m) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t(r, 3 * i + j) = m(i, j);
}

}  // namespace hybridcast
