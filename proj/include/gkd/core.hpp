#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <string>
#include <vector>

namespace gkd {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Runtime precision is 64-bit throughout; finite-difference checks need the headroom.
using Scalar = double;
using Matrix = MatrixX<Scalar>;
using Vector = VectorX<Scalar>;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

/// Shortest decimal form that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace gkd
