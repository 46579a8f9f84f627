#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

namespace arcl {

// Batches are stored one example per row, so row-major keeps an example
// contiguous in memory.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;

using Rng = std::mt19937_64;

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace arcl
