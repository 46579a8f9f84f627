#pragma once

#include <initializer_list>
#include <random>

#include "arcl/tensor.hpp"

namespace testing {

inline arcl::Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  arcl::Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

inline arcl::RowVector row(std::initializer_list<double> values) {
  arcl::RowVector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline arcl::Matrix uniform(arcl::Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  arcl::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace testing
