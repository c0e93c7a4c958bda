#pragma once

// Shared helpers for the test binaries: seeded random matrices and
// loop-based reference implementations.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>

#include "secura/matrix.hpp"

namespace testing {

using secura::Index;
using secura::Matrix;

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

inline Matrix loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

inline double loop_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) return false;
  }
  return true;
}

inline double rel_frob(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

}  // namespace testing
