#pragma once

// Dense matrix substrate: checked products, one-sided Jacobi SVD, row/column
// norms and the elementwise maps used by the normalization pipeline.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <iosfwd>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "secura/error.hpp"

namespace secura {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

// Hard floor below which a bare (un-offset) division is refused.
inline constexpr double kDivisionFloor = 1e-300;

// Sweep cap for the Jacobi SVD.
inline constexpr int kSvdMaxSweeps = 100;

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename DA, typename DB>
void require_same_shape(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <typename DA, typename DB>
MatrixX<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a,
                                    const Eigen::MatrixBase<DB>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a) + " by " + shape_string(b));
  }
  return a * b;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// ---------------------------------------------------------------------------
// SVD

template <typename Scalar>
struct SvdResult {
  MatrixX<Scalar> u;  // rows x k, orthonormal columns
  VectorX<Scalar> s;  // k, non-increasing, non-negative
  MatrixX<Scalar> v;  // cols x k, orthonormal columns
};

namespace detail {

// One-sided Jacobi on a tall (rows >= cols) matrix. On return `work` holds
// U*S column-wise and `v` the accumulated right rotations.
template <typename Scalar>
int jacobi_tall(MatrixX<Scalar>& work, MatrixX<Scalar>& v) {
  const Index m = work.rows();
  const Index n = work.cols();
  v = MatrixX<Scalar>::Identity(n, n);
  const Scalar tol = std::numeric_limits<Scalar>::epsilon() * static_cast<Scalar>(m);

  for (int sweep = 1; sweep <= kSvdMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        Scalar alpha = 0, beta = 0, gamma = 0;
        for (Index i = 0; i < m; ++i) {
          const Scalar up = work(i, p);
          const Scalar uq = work(i, q);
          alpha += up * up;
          beta += uq * uq;
          gamma += up * uq;
        }
        if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Index i = 0; i < m; ++i) {
          const Scalar up = work(i, p);
          const Scalar uq = work(i, q);
          work(i, p) = c * up - s * uq;
          work(i, q) = s * up + c * uq;
        }
        for (Index i = 0; i < n; ++i) {
          const Scalar vp = v(i, p);
          const Scalar vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return sweep;
  }
  throw ConvergenceError("svd: one-sided Jacobi did not converge within " +
                             std::to_string(kSvdMaxSweeps) + " sweeps",
                         kSvdMaxSweeps);
}

// Normalizes the columns of `work` into `u`; columns whose norm is negligible
// are replaced by an orthonormal completion.
template <typename Scalar>
MatrixX<Scalar> normalize_columns(const MatrixX<Scalar>& work, const VectorX<Scalar>& s) {
  const Index m = work.rows();
  const Index n = work.cols();
  const Scalar smax = n > 0 ? s.maxCoeff() : Scalar(0);
  const Scalar cutoff =
      smax * std::numeric_limits<Scalar>::epsilon() * static_cast<Scalar>(std::max(m, n));
  MatrixX<Scalar> u = MatrixX<Scalar>::Zero(m, n);
  std::vector<bool> filled(static_cast<std::size_t>(n), false);
  for (Index j = 0; j < n; ++j) {
    if (s(j) > cutoff && s(j) > Scalar(0)) {
      u.col(j) = work.col(j) / s(j);
      filled[static_cast<std::size_t>(j)] = true;
    }
  }
  Index probe = 0;
  for (Index j = 0; j < n; ++j) {
    if (filled[static_cast<std::size_t>(j)]) continue;
    for (; probe < m; ++probe) {
      VectorX<Scalar> cand = VectorX<Scalar>::Unit(m, probe);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index k = 0; k < n; ++k) {
          if (!filled[static_cast<std::size_t>(k)]) continue;
          cand -= u.col(k) * u.col(k).dot(cand);
        }
      }
      const Scalar nrm = cand.norm();
      if (nrm > Scalar(0.5)) {
        u.col(j) = cand / nrm;
        filled[static_cast<std::size_t>(j)] = true;
        ++probe;
        break;
      }
    }
  }
  return u;
}

}  // namespace detail

// Thin SVD by one-sided Jacobi rotations. Singular values are sorted
// non-increasing; each u-column has its largest-magnitude entry positive.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  if (w.rows() == 0 || w.cols() == 0) throw ShapeError("svd: empty matrix");
  if (!all_finite(w)) throw DomainError("svd: non-finite input");

  const bool wide = w.rows() < w.cols();
  MatrixX<Scalar> work = wide ? MatrixX<Scalar>(w.transpose()) : MatrixX<Scalar>(w);
  MatrixX<Scalar> right;
  detail::jacobi_tall(work, right);

  const Index k = work.cols();
  VectorX<Scalar> s(k);
  for (Index j = 0; j < k; ++j) s(j) = work.col(j).norm();
  MatrixX<Scalar> left = detail::normalize_columns(work, s);

  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return s(a) > s(b); });

  SvdResult<Scalar> out;
  const MatrixX<Scalar>& u_src = wide ? right : left;
  const MatrixX<Scalar>& v_src = wide ? left : right;
  out.u.resize(u_src.rows(), k);
  out.v.resize(v_src.rows(), k);
  out.s.resize(k);
  for (Index j = 0; j < k; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.s(j) = s(src);
    out.u.col(j) = u_src.col(src);
    out.v.col(j) = v_src.col(src);
  }
  for (Index j = 0; j < k; ++j) {
    Index arg = 0;
    for (Index i = 1; i < out.u.rows(); ++i) {
      if (std::abs(out.u(i, j)) > std::abs(out.u(arg, j))) arg = i;
    }
    if (out.u(arg, j) < Scalar(0)) {
      out.u.col(j) *= Scalar(-1);
      out.v.col(j) *= Scalar(-1);
    }
  }
  return out;
}

template <typename Derived>
typename Derived::Scalar nuclear_norm(const Eigen::MatrixBase<Derived>& w) {
  return svd(w).s.sum();
}

// ---------------------------------------------------------------------------
// Norms. Both loops accumulate in the same order so that
// column_norms(w^T) == row_norms(w) holds bit for bit.

template <typename Derived>
VectorX<typename Derived::Scalar> column_norms(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  if (w.size() == 0) throw ShapeError("column_norms: empty matrix");
  VectorX<Scalar> out(w.cols());
  for (Index j = 0; j < w.cols(); ++j) {
    Scalar acc = 0;
    for (Index i = 0; i < w.rows(); ++i) acc += w(i, j) * w(i, j);
    out(j) = std::sqrt(acc);
  }
  return out;
}

template <typename Derived>
VectorX<typename Derived::Scalar> row_norms(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  if (w.size() == 0) throw ShapeError("row_norms: empty matrix");
  VectorX<Scalar> out(w.rows());
  for (Index i = 0; i < w.rows(); ++i) {
    Scalar acc = 0;
    for (Index j = 0; j < w.cols(); ++j) acc += w(i, j) * w(i, j);
    out(i) = std::sqrt(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise maps

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived, typename F>
MatrixX<typename Derived::Scalar> elementwise(const Eigen::MatrixBase<Derived>& w, F&& f) {
  return w.unaryExpr(std::forward<F>(f));
}

template <typename Derived>
MatrixX<typename Derived::Scalar> sigmoid(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  return elementwise(w, [](Scalar x) { return sigmoid(x); });
}

template <typename Derived>
MatrixX<typename Derived::Scalar> abs(const Eigen::MatrixBase<Derived>& w) {
  return w.cwiseAbs();
}

template <typename Derived>
MatrixX<typename Derived::Scalar> add_scalar(const Eigen::MatrixBase<Derived>& w,
                                             typename Derived::Scalar c) {
  return w.array() + c;
}

// Entrywise num / (den + offset). Without an offset, any |den| below
// kDivisionFloor is rejected.
template <typename DN, typename DD>
MatrixX<typename DN::Scalar> divide(const Eigen::MatrixBase<DN>& num,
                                    const Eigen::MatrixBase<DD>& den,
                                    std::optional<typename DN::Scalar> offset = std::nullopt) {
  using Scalar = typename DN::Scalar;
  require_same_shape(num, den, "divide");
  if (offset) return num.array() / (den.array() + *offset);
  if ((den.array().abs() < Scalar(kDivisionFloor)).any()) {
    throw DomainError("divide: denominator below the division floor and no offset supplied");
  }
  return num.array() / den.array();
}

template <typename DN>
MatrixX<typename DN::Scalar> divide(const Eigen::MatrixBase<DN>& num,
                                    typename DN::Scalar den) {
  if (std::abs(den) < typename DN::Scalar(kDivisionFloor)) {
    throw DomainError("divide: scalar denominator below the division floor");
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Text serialization: "rows cols" then one line per row, 17 significant digits.

void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);
std::string format_real(double v);

}  // namespace secura
