#pragma once

// Least-important column/row selection: the r columns and r rows of a base
// weight with the smallest L2 norms, ties going to the lower index.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "secura/matrix.hpp"

namespace secura {

template <typename Scalar>
struct CurSelection {
  std::vector<Index> col_indices;  // ascending, distinct
  std::vector<Index> row_indices;  // ascending, distinct
  MatrixX<Scalar> c;               // h x r, gathered columns
  MatrixX<Scalar> r_mat;           // r x d, gathered rows

  Index rank() const { return static_cast<Index>(col_indices.size()); }
};

namespace detail {

template <typename Scalar>
std::vector<Index> smallest_indices(const VectorX<Scalar>& norms, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(norms.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return norms(a) < norms(b); });
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

template <typename Derived>
std::pair<MatrixX<typename Derived::Scalar>, MatrixX<typename Derived::Scalar>> extract(
    const Eigen::MatrixBase<Derived>& w_base, const std::vector<Index>& col_indices,
    const std::vector<Index>& row_indices) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> c(w_base.rows(), static_cast<Index>(col_indices.size()));
  for (std::size_t j = 0; j < col_indices.size(); ++j) {
    const Index src = col_indices[j];
    if (src < 0 || src >= w_base.cols()) {
      throw IndexError("extract: column index " + std::to_string(src) + " out of range for " +
                       shape_string(w_base));
    }
    c.col(static_cast<Index>(j)) = w_base.col(src);
  }
  MatrixX<Scalar> r_mat(static_cast<Index>(row_indices.size()), w_base.cols());
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    const Index src = row_indices[i];
    if (src < 0 || src >= w_base.rows()) {
      throw IndexError("extract: row index " + std::to_string(src) + " out of range for " +
                       shape_string(w_base));
    }
    r_mat.row(static_cast<Index>(i)) = w_base.row(src);
  }
  return {std::move(c), std::move(r_mat)};
}

template <typename Derived>
CurSelection<typename Derived::Scalar> select_least_important(
    const Eigen::MatrixBase<Derived>& w_base, Index r) {
  if (r <= 0 || r > std::min(w_base.rows(), w_base.cols())) {
    throw ConfigError("select_least_important: rank " + std::to_string(r) +
                      " must lie in [1, min(" + shape_string(w_base) + ")]");
  }
  if (!all_finite(w_base)) throw DomainError("select_least_important: non-finite weight");
  CurSelection<typename Derived::Scalar> sel;
  sel.col_indices = detail::smallest_indices(column_norms(w_base), r);
  sel.row_indices = detail::smallest_indices(row_norms(w_base), r);
  auto [c, r_mat] = extract(w_base, sel.col_indices, sel.row_indices);
  sel.c = std::move(c);
  sel.r_mat = std::move(r_mat);
  return sel;
}

}  // namespace secura
