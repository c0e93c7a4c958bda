#pragma once

// The three adapter families and their materialized weight deltas:
//   LoRA      delta = A * B
//   CUR-LoRA  delta = C * U * R
//   CABR      delta = C * W_A * W_B * R   (W_A is r x m, W_B is m x r, m > r)

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "secura/cur_select.hpp"
#include "secura/matrix.hpp"

namespace secura {

template <typename Scalar>
struct CabrAdapter {
  CurSelection<Scalar> selection;
  MatrixX<Scalar> w_a;  // r x m
  MatrixX<Scalar> w_b;  // m x r

  Index rank() const { return selection.rank(); }
  Index inner() const { return w_a.cols(); }
  Index trainable_count() const { return w_a.size() + w_b.size(); }
};

template <typename Scalar>
struct LoraAdapter {
  MatrixX<Scalar> a;  // h x r
  MatrixX<Scalar> b;  // r x d
  Scalar scaling = Scalar(1);

  Index rank() const { return a.cols(); }
  Index trainable_count() const { return a.size() + b.size(); }
};

template <typename Scalar>
struct CurLoraAdapter {
  CurSelection<Scalar> selection;
  MatrixX<Scalar> u;  // r x r

  Index rank() const { return selection.rank(); }
  Index trainable_count() const { return u.size(); }
};

struct RankDefaults {
  Index r;
  Index m;
};

// r = max(2, ceil(fraction * min(h, d))), m = ceil(4r/3): keeps the 150/200
// ratio of the full-size configuration at small widths.
inline RankDefaults default_ranks(Index h, Index d, double fraction = 0.05) {
  const double base = std::ceil(fraction * static_cast<double>(std::min(h, d)));
  const Index r = std::min<Index>(std::max<Index>(2, static_cast<Index>(base)), std::min(h, d));
  const Index m = static_cast<Index>(std::ceil(4.0 * static_cast<double>(r) / 3.0));
  return {r, m};
}

template <typename Derived>
CabrAdapter<typename Derived::Scalar> cabr_init(const Eigen::MatrixBase<Derived>& w_base, Index r,
                                                Index m) {
  using Scalar = typename Derived::Scalar;
  if (m <= r) {
    throw ConfigError("cabr_init: inner dimension m=" + std::to_string(m) +
                      " must be strictly greater than r=" + std::to_string(r));
  }
  if (m > w_base.cols()) {
    throw ConfigError("cabr_init: m=" + std::to_string(m) + " exceeds the column count of " +
                      shape_string(w_base));
  }
  CabrAdapter<Scalar> out;
  out.selection = select_least_important(w_base, r);

  // Truncated SVD product with k = min(r, m) retained triples:
  // W_A = U[0:r, 0:k] diag(S[0:k]) V[0:m, 0:k]^T
  const auto dec = svd(w_base);
  const Index k = std::min(r, m);
  out.w_a = dec.u.topLeftCorner(r, k) * dec.s.head(k).asDiagonal() *
            dec.v.topLeftCorner(m, k).transpose();
  out.w_b = MatrixX<Scalar>::Zero(m, r);
  return out;
}

template <typename Scalar = double>
LoraAdapter<Scalar> lora_init(Index h, Index d, Index r, std::uint64_t seed) {
  if (r <= 0 || r > std::min(h, d)) {
    throw ConfigError("lora_init: rank " + std::to_string(r) + " must lie in [1, min(" +
                      std::to_string(h) + ", " + std::to_string(d) + ")]");
  }
  // Kaiming-uniform with fan-in r.
  const Scalar bound = std::sqrt(Scalar(6) / static_cast<Scalar>(r));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  LoraAdapter<Scalar> out;
  out.a.resize(h, r);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < r; ++j) out.a(i, j) = dist(rng);
  }
  out.b = MatrixX<Scalar>::Zero(r, d);
  return out;
}

template <typename Derived>
CurLoraAdapter<typename Derived::Scalar> curlora_init(const Eigen::MatrixBase<Derived>& w_base,
                                                      Index r) {
  using Scalar = typename Derived::Scalar;
  CurLoraAdapter<Scalar> out;
  out.selection = select_least_important(w_base, r);
  out.u = MatrixX<Scalar>::Zero(r, r);
  return out;
}

// CABR delta for an arbitrary W_A/W_B pair over a fixed selection,
// associated as ((C W_A) W_B) R.
template <typename Scalar>
MatrixX<Scalar> cabr_product(const CurSelection<Scalar>& sel, const MatrixX<Scalar>& w_a,
                             const MatrixX<Scalar>& w_b) {
  const MatrixX<Scalar> ca = matmul(sel.c, w_a);
  const MatrixX<Scalar> cab = matmul(ca, w_b);
  return matmul(cab, sel.r_mat);
}

template <typename Scalar>
MatrixX<Scalar> materialize_delta(const CabrAdapter<Scalar>& ad) {
  return cabr_product(ad.selection, ad.w_a, ad.w_b);
}

template <typename Scalar>
MatrixX<Scalar> materialize_delta(const LoraAdapter<Scalar>& ad) {
  return ad.scaling * matmul(ad.a, ad.b);
}

template <typename Scalar>
MatrixX<Scalar> materialize_delta(const CurLoraAdapter<Scalar>& ad) {
  return matmul(matmul(ad.selection.c, ad.u), ad.selection.r_mat);
}

// Checkpoint text: a one-line header, then each component in matrix text form.
void write_checkpoint(std::ostream& os, const CabrAdapter<double>& ad);
void write_checkpoint(std::ostream& os, const LoraAdapter<double>& ad);
void write_checkpoint(std::ostream& os, const CurLoraAdapter<double>& ad);
CabrAdapter<double> read_cabr_checkpoint(std::istream& is);

}  // namespace secura
