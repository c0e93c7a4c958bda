#pragma once

// Sigmoid magnitude normalization. Given a frozen base W and an adapter delta:
//
//   merged      = W + delta
//   mag         = |merged / (W + eps)|
//   normed      = (mag / (max(mag) + eps) - 0.5) * scale
//   restriction = 2 - sigmoid(normed)             in (1, 2)
//   updated     = merged / restriction
//
// Entries whose relative change is large get a divisor near 1; entries that
// barely moved relative to the base are divided by values near 2.

#include <string>

#include "secura/matrix.hpp"

namespace secura {

struct SMagNormConfig {
  double epsilon = 1e-8;
  double scale = 12.0;
  // The restriction matrix is a constant w.r.t. differentiation.
  bool detach_gradient = true;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("smagnorm: epsilon must be > 0");
    if (!(scale > 0.0)) throw ConfigError("smagnorm: scale must be > 0");
  }
};

template <typename Scalar>
struct SMagNormTrace {
  MatrixX<Scalar> merged;
  MatrixX<Scalar> mag;
  MatrixX<Scalar> normed;
  MatrixX<Scalar> restriction;
  MatrixX<Scalar> updated;
};

template <typename DA, typename DB>
MatrixX<typename DA::Scalar> merged_weight(const Eigen::MatrixBase<DA>& w_base,
                                           const Eigen::MatrixBase<DB>& delta) {
  require_same_shape(w_base, delta, "merged_weight");
  return w_base + delta;
}

template <typename DA, typename DB>
MatrixX<typename DA::Scalar> magnitude_ratio(const Eigen::MatrixBase<DA>& merged,
                                             const Eigen::MatrixBase<DB>& w_base,
                                             typename DA::Scalar epsilon) {
  require_same_shape(merged, w_base, "magnitude_ratio");
  if (!(epsilon > 0)) throw ConfigError("magnitude_ratio: epsilon must be > 0");
  return divide(merged, w_base, epsilon).cwiseAbs();
}

template <typename D>
MatrixX<typename D::Scalar> normalize_ratio(const Eigen::MatrixBase<D>& mag,
                                            typename D::Scalar epsilon,
                                            typename D::Scalar scale) {
  using Scalar = typename D::Scalar;
  if (mag.size() == 0) throw ShapeError("normalize_ratio: empty matrix");
  if ((mag.array() < Scalar(0)).any()) {
    throw DomainError("normalize_ratio: magnitude entries must be non-negative");
  }
  const Scalar denom = mag.maxCoeff() + epsilon;
  return ((mag.array() / denom) - Scalar(0.5)) * scale;
}

template <typename D>
MatrixX<typename D::Scalar> restriction_matrix(const Eigen::MatrixBase<D>& normed) {
  using Scalar = typename D::Scalar;
  return normed.unaryExpr([](Scalar x) { return Scalar(2) - sigmoid(x); });
}

template <typename DA, typename DB>
SMagNormTrace<typename DA::Scalar> apply_smagnorm(const Eigen::MatrixBase<DA>& w_base,
                                                  const Eigen::MatrixBase<DB>& delta,
                                                  const SMagNormConfig& config) {
  using Scalar = typename DA::Scalar;
  config.validate();
  const auto eps = static_cast<Scalar>(config.epsilon);
  SMagNormTrace<Scalar> t;
  t.merged = merged_weight(w_base, delta);
  t.mag = magnitude_ratio(t.merged, w_base, eps);
  t.normed = normalize_ratio(t.mag, eps, static_cast<Scalar>(config.scale));
  t.restriction = restriction_matrix(t.normed);
  t.updated = t.merged.array() / t.restriction.array();
  return t;
}

}  // namespace secura
