#pragma once

// Periodic fusion of a CABR adapter into persistent state.
//
// M1 folds C W_A W_B R into the base weight. M2 leaves the base frozen and
// moves W_B into an accumulator paired with a snapshot of W_A:
//   effective = W + C A_frozen B_accum R + C W_A W_B R
// Both reset the live W_B to zero after a merge.

#include <cstdint>
#include <optional>
#include <string>

#include "secura/adapters.hpp"
#include "secura/smagnorm.hpp"

namespace secura {

enum class MergeStrategy { M1, M2 };

inline const char* to_string(MergeStrategy s) { return s == MergeStrategy::M1 ? "M1" : "M2"; }

template <typename Scalar>
struct MergeState {
  MergeStrategy strategy = MergeStrategy::M1;
  std::int64_t fusion_interval = 1;
  std::int64_t step_counter = 0;
  MatrixX<Scalar> a_frozen;  // M2 only
  MatrixX<Scalar> b_accum;   // M2 only, m x r
  std::int64_t merge_count = 0;
};

template <typename Scalar>
MergeState<Scalar> make_merge_state(MergeStrategy strategy, std::int64_t fusion_interval,
                                    const CabrAdapter<Scalar>& adapter) {
  if (fusion_interval <= 0) throw ConfigError("merge: fusion_interval must be positive");
  MergeState<Scalar> st;
  st.strategy = strategy;
  st.fusion_interval = fusion_interval;
  if (strategy == MergeStrategy::M2) {
    st.a_frozen = adapter.w_a;
    st.b_accum = MatrixX<Scalar>::Zero(adapter.w_b.rows(), adapter.w_b.cols());
  }
  return st;
}

// Returns W + C W_A W_B R and zeroes W_B. W_A carries forward as A_former.
template <typename Scalar>
MatrixX<Scalar> merge_m1(CabrAdapter<Scalar>& adapter, const MatrixX<Scalar>& w_base) {
  MatrixX<Scalar> delta = materialize_delta(adapter);
  require_same_shape(w_base, delta, "merge_m1");
  MatrixX<Scalar> next = w_base + delta;
  adapter.w_b.setZero();
  return next;
}

template <typename Scalar>
void merge_m2(MergeState<Scalar>& state, CabrAdapter<Scalar>& adapter) {
  if (state.strategy != MergeStrategy::M2) {
    throw ContractError("merge_m2: state was configured for strategy " +
                        std::string(to_string(state.strategy)));
  }
  require_same_shape(state.b_accum, adapter.w_b, "merge_m2");
  state.a_frozen = adapter.w_a;
  state.b_accum += adapter.w_b;
  adapter.w_b.setZero();
}

// Delta carried by the accumulator (zero under M1).
template <typename Scalar>
MatrixX<Scalar> accumulated_delta(const MergeState<Scalar>& state,
                                  const CabrAdapter<Scalar>& adapter) {
  const Index h = adapter.selection.c.rows();
  const Index d = adapter.selection.r_mat.cols();
  if (state.strategy == MergeStrategy::M1) return MatrixX<Scalar>::Zero(h, d);
  return cabr_product(adapter.selection, state.a_frozen, state.b_accum);
}

template <typename Scalar>
MatrixX<Scalar> total_delta(const MergeState<Scalar>& state, const CabrAdapter<Scalar>& adapter) {
  MatrixX<Scalar> d = materialize_delta(adapter);
  if (state.strategy == MergeStrategy::M2) d += accumulated_delta(state, adapter);
  return d;
}

template <typename Scalar>
MatrixX<Scalar> effective_weight(const MergeState<Scalar>& state,
                                 const CabrAdapter<Scalar>& adapter,
                                 const MatrixX<Scalar>& w_base, const SMagNormConfig& config) {
  const MatrixX<Scalar> delta = total_delta(state, adapter);
  require_same_shape(w_base, delta, "effective_weight");
  return apply_smagnorm(w_base, delta, config).updated;
}

struct FusionEvent {
  bool merged = false;
  double folded_norm = 0.0;  // Frobenius norm of the delta moved by the merge

  explicit operator bool() const { return merged; }
};

// Unconditional merge under the state's strategy (also used at task boundaries).
template <typename Scalar>
FusionEvent fuse_now(MergeState<Scalar>& state, CabrAdapter<Scalar>& adapter,
                     MatrixX<Scalar>& w_base) {
  FusionEvent ev;
  ev.merged = true;
  ev.folded_norm = static_cast<double>(materialize_delta(adapter).norm());
  if (state.strategy == MergeStrategy::M1) {
    w_base = merge_m1(adapter, w_base);
  } else {
    merge_m2(state, adapter);
  }
  ++state.merge_count;
  return ev;
}

// Called after the trainer increments step_counter.
template <typename Scalar>
FusionEvent fusion_tick(MergeState<Scalar>& state, CabrAdapter<Scalar>& adapter,
                        MatrixX<Scalar>& w_base) {
  if (state.step_counter <= 0 || state.step_counter % state.fusion_interval != 0) return {};
  return fuse_now(state, adapter, w_base);
}

}  // namespace secura
