#include "secura/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace secura {

double svd_norm(const Matrix& w, DriftNorm norm) {
  const auto dec = svd(w);
  return norm == DriftNorm::Nuclear ? dec.s.sum() : dec.s(0);
}

DriftRecord svd_norm_drift(const Matrix& w_before, const Matrix& w_after, DriftNorm norm) {
  require_same_shape(w_before, w_after, "svd_norm_drift");
  DriftRecord rec;
  rec.nuclear_before = svd_norm(w_before, norm);
  rec.nuclear_after = svd_norm(w_after, norm);
  rec.drift = rec.nuclear_after - rec.nuclear_before;
  return rec;
}

GradStats gradient_stats(std::span<const double> series) {
  if (series.empty()) throw ContractError("gradient_stats: empty series");
  GradStats st;
  st.series.assign(series.begin(), series.end());
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  st.range = *hi - *lo;
  // Welford
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : series) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  st.variance = std::max(0.0, m2 / static_cast<double>(n));
  return st;
}

RetentionRecord retention_score(std::string method, std::vector<double> probe_after_each_task,
                                double reference, bool higher_is_better) {
  if (probe_after_each_task.empty()) throw ContractError("retention_score: no probe evaluations");
  RetentionRecord rec;
  rec.method = std::move(method);
  rec.probe_metric_after_each_task = std::move(probe_after_each_task);
  rec.reference = reference;
  const double last = rec.probe_metric_after_each_task.back();
  const double num = higher_is_better ? last : reference;
  const double den = higher_is_better ? reference : last;
  if (den != 0.0 && std::isfinite(num / den)) rec.retention_ratio = std::max(0.0, num / den);
  return rec;
}

}  // namespace secura
