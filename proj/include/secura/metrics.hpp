#pragma once

// Diagnostics for a training run: spectral drift of weights, gradient-norm
// stability and probe-task retention.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "secura/matrix.hpp"

namespace secura {

enum class DriftNorm { Nuclear, Spectral };

struct DriftRecord {
  std::string method;
  std::size_t layer = 0;
  double nuclear_before = 0.0;
  double nuclear_after = 0.0;
  double drift = 0.0;  // after - before
};

// Sum (nuclear) or largest (spectral) singular value.
double svd_norm(const Matrix& w, DriftNorm norm = DriftNorm::Nuclear);

DriftRecord svd_norm_drift(const Matrix& w_before, const Matrix& w_after,
                           DriftNorm norm = DriftNorm::Nuclear);

struct GradStats {
  std::vector<double> series;
  double range = 0.0;
  double variance = 0.0;  // population
};

GradStats gradient_stats(std::span<const double> series);

struct RetentionRecord {
  std::string method;
  std::vector<double> probe_metric_after_each_task;
  double reference = 0.0;            // probe metric right after its own training
  std::optional<double> retention_ratio;  // empty when undefined
};

// `reference` is the probe metric after the probe's own training; for
// lower-is-better metrics (MSE) the ratio is inverted.
RetentionRecord retention_score(std::string method, std::vector<double> probe_after_each_task,
                                double reference, bool higher_is_better);

}  // namespace secura
