#include "secura/continual.hpp"

#include <cmath>

namespace secura {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + a * 0xBF58476D1CE4E5B9ULL + b + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

std::vector<Matrix> effective_weights(const Model& model) {
  std::vector<Matrix> out;
  out.reserve(model.layers.size());
  for (const auto& layer : model.layers) out.push_back(effective_weight(layer));
  return out;
}

}  // namespace

ExperimentReport run_continual(Model& model, const ContinualSchedule& schedule,
                               const std::string& method, std::uint64_t seed,
                               const ContinualOptions& options) {
  if (schedule.tasks.empty()) throw ConfigError("run_continual: schedule has no tasks");
  ExperimentReport rep;
  rep.method = method;
  rep.seed = seed;

  const Batch probe_eval = evaluation_set(schedule.probe, options.eval_samples,
                                          derive_seed(seed, 0xE7A1, 0));
  rep.probe_before = evaluate(model, schedule.probe, probe_eval);
  const std::vector<Matrix> start = effective_weights(model);

  std::optional<std::size_t> probe_index;
  std::vector<double> probe_after;
  for (std::size_t t = 0; t < schedule.tasks.size(); ++t) {
    const TaskSpec& task = schedule.tasks[t];
    if (task.name == schedule.probe.name && !probe_index) probe_index = t;

    TaskOutcome out;
    out.task = task.name;
    TrainOptions topt;
    topt.stream_seed = derive_seed(seed, 0x7A5C, t);
    out.report = train_task(model, task, topt);
    if (options.boundary_fusion) out.boundary_merges = task_boundary_fusion(model);

    const bool is_probe = task.name == schedule.probe.name;
    const Batch task_eval =
        is_probe ? probe_eval
                 : evaluation_set(task, options.eval_samples, derive_seed(seed, 0xE7A1, t + 1));
    out.task_metric = evaluate(model, task, task_eval);
    out.probe_metric = evaluate(model, schedule.probe, probe_eval);
    probe_after.push_back(out.probe_metric);

    const std::vector<Matrix> now = effective_weights(model);
    for (std::size_t l = 0; l < now.size(); ++l) {
      DriftRecord d = svd_norm_drift(start[l], now[l], options.drift_norm);
      d.method = method;
      d.layer = l;
      out.drift.push_back(d);
    }
    if (!out.report.grad_norm_series.empty()) {
      out.grad = gradient_stats(out.report.grad_norm_series);
    }
    rep.tasks.push_back(std::move(out));
  }

  const double reference = probe_index ? probe_after[*probe_index] : rep.probe_before;
  rep.retention =
      retention_score(method, std::move(probe_after), reference, higher_is_better(schedule.probe));
  return rep;
}

}  // namespace secura
