#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "secura/metrics.hpp"
#include "secura/trainer.hpp"

namespace secura {

struct ContinualSchedule {
  std::string name;
  // Full-parameter training of the shared base model before any method runs.
  std::optional<TaskSpec> pretrain;
  std::vector<TaskSpec> tasks;
  TaskSpec probe;  // evaluated after every task, never trained by the schedule itself
};

struct ContinualOptions {
  bool boundary_fusion = true;
  DriftNorm drift_norm = DriftNorm::Nuclear;
  std::size_t eval_samples = 256;
};

struct TaskOutcome {
  std::string task;
  TaskReport report;
  double task_metric = 0.0;
  double probe_metric = 0.0;
  // Effective weights, schedule start versus the end of this task.
  std::vector<DriftRecord> drift;
  GradStats grad;
  std::size_t boundary_merges = 0;
};

struct ExperimentReport {
  std::string method;
  std::uint64_t seed = 0;
  double probe_before = 0.0;
  std::vector<TaskOutcome> tasks;
  RetentionRecord retention;
};

// Deterministic seed derivation for sample streams and evaluation sets.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

ExperimentReport run_continual(Model& model, const ContinualSchedule& schedule,
                               const std::string& method, std::uint64_t seed,
                               const ContinualOptions& options = {});

}  // namespace secura
