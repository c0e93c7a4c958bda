#pragma once

// Batch runner: config parsing, method x seed grids, CSV emission, run
// directories and cross-run comparison.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "secura/continual.hpp"

namespace secura {

struct ExperimentConfig {
  std::string name = "run";
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  std::string schedule = "two_task";

  ModelDims dims;
  AdapterConfig adapter;

  double learning_rate = 1e-3;
  std::size_t steps_per_task = 2000;
  std::size_t batch_size = 8;
  std::size_t pretrain_steps = 4000;
  double pretrain_learning_rate = 0.05;

  std::size_t eval_samples = 256;
  DriftNorm drift_norm = DriftNorm::Nuclear;
  bool boundary_fusion = true;
  bool trace_mres = false;
};

// Field-level configuration problem; `field()` is "section.key".
class ConfigFieldError : public ConfigError {
 public:
  ConfigFieldError(std::string field, const std::string& message)
      : ConfigError(field + ": " + message), field_(std::move(field)), message_(message) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_;
  std::string message_;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);
std::string render_config(const ExperimentConfig& config);

std::vector<std::string> schedule_names();
ContinualSchedule make_schedule(const ExperimentConfig& config, std::uint64_t seed);

struct CellResult {
  ExperimentReport report;
  Model model;
};

// Builds the seed's base model, pretrains it, attaches `method` and runs the schedule.
CellResult run_cell(const ExperimentConfig& config, Method method, std::uint64_t seed);

// Numerical failure inside one grid cell.
class CellError : public Error {
 public:
  CellError(std::string method, std::uint64_t seed, std::size_t step, const std::string& what)
      : Error(what), method_(std::move(method)), seed_(seed), step_(step) {}
  const std::string& method() const noexcept { return method_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::string method_;
  std::uint64_t seed_;
  std::size_t step_;
};

struct GridResult {
  std::vector<CellResult> cells;  // methods outer, seeds inner
  std::string metrics_csv;
  std::string merges_csv;
  std::string trace_csv;  // empty unless trace_mres
};

GridResult run_grid(const ExperimentConfig& config, unsigned parallel = 1);

inline constexpr const char* kMetricsHeader = "method,seed,task_index,metric_name,value";

std::string metrics_csv(const std::vector<CellResult>& cells);

// ---------------------------------------------------------------------------
// Run directories

std::filesystem::path default_output_root();

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest;
  std::filesystem::path metrics;
};

RunPaths write_run(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const GridResult& grid, bool force);

std::string sha256_hex(const std::string& data);

struct MetricRow {
  std::string method;
  std::uint64_t seed = 0;
  long task_index = 0;
  std::string metric;
  double value = 0.0;
};

std::vector<MetricRow> parse_metrics_csv(const std::string& text);

struct RunData {
  std::string label;
  std::map<std::string, std::string> manifest;
  std::vector<MetricRow> rows;
};

RunData load_run(const std::filesystem::path& dir);

struct ArmSummary {
  std::string run;
  std::string method;
  std::size_t seeds = 0;
  double mean_retention = 0.0;
  double mean_abs_drift = 0.0;
  double mean_grad_variance = 0.0;
};

struct PairVerdict {
  std::string left;
  std::string right;
  std::string metric;
  std::size_t left_wins = 0;
  std::size_t right_wins = 0;
  std::size_t ties = 0;
};

struct Comparison {
  std::vector<ArmSummary> arms;
  std::vector<PairVerdict> verdicts;
};

Comparison compare_runs(const std::vector<RunData>& runs);
std::string render_comparison(const Comparison& cmp);

}  // namespace secura
