#include "secura/experiment.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace secura {
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

// ---------------------------------------------------------------------------
// Config

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"experiment", {"name", "methods", "seeds", "schedule"}},
      {"model", {"input_dim", "hidden", "hidden_layers"}},
      {"adapter", {"r_fraction", "r", "m"}},
      {"smagnorm", {"epsilon", "scale"}},
      {"merge", {"fusion_interval", "boundary_fusion"}},
      {"training",
       {"learning_rate", "steps_per_task", "batch_size", "pretrain_steps",
        "pretrain_learning_rate"}},
      {"metrics", {"eval_samples", "drift_norm", "trace_mres"}},
  };
  return keys;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(", \t"), boost::token_compress_on);
  parts.erase(std::remove(parts.begin(), parts.end(), std::string{}), parts.end());
  return parts;
}

template <typename T>
T read_number(const pt::ptree& tree, const std::string& field, T fallback) {
  const auto node = tree.get_optional<std::string>(pt::ptree::path_type(field, '.'));
  if (!node) return fallback;
  const std::string text = boost::trim_copy(*node);
  try {
    std::size_t used = 0;
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else if constexpr (std::is_signed_v<T>) {
      value = static_cast<T>(std::stoll(text, &used));
    } else {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw ConfigFieldError(field, "cannot parse '" + text + "' as a number");
  }
}

bool read_bool(const pt::ptree& tree, const std::string& field, bool fallback) {
  const auto node = tree.get_optional<std::string>(pt::ptree::path_type(field, '.'));
  if (!node) return fallback;
  const std::string text = boost::to_lower_copy(boost::trim_copy(*node));
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigFieldError(field, "expected true or false, got '" + text + "'");
}

std::string read_string(const pt::ptree& tree, const std::string& field,
                        const std::string& fallback) {
  const auto node = tree.get_optional<std::string>(pt::ptree::path_type(field, '.'));
  return node ? boost::trim_copy(*node) : fallback;
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigFieldError(field, message);
}

ExperimentConfig from_tree(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigFieldError(section, "unknown section");
    if (body.empty() && !body.data().empty()) {
      throw ConfigFieldError(section, "key outside of a section");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigFieldError(section + "." + key, "unknown key");
    }
  }

  ExperimentConfig cfg;
  cfg.name = read_string(tree, "experiment.name", cfg.name);
  require(!cfg.name.empty() && cfg.name.find('/') == std::string::npos, "experiment.name",
          "must be a non-empty name without '/'");

  const std::string methods = read_string(tree, "experiment.methods", "");
  for (const std::string& m : split_list(methods)) {
    const auto parsed = parse_method(m);
    require(parsed.has_value(), "experiment.methods", "unknown method '" + m + "'");
    cfg.methods.push_back(*parsed);
  }
  require(!cfg.methods.empty(), "experiment.methods", "at least one method is required");

  for (const std::string& s : split_list(read_string(tree, "experiment.seeds", ""))) {
    try {
      require(s[0] != '-', "experiment.seeds", "seeds must be non-negative");
      std::size_t used = 0;
      cfg.seeds.push_back(std::stoull(s, &used));
      require(used == s.size(), "experiment.seeds", "cannot parse seed '" + s + "'");
    } catch (const std::logic_error&) {
      throw ConfigFieldError("experiment.seeds", "cannot parse seed '" + s + "'");
    }
  }
  require(!cfg.seeds.empty(), "experiment.seeds", "at least one seed is required");

  cfg.schedule = read_string(tree, "experiment.schedule", cfg.schedule);
  const auto names = schedule_names();
  require(std::find(names.begin(), names.end(), cfg.schedule) != names.end(),
          "experiment.schedule", "unknown schedule '" + cfg.schedule + "'");

  cfg.dims.input = read_number<Index>(tree, "model.input_dim", cfg.dims.input);
  cfg.dims.hidden = read_number<Index>(tree, "model.hidden", cfg.dims.hidden);
  cfg.dims.hidden_layers = read_number<Index>(tree, "model.hidden_layers", cfg.dims.hidden_layers);
  require(cfg.dims.input > 0, "model.input_dim", "must be positive");
  require(cfg.dims.hidden > 0, "model.hidden", "must be positive");
  require(cfg.dims.hidden_layers >= 0, "model.hidden_layers", "must be non-negative");

  cfg.adapter.r_fraction = read_number<double>(tree, "adapter.r_fraction", cfg.adapter.r_fraction);
  require(cfg.adapter.r_fraction > 0.0 && cfg.adapter.r_fraction <= 0.5, "adapter.r_fraction",
          "must lie in (0, 0.5]");
  cfg.adapter.r = read_number<Index>(tree, "adapter.r", cfg.adapter.r);
  cfg.adapter.m = read_number<Index>(tree, "adapter.m", cfg.adapter.m);
  require(cfg.adapter.r >= 0, "adapter.r", "must be non-negative (0 selects the default)");
  require(cfg.adapter.m >= 0, "adapter.m", "must be non-negative (0 selects the default)");
  require(cfg.adapter.m == 0 || cfg.adapter.r == 0 || cfg.adapter.m > cfg.adapter.r, "adapter.m",
          "must exceed adapter.r");

  cfg.adapter.smagnorm.epsilon =
      read_number<double>(tree, "smagnorm.epsilon", cfg.adapter.smagnorm.epsilon);
  cfg.adapter.smagnorm.scale = read_number<double>(tree, "smagnorm.scale", cfg.adapter.smagnorm.scale);
  require(cfg.adapter.smagnorm.epsilon > 0.0, "smagnorm.epsilon", "must be positive");
  require(cfg.adapter.smagnorm.scale > 0.0, "smagnorm.scale", "must be positive");

  cfg.adapter.fusion_interval =
      read_number<std::int64_t>(tree, "merge.fusion_interval", cfg.adapter.fusion_interval);
  require(cfg.adapter.fusion_interval > 0, "merge.fusion_interval", "must be positive");
  cfg.boundary_fusion = read_bool(tree, "merge.boundary_fusion", cfg.boundary_fusion);

  cfg.learning_rate = read_number<double>(tree, "training.learning_rate", cfg.learning_rate);
  require(cfg.learning_rate > 0.0, "training.learning_rate", "must be positive");
  cfg.steps_per_task = read_number<std::size_t>(tree, "training.steps_per_task", cfg.steps_per_task);
  cfg.batch_size = read_number<std::size_t>(tree, "training.batch_size", cfg.batch_size);
  require(cfg.batch_size >= 1 && cfg.batch_size <= 16, "training.batch_size",
          "must lie in [1, 16]");
  cfg.pretrain_steps = read_number<std::size_t>(tree, "training.pretrain_steps", cfg.pretrain_steps);
  cfg.pretrain_learning_rate =
      read_number<double>(tree, "training.pretrain_learning_rate", cfg.pretrain_learning_rate);
  require(cfg.pretrain_learning_rate > 0.0, "training.pretrain_learning_rate",
          "must be positive");

  cfg.eval_samples = read_number<std::size_t>(tree, "metrics.eval_samples", cfg.eval_samples);
  require(cfg.eval_samples > 0, "metrics.eval_samples", "must be positive");
  const std::string norm = read_string(tree, "metrics.drift_norm", "nuclear");
  require(norm == "nuclear" || norm == "spectral", "metrics.drift_norm",
          "expected nuclear or spectral, got '" + norm + "'");
  cfg.drift_norm = norm == "nuclear" ? DriftNorm::Nuclear : DriftNorm::Spectral;
  cfg.trace_mres = read_bool(tree, "metrics.trace_mres", cfg.trace_mres);
  return cfg;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigFieldError("config", fmt::format("line {}: {}", e.line(), e.message()));
  }
  return from_tree(tree);
}

ExperimentConfig parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string render_config(const ExperimentConfig& c) {
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  std::vector<std::string> seeds;
  for (auto s : c.seeds) seeds.push_back(std::to_string(s));
  std::string out;
  out += "[experiment]\n";
  out += fmt::format("name = {}\nmethods = {}\nseeds = {}\nschedule = {}\n", c.name,
                     boost::join(methods, ", "), boost::join(seeds, ", "), c.schedule);
  out += fmt::format("\n[model]\ninput_dim = {}\nhidden = {}\nhidden_layers = {}\n", c.dims.input,
                     c.dims.hidden, c.dims.hidden_layers);
  out += fmt::format("\n[adapter]\nr_fraction = {}\nr = {}\nm = {}\n",
                     format_real(c.adapter.r_fraction), c.adapter.r, c.adapter.m);
  out += fmt::format("\n[smagnorm]\nepsilon = {}\nscale = {}\n",
                     format_real(c.adapter.smagnorm.epsilon), format_real(c.adapter.smagnorm.scale));
  out += fmt::format("\n[merge]\nfusion_interval = {}\nboundary_fusion = {}\n",
                     c.adapter.fusion_interval, c.boundary_fusion);
  out += fmt::format(
      "\n[training]\nlearning_rate = {}\nsteps_per_task = {}\nbatch_size = {}\n"
      "pretrain_steps = {}\npretrain_learning_rate = {}\n",
      format_real(c.learning_rate), c.steps_per_task, c.batch_size, c.pretrain_steps,
      format_real(c.pretrain_learning_rate));
  out += fmt::format("\n[metrics]\neval_samples = {}\ndrift_norm = {}\ntrace_mres = {}\n",
                     c.eval_samples, c.drift_norm == DriftNorm::Nuclear ? "nuclear" : "spectral",
                     c.trace_mres);
  return out;
}

// ---------------------------------------------------------------------------
// Schedules

std::vector<std::string> schedule_names() {
  return {"two_task", "single_task", "multi_task", "classify", "classify_two_task"};
}

namespace {

TaskSpec regression_task(const ExperimentConfig& c, std::string name, double omega,
                         std::uint64_t projection_seed) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = TaskKind::SineRegression;
  t.loss = LossKind::Mse;
  t.omega = omega;
  t.projection_seed = projection_seed;
  t.steps = c.steps_per_task;
  t.learning_rate = c.learning_rate;
  t.batch_size = c.batch_size;
  t.input_dim = c.dims.input;
  t.output_dim = 4;
  return t;
}

TaskSpec classification_task(const ExperimentConfig& c, std::string name,
                             std::uint64_t projection_seed) {
  TaskSpec t = regression_task(c, std::move(name), 1.0, projection_seed);
  t.kind = TaskKind::Classification;
  t.loss = LossKind::SoftmaxCrossEntropy;
  t.output_dim = 3;
  return t;
}

std::optional<TaskSpec> pretraining_of(const ExperimentConfig& c, TaskSpec probe) {
  if (c.pretrain_steps == 0) return std::nullopt;
  probe.steps = c.pretrain_steps;
  probe.learning_rate = c.pretrain_learning_rate;
  probe.batch_size = 16;
  return probe;
}

}  // namespace

ContinualSchedule make_schedule(const ExperimentConfig& c, std::uint64_t seed) {
  ContinualSchedule s;
  s.name = c.schedule;
  const TaskSpec a = regression_task(c, "A", 1.0, derive_seed(seed, 11));
  const TaskSpec b = regression_task(c, "B", 2.0, derive_seed(seed, 12));
  if (c.schedule == "two_task") {
    s.tasks = {a, b};
    s.probe = a;
  } else if (c.schedule == "single_task") {
    s.tasks = {b};
    s.probe = a;
  } else if (c.schedule == "multi_task") {
    s.tasks = {a, b, regression_task(c, "C", 3.0, derive_seed(seed, 13)),
               regression_task(c, "D", 1.5, derive_seed(seed, 14))};
    s.probe = a;
  } else if (c.schedule == "classify" || c.schedule == "classify_two_task") {
    const TaskSpec p = classification_task(c, "P", derive_seed(seed, 21));
    const TaskSpec q = classification_task(c, "Q", derive_seed(seed, 22));
    s.tasks = c.schedule == "classify" ? std::vector<TaskSpec>{q} : std::vector<TaskSpec>{p, q};
    s.probe = p;
  } else {
    throw ConfigFieldError("experiment.schedule", "unknown schedule '" + c.schedule + "'");
  }
  s.pretrain = pretraining_of(c, s.probe);
  return s;
}

// ---------------------------------------------------------------------------
// Grid execution

CellResult run_cell(const ExperimentConfig& config, Method method, std::uint64_t seed) {
  const ContinualSchedule schedule = make_schedule(config, seed);
  ModelDims dims = config.dims;
  dims.output = schedule.probe.output_dim;
  Model model = make_base_model(dims, derive_seed(seed, 0xBA5E));
  try {
    if (schedule.pretrain) {
      attach(model, Method::Seq, config.adapter, seed);
      TrainOptions opts;
      opts.stream_seed = derive_seed(seed, 0x9E7A);
      opts.periodic_fusion = false;
      train_task(model, *schedule.pretrain, opts);
    }
    attach(model, method, config.adapter, seed);
    ContinualOptions copts;
    copts.boundary_fusion = config.boundary_fusion;
    copts.drift_norm = config.drift_norm;
    copts.eval_samples = config.eval_samples;
    ExperimentReport report = run_continual(model, schedule, method_name(method), seed, copts);
    return {std::move(report), std::move(model)};
  } catch (const NumericalError& e) {
    throw CellError(method_name(method), seed, e.step(),
                    fmt::format("method {} seed {}: {}", method_name(method), seed, e.what()));
  }
}

namespace {

void add_row(std::string& out, const ExperimentReport& r, long task, const std::string& metric,
             double value) {
  out += fmt::format("{},{},{},{},{}\n", r.method, r.seed, task, metric,
                     std::isfinite(value) ? format_real(value) : std::string("nan"));
}

std::string merges_csv(const std::vector<CellResult>& cells) {
  std::string out = "method,seed,task_index,step,layer,strategy,folded_norm\n";
  for (const auto& cell : cells) {
    const auto& r = cell.report;
    for (std::size_t t = 0; t < r.tasks.size(); ++t) {
      for (const auto& ev : r.tasks[t].report.merges) {
        out += fmt::format("{},{},{},{},{},{},{}\n", r.method, r.seed, t, ev.step, ev.layer,
                           to_string(ev.strategy), format_real(ev.folded_norm));
      }
    }
  }
  return out;
}

std::string trace_csv(const std::vector<CellResult>& cells) {
  std::string out = "method,seed,task_index,step,mres_min,mres_max,mres_mean\n";
  for (const auto& cell : cells) {
    const auto& r = cell.report;
    for (std::size_t t = 0; t < r.tasks.size(); ++t) {
      const auto& series = r.tasks[t].report.mres_series;
      for (std::size_t k = 0; k < series.size(); ++k) {
        out += fmt::format("{},{},{},{},{},{},{}\n", r.method, r.seed, t, k + 1,
                           format_real(series[k].min), format_real(series[k].max),
                           format_real(series[k].mean));
      }
    }
  }
  return out;
}

}  // namespace

std::string metrics_csv(const std::vector<CellResult>& cells) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& cell : cells) {
    const ExperimentReport& r = cell.report;
    add_row(out, r, -1, "probe_metric", r.probe_before);
    for (std::size_t t = 0; t < r.tasks.size(); ++t) {
      const TaskOutcome& o = r.tasks[t];
      const long ti = static_cast<long>(t);
      add_row(out, r, ti, "train_loss_final", o.report.final_train_loss);
      add_row(out, r, ti, "task_metric", o.task_metric);
      add_row(out, r, ti, "probe_metric", o.probe_metric);
      add_row(out, r, ti, "grad_norm_range", o.grad.range);
      add_row(out, r, ti, "grad_norm_variance", o.grad.variance);
      double total = 0.0;
      for (const DriftRecord& d : o.drift) {
        add_row(out, r, ti, fmt::format("drift_layer{}", d.layer), d.drift);
        total += std::abs(d.drift);
      }
      add_row(out, r, ti, "drift_abs_total", total);
      double folded = 0.0;
      for (const auto& ev : o.report.merges) folded += ev.folded_norm;
      add_row(out, r, ti, "merge_count", static_cast<double>(o.report.merges.size()));
      add_row(out, r, ti, "merge_folded_norm", folded);
      if (!o.report.mres_series.empty()) {
        const MresSample& last = o.report.mres_series.back();
        add_row(out, r, ti, "mres_min", last.min);
        add_row(out, r, ti, "mres_max", last.max);
        add_row(out, r, ti, "mres_mean", last.mean);
      }
    }
    add_row(out, r, static_cast<long>(r.tasks.size()) - 1, "retention_ratio",
            r.retention.retention_ratio.value_or(std::nan("")));
  }
  return out;
}

GridResult run_grid(const ExperimentConfig& config, unsigned parallel) {
  struct Job {
    Method method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Method m : config.methods) {
    for (auto s : config.seeds) jobs.push_back({m, s});
  }
  std::vector<std::optional<CellResult>> slots(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        slots[i] = run_cell(config, jobs[i].method, jobs[i].seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(parallel, static_cast<unsigned>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GridResult grid;
  for (auto& slot : slots) grid.cells.push_back(std::move(*slot));
  grid.metrics_csv = metrics_csv(grid.cells);
  grid.merges_csv = merges_csv(grid.cells);
  if (config.trace_mres) grid.trace_csv = trace_csv(grid.cells);
  return grid;
}

// ---------------------------------------------------------------------------
// Run directories

fs::path default_output_root() {
  if (const char* env = std::getenv("SECURA_LAB_OUT"); env && *env) return fs::path(env);
  return fs::path("out");
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_checkpoints(const fs::path& dir, const std::vector<CellResult>& cells) {
  fs::create_directories(dir);
  for (const auto& cell : cells) {
    for (std::size_t l = 0; l < cell.model.layers.size(); ++l) {
      const AdaptedLayer& layer = cell.model.layers[l];
      std::ostringstream os;
      std::visit(
          [&](const auto& ad) {
            if constexpr (std::is_same_v<std::decay_t<decltype(ad)>, NoAdapter>) {
              os << "BASE\n";
              write_matrix(os, layer.w_base);
            } else {
              write_checkpoint(os, ad);
            }
          },
          layer.adapter);
      write_file(dir / fmt::format("{}_seed{}_layer{}.txt", cell.report.method, cell.report.seed, l),
                 os.str());
    }
  }
}

}  // namespace

RunPaths write_run(const fs::path& dir, const ExperimentConfig& config, const GridResult& grid,
                   bool force) {
  RunPaths paths{dir, dir / "manifest.txt", dir / "metrics.csv"};
  if (fs::exists(paths.metrics) || fs::exists(paths.manifest)) {
    if (!force) {
      throw IoError("run directory " + dir.string() +
                    " already holds results; pass --force to overwrite");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  write_file(paths.metrics, grid.metrics_csv);
  write_file(dir / "merges.csv", grid.merges_csv);
  if (!grid.trace_csv.empty()) write_file(dir / "trace.csv", grid.trace_csv);
  write_checkpoints(dir / "checkpoints", grid.cells);

  const std::string config_text = render_config(config);
  std::string manifest;
  manifest += fmt::format("name={}\n", config.name);
  manifest += fmt::format("schedule={}\n", config.schedule);
  manifest += fmt::format("config_sha256={}\n", sha256_hex(config_text));
  manifest += fmt::format("metrics_sha256={}\n", sha256_hex(grid.metrics_csv));
  manifest += fmt::format("merges_sha256={}\n", sha256_hex(grid.merges_csv));
  if (!grid.trace_csv.empty()) manifest += fmt::format("trace_sha256={}\n", sha256_hex(grid.trace_csv));
  manifest += "--- config ---\n";
  manifest += config_text;
  write_file(paths.manifest, manifest);
  return paths;
}

// ---------------------------------------------------------------------------
// Comparison

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || boost::trim_copy(line) != kMetricsHeader) {
    throw IoError("metrics.csv: unexpected header");
  }
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of(","));
    if (f.size() != 5) throw IoError(fmt::format("metrics.csv line {}: expected 5 fields", lineno));
    try {
      MetricRow row;
      row.method = f[0];
      row.seed = std::stoull(f[1]);
      row.task_index = std::stol(f[2]);
      row.metric = f[3];
      row.value = f[4] == "nan" ? std::nan("") : std::stod(f[4]);
      rows.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw IoError(fmt::format("metrics.csv line {}: malformed value", lineno));
    }
  }
  return rows;
}

RunData load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("run directory not found: " + dir.string());
  RunData run;
  run.label = dir.filename().string();
  if (run.label.empty()) run.label = dir.parent_path().filename().string();
  std::istringstream manifest(read_file(dir / "manifest.txt"));
  std::string line;
  while (std::getline(manifest, line) && line != "--- config ---") {
    const auto eq = line.find('=');
    if (eq != std::string::npos) run.manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  run.rows = parse_metrics_csv(read_file(dir / "metrics.csv"));
  return run;
}

namespace {

struct ArmData {
  std::string label;
  std::string run;
  std::string method;
  std::map<std::uint64_t, double> retention, drift, grad_var;
};

std::vector<ArmData> collect_arms(const RunData& run, const std::string& label) {
  std::map<std::string, ArmData> arms;
  std::map<std::pair<std::string, std::uint64_t>, long> last_task;
  for (const auto& row : run.rows) {
    auto& lt = last_task[{row.method, row.seed}];
    lt = std::max(lt, row.task_index);
  }
  std::vector<std::string> order;
  for (const auto& row : run.rows) {
    auto [it, inserted] = arms.try_emplace(row.method);
    if (inserted) {
      it->second.run = label;
      it->second.method = row.method;
      it->second.label = label + ":" + row.method;
      order.push_back(row.method);
    }
    if (row.task_index != last_task[{row.method, row.seed}]) continue;
    if (row.metric == "retention_ratio") it->second.retention[row.seed] = row.value;
    if (row.metric == "drift_abs_total") it->second.drift[row.seed] = row.value;
    if (row.metric == "grad_norm_variance") it->second.grad_var[row.seed] = row.value;
  }
  std::vector<ArmData> out;
  for (const auto& m : order) out.push_back(arms[m]);
  return out;
}

double mean_of(const std::map<std::uint64_t, double>& values) {
  if (values.empty()) return std::nan("");
  double acc = 0.0;
  for (const auto& [seed, v] : values) acc += v;
  return acc / static_cast<double>(values.size());
}

PairVerdict verdict(const ArmData& a, const ArmData& b, const std::string& metric,
                    const std::map<std::uint64_t, double>& va,
                    const std::map<std::uint64_t, double>& vb, bool higher_better) {
  PairVerdict v{a.label, b.label, metric, 0, 0, 0};
  for (const auto& [seed, x] : va) {
    const auto it = vb.find(seed);
    if (it == vb.end()) continue;
    const double y = it->second;
    if (x == y || (std::isnan(x) && std::isnan(y))) {
      ++v.ties;
    } else if (std::isnan(y) || (!std::isnan(x) && (higher_better ? x > y : x < y))) {
      ++v.left_wins;
    } else {
      ++v.right_wins;
    }
  }
  return v;
}

}  // namespace

Comparison compare_runs(const std::vector<RunData>& runs) {
  if (runs.size() < 2) throw ContractError("compare: need at least two run directories");
  const std::string schedule = runs.front().manifest.count("schedule")
                                   ? runs.front().manifest.at("schedule")
                                   : std::string();
  for (const auto& run : runs) {
    const std::string other = run.manifest.count("schedule") ? run.manifest.at("schedule") : "";
    if (other != schedule) {
      throw ContractError(fmt::format("compare: schedules differ: {}={} vs {}={}",
                                      runs.front().label, schedule, run.label, other));
    }
  }

  std::vector<std::vector<ArmData>> arms;
  std::map<std::string, int> label_count;
  for (const auto& run : runs) {
    std::string label = run.label;
    if (++label_count[label] > 1) label += "#" + std::to_string(label_count[run.label]);
    arms.push_back(collect_arms(run, label));
  }

  Comparison cmp;
  for (const auto& run_arms : arms) {
    for (const auto& a : run_arms) {
      cmp.arms.push_back({a.run, a.method, a.retention.size(), mean_of(a.retention),
                          mean_of(a.drift), mean_of(a.grad_var)});
    }
  }
  for (std::size_t i = 0; i < arms.size(); ++i) {
    for (std::size_t j = i + 1; j < arms.size(); ++j) {
      std::set<std::string> left, shared;
      for (const auto& a : arms[i]) left.insert(a.method);
      for (const auto& b : arms[j]) {
        if (left.count(b.method)) shared.insert(b.method);
      }
      for (const auto& a : arms[i]) {
        for (const auto& b : arms[j]) {
          if (!shared.empty() && a.method != b.method) continue;
          cmp.verdicts.push_back(verdict(a, b, "retention", a.retention, b.retention, true));
          cmp.verdicts.push_back(verdict(a, b, "abs_drift", a.drift, b.drift, false));
          cmp.verdicts.push_back(verdict(a, b, "grad_variance", a.grad_var, b.grad_var, false));
        }
      }
    }
  }
  return cmp;
}

std::string render_comparison(const Comparison& cmp) {
  std::string out;
  out += fmt::format("{:<24} {:<10} {:>5} {:>14} {:>14} {:>14}\n", "run", "method", "seeds",
                     "retention", "abs_drift", "grad_var");
  for (const auto& a : cmp.arms) {
    out += fmt::format("{:<24} {:<10} {:>5} {:>14.6g} {:>14.6g} {:>14.6g}\n", a.run, a.method,
                       a.seeds, a.mean_retention, a.mean_abs_drift, a.mean_grad_variance);
  }
  out += "\n";
  for (const auto& v : cmp.verdicts) {
    const char* outcome = v.left_wins > v.right_wins   ? "left"
                          : v.right_wins > v.left_wins ? "right"
                                                       : "tie";
    out += fmt::format("{:<14} {} vs {}: {}-{} (ties {}) -> {}\n", v.metric, v.left, v.right,
                       v.left_wins, v.right_wins, v.ties, outcome);
  }
  return out;
}

}  // namespace secura
