// secura_lab: batch runner for adapter experiments.
//
//   secura_lab run <config> [--out DIR] [--force] [--parallel N] [--seed-override S,...]
//   secura_lab compare <dirA> <dirB> ...
//   secura_lab selftest

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <random>

#include "secura/experiment.hpp"
#include "secura/merge.hpp"
#include "secura/smagnorm.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct RunArgs {
  std::string config;
  std::string out;
  bool force = false;
  unsigned parallel = 1;
  std::vector<std::uint64_t> seeds;
};

int do_run(const RunArgs& args) {
  secura::ExperimentConfig cfg;
  try {
    cfg = secura::parse_config_file(args.config);
  } catch (const secura::ConfigFieldError& e) {
    fmt::print(stderr, "config error in field '{}': {}\n", e.field(), e.message());
    return kExitConfig;
  }
  if (!args.seeds.empty()) cfg.seeds = args.seeds;

  const std::filesystem::path dir =
      args.out.empty() ? secura::default_output_root() / cfg.name : std::filesystem::path(args.out);
  if (!args.force && std::filesystem::exists(dir / "metrics.csv")) {
    fmt::print(stderr, "refusing to overwrite {}; pass --force\n", dir.string());
    return kExitFailure;
  }

  secura::GridResult grid;
  try {
    grid = secura::run_grid(cfg, args.parallel);
  } catch (const secura::CellError& e) {
    fmt::print(stderr, "numerical abort: method={} seed={} step={}: {}\n", e.method(), e.seed(),
               e.step(), e.what());
    return kExitNumerical;
  } catch (const secura::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  }
  const auto paths = secura::write_run(dir, cfg, grid, args.force);
  fmt::print("wrote {} ({} cells)\n", paths.metrics.string(), grid.cells.size());
  return kExitOk;
}

int do_compare(const std::vector<std::string>& dirs) {
  std::vector<secura::RunData> runs;
  for (const auto& d : dirs) runs.push_back(secura::load_run(d));
  fmt::print("{}", secura::render_comparison(secura::compare_runs(runs)));
  return kExitOk;
}

// Quick in-process property checks; the full suite lives in the test binaries.
int do_selftest() {
  using secura::Matrix;
  int failures = 0;
  auto check = [&](bool ok, const std::string& name) {
    fmt::print("{} {}\n", ok ? "ok  " : "FAIL", name);
    if (!ok) ++failures;
  };

  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  auto random_matrix = [&](secura::Index r, secura::Index c) {
    Matrix m(r, c);
    for (secura::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };

  bool svd_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix w = random_matrix(6, 4);
    const auto f = secura::svd(w);
    const Matrix rebuilt = f.u * f.s.asDiagonal() * f.v.transpose();
    svd_ok = svd_ok && (rebuilt - w).norm() <= 1e-10 * std::max(1.0, w.norm());
  }
  check(svd_ok, "svd reconstructs its input");

  const secura::SMagNormConfig sm;
  bool range_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix w = random_matrix(5, 5);
    const Matrix d = 0.1 * random_matrix(5, 5);
    const Matrix res = secura::apply_smagnorm(w, d, sm).restriction;
    range_ok = range_ok && res.minCoeff() > 1.0 && res.maxCoeff() < 2.0;
  }
  check(range_ok, "restriction entries lie in (1, 2)");

  bool zero_ok = true;
  {
    const Matrix w = random_matrix(8, 6);
    const auto cabr = secura::cabr_init(w, 2, 3);
    zero_ok = zero_ok && secura::materialize_delta(cabr).isZero(0.0);
    const auto lora = secura::lora_init(8, 6, 2, 3);
    zero_ok = zero_ok && secura::materialize_delta(lora).isZero(0.0);
    const auto cur = secura::curlora_init(w, 2);
    zero_ok = zero_ok && secura::materialize_delta(cur).isZero(0.0);
  }
  check(zero_ok, "adapters start with a zero delta");

  bool conserve_ok = true;
  {
    const Matrix w = random_matrix(8, 6);
    auto ad = secura::cabr_init(w, 2, 3);
    ad.w_a = random_matrix(2, 3);
    auto state = secura::make_merge_state(secura::MergeStrategy::M2, 1, ad);
    ad.w_b = random_matrix(3, 2);
    const Matrix before = secura::effective_weight(state, ad, w, sm);
    secura::merge_m2(state, ad);
    const Matrix after = secura::effective_weight(state, ad, w, sm);
    conserve_ok = (before - after).norm() <= 1e-12;
  }
  check(conserve_ok, "M2 merge conserves the effective weight");

  fmt::print("{} failure(s)\n", failures);
  return failures == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"secura_lab: adapter experiment runner"};
  app.require_subcommand(1);

  RunArgs run_args;
  std::string seed_text;
  auto* run = app.add_subcommand("run", "execute a method x seed grid from a config file");
  run->add_option("config", run_args.config, "config file")->required();
  run->add_option("--out", run_args.out, "output directory (default $SECURA_LAB_OUT/<name>)");
  run->add_flag("--force", run_args.force, "overwrite an existing run directory");
  run->add_option("--parallel", run_args.parallel, "worker threads")->check(CLI::PositiveNumber);
  run->add_option("--seed-override", seed_text, "comma-separated seeds replacing the config's");

  std::vector<std::string> dirs;
  auto* compare = app.add_subcommand("compare", "summarize and rank two or more run directories");
  compare->add_option("dirs", dirs, "run directories")->required()->expected(2, -1);

  auto* selftest = app.add_subcommand("selftest", "fast property checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!seed_text.empty()) {
        for (const auto& s : CLI::detail::split(seed_text, ',')) {
          try {
            std::size_t used = 0;
            const std::string t = CLI::detail::trim_copy(s);
            if (t.empty() || t[0] == '-') throw std::invalid_argument(t);
            run_args.seeds.push_back(std::stoull(t, &used));
            if (used != t.size()) throw std::invalid_argument(t);
          } catch (const std::logic_error&) {
            fmt::print(stderr, "config error in field '--seed-override': bad seed '{}'\n", s);
            return kExitConfig;
          }
        }
      }
      return do_run(run_args);
    }
    if (*compare) return do_compare(dirs);
    if (*selftest) return do_selftest();
  } catch (const secura::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
