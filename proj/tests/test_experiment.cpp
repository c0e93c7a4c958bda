#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "secura/experiment.hpp"

using namespace secura;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[experiment]
name = smoke
methods = SECURA_M1
seeds = 1
schedule = two_task

[training]
steps_per_task = 10
pretrain_steps = 20
)";

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("secura_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct CliResult {
  int code;
  std::string err;
  std::string out;
};

CliResult cli(const std::string& args, const fs::path& scratch, const std::string& env = "") {
  const fs::path err = scratch / "stderr.txt";
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = env + " " + std::string(SECURA_LAB_PATH) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err), slurp(out)};
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Rows written for one (method, seed) cell.
std::size_t rows_per_cell(std::size_t tasks, std::size_t layers, bool smagnorm) {
  const std::size_t per_task = 5 + layers + 1 + 2 + (smagnorm ? 3 : 0);
  return 1 + tasks * per_task + 1;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults and overrides") {
    const auto cfg = parse_config_text(kMinimal);
    CHECK(cfg.name == "smoke");
    CHECK(cfg.methods == std::vector<Method>{Method::SecuraM1});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
    CHECK(cfg.steps_per_task == 10);
    CHECK(cfg.learning_rate == 1e-3);
    CHECK(cfg.adapter.fusion_interval == 1);
    CHECK(cfg.adapter.smagnorm.scale == 12.0);
  }

  TEST_CASE("render and parse round trip") {
    auto cfg = parse_config_text(kMinimal);
    cfg.adapter.r_fraction = 0.125;
    cfg.learning_rate = 3.7e-4;
    cfg.drift_norm = DriftNorm::Spectral;
    const std::string text = render_config(cfg);
    CHECK(render_config(parse_config_text(text)) == text);
  }

  TEST_CASE("field-level errors") {
    auto field_of = [](const std::string& text) {
      try {
        parse_config_text(text);
      } catch (const ConfigFieldError& e) {
        return e.field();
      }
      return std::string("<none>");
    };
    const std::string head = "[experiment]\nmethods = LORA\nseeds = 1\n";
    CHECK(field_of("[experiment]\nmethods = LORAX\nseeds = 1\n") == "experiment.methods");
    CHECK(field_of("[experiment]\nseeds = 1\n") == "experiment.methods");
    CHECK(field_of("[experiment]\nmethods = LORA\n") == "experiment.seeds");
    CHECK(field_of(head + "[adapter]\nr_fraction = 0.6\n") == "adapter.r_fraction");
    CHECK(field_of(head + "[adapter]\nr_fraction = 0\n") == "adapter.r_fraction");
    CHECK(field_of(head + "[adapter]\nr = 3\nm = 3\n") == "adapter.m");
    CHECK(field_of(head + "[training]\nlearning_rate = fast\n") == "training.learning_rate");
    CHECK(field_of(head + "[training]\nepochs = 3\n") == "training.epochs");
    CHECK(field_of(head + "[bogus]\nx = 1\n") == "bogus");
    CHECK(field_of(head + "[merge]\nfusion_interval = 0\n") == "merge.fusion_interval");
    CHECK(field_of(head + "[experiment]\nschedule = nope\n") != "<none>");
    CHECK(field_of(head) == "<none>");
  }

  TEST_CASE("schedules") {
    auto cfg = parse_config_text(kMinimal);
    for (const auto& name : schedule_names()) {
      cfg.schedule = name;
      const auto s = make_schedule(cfg, 3);
      CHECK(s.name == name);
      CHECK_FALSE(s.tasks.empty());
      CHECK(s.pretrain.has_value());
      CHECK(s.pretrain->name == s.probe.name);
    }
    cfg.schedule = "two_task";
    const auto a = make_schedule(cfg, 3);
    const auto b = make_schedule(cfg, 4);
    CHECK(a.tasks[0].projection_seed != b.tasks[0].projection_seed);
    CHECK(a.tasks[0].projection_seed != a.tasks[1].projection_seed);
  }

  TEST_CASE("sha256 test vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }
}

TEST_SUITE("grid") {
  TEST_CASE("row count and determinism") {
    auto cfg = parse_config_text(kMinimal);
    cfg.methods = {Method::SecuraM1, Method::Lora};
    cfg.seeds = {1, 2};
    const GridResult a = run_grid(cfg, 1);
    const GridResult b = run_grid(cfg, 3);
    const std::size_t layers = static_cast<std::size_t>(cfg.dims.hidden_layers) + 1;
    CHECK(line_count(a.metrics_csv) ==
          1 + 2 * rows_per_cell(2, layers, true) + 2 * rows_per_cell(2, layers, false));
    CHECK(a.metrics_csv == b.metrics_csv);
    CHECK(a.merges_csv == b.merges_csv);
    CHECK(a.metrics_csv.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  }

  TEST_CASE("numerical failure names the cell") {
    auto cfg = parse_config_text(kMinimal);
    cfg.methods = {Method::Seq};
    cfg.learning_rate = 1e6;
    cfg.steps_per_task = 200;
    try {
      run_grid(cfg, 1);
      FAIL("expected CellError");
    } catch (const CellError& e) {
      CHECK(e.method() == "SEQ");
      CHECK(e.seed() == 1);
      CHECK(e.step() >= 1);
    }
  }

  TEST_CASE("metrics csv parses back") {
    const GridResult g = run_grid(parse_config_text(kMinimal), 1);
    const auto rows = parse_metrics_csv(g.metrics_csv);
    CHECK(rows.size() + 1 == line_count(g.metrics_csv));
    CHECK(rows.front().metric == "probe_metric");
    CHECK(rows.front().task_index == -1);
    CHECK(rows.back().metric == "retention_ratio");
    CHECK_THROWS_AS(parse_metrics_csv("bad,header\n"), IoError);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("minimal run writes the run directory") {
    TempDir tmp;
    write_text(tmp.path / "min.ini", kMinimal);
    const auto res = cli("run " + (tmp.path / "min.ini").string() + " --out " +
                             (tmp.path / "run").string(),
                         tmp.path);
    CHECK(res.code == 0);
    const std::string csv = slurp(tmp.path / "run" / "metrics.csv");
    CHECK(line_count(csv) == 1 + rows_per_cell(2, 3, true));
    const std::string manifest = slurp(tmp.path / "run" / "manifest.txt");
    CHECK(manifest.find("metrics_sha256=" + sha256_hex(csv)) != std::string::npos);
    CHECK(manifest.find("[experiment]") != std::string::npos);
    CHECK(fs::is_directory(tmp.path / "run" / "checkpoints"));
    CHECK(fs::exists(tmp.path / "run" / "checkpoints" / "SECURA_M1_seed1_layer0.txt"));
  }

  TEST_CASE("unknown method exits 2 naming the field") {
    TempDir tmp;
    std::string text = kMinimal;
    text.replace(text.find("SECURA_M1"), 9, "SECURA_M9");
    write_text(tmp.path / "bad.ini", text);
    const auto res = cli("run " + (tmp.path / "bad.ini").string() + " --out " +
                             (tmp.path / "run").string(),
                         tmp.path);
    CHECK(res.code == 2);
    CHECK(res.err.find("experiment.methods") != std::string::npos);
    CHECK_FALSE(fs::exists(tmp.path / "run"));
  }

  TEST_CASE("numerical abort exits 3 with context") {
    TempDir tmp;
    std::string text = kMinimal;
    text.replace(text.find("SECURA_M1"), 9, "SEQ");
    text.replace(text.find("steps_per_task = 10"), 19, "steps_per_task = 200");
    text += "learning_rate = 1e6\n";
    write_text(tmp.path / "boom.ini", text);
    const auto res = cli("run " + (tmp.path / "boom.ini").string() + " --out " +
                             (tmp.path / "run").string(),
                         tmp.path);
    CHECK(res.code == 3);
    CHECK(res.err.find("method=SEQ") != std::string::npos);
    CHECK(res.err.find("seed=1") != std::string::npos);
    CHECK(res.err.find("step=") != std::string::npos);
  }

  TEST_CASE("identical config twice gives identical csv; overwrite needs --force") {
    TempDir tmp;
    write_text(tmp.path / "min.ini", kMinimal);
    const std::string cfg = (tmp.path / "min.ini").string();
    CHECK(cli("run " + cfg + " --out " + (tmp.path / "a").string(), tmp.path).code == 0);
    CHECK(cli("run " + cfg + " --out " + (tmp.path / "b").string() + " --parallel 2", tmp.path).code == 0);
    CHECK(slurp(tmp.path / "a" / "metrics.csv") == slurp(tmp.path / "b" / "metrics.csv"));

    const std::string before = slurp(tmp.path / "a" / "metrics.csv");
    const auto again = cli("run " + cfg + " --out " + (tmp.path / "a").string(), tmp.path);
    CHECK(again.code != 0);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(slurp(tmp.path / "a" / "metrics.csv") == before);
    CHECK(cli("run " + cfg + " --out " + (tmp.path / "a").string() + " --force", tmp.path).code == 0);
    CHECK(slurp(tmp.path / "a" / "metrics.csv") == before);
  }

  TEST_CASE("output root from the environment and seed override") {
    TempDir tmp;
    write_text(tmp.path / "min.ini", kMinimal);
    const auto res = cli("run " + (tmp.path / "min.ini").string() + " --seed-override 4,5", tmp.path,
                         "SECURA_LAB_OUT=" + (tmp.path / "root").string());
    CHECK(res.code == 0);
    const auto rows = parse_metrics_csv(slurp(tmp.path / "root" / "smoke" / "metrics.csv"));
    CHECK(rows.front().seed == 4);
    CHECK(rows.back().seed == 5);
    CHECK(cli("run " + (tmp.path / "min.ini").string() + " --seed-override x --out " +
                  (tmp.path / "z").string(),
              tmp.path)
              .code == 2);
  }

  TEST_CASE("compare") {
    TempDir tmp;
    write_text(tmp.path / "min.ini", kMinimal);
    std::string cfg_text = kMinimal;
    cfg_text.replace(cfg_text.find("SECURA_M1"), 9, "SECURA_M1, LORA");
    cfg_text.replace(cfg_text.find("seeds = 1"), 9, "seeds = 1, 2");
    write_text(tmp.path / "two.ini", cfg_text);
    const std::string run = (tmp.path / "run").string();
    REQUIRE(cli("run " + (tmp.path / "two.ini").string() + " --out " + run, tmp.path).code == 0);

    const auto self = cli("compare " + run + " " + run, tmp.path);
    CHECK(self.code == 0);
    CHECK(self.out.find("-> left") == std::string::npos);
    CHECK(self.out.find("-> right") == std::string::npos);
    CHECK(self.out.find("-> tie") != std::string::npos);

    const auto cmp = compare_runs({load_run(run), load_run(run)});
    for (const auto& v : cmp.verdicts) {
      CHECK(v.left_wins == 0);
      CHECK(v.right_wins == 0);
      CHECK(v.ties == 2);
    }

    const auto missing = cli("compare " + run + " " + (tmp.path / "nope").string(), tmp.path);
    CHECK(missing.code == 1);
    CHECK(missing.err.find("not found") != std::string::npos);

    std::string other = cfg_text;
    other.replace(other.find("two_task"), 8, "single_task");
    write_text(tmp.path / "other.ini", other);
    const std::string run2 = (tmp.path / "run2").string();
    REQUIRE(cli("run " + (tmp.path / "other.ini").string() + " --out " + run2, tmp.path).code == 0);
    const auto mismatch = cli("compare " + run + " " + run2, tmp.path);
    CHECK(mismatch.code == 1);
    CHECK(mismatch.err.find("two_task") != std::string::npos);
    CHECK(mismatch.err.find("single_task") != std::string::npos);
  }

  TEST_CASE("cross-method comparison counts wins") {
    TempDir tmp;
    std::string a = kMinimal;
    a.replace(a.find("seeds = 1"), 9, "seeds = 1, 2, 3");
    std::string b = a;
    b.replace(b.find("SECURA_M1"), 9, "SEQ");
    write_text(tmp.path / "a.ini", a);
    write_text(tmp.path / "b.ini", b);
    REQUIRE(cli("run " + (tmp.path / "a.ini").string() + " --out " + (tmp.path / "a").string(), tmp.path).code == 0);
    REQUIRE(cli("run " + (tmp.path / "b.ini").string() + " --out " + (tmp.path / "b").string(), tmp.path).code == 0);
    const auto cmp = compare_runs({load_run(tmp.path / "a"), load_run(tmp.path / "b")});
    REQUIRE(cmp.arms.size() == 2);
    CHECK(cmp.verdicts.size() == 3);
    for (const auto& v : cmp.verdicts) CHECK(v.left_wins + v.right_wins + v.ties == 3);
  }

  TEST_CASE("selftest") {
    TempDir tmp;
    const auto res = cli("selftest", tmp.path);
    CHECK(res.code == 0);
    CHECK(res.out.find("0 failure(s)") != std::string::npos);
  }
}
