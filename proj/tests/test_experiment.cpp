#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mmen/experiment.hpp"

using namespace mmen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "config.json";
  std::ofstream out(p);
  out << body;
  return p.string();
}

std::string small_moons_config(const fs::path& out_dir, const std::string& variants,
                               unsigned seed = 3) {
  std::ostringstream os;
  os << R"({
  "dataset": {"kind": "two_moons", "n": 96, "noise": 0.1, "rotation_deg": 45.0, "seed": 7},
  "model": {"g_hidden": [16], "feature_dim": 8, "head_hidden": [8]},
  "train": {"epochs": 4, "pretrain_epochs": 4, "batch_source": 32, "batch_target": 32,
            "learning_rate": 0.001, "seed": )"
     << seed << R"(},
  "variants": [)"
     << variants << R"(],
  "output_dir": ")"
     << out_dir.generic_string() << R"("
})";
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config loader applies defaults and validates", "[experiment]") {
  TempDir tmp("mmen_cfg_defaults");
  const std::string path = write_config(tmp.path, R"({
    "dataset": {"kind": "two_moons"},
    "variants": ["mmen"],
    "output_dir": "out"
  })");
  ExperimentConfig cfg = load_experiment_config(path);
  CHECK(cfg.train.lambda == 0.1);
  CHECK(cfg.train.k == 4);
  CHECK(cfg.train.epochs == 150);
  CHECK(cfg.train.optimizer == OptimizerKind::adam);
  CHECK(cfg.model.feature_dim == 16);
  CHECK(cfg.variants == std::vector<Variant>{Variant::mmen});
}

TEST_CASE("config loader rejects unknown keys and bad values", "[experiment]") {
  TempDir tmp("mmen_cfg_bad");
  CHECK_THROWS_WITH(load_experiment_config(write_config(tmp.path, R"({
    "dataset": {"kind": "two_moons", "lamda_typo": 1},
    "variants": ["mmen"], "output_dir": "o"
  })")),
                    Catch::Matchers::ContainsSubstring("lamda_typo"));

  CHECK_THROWS_WITH(load_experiment_config(write_config(tmp.path, R"({
    "dataset": {"kind": "two_moons"},
    "train": {"lambda": -0.5},
    "variants": ["mmen"], "output_dir": "o"
  })")),
                    Catch::Matchers::ContainsSubstring("lambda"));

  CHECK_THROWS_WITH(load_experiment_config(write_config(tmp.path, R"({
    "dataset": {"kind": "warp"}, "variants": ["mmen"], "output_dir": "o"
  })")),
                    Catch::Matchers::ContainsSubstring("warp"));

  CHECK_THROWS_AS(load_experiment_config(write_config(tmp.path, "{ not json")),
                  ConfigError);

  CHECK_THROWS_WITH(load_experiment_config(write_config(tmp.path, R"({
    "dataset": {"kind": "idx", "source_images": "/nonexistent/a", "source_labels": "/nonexistent/b",
                "target_images": "/nonexistent/c", "target_labels": "/nonexistent/d"},
    "variants": ["mmen"], "output_dir": "o"
  })")),
                    Catch::Matchers::ContainsSubstring("does not exist"));

  CHECK_THROWS_WITH(load_experiment_config(write_config(tmp.path, R"({
    "dataset": {"kind": "two_moons"}, "variants": ["speedrun"], "output_dir": "o"
  })")),
                    Catch::Matchers::ContainsSubstring("speedrun"));
}

TEST_CASE("cmd_run writes per-variant artifacts and an ordered summary", "[experiment]") {
  TempDir tmp("mmen_run");
  const fs::path out = tmp.path / "out";
  const std::string cfg = write_config(tmp.path, small_moons_config(out, R"("source_only")"));
  REQUIRE(cmd_run(cfg) == 0);

  CHECK(fs::exists(out / "source_only" / "metrics.csv"));
  CHECK(fs::exists(out / "source_only" / "checkpoint.bin"));
  CHECK(fs::exists(out / "source_only" / "features.csv"));
  CHECK(fs::exists(out / "source_only" / "ccd.csv"));
  CHECK_FALSE(fs::exists(out / "mmen"));

  std::ifstream in(out / "summary.csv");
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "variant,accuracy,acc_c,acc_d,h_target,target_xent_true,mean_ccd");
  CHECK(row.substr(0, 12) == "source_only,");
  CHECK_FALSE(std::getline(in, extra));
}

TEST_CASE("cmd_run is byte-deterministic across reruns", "[experiment]") {
  TempDir tmp("mmen_run_det");
  const fs::path out_a = tmp.path / "a";
  const fs::path out_b = tmp.path / "b";
  const std::string cfg_a =
      write_config(tmp.path, small_moons_config(out_a, R"("source_only", "mmen")"));
  REQUIRE(cmd_run(cfg_a) == 0);
  const std::string cfg_b =
      write_config(tmp.path, small_moons_config(out_b, R"("source_only", "mmen")"));
  REQUIRE(cmd_run(cfg_b) == 0);

  for (const char* rel : {"summary.csv", "mmen/metrics.csv", "mmen/features.csv",
                          "mmen/ccd.csv", "mmen/checkpoint.bin"}) {
    CHECK(slurp(out_a / rel) == slurp(out_b / rel));
  }
}

TEST_CASE("environment variable overrides the output directory", "[experiment]") {
  TempDir tmp("mmen_env");
  const fs::path ignored = tmp.path / "ignored";
  const fs::path actual = tmp.path / "env_out";
  const std::string cfg =
      write_config(tmp.path, small_moons_config(ignored, R"("source_only")"));
  setenv("MMEN_OUTPUT_DIR", actual.string().c_str(), 1);
  const int rc = cmd_run(cfg);
  unsetenv("MMEN_OUTPUT_DIR");
  REQUIRE(rc == 0);
  CHECK(fs::exists(actual / "summary.csv"));
  CHECK_FALSE(fs::exists(ignored / "summary.csv"));
}

TEST_CASE("cmd_sweep writes the table shaped by k and lambda", "[experiment]") {
  TempDir tmp("mmen_sweep");
  const fs::path out = tmp.path / "out";
  const std::string cfg = write_config(tmp.path, small_moons_config(out, R"("mmen")"));
  REQUIRE(cmd_sweep(cfg, {1, 2}, {0.0, 0.1}) == 0);

  std::ifstream in(out / "sweep.csv");
  std::string header, r1, r2;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  CHECK(header == "k,lambda=0,lambda=0.1");
  CHECK(r1.substr(0, 2) == "1,");
  CHECK(r2.substr(0, 2) == "2,");
}

TEST_CASE("cmd_eval reproduces the final logged accuracies exactly", "[experiment]") {
  TempDir tmp("mmen_eval");
  const fs::path out = tmp.path / "out";
  const std::string cfg = write_config(tmp.path, small_moons_config(out, R"("mmen")"));
  REQUIRE(cmd_run(cfg) == 0);

  // final row of metrics.csv
  std::ifstream in(out / "mmen" / "metrics.csv");
  std::string line, last;
  std::getline(in, line);  // header
  while (std::getline(in, line)) last = line;
  std::vector<std::string> cells;
  std::stringstream ss(last);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  REQUIRE(cells.size() == 7);

  std::ostringstream eval_out;
  REQUIRE(cmd_eval((out / "mmen" / "checkpoint.bin").string(), cfg, eval_out) == 0);
  const std::string printed = eval_out.str();
  CHECK_THAT(printed, Catch::Matchers::ContainsSubstring("acc_c=" + cells[4]));
  CHECK_THAT(printed, Catch::Matchers::ContainsSubstring("acc_d=" + cells[5]));
}

TEST_CASE("cmd_eval rejects checkpoints that mismatch the dataset", "[experiment]") {
  TempDir tmp("mmen_eval_mismatch");
  const fs::path out = tmp.path / "out";
  const std::string cfg = write_config(tmp.path, small_moons_config(out, R"("mmen")"));
  REQUIRE(cmd_run(cfg) == 0);

  const std::string blob_cfg = write_config(tmp.path, R"({
    "dataset": {"kind": "shifted_blobs", "classes": 3, "per_class": 8, "spread": 0.3},
    "variants": ["mmen"],
    "output_dir": ")" + (tmp.path / "out2").generic_string() +
                                                           R"("
  })");
  CHECK_THROWS_WITH(cmd_eval((out / "mmen" / "checkpoint.bin").string(), blob_cfg),
                    Catch::Matchers::ContainsSubstring("class count"));
}

TEST_CASE("untrained models sit at chance on balanced two-class data", "[experiment]") {
  DomainPair pair = build_dataset(DatasetConfig{});  // two moons, n=500
  ModelBundle bundle = build_bundle(2, 2, BundleSpec{}, 12345, Variant::mmen);
  EvalRecord rec = evaluate(bundle, pair);
  CHECK(rec.accuracy_classifier >= 0.3);
  CHECK(rec.accuracy_classifier <= 0.7);
}

TEST_CASE("dump-features command writes the requested file", "[experiment]") {
  TempDir tmp("mmen_dumpcmd");
  const fs::path out = tmp.path / "out";
  const std::string cfg =
      write_config(tmp.path, small_moons_config(out, R"("source_only")"));
  REQUIRE(cmd_run(cfg) == 0);
  const fs::path dumped = tmp.path / "dump.csv";
  REQUIRE(cmd_dump_features((out / "source_only" / "checkpoint.bin").string(), cfg,
                            dumped.string()) == 0);
  CHECK(fs::exists(dumped));
  CHECK(slurp(dumped) == slurp(out / "source_only" / "features.csv"));
}
