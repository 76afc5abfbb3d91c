#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "cometnet/cli.hpp"
#include "cometnet/error.hpp"
#include "cometnet/io.hpp"

using namespace cometnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cometnet_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small but complete pipeline configuration on the forecasting fixture.
RunConfig small_run(const fs::path& csv) {
  RunConfig c;
  c.data = csv;
  c.lookback = 48;
  c.horizon = 24;
  c.horizons = {12, 24};
  c.model.embed_dim = 8;
  c.training.max_epochs = 2;
  c.training.batch = 64;
  c.seed = 7;
  c.propagate_seed();
  return c;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(COMETNET_TOOL) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Pipeline {
  fs::path root, csv, lib, model, eval;
  RunConfig config;
};

const Pipeline& pipeline() {
  static const Pipeline p = [] {
    Pipeline p;
    p.root = fresh_dir("pipeline");
    p.csv = p.root / "series.csv";
    cmd_synth(SynthKind::forecasting, 1500, 3, 0.05, p.csv);
    p.config = small_run(p.csv);
    p.lib = p.root / "lib";
    p.model = p.root / "model";
    p.eval = p.root / "eval";
    for (const auto& d : {p.lib, p.model, p.eval}) fs::create_directories(d);
    std::ostringstream log;
    cmd_extract(p.config, p.lib, log);
    cmd_train(p.config, p.lib, p.model, log);
    cmd_eval(p.config, p.model, p.eval, log);
    return p;
  }();
  return p;
}

}  // namespace

TEST_CASE("defaults follow the reference training setup") {
  const RunConfig c;
  CHECK(c.extraction.k == 10);
  CHECK(c.model.embed_dim == 256);
  CHECK(c.training.lr == 1e-3);
  CHECK(c.training.batch == 256);
  CHECK(c.training.patience == 7);
  CHECK(c.lookback == 96);
}

TEST_CASE("run config round trips through text and JSON") {
  RunConfig c;
  c.data = "data/ETTh2.csv";
  c.split_mode = SplitMode::ett;
  c.grouping = Grouping::kdfh;
  c.horizons = {96, 192, 336, 720};
  c.horizon = 720;
  c.extraction.sigma = 2.5;
  c.extraction.occurrences = OccurrenceMode::merged;
  c.model.separate_fusion = true;
  c.training.lr = 3e-4;
  c.seed = 99;
  c.propagate_seed();
  CHECK(RunConfig::from_text(c.to_text()) == c);
  CHECK(RunConfig::from_json(c.to_json()) == c);
  CHECK(RunConfig::from_text(RunConfig{}.to_text()) == RunConfig{});
  CHECK(RunConfig::from_text("") == RunConfig{});
}

TEST_CASE("config text errors name the line") {
  try {
    RunConfig::from_text("# comment\nwindow.lookback = 48\nwindow.lookbak = 3\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("window.lookbak") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_text("window.lookback 48"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("window.lookback = -4"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("model.separate_fusion = maybe"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("window.horizons = 96, 800"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("grouping.mode = cluster"), ConfigError);
}

TEST_CASE("single seed and K reach every component") {
  RunConfig c;
  set_config_value(c, "run.seed", "5");
  set_config_value(c, "extract.k", "4");
  CHECK(c.extraction.seed == 5);
  CHECK(c.model.seed == 5);
  CHECK(c.training.seed == 5);
  CHECK(c.model.experts == 4);
  set_config_value(c, "extract.sigma", "auto");
  CHECK_FALSE(c.extraction.sigma.has_value());
  set_config_value(c, "extract.sigma", "0.5");
  CHECK(c.extraction.sigma == 0.5);
}

TEST_CASE("parallel_for runs each index once and propagates errors") {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw DataError("boom");
                               }),
                  DataError);
}

TEST_CASE("exit codes by error category") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(NumericError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("missing data path is a config error naming the path") {
  RunConfig c;
  c.data = "/nonexistent/series.csv";
  try {
    std::ostringstream log;
    cmd_extract(c, fresh_dir("missing"), log);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/series.csv") != std::string::npos);
  }
}

TEST_CASE("pipeline writes every artifact") {
  const auto& p = pipeline();
  CHECK(fs::exists(p.lib / "extract_manifest.json"));
  CHECK(fs::exists(p.lib / "library_0_value.json"));
  CHECK(fs::exists(p.model / "model_0_value.ckpt"));
  CHECK(fs::exists(p.model / "train_manifest.json"));
  const auto report = read_json(p.model / "report_0_value.json");
  CHECK(report.at("phases").size() == 3);
  CHECK(report.at("run_config") == p.config.to_json());
  const auto lib = MotifLibrary::load(p.lib / "library_0_value.json");
  CHECK(report.at("experts") == lib.motifs.size());
  if (lib.motifs.size() != p.config.extraction.k)
    CHECK(report.at("warnings").size() == 1);
  for (const auto& entry : fs::directory_iterator(p.model))
    CHECK(entry.path().extension() != ".tmp");
}

TEST_CASE("eval writes the metrics table") {
  const auto& p = pipeline();
  const auto csv = read_file(p.eval / "metrics.csv");
  CHECK(csv.rfind("horizon,model_mse,model_mae,naive_mse,linear_mse\n", 0) == 0);
  const auto metrics = read_json(p.eval / "metrics.json").at("metrics");
  REQUIRE(metrics.size() == 2);
  CHECK(metrics[0].at("horizon") == 12);
  CHECK(metrics[1].at("horizon") == 24);
  CHECK(metrics[0].at("model_mse").get<double>() > 0.0);
  CHECK(metrics[0].at("naive_mse").get<double>() < metrics[1].at("naive_mse").get<double>());
}

TEST_CASE("eval rejects horizons beyond the checkpoint") {
  const auto& p = pipeline();
  auto c = p.config;
  c.horizon = 48;
  c.horizons = {48};
  CHECK_THROWS_AS(evaluate(c, p.model), ConfigError);
}

TEST_CASE("extract and train are byte-identical on rerun") {
  const auto& p = pipeline();
  const auto lib2 = fresh_dir("rerun_lib");
  const auto model2 = fresh_dir("rerun_model");
  std::ostringstream log;
  cmd_extract(p.config, lib2, log);
  cmd_train(p.config, lib2, model2, log);
  for (const auto* name : {"extract_manifest.json", "library_0_value.json"})
    CHECK(read_file(p.lib / name) == read_file(lib2 / name));
  for (const auto* name : {"train_manifest.json", "model_0_value.ckpt", "report_0_value.json"})
    CHECK(read_file(p.model / name) == read_file(model2 / name));
}

TEST_CASE("train rejects a library built for other channels") {
  const auto& p = pipeline();
  const auto dir = fresh_dir("mismatch");
  auto manifest = read_json(p.lib / "extract_manifest.json");
  manifest["channels"] = {"other"};
  atomic_write(dir / "extract_manifest.json", dump_json(manifest));
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train(p.config, dir, fresh_dir("mismatch_out"), log), DataError);
}

TEST_CASE("span export covers every occurrence within bounds") {
  MotifLibrary lib;
  lib.series_length = 100;
  for (std::size_t k = 0; k < 2; ++k) {
    Motif m;
    m.scale = 10;
    m.values.assign(10, 0.0);
    m.occurrences = {0, 40, 90};
    lib.motifs.push_back(m);
  }
  const auto spans = library_spans(lib);
  CHECK(spans.size() == 6);
  for (const auto& s : spans) CHECK(s.at("end").get<std::size_t>() <= 100);
  CHECK(spans_csv(spans).rfind("start,end,motif_id\n0,10,0\n", 0) == 0);
  lib.motifs[1].occurrences.push_back(95);
  CHECK_THROWS_AS(library_spans(lib), DataError);
}

TEST_CASE("prediction trace has one row per horizon step") {
  const auto& p = pipeline();
  const auto trace = prediction_trace(p.config, p.model, 0, 5);
  CHECK(trace.size() == p.config.horizon);
  CHECK(trace_csv(trace).rfind("t,truth,prediction\n", 0) == 0);
  CHECK_THROWS_AS(prediction_trace(p.config, p.model, 3, 0), ConfigError);
}

TEST_CASE("command-line exit codes") {
  const auto dir = fresh_dir("tool");
  const auto csv = (dir / "s.csv").string();
  CHECK(run_tool("synth --kind motifs --length 800 --out " + csv) == 0);
  CHECK(fs::exists(dir / "s.truth.json"));
  CHECK(run_tool("extract --data /nonexistent.csv --out " + (dir / "x").string()) == 2);
  CHECK(run_tool("extract --data " + csv + " --out " + (dir / "x").string() + " --set extract.k=0") == 2);
  CHECK(run_tool("export pictures --input " + csv + " --out " + (dir / "y.json").string()) == 2);
  CHECK(run_tool("train --data " + csv + " --library " + dir.string() + " --out " +
                 (dir / "m").string()) == 3);
  CHECK(run_tool("frobnicate") == 2);
  CHECK(run_tool("extract --data " + csv + " --k 2 --out " + (dir / "lib").string() +
                 " --write-config " + (dir / "run.cfg").string()) == 0);
  CHECK(RunConfig::load(dir / "run.cfg").extraction.k == 2);
}
