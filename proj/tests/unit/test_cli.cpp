#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "msmgn/cli.hpp"

using namespace msmgn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("msmgn_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  std::istringstream text(R"(
pde.steps = 5
dataset.scenarios = 3
dataset.edge_min_lo = 0.02
dataset.edge_min_hi = 0.03
dataset.u_hi = 2
model.latent = 8
model.hidden = 8
model.normalizer_accumulations = 5
train.steps = 8
train.log_every = 1
train.val_fraction = 0.34
eval.count = 2
eval.edge_min_lo = 0.02
eval.edge_min_hi = 0.04
eval.ref_edge_min = 0.01
eval.steps = 3
analyze.curve = false
bench.resolutions = 0.03
bench.repeats = 1
)");
  c.load(text);
  c.set("output_dir", out.string());
  return c;
}

}  // namespace

TEST_CASE("run config parsing") {
  RunConfig c;
  CHECK(c.text("model.schedule") == "p=15H (U=0,D=0)");
  CHECK(c.real("train.learning_rate") == 1e-4);
  CHECK(c.integer("dataset.refine") == 4);
  for (const ConfigKey& k : RunConfig::keys()) CHECK_NOTHROW(c.text(k.name));
  CHECK(c.pde().mu == 1e-3);
  CHECK(c.train().noise_std == 0.02);
  CHECK(c.ranges().u_hi == 12.0);

  std::istringstream good("# comment\n  seed = 42  # trailing\n\nmodel.schedule = p=1H 5L 1H (U=1,D=1)\n");
  c.load(good);
  CHECK(c.unsigned_integer("seed") == 42);
  CHECK(c.model().schedule == "p=1H 5L 1H (U=1,D=1)");
  c.assign("bench.resolutions=0.1, 0.2,0.3");
  CHECK(c.reals("bench.resolutions") == std::vector<double>{0.1, 0.2, 0.3});

  std::istringstream unknown("seed = 1\nnot.a.key = 3\n");
  try {
    c.load(unknown, "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }
  std::istringstream no_eq("seed 1\n");
  CHECK_THROWS_AS(c.load(no_eq), ParseError);
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  c.set("train.steps", "ten");
  CHECK_THROWS_AS(c.train(), ConfigError);
  c.set("model.schedule", "p=1X");
  CHECK_THROWS_AS(c.model(), ParseError);
  c.set("eval.solver", "maybe");
  CHECK_THROWS_AS(c.flag("eval.solver"), ConfigError);
  CHECK_THROWS_AS(RunConfig().load_file("/nonexistent/run.cfg"), IoError);

  std::ostringstream dump;
  RunConfig().write(dump);
  RunConfig back;
  std::istringstream in(dump.str());
  back.load(in);
  for (const ConfigKey& k : RunConfig::keys()) CHECK(back.text(k.name) == k.default_value);
}

TEST_CASE("gen is reproducible and records scenario parameters") {
  const auto a = temp_dir("gen_a"), b = temp_dir("gen_b");
  std::ostringstream log;
  RunConfig ca = small_config(a), cb = small_config(b);
  for (RunConfig* c : {&ca, &cb}) {
    c->set("seed", "7");
    c->set("dataset.labels", "high-accuracy");
    c->set("dataset.refine", "2");
  }
  REQUIRE(cmd_gen(ca, log) == kExitOk);
  REQUIRE(cmd_gen(cb, log) == kExitOk);
  for (int id = 0; id < 3; ++id) {
    for (const char* f : {"mesh.msh", "trajectory.bin", "labels_ha.bin", "meta"}) {
      const auto rel = fs::path("dataset") / ("scenario_" + std::to_string(id)) / f;
      REQUIRE(fs::exists(a / rel));
      CHECK(slurp(a / rel) == slurp(b / rel));
    }
  }
  const std::string meta = slurp(a / "dataset" / "scenario_0" / "meta");
  for (const char* key : {"radius=", "cx=", "cy=", "u_mean=", "edge_min=", "mu=", "refinement=2"}) {
    CHECK(meta.find(key) != std::string::npos);
  }
  CHECK(fs::exists(a / "gen_config.txt"));
  RunConfig native = small_config(temp_dir("gen_c"));
  REQUIRE(cmd_gen(native, log) == kExitOk);
  CHECK_FALSE(fs::exists(fs::path(native.output_dir()) / "dataset" / "scenario_0" / "labels_ha.bin"));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(native.output_dir());
}

TEST_CASE("train, resume, eval, analyze and bench") {
  const auto dir = temp_dir("pipeline");
  std::ostringstream log;
  RunConfig c = small_config(dir);
  c.set("model.schedule", "p=1H 1L 1H (U=1,D=1)");
  c.set("train.coarse_edge_min", "0.025");
  REQUIRE(cmd_gen(c, log) == kExitOk);

  const auto missing = temp_dir("pipeline_missing");
  RunConfig m = c;
  m.set("dataset.dir", (missing / "nothing").string());
  CHECK_THROWS_AS(cmd_train(m, log), IoError);

  REQUIRE(cmd_train(c, log) == kExitOk);
  const std::string full = slurp(dir / "checkpoint.bin");
  CHECK(!full.empty());
  CHECK(slurp(dir / "history.csv").rfind("step,loss,learning_rate,seconds\n0,", 0) == 0);
  CHECK(slurp(dir / "train_summary.txt").find("validation_mse") != std::string::npos);

  // Resume: 4 steps into a second directory, then continue to 8.
  const auto half = temp_dir("pipeline_half");
  RunConfig h = c;
  h.set("output_dir", half.string());
  h.set("dataset.dir", (dir / "dataset").string());
  h.set("train.steps", "4");
  h.set("train.lr_decay", "1");
  h.set("model.normalizer_accumulations", "3");
  RunConfig f = h;
  f.set("train.steps", "8");
  f.set("output_dir", (half / "full").string());
  REQUIRE(cmd_train(f, log) == kExitOk);
  REQUIRE(cmd_train(h, log) == kExitOk);
  RunConfig r = f;
  r.set("output_dir", (half / "resumed").string());
  r.set("train.resume", (half / "checkpoint.bin").string());
  REQUIRE(cmd_train(r, log) == kExitOk);
  CHECK(slurp(half / "resumed" / "checkpoint.bin") == slurp(half / "full" / "checkpoint.bin"));

  REQUIRE(cmd_eval(c, log) == kExitOk);
  const std::string eval = slurp(dir / "eval.csv");
  CHECK(eval.rfind("edge_min,model,mps,schedule,mse1,mse10,mse50,sec_per_step\n", 0) == 0);
  CHECK(eval.find(",solver,") != std::string::npos);
  CHECK(eval.find(",model,5,") != std::string::npos);

  REQUIRE(cmd_analyze(c, log) == kExitOk);
  CHECK(fs::exists(dir / "analysis" / "spectrum_0.csv"));

  REQUIRE(cmd_bench(c, log) == kExitOk);
  const std::string timing = slurp(dir / "timing.csv");
  for (const char* kind : {",H,", ",L,", ",D,", ",U,", ",forward,", ",train,"}) {
    CHECK(timing.find(kind) != std::string::npos);
  }
  fs::remove_all(dir);
  fs::remove_all(half);
}

TEST_CASE("analyze without a model compares identical trajectories") {
  const auto dir = temp_dir("analyze_zero");
  std::ostringstream log;
  RunConfig c = small_config(dir);
  REQUIRE(cmd_gen(c, log) == kExitOk);
  REQUIRE(cmd_analyze(c, log) == kExitOk);
  std::ifstream in(dir / "analysis" / "spectrum_1.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "n,lambda_n,power");
  int rows = 0;
  while (std::getline(in, line)) {
    CHECK(line.substr(line.rfind(',') + 1) == "0");
    ++rows;
  }
  CHECK(rows > 10);
  fs::remove_all(dir);
}
