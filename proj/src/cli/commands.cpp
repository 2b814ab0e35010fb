#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "msmgn/analysis.hpp"
#include "msmgn/cli.hpp"

namespace msmgn {

namespace fs = std::filesystem;

namespace {

fs::path prepare_output(const RunConfig& config, const char* command) {
  const fs::path out(config.output_dir());
  fs::create_directories(out);
  std::ofstream cfg(out / fmt::format("{}_config.txt", command));
  config.write(cfg);
  return out;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<Episode> load_episodes(const RunConfig& config) {
  const std::string dir = config.dataset_dir();
  if (!fs::is_directory(dir)) throw IoError(fmt::format("dataset directory '{}' does not exist (run gen first)", dir));
  auto episodes = read_dataset(dir);
  if (episodes.empty()) throw IoError(fmt::format("dataset directory '{}' contains no scenarios", dir));
  return episodes;
}

bool finite_row(const EvalRow& r) {
  for (double v : {r.mse1, r.mse10, r.mse50}) {
    if (!std::isfinite(v) || v < 0.0) return false;
  }
  return true;
}

FixedObstacleSet eval_testset(const RunConfig& config) {
  PdeConfig pde = config.pde();
  pde.steps = config.integer("eval.steps");
  pde.validate();
  return fixed_obstacle_testset(config.integer("eval.count"), config.real("eval.edge_min_lo"),
                                config.real("eval.edge_min_hi"), config.real("eval.ref_edge_min"), pde,
                                config.unsigned_integer("seed"));
}

}  // namespace

int cmd_gen(const RunConfig& config, std::ostream& log) {
  const fs::path out = prepare_output(config, "gen");
  const PdeConfig pde = config.pde();
  const LabelMode labels = parse_label_mode(config.text("dataset.labels"));
  const auto scenarios = sample_scenarios(config.integer("dataset.scenarios"), config.unsigned_integer("seed"),
                                          config.ranges());
  const auto episodes = labels == LabelMode::high_accuracy
                            ? make_high_accuracy_dataset(scenarios, pde, config.integer("dataset.refine"))
                            : make_native_dataset(scenarios, pde);
  int status = kExitOk;
  for (const Episode& e : episodes) {
    const ChannelDomain domain = episode_domain(e);
    for (const std::string& v : mesh_invariant_violations(*e.mesh, &domain)) {
      log << fmt::format("scenario {}: mesh invariant violated: {}\n", e.id, v);
      status = kExitInvariant;
    }
  }
  const fs::path dir = out / "dataset";
  write_dataset(dir.string(), episodes);
  log << fmt::format("wrote {} scenarios ({} labels) to {}\n", episodes.size(), to_string(labels), dir.string());
  return status;
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  const auto episodes = load_episodes(config);
  const fs::path out = prepare_output(config, "train");
  const TrainConfig tc = config.train();
  const std::uint64_t seed = config.unsigned_integer("seed");
  const auto [train_idx, val_idx] =
      split_indices(static_cast<int>(episodes.size()), config.real("train.val_fraction"), seed);
  std::vector<Episode> train_set, val_set;
  for (int i : train_idx) train_set.push_back(episodes[static_cast<std::size_t>(i)]);
  for (int i : val_idx) val_set.push_back(episodes[static_cast<std::size_t>(i)]);
  if (train_set.empty()) throw ConfigError("no training scenarios left after the validation split");

  const std::string& resume = config.text("train.resume");
  std::unique_ptr<Trainer> trainer;
  if (resume.empty()) {
    trainer = std::make_unique<Trainer>(Model(config.model(), seed), tc);
  } else {
    trainer = std::make_unique<Trainer>(nn::load_checkpoint(resume), tc);
    log << fmt::format("resuming from {} at step {}\n", resume, trainer->steps_done());
  }
  const Schedule& schedule = trainer->model().schedule();
  const auto train_data = prepare(train_set, schedule, tc.coarse_edge_min);
  log << fmt::format("training {} ({} mps) on {} scenarios for {} steps\n", schedule.canonical(),
                     schedule.total_mps(), train_set.size(), tc.steps);
  try {
    trainer->train(train_data);
  } catch (const NonFiniteError& e) {
    log << "training diverged: " << e.what() << '\n';
    return kExitInvariant;
  }
  const std::string ckpt = (out / "checkpoint.bin").string();
  nn::save_checkpoint(ckpt, trainer->to_checkpoint());
  auto history = open_output(out / "history.csv");
  write_history_csv(history, trainer->history());

  auto summary = open_output(out / "train_summary.txt");
  summary << fmt::format("steps = {}\nseconds_per_step = {}\n", trainer->steps_done(), trainer->seconds_per_step());
  if (!val_set.empty()) {
    const auto val_data = prepare(val_set, schedule, tc.coarse_edge_min);
    const double val = validation_mse(trainer->model(), val_data, tc.labels);
    summary << fmt::format("validation_mse = {}\n", val);
    log << fmt::format("validation one-step MSE {:.6e}\n", val);
    if (!std::isfinite(val)) return kExitInvariant;
  }
  log << "wrote " << ckpt << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& log) {
  const fs::path out = prepare_output(config, "eval");
  const FixedObstacleSet set = eval_testset(config);
  EvalReport report;
  if (config.flag("eval.solver")) report = evaluate_solver(set);
  const std::string ckpt = config.checkpoint_path();
  if (config.flag("eval.model")) {
    if (fs::exists(ckpt)) {
      Model model = Model::from_checkpoint(nn::load_checkpoint(ckpt));
      const EvalReport learned = evaluate(model, config.text("eval.name"), set, config.real("train.coarse_edge_min"));
      report.rows.insert(report.rows.end(), learned.rows.begin(), learned.rows.end());
    } else if (!config.text("train.checkpoint").empty()) {
      throw IoError("checkpoint " + ckpt + " does not exist");
    } else {
      log << "no checkpoint at " << ckpt << ", evaluating the solver only\n";
    }
  }
  auto csv = open_output(out / "eval.csv");
  report.write_csv(csv);
  int status = kExitOk;
  for (const EvalRow& r : report.rows) {
    log << fmt::format("{:>8} edge_min {:.4g} ({} nodes): mse1 {:.4e}\n", r.model, r.edge_min, r.node_count, r.mse1);
    if (!finite_row(r)) status = kExitInvariant;
  }
  return status;
}

int cmd_analyze(const RunConfig& config, std::ostream& log) {
  const auto episodes = load_episodes(config);
  const fs::path out = prepare_output(config, "analyze") / "analysis";
  fs::create_directories(out);
  const std::string weights_name = config.text("analyze.weights");
  LaplacianWeights weights;
  if (weights_name == "unit") {
    weights = LaplacianWeights::unit;
  } else if (weights_name == "inverse_length") {
    weights = LaplacianWeights::inverse_length;
  } else {
    throw ConfigError("analyze.weights must be unit or inverse_length");
  }
  const auto cap = static_cast<std::size_t>(config.integer("analyze.cap"));
  const std::string ckpt = config.checkpoint_path();
  std::unique_ptr<Model> model;
  if (fs::exists(ckpt)) model = std::make_unique<Model>(Model::from_checkpoint(nn::load_checkpoint(ckpt)));

  int status = kExitOk;
  for (const Episode& e : episodes) {
    if (e.mesh->node_count() > cap) {
      log << fmt::format("scenario {}: {} nodes exceed the cap, skipped\n", e.id, e.mesh->node_count());
      continue;
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(config.integer("analyze.step")),
                                                e.native.steps() - 1);
    const Trajectory& labels = e.high_accuracy ? *e.high_accuracy : e.native;
    Matrix error;
    std::string source;
    if (model) {
      const MultiGraph g = build_graph(*e.mesh, episode_domain(e), model->schedule(),
                                       config.real("train.coarse_edge_min"));
      error = model->predict(g, labels.frames[k], *e.statics) - labels.frames[k + 1];
      source = "model";
    } else {
      error = e.native.frames[k + 1] - labels.frames[k + 1];
      source = e.high_accuracy ? "native-vs-labels" : "native-vs-native";
    }
    const SpectralBasis basis = spectral_basis(graph_laplacian(*e.mesh, weights), cap);
    const PowerSpectrum spectrum = gft_spectrum(basis, error);
    const double norm2 = error.squaredNorm();
    if (std::abs(spectrum.total() - norm2) > 1e-10 * std::max(norm2, 1e-300)) {
      log << fmt::format("scenario {}: Parseval violated ({} vs {})\n", e.id, spectrum.total(), norm2);
      status = kExitInvariant;
    }
    auto csv = open_output(out / fmt::format("spectrum_{}.csv", e.id));
    write_spectrum_csv(csv, spectrum);
    log << fmt::format("scenario {}: {} error spectrum at frame {}, total power {:.4e}\n", e.id, source, k,
                       spectrum.total());
  }

  if (config.flag("analyze.curve")) {
    const FixedObstacleSet set = eval_testset(config);
    const EvalReport solver = evaluate_solver(set);
    std::vector<BaselinePoint> baseline;
    for (const EvalRow& r : solver.rows) baseline.push_back({r.edge_min, r.node_count, r.mse1});
    std::vector<EvalReport> reports;
    if (model) reports.push_back(evaluate(*model, config.text("eval.name"), set, config.real("train.coarse_edge_min")));
    auto csv = open_output(out / "convergence.csv");
    write_convergence_csv(csv, baseline, reports);
    if (baseline.size() >= 2) log << fmt::format("solver log-log slope {:.3f}\n", loglog_slope(baseline));
  }
  return status;
}

int cmd_bench(const RunConfig& config, std::ostream& log) {
  const fs::path out = prepare_output(config, "bench");
  const ChannelDomain domain = fixed_obstacle_params().domain();
  const std::uint64_t seed = config.unsigned_integer("seed");
  const std::string ckpt = config.checkpoint_path();
  Model model = fs::exists(ckpt) ? Model::from_checkpoint(nn::load_checkpoint(ckpt)) : Model(config.model(), seed);
  const TriMesh coarse = generate_mesh(domain, config.real("train.coarse_edge_min"));
  std::vector<StepTiming> rows;
  for (double r : config.reals("bench.resolutions")) {
    const TriMesh fine = generate_mesh(domain, r);
    const MultiGraph graph = make_multigraph(fine, coarse);
    auto timing = timing_benchmark(model, graph, config.integer("bench.repeats"), seed);
    double h = 0.0, l = 0.0;
    for (StepTiming& t : timing) {
      t.edge_min = r;
      if (t.kind == "H") h = t.seconds;
      if (t.kind == "L") l = t.seconds;
    }
    log << fmt::format("edge_min {:.4g}: {} fine / {} coarse nodes, H {:.3e} s, L {:.3e} s\n", r, fine.node_count(),
                       coarse.node_count(), h, l);
    rows.insert(rows.end(), timing.begin(), timing.end());
  }
  auto csv = open_output(out / "timing.csv");
  write_timing_csv(csv, rows);
  return kExitOk;
}

}  // namespace msmgn
