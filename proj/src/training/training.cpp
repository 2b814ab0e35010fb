#include "msmgn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include <fmt/format.h>

namespace msmgn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string block_name(const char* kind, std::size_t k) { return fmt::format("adam.{}.{}", kind, k); }

const std::string& meta_value(const nn::Checkpoint& ckpt, const std::string& key) {
  const auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw ParseError("training checkpoint is missing meta key " + key);
  return it->second;
}

}  // namespace

MultiGraph build_graph(const TriMesh& fine, const ChannelDomain& domain, const Schedule& schedule,
                       double coarse_edge_min) {
  if (!schedule.multiscale()) return make_multigraph(fine);
  return make_multigraph(fine, generate_mesh(domain, coarse_edge_min));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0, 1]");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (noise_std < 0.0 || !std::isfinite(noise_std)) throw ConfigError("noise_std must be non-negative");
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  if (!(coarse_edge_min > 0.0)) throw ConfigError("coarse_edge_min must be positive");
}

double TrainConfig::lr_at(int step) const {
  if (steps <= 1) return learning_rate;
  return learning_rate * std::pow(lr_decay, static_cast<double>(step) / static_cast<double>(steps - 1));
}

std::vector<PreparedEpisode> prepare(const std::vector<Episode>& episodes, const Schedule& schedule,
                                     double coarse_edge_min) {
  std::vector<PreparedEpisode> out;
  out.reserve(episodes.size());
  for (const Episode& e : episodes) {
    auto ep = std::make_shared<const Episode>(e);
    auto graph = std::make_shared<const MultiGraph>(build_graph(*e.mesh, episode_domain(e), schedule, coarse_edge_min));
    out.push_back({std::move(ep), std::move(graph)});
  }
  return out;
}

namespace {

void check_warmup(const Model& model, const TrainConfig& config) {
  const std::int64_t samples = static_cast<std::int64_t>(config.steps) * config.batch;
  if (model.config().normalizer_accumulations > samples) {
    throw ConfigError(fmt::format("normalizer warm-up ({} samples) exceeds the training budget ({} samples)",
                                  model.config().normalizer_accumulations, samples));
  }
}

}  // namespace

Trainer::Trainer(Model model, TrainConfig config) : model_(std::move(model)), config_(std::move(config)) {
  config_.validate();
  check_warmup(model_, config_);
  adam_ = nn::Adam(model_.parameters());
}

Trainer::Trainer(const nn::Checkpoint& ckpt, TrainConfig config)
    : model_(Model::from_checkpoint(ckpt)), config_(std::move(config)) {
  config_.validate();
  check_warmup(model_, config_);
  adam_ = nn::Adam(model_.parameters());
  auto& m = adam_.first_moments();
  auto& v = adam_.second_moments();
  for (std::size_t k = 0; k < m.size(); ++k) {
    const Matrix& mk = ckpt.get(block_name("m", k));
    const Matrix& vk = ckpt.get(block_name("v", k));
    if (mk.rows() != m[k].rows() || mk.cols() != m[k].cols() || vk.rows() != v[k].rows() ||
        vk.cols() != v[k].cols()) {
      throw ParseError(fmt::format("optimizer block {} has the wrong shape", k));
    }
    m[k] = mk;
    v[k] = vk;
  }
  adam_.set_steps(std::stoll(meta_value(ckpt, "adam.t")));
  step_ = std::stoi(meta_value(ckpt, "train.step"));
}

double Trainer::step(const std::vector<PreparedEpisode>& data) {
  if (data.empty()) throw ConfigError("training needs at least one episode");
  const auto start = Clock::now();
  std::mt19937_64 rng(mix_seed(config_.seed, static_cast<std::uint64_t>(step_)));
  std::uniform_int_distribution<std::size_t> pick_episode(0, data.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  adam_.zero_grad();
  double total = 0.0;
  const int width = model_.config().state_width;
  for (int b = 0; b < config_.batch; ++b) {
    const PreparedEpisode& pe = data[pick_episode(rng)];
    const Trajectory& traj = pe.episode->frames(config_.labels);
    if (traj.steps() == 0) throw ConfigError(fmt::format("episode {} has no steps", pe.episode->id));
    std::uniform_int_distribution<std::size_t> pick_step(0, traj.steps() - 1);
    const std::size_t t = pick_step(rng);
    const Matrix& state = traj.frames[t];
    const Matrix& target = traj.frames[t + 1];
    const Matrix& statics = *pe.episode->statics;

    model_.update_normalizers(*pe.graph, state, statics, target);

    Matrix noise = Matrix::Zero(state.rows(), state.cols());
    if (config_.noise_std > 0.0) {
      const RowVector scale = model_.input_normalizer().std().head(width) * config_.noise_std;
      const auto& prescribed = *pe.graph->prescribed;
      for (Eigen::Index i = 0; i < noise.rows(); ++i) {
        for (Eigen::Index j = 0; j < noise.cols(); ++j) {
          const double z = normal(rng);
          if (!prescribed[static_cast<std::size_t>(i)]) noise(i, j) = scale(j) * z;
        }
      }
    }

    try {
      nn::Tape tape;
      const nn::Var loss = model_.loss(tape, *pe.graph, state, statics, target, &noise);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) throw NonFiniteError("training loss is not finite");
      total += value;
      tape.backward(nn::scale(loss, 1.0 / config_.batch));
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(fmt::format("{} at step {}", e.what(), step_));
    }
  }
  const double lr = config_.lr_at(step_);
  adam_.step(lr);
  for (nn::Parameter* p : model_.parameters()) {
    if (!p->value.allFinite()) throw NonFiniteError(fmt::format("parameter {} diverged at step {}", p->name, step_));
  }
  const double loss = total / config_.batch;
  const double elapsed = seconds_since(start);
  seconds_ += elapsed;
  if (step_ % config_.log_every == 0 || step_ + 1 == config_.steps) history_.push_back({step_, loss, lr, elapsed});
  ++step_;
  return loss;
}

void Trainer::train(const std::vector<PreparedEpisode>& data) {
  while (step_ < config_.steps) step(data);
}

double Trainer::seconds_per_step() const { return step_ == 0 ? 0.0 : seconds_ / step_; }

nn::Checkpoint Trainer::to_checkpoint() {
  nn::Checkpoint c = model_.to_checkpoint();
  const auto& m = adam_.first_moments();
  const auto& v = adam_.second_moments();
  for (std::size_t k = 0; k < m.size(); ++k) c.add(block_name("m", k), m[k]);
  for (std::size_t k = 0; k < v.size(); ++k) c.add(block_name("v", k), v[k]);
  c.meta["adam.t"] = std::to_string(adam_.steps());
  c.meta["train.step"] = std::to_string(step_);
  c.meta["train.seed"] = std::to_string(config_.seed);
  c.meta["train.labels"] = std::string(to_string(config_.labels));
  c.meta["train.learning_rate"] = fmt::format("{}", config_.learning_rate);
  c.meta["train.batch"] = std::to_string(config_.batch);
  c.meta["train.noise_std"] = fmt::format("{}", config_.noise_std);
  return c;
}

void write_history_csv(std::ostream& out, const std::vector<TrainRecord>& history) {
  out << "step,loss,learning_rate,seconds\n";
  for (const TrainRecord& r : history) out << fmt::format("{},{},{},{}\n", r.step, r.loss, r.learning_rate, r.seconds);
}

Trajectory rollout(Model& model, const MultiGraph& graph, const Matrix& initial, const Matrix& statics, int steps) {
  if (steps < 0) throw ConfigError("rollout length must be non-negative");
  Trajectory traj;
  traj.frames.reserve(static_cast<std::size_t>(steps) + 1);
  traj.frames.push_back(initial);
  for (int k = 0; k < steps; ++k) {
    Matrix next = model.predict(graph, traj.frames.back(), statics);
    if (!next.allFinite()) throw NonFiniteError(fmt::format("rollout diverged at step {}", k + 1));
    traj.frames.push_back(std::move(next));
  }
  return traj;
}

EvalRow evaluate_stepper(const Stepper& step, const Trajectory& reference) {
  if (reference.steps() == 0) throw ConfigError("reference trajectory has no steps");
  EvalRow row;
  row.node_count = reference.node_count();
  int calls = 0;
  double seconds = 0.0;
  const Stepper timed = [&](const Matrix& s) {
    const auto start = Clock::now();
    Matrix next = step(s);
    seconds += seconds_since(start);
    ++calls;
    return next;
  };
  row.mse1 = one_step_mse(timed, reference);
  row.sec_per_step = seconds / calls;

  Matrix state = reference.frames[0];
  for (std::size_t t = 1; t <= reference.steps(); ++t) {
    state = step(state);
    row.rollout_error.push_back((state - reference.frames[t]).squaredNorm() / static_cast<double>(state.size()));
  }
  auto mse_n = [&](std::size_t n) {
    n = std::min(n, row.rollout_error.size());
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += row.rollout_error[k];
    return s / static_cast<double>(n);
  };
  row.mse10 = mse_n(10);
  row.mse50 = mse_n(50);
  return row;
}

void EvalReport::write_csv(std::ostream& out) const {
  std::vector<const EvalRow*> sorted;
  for (const EvalRow& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const EvalRow* a, const EvalRow* b) { return a->edge_min < b->edge_min; });
  out << "edge_min,model,mps,schedule,mse1,mse10,mse50,sec_per_step\n";
  for (const EvalRow* r : sorted) {
    out << fmt::format("{},{},{},\"{}\",{},{},{},{}\n", r->edge_min, r->model, r->mps, r->schedule, r->mse1, r->mse10,
                       r->mse50, r->sec_per_step);
  }
}

EvalReport evaluate(Model& model, const std::string& name, const FixedObstacleSet& testset, double coarse_edge_min) {
  EvalReport report;
  for (std::size_t k = 0; k < testset.meshes.size(); ++k) {
    const TriMesh& mesh = *testset.meshes[k];
    const MultiGraph graph = build_graph(mesh, testset.domain, model.schedule(), coarse_edge_min);
    const auto statics = testset.statics_on(k);
    EvalRow row = evaluate_stepper([&](const Matrix& s) { return model.predict(graph, s, *statics); },
                                   testset.reference_on(k));
    row.edge_min = testset.resolutions[k];
    row.model = name;
    row.mps = model.schedule().total_mps();
    row.schedule = model.schedule().canonical();
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport evaluate_solver(const FixedObstacleSet& testset) {
  EvalReport report;
  for (std::size_t k = 0; k < testset.meshes.size(); ++k) {
    const TriMesh& mesh = *testset.meshes[k];
    const AdvectionDiffusion solver(mesh, *testset.statics_on(k), testset.pde.mu, testset.pde.cfl);
    const double dt = testset.reference.dt;
    EvalRow row = evaluate_stepper([&](const Matrix& s) { return solver.advance(s, dt); }, testset.reference_on(k));
    row.edge_min = testset.resolutions[k];
    row.model = "solver";
    report.rows.push_back(std::move(row));
  }
  return report;
}

double validation_mse(Model& model, const std::vector<PreparedEpisode>& data, LabelMode labels) {
  if (data.empty()) throw ConfigError("validation needs at least one episode");
  double total = 0.0;
  for (const PreparedEpisode& pe : data) {
    const Matrix& statics = *pe.episode->statics;
    total += one_step_mse([&](const Matrix& s) { return model.predict(*pe.graph, s, statics); },
                          pe.episode->frames(labels));
  }
  return total / static_cast<double>(data.size());
}

}  // namespace msmgn
