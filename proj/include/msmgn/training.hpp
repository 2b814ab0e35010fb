#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "msmgn/dataset.hpp"
#include "msmgn/graphs.hpp"
#include "msmgn/nn/layers.hpp"
#include "msmgn/processor.hpp"
#include "msmgn/solver.hpp"

namespace msmgn {

/// Coarse level for multiscale models: a mesh of the same domain at a fixed
/// resolution, independent of the fine resolution.
inline constexpr double kCoarseEdgeMin = 1e-2;

/// Graph for one fine mesh: single-level for MGN schedules, with the coarse
/// mesh of the domain otherwise.
MultiGraph build_graph(const TriMesh& fine, const ChannelDomain& domain, const Schedule& schedule,
                       double coarse_edge_min = kCoarseEdgeMin);

struct TrainConfig {
  double learning_rate = 1e-4;
  /// Learning rate at the last step relative to the first (exponential decay).
  double lr_decay = 0.1;
  int steps = 10000;
  int batch = 1;
  /// Input noise std in normalized units.
  double noise_std = 0.02;
  std::uint64_t seed = 0;
  LabelMode labels = LabelMode::native;
  int log_every = 100;
  double coarse_edge_min = kCoarseEdgeMin;

  void validate() const;
  double lr_at(int step) const;
};

/// Episodes with their graphs, ready for training or evaluation.
struct PreparedEpisode {
  std::shared_ptr<const Episode> episode;
  std::shared_ptr<const MultiGraph> graph;
};

std::vector<PreparedEpisode> prepare(const std::vector<Episode>& episodes, const Schedule& schedule,
                                     double coarse_edge_min = kCoarseEdgeMin);

struct TrainRecord {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

/// Next-step trainer. Each step draws samples from a stream seeded by
/// (seed, step), so runs are reproducible and resumable.
class Trainer {
 public:
  Trainer(Model model, TrainConfig config);
  /// Resumes from a training checkpoint written by to_checkpoint().
  Trainer(const nn::Checkpoint& ckpt, TrainConfig config);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Runs until `config.steps` total steps have been taken. Throws
  /// NonFiniteError naming the step when the loss diverges.
  void train(const std::vector<PreparedEpisode>& data);
  /// Single optimization step; returns the mean loss of the batch.
  double step(const std::vector<PreparedEpisode>& data);

  Model& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  int steps_done() const { return step_; }
  const std::vector<TrainRecord>& history() const { return history_; }
  /// Mean wall time of an optimization step so far.
  double seconds_per_step() const;

  /// Model, optimizer moments and step counter.
  nn::Checkpoint to_checkpoint();

 private:
  Model model_;
  TrainConfig config_;
  nn::Adam adam_;
  int step_ = 0;
  double seconds_ = 0.0;
  std::vector<TrainRecord> history_;
};

void write_history_csv(std::ostream& out, const std::vector<TrainRecord>& history);

/// Repeated model steps from `initial`; T + 1 frames. mesh_hash and dt are left for the caller.
Trajectory rollout(Model& model, const MultiGraph& graph, const Matrix& initial, const Matrix& statics, int steps);

struct EvalRow {
  double edge_min = 0.0;
  std::size_t node_count = 0;
  std::string model;
  int mps = 0;
  std::string schedule;
  /// Next-step MSE averaged over every frame of the reference.
  double mse1 = 0.0;
  /// MSE-N: mean over the first N rollout steps (N clipped to the reference length).
  double mse10 = 0.0;
  double mse50 = 0.0;
  double sec_per_step = 0.0;
  /// Per-step rollout MSE, entry k for frame k + 1.
  std::vector<double> rollout_error;
};

/// Scores a stepper against a reference trajectory on the same mesh.
EvalRow evaluate_stepper(const Stepper& step, const Trajectory& reference);

struct EvalReport {
  std::vector<EvalRow> rows;

  /// Columns: edge_min, model, mps, schedule, mse1, mse10, mse50, sec_per_step.
  void write_csv(std::ostream& out) const;
};

/// Learned model on every mesh of the test set against the interpolated u_ref.
EvalReport evaluate(Model& model, const std::string& name, const FixedObstacleSet& testset,
                    double coarse_edge_min = kCoarseEdgeMin);
/// Classical solver through the same pipeline.
EvalReport evaluate_solver(const FixedObstacleSet& testset);

/// Next-step MSE of a model on its own episodes' labels, averaged over episodes.
double validation_mse(Model& model, const std::vector<PreparedEpisode>& data, LabelMode labels);

}  // namespace msmgn
