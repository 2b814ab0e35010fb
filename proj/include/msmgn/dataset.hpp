#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msmgn/mesh.hpp"
#include "msmgn/solver.hpp"

namespace msmgn {

/// One channel scenario: obstacle, inflow speed and mesh resolution.
struct ScenarioParams {
  int id = 0;
  double radius = 0.05;
  Vec2 center{0.275, 0.25};
  double u_mean = 0.85;
  double edge_min = 1e-2;
  std::uint64_t seed = 0;

  ChannelDomain domain() const;
};

/// Sampling ranges. Defaults are the training distribution; desk-scale runs
/// narrow edge_min.
struct ScenarioRanges {
  double radius_lo = 0.02, radius_hi = 0.08;
  double cx_lo = 0.15, cx_hi = 0.4;
  double cy_lo = 0.1, cy_hi = 0.3;
  double u_lo = 0.2, u_hi = 12.0;
  double edge_min_lo = 1e-3, edge_min_hi = 1e-2;  // log-uniform

  void validate() const;
};

/// n independent draws; edge_min is log-uniform, the rest uniform.
std::vector<ScenarioParams> sample_scenarios(int n, std::uint64_t seed, const ScenarioRanges& ranges = {});

enum class LabelMode { native, high_accuracy };

std::string_view to_string(LabelMode mode);
LabelMode parse_label_mode(std::string_view text);

/// A simulated trajectory with everything needed to train on it.
struct Episode {
  int id = 0;
  std::shared_ptr<const TriMesh> mesh;
  /// N x 2 advecting velocity at the nodes.
  std::shared_ptr<const Matrix> statics;
  /// Solver output on `mesh`.
  Trajectory native;
  /// Finer-mesh solution interpolated onto `mesh` at every frame.
  std::optional<Trajectory> high_accuracy;
  int refinement = 0;
  std::map<std::string, std::string> meta;

  const Trajectory& frames(LabelMode mode) const;
};

/// Domain recorded in an episode's meta (channel with obstacle, or the unit
/// square for Gaussian cases).
ChannelDomain episode_domain(const Episode& episode);

/// Channel scenario at its own resolution. With refinement >= 1 the scenario
/// is also simulated at edge_min / refinement and interpolated back.
Episode simulate_scenario(const ScenarioParams& params, const PdeConfig& pde, int refinement = 0);

std::vector<Episode> make_native_dataset(std::span<const ScenarioParams> scenarios, const PdeConfig& pde);
std::vector<Episode> make_high_accuracy_dataset(std::span<const ScenarioParams> scenarios, const PdeConfig& pde,
                                                int refinement = 4);

/// Free-space advected and diffused Gaussian on the unit square, the toy case
/// with an analytic solution.
struct GaussianCase {
  Vec2 x0{0.3, 0.5};
  double sigma0 = 0.1;
  Vec2 velocity{0.5, 0.0};
  double mu = 1e-3;

  double value(Vec2 p, double t) const;
  Matrix field(std::span<const Vec2> points, double t) const;
};

struct GaussianRanges {
  double x_lo = 0.2, x_hi = 0.4;
  double y_lo = 0.35, y_hi = 0.65;
  double sigma_lo = 0.05, sigma_hi = 0.1;
  double speed_lo = 0.5, speed_hi = 2.0;
  double mu = 1e-3;
};

std::vector<GaussianCase> sample_gaussian_cases(int n, std::uint64_t seed, const GaussianRanges& ranges = {});

/// Solver trajectory of a Gaussian case from the exact initial state; inflow
/// nodes are held at their initial values. With refinement >= 1 the case is
/// also simulated at edge_min / refinement and interpolated back.
Episode simulate_gaussian(const GaussianCase& c, double edge_min, double dt, int steps, int refinement = 0,
                          int id = 0);

/// Every frame of `fine` interpolated onto the nodes of `coarse`.
Trajectory interpolate_trajectory(const TriMesh& fine_mesh, const Trajectory& fine, const TriMesh& coarse);

/// (state_t, state_t+1) pair on one mesh.
struct Sample {
  std::shared_ptr<const TriMesh> mesh;
  std::shared_ptr<const Matrix> statics;
  Matrix input;
  Matrix target;
  LabelMode provenance = LabelMode::native;
  int episode = 0;
  int step = 0;
};

/// T pairs per episode, in time order. Throws ConfigError when the requested
/// labels are absent.
std::vector<Sample> make_samples(const Episode& episode, LabelMode mode);

/// Seeded shuffle of [0, n) split into (train, test) with the given test fraction.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double test_fraction, std::uint64_t seed);

/// Fixed obstacle (R = 0.05, C = (0.275, 0.25), U = 0.85) at many
/// resolutions from constant initial conditions. The finest mesh is the
/// reference; its trajectory is u_ref.
struct FixedObstacleSet {
  ChannelDomain domain;
  PdeConfig pde;
  std::vector<double> resolutions;  // descending, excluding the reference
  std::vector<std::shared_ptr<const TriMesh>> meshes;
  std::shared_ptr<const TriMesh> reference_mesh;
  Trajectory reference;

  /// u_ref interpolated onto mesh k.
  Trajectory reference_on(std::size_t k) const;
  std::shared_ptr<const Matrix> statics_on(std::size_t k) const;
};

/// `count` resolutions log-uniform in [lo, hi], plus the reference at ref_edge_min.
FixedObstacleSet fixed_obstacle_testset(int count, double lo, double hi, double ref_edge_min, const PdeConfig& pde,
                                        std::uint64_t seed);
/// Same with explicit resolutions.
FixedObstacleSet fixed_obstacle_testset(std::vector<double> resolutions, double ref_edge_min, const PdeConfig& pde);

ScenarioParams fixed_obstacle_params();

/// Directory layout: scenario_<id>/{mesh.msh, trajectory.bin, labels_ha.bin, meta}.
void write_dataset(const std::string& dir, std::span<const Episode> episodes);
std::vector<Episode> read_dataset(const std::string& dir);

}  // namespace msmgn
