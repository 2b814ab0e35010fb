#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "msmgn/mesh.hpp"

namespace msmgn {

/// Passive scalar c transported by a steady potential flow:
/// dc/dt + a . grad c = mu lap c, Dirichlet c = c_in(y) on the inflow side,
/// no diffusive flux on walls and obstacle, free outflow.
struct PdeConfig {
  double mu = 1e-3;
  double u_mean = 1.0;
  double dt = 0.01;
  int steps = 200;
  /// Inflow profile c_in(y) = sin^2(pi * stripes * y / height).
  int inflow_stripes = 2;
  /// Substep limit as a fraction of the explicit positivity bound.
  double cfl = 0.5;

  void validate() const;
};

/// Uniform stream u_mean past the obstacle (unbounded potential-flow solution),
/// evaluated at each point. Without an obstacle the stream is uniform.
Matrix potential_flow(const ChannelDomain& domain, double u_mean, std::span<const Vec2> points);

double inflow_value(const ChannelDomain& domain, const PdeConfig& config, double y);

/// Zero field with inflow nodes set to the inflow profile.
Matrix initial_state(const TriMesh& mesh, const ChannelDomain& domain, const PdeConfig& config);

/// Lumped-mass P1 finite elements with algebraic upwinding: artificial
/// diffusion d_ij = max(0, -k_ij, -k_ji) is added to the Galerkin operator K,
/// so off-diagonals are non-negative and explicit steps below the bound
/// preserve the discrete maximum principle. Time integration is two-stage SSP
/// Runge-Kutta. Prescribed nodes keep the value they enter a step with.
class AdvectionDiffusion {
 public:
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  /// velocity: N x 2 nodal values.
  AdvectionDiffusion(const TriMesh& mesh, const Matrix& velocity, double mu, double cfl = 0.5);

  /// Number of equal substeps needed to advance by dt under the CFL limit.
  int substeps(double dt) const;
  /// Largest stable substep times cfl.
  double max_substep() const { return max_substep_; }
  /// Advances state (N x W) by dt. Throws NonFiniteError on blow-up.
  Matrix advance(const Matrix& state, double dt) const;
  /// Integral of each column under the lumped mass.
  RowVector mass(const Matrix& state) const;

  const Eigen::VectorXd& lumped_mass() const { return lumped_; }
  /// Low-order operator L with M_L dc/dt = L c.
  const SparseMatrix& operator_matrix() const { return op_; }

 private:
  Matrix rate(const Matrix& state) const;

  std::vector<bool> prescribed_;
  Eigen::VectorXd lumped_;
  SparseMatrix op_;
  double max_substep_ = 0.0;
  double cfl_ = 0.5;
};

/// T + 1 frames of an N x W field on one mesh.
struct Trajectory {
  std::uint64_t mesh_hash = 0;
  double dt = 0.0;
  std::vector<Matrix> frames;

  std::size_t steps() const { return frames.empty() ? 0 : frames.size() - 1; }
  std::size_t node_count() const { return frames.empty() ? 0 : static_cast<std::size_t>(frames[0].rows()); }
  int width() const { return frames.empty() ? 0 : static_cast<int>(frames[0].cols()); }
};

/// Records the initial state and one frame per dt for config.steps steps.
/// The velocity is the potential flow of the domain scaled by u_mean.
Trajectory simulate(const TriMesh& mesh, const ChannelDomain& domain, const PdeConfig& config, const Matrix& initial);

/// Binary trajectory file; see docs/formats.md.
void write_trajectory(std::ostream& out, const Trajectory& traj);
Trajectory read_trajectory(std::istream& in);
void save_trajectory(const std::string& path, const Trajectory& traj);
Trajectory load_trajectory(const std::string& path);

struct BaselinePoint {
  double edge_min = 0.0;
  std::size_t node_count = 0;
  double mse = 0.0;
};

/// Spatial-convergence baseline. The finest resolution (last entry) produces
/// the reference trajectory; every resolution takes one solver step from the
/// interpolated reference state and is scored against the interpolated next
/// reference state, averaged over all steps.
std::vector<BaselinePoint> convergence_baseline(const ChannelDomain& domain, const PdeConfig& config,
                                                std::span<const double> resolutions);

/// Maps the state at one frame to the next.
using Stepper = std::function<Matrix(const Matrix&)>;

/// Mean over t of MSE(step(frames[t]), frames[t + 1]).
double one_step_mse(const Stepper& step, const Trajectory& reference);

/// One-step MSE of the solver on `mesh` against an interpolated reference.
double solver_one_step_mse(const TriMesh& mesh, const ChannelDomain& domain, const PdeConfig& config,
                           const TriMesh& ref_mesh, const Trajectory& reference);

}  // namespace msmgn
