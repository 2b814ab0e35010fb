#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "msmgn/graphs.hpp"
#include "msmgn/mesh.hpp"
#include "msmgn/processor.hpp"
#include "msmgn/solver.hpp"
#include "msmgn/training.hpp"

namespace msmgn {

enum class LaplacianWeights { unit, inverse_length };

/// Combinatorial Laplacian D - A of an undirected graph (dense). With
/// inverse_length weights each edge contributes 1 / |x_a - x_b|.
Matrix graph_laplacian(std::size_t node_count, std::span<const EdgeIndices> edges);
Matrix graph_laplacian(const TriMesh& mesh, LaplacianWeights weights = LaplacianWeights::unit);

/// Eigenvalues ascending with orthonormal eigenvectors as columns.
struct SpectralBasis {
  Eigen::VectorXd eigenvalues;
  Matrix eigenvectors;

  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
};

inline constexpr std::size_t kSpectralNodeCap = 4000;

/// Dense symmetric eigendecomposition. Throws ConfigError above `cap` nodes.
SpectralBasis spectral_basis(const Matrix& laplacian, std::size_t cap = kSpectralNodeCap);

struct PowerSpectrum {
  Eigen::VectorXd eigenvalues;
  /// |GFT|^2 per eigenvalue, summed over signal columns.
  Eigen::VectorXd power;

  double total() const { return power.sum(); }
};

/// Graph Fourier transform of an M x W signal; power of each column is summed.
PowerSpectrum gft_spectrum(const SpectralBasis& basis, const Matrix& signal);

/// Columns: n, lambda_n, power (n from 1).
void write_spectrum_csv(std::ostream& out, const PowerSpectrum& spectrum);

/// Dense Jacobian d predict(state)_i / d state_j for a single-column state.
Matrix state_jacobian(Model& model, const MultiGraph& graph, const Matrix& state, const Matrix& statics);

/// Pairs (i, j) with a nonzero Jacobian entry.
std::vector<std::vector<bool>> receptive_field(Model& model, const MultiGraph& graph, const Matrix& state,
                                               const Matrix& statics);

struct StepTiming {
  std::string kind;  // H, L, D, U, forward, train
  double edge_min = 0.0;  // fine resolution, filled in by the caller
  std::size_t fine_nodes = 0;
  std::size_t fine_edges = 0;
  std::size_t coarse_nodes = 0;
  std::size_t coarse_edges = 0;
  double seconds = 0.0;  // median over repeats
};

/// Median-of-`repeats` wall time of one H, L, D and U update at the model's
/// latent width with random latents, and of a full forward pass and a
/// training step (forward, backward) of `model` on the same graph. The last
/// two are skipped when `whole_model` is false.
std::vector<StepTiming> timing_benchmark(Model& model, const MultiGraph& graph, int repeats, std::uint64_t seed,
                                         bool whole_model = true);

/// Columns: edge_min, kind, fine_nodes, fine_edges, coarse_nodes, coarse_edges, seconds.
void write_timing_csv(std::ostream& out, std::span<const StepTiming> rows);

/// Merges a solver baseline and evaluation reports into one table keyed by
/// edge_min: edge_min, node_count, baseline, then the mse1 of each named model.
/// Rows are sorted by edge_min; missing cells are left empty.
void write_convergence_csv(std::ostream& out, std::span<const BaselinePoint> baseline,
                           std::span<const EvalReport> reports);

/// Least-squares slope of log(mse) against log(edge_min).
double loglog_slope(std::span<const BaselinePoint> points);

}  // namespace msmgn
