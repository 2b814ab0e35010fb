#include "msmgn/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <random>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

namespace msmgn {

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
double median_seconds(int repeats, F&& f) {
  f();  // warm-up
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(repeats));
  for (int k = 0; k < repeats; ++k) {
    const auto start = Clock::now();
    f();
    t.push_back(std::chrono::duration<double>(Clock::now() - start).count());
  }
  std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
  return t[t.size() / 2];
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void add_edge(Matrix& l, int a, int b, double w) {
  if (a == b) throw ConfigError("self loops are not allowed in the Laplacian");
  l(a, a) += w;
  l(b, b) += w;
  l(a, b) -= w;
  l(b, a) -= w;
}

}  // namespace

Matrix graph_laplacian(std::size_t node_count, std::span<const EdgeIndices> edges) {
  const auto n = static_cast<Eigen::Index>(node_count);
  Matrix l = Matrix::Zero(n, n);
  for (const EdgeIndices& e : edges) {
    if (e[0] < 0 || e[1] < 0 || e[0] >= n || e[1] >= n) throw ShapeError("edge index out of range");
    add_edge(l, e[0], e[1], 1.0);
  }
  return l;
}

Matrix graph_laplacian(const TriMesh& mesh, LaplacianWeights weights) {
  if (weights == LaplacianWeights::unit) return graph_laplacian(mesh.node_count(), mesh.edges());
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  Matrix l = Matrix::Zero(n, n);
  for (const EdgeIndices& e : mesh.edges()) {
    add_edge(l, e[0], e[1], 1.0 / norm(mesh.position(e[0]) - mesh.position(e[1])));
  }
  return l;
}

SpectralBasis spectral_basis(const Matrix& laplacian, std::size_t cap) {
  if (laplacian.rows() != laplacian.cols()) throw ShapeError("Laplacian must be square");
  if (static_cast<std::size_t>(laplacian.rows()) > cap) {
    throw ConfigError(fmt::format("spectral analysis is capped at {} nodes, got {}", cap, laplacian.rows()));
  }
  const Eigen::MatrixXd dense = laplacian;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
  if (solver.info() != Eigen::Success) throw NonFiniteError("eigendecomposition failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

PowerSpectrum gft_spectrum(const SpectralBasis& basis, const Matrix& signal) {
  if (static_cast<std::size_t>(signal.rows()) != basis.size()) {
    throw ShapeError(fmt::format("signal has {} rows, basis has {}", signal.rows(), basis.size()));
  }
  const Matrix coeff = basis.eigenvectors.transpose() * signal;
  return {basis.eigenvalues, coeff.cwiseAbs2().rowwise().sum()};
}

void write_spectrum_csv(std::ostream& out, const PowerSpectrum& spectrum) {
  out << "n,lambda_n,power\n";
  for (Eigen::Index k = 0; k < spectrum.power.size(); ++k) {
    out << fmt::format("{},{},{}\n", k + 1, spectrum.eigenvalues(k), spectrum.power(k));
  }
}

Matrix state_jacobian(Model& model, const MultiGraph& graph, const Matrix& state, const Matrix& statics) {
  if (state.cols() != 1) throw ShapeError("state_jacobian expects a single-column state");
  nn::Tape tape;
  const nn::Var in = tape.input(state);
  const nn::Var out = model.predict(tape, graph, in, statics);
  const Eigen::Index n = state.rows();
  Matrix jac = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix seed = Matrix::Zero(n, 1);
    seed(i, 0) = 1.0;
    tape.backward(out, seed);
    const Matrix& g = tape.grad(in);
    if (g.size() != 0) jac.row(i) = g.col(0).transpose();
  }
  return jac;
}

std::vector<std::vector<bool>> receptive_field(Model& model, const MultiGraph& graph, const Matrix& state,
                                               const Matrix& statics) {
  const Matrix jac = state_jacobian(model, graph, state, statics);
  std::vector<std::vector<bool>> mask(static_cast<std::size_t>(jac.rows()),
                                      std::vector<bool>(static_cast<std::size_t>(jac.cols()), false));
  for (Eigen::Index i = 0; i < jac.rows(); ++i) {
    for (Eigen::Index j = 0; j < jac.cols(); ++j) {
      mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = jac(i, j) != 0.0;
    }
  }
  return mask;
}

std::vector<StepTiming> timing_benchmark(Model& model, const MultiGraph& graph, int repeats, std::uint64_t seed,
                                         bool whole_model) {
  if (repeats < 1) throw ConfigError("timing needs at least one repeat");
  std::mt19937_64 rng(seed);
  const int d = model.config().latent;
  const int h = model.config().hidden;
  auto block = [&](StepKind kind) {
    ProcessorBlock b;
    b.kind = kind;
    b.edge = nn::Mlp("bench.edge", 3 * d, h, d, true, rng);
    b.node = nn::Mlp("bench.node", 2 * d, h, d, true, rng);
    return b;
  };
  const GraphGeometry& fine = graph.fine;
  StepTiming base;
  base.fine_nodes = fine.node_count();
  base.fine_edges = fine.edge_count();
  if (graph.has_coarse()) {
    base.coarse_nodes = graph.coarse->node_count();
    base.coarse_edges = graph.coarse->edge_count();
  }
  std::vector<StepTiming> out;
  auto record = [&](const char* kind, double seconds) {
    StepTiming t = base;
    t.kind = kind;
    t.seconds = seconds;
    out.push_back(t);
  };

  const Matrix fine_nodes = random_matrix(static_cast<Eigen::Index>(fine.node_count()), d, rng);
  const Matrix fine_edges = random_matrix(static_cast<Eigen::Index>(fine.edge_count()), d, rng);
  ProcessorBlock hb = block(StepKind::H);
  record("H", median_seconds(repeats, [&] {
           nn::Tape tape(false);
           high_res_update(tape, {tape.constant(fine_nodes), tape.constant(fine_edges), &fine}, hb);
         }));
  if (graph.has_coarse()) {
    const GraphGeometry& coarse = *graph.coarse;
    const Matrix coarse_nodes = random_matrix(static_cast<Eigen::Index>(coarse.node_count()), d, rng);
    const Matrix coarse_edges = random_matrix(static_cast<Eigen::Index>(coarse.edge_count()), d, rng);
    const Matrix down_edges = random_matrix(static_cast<Eigen::Index>(graph.down.edge_count()), d, rng);
    const Matrix up_edges = random_matrix(static_cast<Eigen::Index>(graph.up.edge_count()), d, rng);
    ProcessorBlock lb = block(StepKind::L), db = block(StepKind::D), ub = block(StepKind::U);
    record("L", median_seconds(repeats, [&] {
             nn::Tape tape(false);
             low_res_update(tape, {tape.constant(coarse_nodes), tape.constant(coarse_edges), &coarse}, lb);
           }));
    record("D", median_seconds(repeats, [&] {
             nn::Tape tape(false);
             downsample_update(tape, tape.constant(fine_nodes), tape.constant(coarse_nodes), tape.constant(down_edges),
                               graph.down, db);
           }));
    record("U", median_seconds(repeats, [&] {
             nn::Tape tape(false);
             upsample_update(tape, tape.constant(coarse_nodes), tape.constant(fine_nodes), tape.constant(up_edges),
                             graph.up, ub);
           }));
  }

  if (!whole_model) return out;
  const auto n = static_cast<Eigen::Index>(fine.node_count());
  const Matrix state = random_matrix(n, model.config().state_width, rng);
  const Matrix statics = random_matrix(n, model.config().static_width, rng);
  const Matrix target = state + 0.1 * random_matrix(n, model.config().state_width, rng);
  record("forward", median_seconds(repeats, [&] { model.predict(graph, state, statics); }));
  record("train", median_seconds(repeats, [&] {
           nn::Tape tape;
           tape.backward(model.loss(tape, graph, state, statics, target));
         }));
  for (nn::Parameter* p : model.parameters()) p->zero_grad();
  return out;
}

void write_timing_csv(std::ostream& out, std::span<const StepTiming> rows) {
  out << "edge_min,kind,fine_nodes,fine_edges,coarse_nodes,coarse_edges,seconds\n";
  for (const StepTiming& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.edge_min, r.kind, r.fine_nodes, r.fine_edges, r.coarse_nodes, r.coarse_edges,
                       r.seconds);
  }
}

void write_convergence_csv(std::ostream& out, std::span<const BaselinePoint> baseline,
                           std::span<const EvalReport> reports) {
  struct Row {
    std::size_t nodes = 0;
    std::string baseline;
    std::map<std::string, std::string> models;
  };
  std::map<double, Row> rows;
  std::vector<std::string> names;
  for (const BaselinePoint& p : baseline) {
    Row& r = rows[p.edge_min];
    r.nodes = p.node_count;
    r.baseline = fmt::format("{}", p.mse);
  }
  for (const EvalReport& report : reports) {
    for (const EvalRow& e : report.rows) {
      if (std::find(names.begin(), names.end(), e.model) == names.end()) names.push_back(e.model);
      Row& r = rows[e.edge_min];
      r.nodes = e.node_count;
      r.models[e.model] = fmt::format("{}", e.mse1);
    }
  }
  out << "edge_min,node_count,baseline";
  for (const std::string& name : names) out << ',' << name;
  out << '\n';
  for (const auto& [edge_min, r] : rows) {
    out << fmt::format("{},{},{}", edge_min, r.nodes, r.baseline);
    for (const std::string& name : names) {
      const auto it = r.models.find(name);
      out << ',' << (it == r.models.end() ? std::string() : it->second);
    }
    out << '\n';
  }
}

double loglog_slope(std::span<const BaselinePoint> points) {
  if (points.size() < 2) throw ConfigError("a slope needs at least two points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const BaselinePoint& p : points) {
    if (!(p.edge_min > 0.0) || !(p.mse > 0.0)) throw ConfigError("log-log slope needs positive values");
    const double x = std::log(p.edge_min), y = std::log(p.mse);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(points.size());
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw ConfigError("log-log slope needs distinct resolutions");
  return (n * sxy - sx * sy) / den;
}

}  // namespace msmgn
