#include "msmgn/solver.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

#include <fmt/format.h>

namespace msmgn {
namespace {

static_assert(std::endian::native == std::endian::little, "trajectory I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'S', 'M', 'G', 'N', 'T', 'R', 'J'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(fmt::format("trajectory truncated in {}", what));
  return v;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

void PdeConfig::validate() const {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be finite and non-negative");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (!std::isfinite(u_mean)) throw ConfigError("u_mean must be finite");
  if (!(cfl > 0.0 && cfl <= 1.0)) throw ConfigError("cfl must lie in (0, 1]");
  if (inflow_stripes < 0) throw ConfigError("inflow_stripes must be non-negative");
}

Matrix potential_flow(const ChannelDomain& domain, double u_mean, std::span<const Vec2> points) {
  Matrix v(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    v(r, 0) = u_mean;
    v(r, 1) = 0.0;
    if (!domain.obstacle) continue;
    const Vec2 d = points[i] - domain.obstacle->center;
    const double r2 = squared_norm(d);
    if (r2 == 0.0) continue;
    const double a2 = domain.obstacle->radius * domain.obstacle->radius;
    const double r4 = r2 * r2;
    v(r, 0) = u_mean * (1.0 - a2 * (d.x * d.x - d.y * d.y) / r4);
    v(r, 1) = -u_mean * 2.0 * a2 * d.x * d.y / r4;
  }
  return v;
}

double inflow_value(const ChannelDomain& domain, const PdeConfig& config, double y) {
  const double s = std::sin(std::numbers::pi * config.inflow_stripes * y / domain.height);
  return s * s;
}

Matrix initial_state(const TriMesh& mesh, const ChannelDomain& domain, const PdeConfig& config) {
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(mesh.node_count()), 1);
  for (std::size_t i = 0; i < mesh.node_count(); ++i) {
    if (is_prescribed(mesh.kind(static_cast<int>(i)))) {
      c(static_cast<Eigen::Index>(i), 0) = inflow_value(domain, config, mesh.position(static_cast<int>(i)).y);
    }
  }
  return c;
}

AdvectionDiffusion::AdvectionDiffusion(const TriMesh& mesh, const Matrix& velocity, double mu, double cfl)
    : cfl_(cfl) {
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  if (velocity.rows() != n || velocity.cols() != 2) {
    throw ShapeError(fmt::format("velocity must be {} x 2, got {} x {}", n, velocity.rows(), velocity.cols()));
  }
  if (!(mu >= 0.0)) throw ConfigError("mu must be non-negative");
  if (!(cfl > 0.0 && cfl <= 1.0)) throw ConfigError("cfl must lie in (0, 1]");
  prescribed_.resize(mesh.node_count());
  for (std::size_t i = 0; i < mesh.node_count(); ++i) prescribed_[i] = is_prescribed(mesh.kind(static_cast<int>(i)));

  lumped_ = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * mesh.triangle_count());
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const auto p = mesh.corners(t);
    const double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
    std::array<Vec2, 3> grad;
    for (int k = 0; k < 3; ++k) {
      const Vec2 a = p[static_cast<std::size_t>((k + 1) % 3)], b = p[static_cast<std::size_t>((k + 2) % 3)];
      grad[static_cast<std::size_t>(k)] = {(a.y - b.y) / (2 * area), (b.x - a.x) / (2 * area)};
    }
    Vec2 vsum;
    for (int k : tri) vsum = vsum + Vec2{velocity(k, 0), velocity(k, 1)};
    for (int i = 0; i < 3; ++i) {
      const int gi = tri[static_cast<std::size_t>(i)];
      lumped_(gi) += area / 3.0;
      // Exact integral of phi_i (a_h . grad phi_j) with a_h the P1 interpolant.
      const Vec2 abar = (area / 12.0) * (vsum + Vec2{velocity(gi, 0), velocity(gi, 1)});
      for (int j = 0; j < 3; ++j) {
        const int gj = tri[static_cast<std::size_t>(j)];
        const double c = dot(abar, grad[static_cast<std::size_t>(j)]);
        const double s = mu * area * dot(grad[static_cast<std::size_t>(i)], grad[static_cast<std::size_t>(j)]);
        trip.emplace_back(gi, gj, -(c + s));
      }
    }
  }
  SparseMatrix k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  k.makeCompressed();
  const SparseMatrix kt = SparseMatrix(k.transpose());

  trip.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    SparseMatrix::InnerIterator a(k, i), b(kt, i);
    double diag_shift = 0.0;
    for (; a; ++a, ++b) {
      const double kij = a.value(), kji = b.value();
      if (a.col() == i) {
        trip.emplace_back(i, i, kij);
        continue;
      }
      const double d = std::max({0.0, -kij, -kji});
      trip.emplace_back(i, a.col(), kij + d);
      diag_shift -= d;
    }
    trip.emplace_back(i, i, diag_shift);
  }
  op_.resize(n, n);
  op_.setFromTriplets(trip.begin(), trip.end());
  op_.makeCompressed();

  double bound = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (prescribed_[static_cast<std::size_t>(i)]) continue;
    const double lii = -op_.coeff(i, i);
    if (lii > 0.0) bound = std::min(bound, lumped_(i) / lii);
  }
  max_substep_ = cfl_ * bound;
}

int AdvectionDiffusion::substeps(double dt) const {
  if (!std::isfinite(max_substep_)) return 1;
  return std::max(1, static_cast<int>(std::ceil(dt / max_substep_ - 1e-12)));
}

Matrix AdvectionDiffusion::rate(const Matrix& state) const {
  Matrix r = op_ * state;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    if (prescribed_[static_cast<std::size_t>(i)]) {
      r.row(i).setZero();
    } else {
      r.row(i) /= lumped_(i);
    }
  }
  return r;
}

Matrix AdvectionDiffusion::advance(const Matrix& state, double dt) const {
  if (state.rows() != lumped_.size()) {
    throw ShapeError(fmt::format("state has {} rows, mesh has {} nodes", state.rows(), lumped_.size()));
  }
  const int n = substeps(dt);
  const double h = dt / n;
  Matrix u = state;
  for (int s = 0; s < n; ++s) {
    const Matrix u1 = u + h * rate(u);
    u = 0.5 * u + 0.5 * (u1 + h * rate(u1));
  }
  if (!all_finite(u)) throw NonFiniteError("advection-diffusion step produced a non-finite value");
  return u;
}

RowVector AdvectionDiffusion::mass(const Matrix& state) const { return lumped_.transpose() * state; }

Trajectory simulate(const TriMesh& mesh, const ChannelDomain& domain, const PdeConfig& config, const Matrix& initial) {
  config.validate();
  if (initial.rows() != static_cast<Eigen::Index>(mesh.node_count())) {
    throw ShapeError(fmt::format("initial state has {} rows, mesh has {} nodes", initial.rows(), mesh.node_count()));
  }
  if (!all_finite(initial)) throw NonFiniteError("initial state is not finite");
  const AdvectionDiffusion solver(mesh, potential_flow(domain, config.u_mean, mesh.positions()), config.mu, config.cfl);
  Trajectory traj;
  traj.mesh_hash = mesh.hash();
  traj.dt = config.dt;
  traj.frames.reserve(static_cast<std::size_t>(config.steps) + 1);
  traj.frames.push_back(initial);
  for (int t = 0; t < config.steps; ++t) {
    try {
      traj.frames.push_back(solver.advance(traj.frames.back(), config.dt));
    } catch (const NonFiniteError&) {
      throw NonFiniteError(fmt::format("solver produced a non-finite value at step {}", t + 1));
    }
  }
  return traj;
}

void write_trajectory(std::ostream& out, const Trajectory& traj) {
  const std::size_t n = traj.node_count();
  const int w = traj.width();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, traj.mesh_hash);
  put<std::uint64_t>(out, n);
  put<std::uint64_t>(out, traj.steps());
  put<double>(out, traj.dt);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  for (const Matrix& f : traj.frames) {
    if (static_cast<std::size_t>(f.rows()) != n || f.cols() != w) throw ShapeError("trajectory frames differ in shape");
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
  }
}

Trajectory read_trajectory(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("not a trajectory file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw ParseError(fmt::format("unsupported trajectory version {}", version));
  Trajectory traj;
  traj.mesh_hash = get<std::uint64_t>(in, "mesh hash");
  const auto n = get<std::uint64_t>(in, "node count");
  const auto steps = get<std::uint64_t>(in, "step count");
  traj.dt = get<double>(in, "dt");
  const auto w = get<std::uint32_t>(in, "width");
  if (n > (1ull << 28) || steps > (1ull << 24) || w > 64 || w == 0) throw ParseError("trajectory header is implausible");
  traj.frames.resize(steps + 1);
  for (auto& f : traj.frames) {
    f.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(w));
    if (!in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(double)))) {
      throw ParseError("trajectory truncated in frame data");
    }
  }
  return traj;
}

void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_trajectory(out, traj);
  if (!out) throw IoError("failed writing " + path);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_trajectory(in);
}

double one_step_mse(const Stepper& step, const Trajectory& reference) {
  if (reference.steps() == 0) throw ConfigError("reference trajectory has no steps");
  double total = 0.0;
  for (std::size_t t = 0; t < reference.steps(); ++t) {
    const Matrix next = step(reference.frames[t]);
    total += (next - reference.frames[t + 1]).squaredNorm() / static_cast<double>(next.size());
  }
  return total / static_cast<double>(reference.steps());
}

double solver_one_step_mse(const TriMesh& mesh, const ChannelDomain& domain, const PdeConfig& config,
                           const TriMesh& ref_mesh, const Trajectory& reference) {
  const InterpolationPlan plan(ref_mesh, mesh.positions());
  Trajectory on_mesh;
  on_mesh.dt = reference.dt;
  for (const Matrix& f : reference.frames) on_mesh.frames.push_back(plan.apply(f));
  const AdvectionDiffusion solver(mesh, potential_flow(domain, config.u_mean, mesh.positions()), config.mu, config.cfl);
  return one_step_mse([&](const Matrix& s) { return solver.advance(s, reference.dt); }, on_mesh);
}

std::vector<BaselinePoint> convergence_baseline(const ChannelDomain& domain, const PdeConfig& config,
                                                std::span<const double> resolutions) {
  if (resolutions.empty()) throw ConfigError("convergence_baseline needs at least one resolution");
  for (std::size_t k = 1; k < resolutions.size(); ++k) {
    if (resolutions[k] > resolutions[k - 1]) throw ConfigError("resolutions must be sorted in descending order");
  }
  const TriMesh ref_mesh = generate_mesh(domain, resolutions.back());
  const Trajectory reference = simulate(ref_mesh, domain, config, initial_state(ref_mesh, domain, config));
  std::vector<BaselinePoint> out;
  for (double r : resolutions) {
    const TriMesh mesh = generate_mesh(domain, r);
    out.push_back({r, mesh.node_count(), solver_one_step_mse(mesh, domain, config, ref_mesh, reference)});
  }
  return out;
}

}  // namespace msmgn
