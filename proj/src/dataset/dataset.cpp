#include "msmgn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace msmgn {
namespace {

namespace fs = std::filesystem;

std::string num(double v) { return fmt::format("{}", v); }

double parse_double(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw ParseError("meta is missing key " + key);
  double v = 0.0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(fmt::format("meta {}='{}' is not a number", key, s));
  return v;
}

std::int64_t parse_int(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw ParseError("meta is missing key " + key);
  std::int64_t v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(fmt::format("meta {}='{}' is not an integer", key, s));
  return v;
}

std::map<std::string, std::string> scenario_meta(const ScenarioParams& p, const PdeConfig& pde) {
  return {{"id", std::to_string(p.id)},
          {"flow", "potential"},
          {"radius", num(p.radius)},
          {"cx", num(p.center.x)},
          {"cy", num(p.center.y)},
          {"u_mean", num(p.u_mean)},
          {"edge_min", num(p.edge_min)},
          {"seed", std::to_string(p.seed)},
          {"mu", num(pde.mu)},
          {"dt", num(pde.dt)},
          {"steps", std::to_string(pde.steps)},
          {"inflow_stripes", std::to_string(pde.inflow_stripes)},
          {"cfl", num(pde.cfl)},
          {"length", "1"},
          {"height", "0.4"}};
}

std::shared_ptr<const Matrix> uniform_statics(std::size_t n, Vec2 v) {
  Matrix m(static_cast<Eigen::Index>(n), 2);
  m.col(0).setConstant(v.x);
  m.col(1).setConstant(v.y);
  return std::make_shared<const Matrix>(std::move(m));
}

const ChannelDomain kUnitSquare{1.0, 1.0, std::nullopt};

}  // namespace

ChannelDomain ScenarioParams::domain() const {
  ChannelDomain d;
  d.obstacle = Circle{center, radius};
  return d;
}

void ScenarioRanges::validate() const {
  auto check = [](double lo, double hi, const char* what) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError(fmt::format("bad {} range", what));
  };
  check(radius_lo, radius_hi, "radius");
  check(cx_lo, cx_hi, "cx");
  check(cy_lo, cy_hi, "cy");
  check(u_lo, u_hi, "u_mean");
  check(edge_min_lo, edge_min_hi, "edge_min");
  if (!(edge_min_lo > 0.0) || !(radius_lo > 0.0)) throw ConfigError("edge_min and radius must be positive");
}

std::vector<ScenarioParams> sample_scenarios(int n, std::uint64_t seed, const ScenarioRanges& r) {
  r.validate();
  if (n < 0) throw ConfigError("scenario count must be non-negative");
  std::mt19937_64 rng(mix_seed(seed, 1));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<ScenarioParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ScenarioParams p;
    p.id = i;
    p.radius = uniform(r.radius_lo, r.radius_hi);
    p.center = {uniform(r.cx_lo, r.cx_hi), uniform(r.cy_lo, r.cy_hi)};
    p.u_mean = uniform(r.u_lo, r.u_hi);
    p.edge_min = std::exp(uniform(std::log(r.edge_min_lo), std::log(r.edge_min_hi)));
    p.seed = mix_seed(seed, static_cast<std::uint64_t>(i) + 2);
    out.push_back(p);
  }
  return out;
}

std::string_view to_string(LabelMode mode) { return mode == LabelMode::native ? "native" : "high_accuracy"; }

LabelMode parse_label_mode(std::string_view text) {
  if (text == "native") return LabelMode::native;
  if (text == "high_accuracy" || text == "high-accuracy") return LabelMode::high_accuracy;
  throw ParseError(fmt::format("unknown label mode '{}'", text));
}

const Trajectory& Episode::frames(LabelMode mode) const {
  if (mode == LabelMode::native) return native;
  if (!high_accuracy) throw ConfigError(fmt::format("episode {} has no high-accuracy labels", id));
  return *high_accuracy;
}

Trajectory interpolate_trajectory(const TriMesh& fine_mesh, const Trajectory& fine, const TriMesh& coarse) {
  const InterpolationPlan plan(fine_mesh, coarse.positions());
  Trajectory out;
  out.mesh_hash = coarse.hash();
  out.dt = fine.dt;
  out.frames.reserve(fine.frames.size());
  for (const Matrix& f : fine.frames) out.frames.push_back(plan.apply(f));
  return out;
}

ChannelDomain episode_domain(const Episode& e) {
  ChannelDomain d{parse_double(e.meta, "length"), parse_double(e.meta, "height"), std::nullopt};
  if (e.meta.count("radius")) {
    d.obstacle = Circle{{parse_double(e.meta, "cx"), parse_double(e.meta, "cy")}, parse_double(e.meta, "radius")};
  }
  return d;
}

Episode simulate_scenario(const ScenarioParams& params, const PdeConfig& pde, int refinement) {
  if (refinement < 0) throw ConfigError("refinement must be non-negative");
  const ChannelDomain domain = params.domain();
  Episode e;
  e.id = params.id;
  e.mesh = std::make_shared<const TriMesh>(generate_mesh(domain, params.edge_min));
  e.statics = std::make_shared<const Matrix>(potential_flow(domain, params.u_mean, e.mesh->positions()));
  PdeConfig cfg = pde;
  cfg.u_mean = params.u_mean;
  e.native = simulate(*e.mesh, domain, cfg, initial_state(*e.mesh, domain, cfg));
  e.meta = scenario_meta(params, cfg);
  e.refinement = refinement;
  e.meta["refinement"] = std::to_string(refinement);
  e.meta["provenance"] = refinement > 0 ? "high_accuracy" : "native";
  if (refinement > 0) {
    const TriMesh fine = generate_mesh(domain, params.edge_min / refinement);
    const Trajectory ft = simulate(fine, domain, cfg, initial_state(fine, domain, cfg));
    e.high_accuracy = interpolate_trajectory(fine, ft, *e.mesh);
    e.meta["fine_node_count"] = std::to_string(fine.node_count());
  }
  e.meta["node_count"] = std::to_string(e.mesh->node_count());
  e.meta["mesh_hash"] = std::to_string(e.mesh->hash());
  return e;
}

std::vector<Episode> make_native_dataset(std::span<const ScenarioParams> scenarios, const PdeConfig& pde) {
  std::vector<Episode> out;
  out.reserve(scenarios.size());
  for (const auto& s : scenarios) out.push_back(simulate_scenario(s, pde, 0));
  return out;
}

std::vector<Episode> make_high_accuracy_dataset(std::span<const ScenarioParams> scenarios, const PdeConfig& pde,
                                                int refinement) {
  if (refinement < 1) throw ConfigError("high-accuracy labels need refinement >= 1");
  std::vector<Episode> out;
  out.reserve(scenarios.size());
  for (const auto& s : scenarios) out.push_back(simulate_scenario(s, pde, refinement));
  return out;
}

double GaussianCase::value(Vec2 p, double t) const {
  const double s2 = sigma0 * sigma0 + 2.0 * mu * t;
  const double dx = p.x - x0.x - velocity.x * t, dy = p.y - x0.y - velocity.y * t;
  return sigma0 * sigma0 / s2 * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
}

Matrix GaussianCase::field(std::span<const Vec2> points, double t) const {
  Matrix m(static_cast<Eigen::Index>(points.size()), 1);
  for (std::size_t i = 0; i < points.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = value(points[i], t);
  return m;
}

std::vector<GaussianCase> sample_gaussian_cases(int n, std::uint64_t seed, const GaussianRanges& r) {
  if (n < 0) throw ConfigError("case count must be non-negative");
  std::mt19937_64 rng(mix_seed(seed, 3));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<GaussianCase> out;
  for (int i = 0; i < n; ++i) {
    GaussianCase c;
    c.x0 = {uniform(r.x_lo, r.x_hi), uniform(r.y_lo, r.y_hi)};
    c.sigma0 = uniform(r.sigma_lo, r.sigma_hi);
    c.velocity = {uniform(r.speed_lo, r.speed_hi), 0.0};
    c.mu = r.mu;
    out.push_back(c);
  }
  return out;
}

Episode simulate_gaussian(const GaussianCase& c, double edge_min, double dt, int steps, int refinement, int id) {
  if (refinement < 0) throw ConfigError("refinement must be non-negative");
  auto run = [&](const TriMesh& mesh) {
    const AdvectionDiffusion solver(mesh, *uniform_statics(mesh.node_count(), c.velocity), c.mu);
    Trajectory t;
    t.mesh_hash = mesh.hash();
    t.dt = dt;
    t.frames.push_back(c.field(mesh.positions(), 0.0));
    for (int k = 0; k < steps; ++k) t.frames.push_back(solver.advance(t.frames.back(), dt));
    return t;
  };
  Episode e;
  e.id = id;
  e.mesh = std::make_shared<const TriMesh>(generate_mesh(kUnitSquare, edge_min));
  e.statics = uniform_statics(e.mesh->node_count(), c.velocity);
  e.native = run(*e.mesh);
  e.refinement = refinement;
  if (refinement > 0) {
    const TriMesh fine = generate_mesh(kUnitSquare, edge_min / refinement);
    e.high_accuracy = interpolate_trajectory(fine, run(fine), *e.mesh);
  }
  e.meta = {{"id", std::to_string(id)},
            {"flow", "uniform"},
            {"ux", num(c.velocity.x)},
            {"uy", num(c.velocity.y)},
            {"x0", num(c.x0.x)},
            {"y0", num(c.x0.y)},
            {"sigma0", num(c.sigma0)},
            {"mu", num(c.mu)},
            {"dt", num(dt)},
            {"steps", std::to_string(steps)},
            {"edge_min", num(edge_min)},
            {"length", "1"},
            {"height", "1"},
            {"refinement", std::to_string(refinement)},
            {"provenance", refinement > 0 ? "high_accuracy" : "native"},
            {"node_count", std::to_string(e.mesh->node_count())},
            {"mesh_hash", std::to_string(e.mesh->hash())}};
  return e;
}

std::vector<Sample> make_samples(const Episode& episode, LabelMode mode) {
  const Trajectory& t = episode.frames(mode);
  std::vector<Sample> out;
  out.reserve(t.steps());
  for (std::size_t k = 0; k < t.steps(); ++k) {
    Sample s;
    s.mesh = episode.mesh;
    s.statics = episode.statics;
    s.input = t.frames[k];
    s.target = t.frames[k + 1];
    s.provenance = mode;
    s.episode = episode.id;
    s.step = static_cast<int>(k);
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double test_fraction, std::uint64_t seed) {
  if (n < 0 || !(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("bad split arguments");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(mix_seed(seed, 4));
  // Fisher-Yates with an explicit draw so the permutation does not depend on std::shuffle.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * n));
  std::vector<int> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<int> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return {train, test};
}

ScenarioParams fixed_obstacle_params() {
  ScenarioParams p;
  p.radius = 0.05;
  p.center = {0.275, 0.25};
  p.u_mean = 0.85;
  return p;
}

Trajectory FixedObstacleSet::reference_on(std::size_t k) const {
  return interpolate_trajectory(*reference_mesh, reference, *meshes.at(k));
}

std::shared_ptr<const Matrix> FixedObstacleSet::statics_on(std::size_t k) const {
  return std::make_shared<const Matrix>(potential_flow(domain, pde.u_mean, meshes.at(k)->positions()));
}

FixedObstacleSet fixed_obstacle_testset(std::vector<double> resolutions, double ref_edge_min, const PdeConfig& pde) {
  std::sort(resolutions.begin(), resolutions.end(), std::greater<>());
  if (!resolutions.empty() && resolutions.back() < ref_edge_min) {
    throw ConfigError("the reference resolution must be the finest");
  }
  FixedObstacleSet set;
  set.domain = fixed_obstacle_params().domain();
  set.pde = pde;
  set.pde.u_mean = fixed_obstacle_params().u_mean;
  set.resolutions = resolutions;
  for (double r : resolutions) set.meshes.push_back(std::make_shared<const TriMesh>(generate_mesh(set.domain, r)));
  set.reference_mesh = std::make_shared<const TriMesh>(generate_mesh(set.domain, ref_edge_min));
  set.reference = simulate(*set.reference_mesh, set.domain, set.pde, initial_state(*set.reference_mesh, set.domain, set.pde));
  return set;
}

FixedObstacleSet fixed_obstacle_testset(int count, double lo, double hi, double ref_edge_min, const PdeConfig& pde,
                                        std::uint64_t seed) {
  if (count < 0 || !(lo > 0.0 && lo <= hi)) throw ConfigError("bad fixed-obstacle resolution range");
  std::mt19937_64 rng(mix_seed(seed, 5));
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  std::vector<double> r;
  for (int i = 0; i < count; ++i) r.push_back(std::exp(u(rng)));
  return fixed_obstacle_testset(std::move(r), ref_edge_min, pde);
}

void write_dataset(const std::string& dir, std::span<const Episode> episodes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir, ec.message()));
  for (const Episode& e : episodes) {
    const fs::path sub = fs::path(dir) / fmt::format("scenario_{}", e.id);
    fs::create_directories(sub, ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", sub.string(), ec.message()));
    save_mesh((sub / "mesh.msh").string(), *e.mesh);
    save_trajectory((sub / "trajectory.bin").string(), e.native);
    if (e.high_accuracy) save_trajectory((sub / "labels_ha.bin").string(), *e.high_accuracy);
    std::ofstream meta(sub / "meta");
    if (!meta) throw IoError("cannot write " + (sub / "meta").string());
    for (const auto& [k, v] : e.meta) meta << k << '=' << v << '\n';
  }
}

std::vector<Episode> read_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(fmt::format("dataset directory {} does not exist", dir));
  std::vector<std::pair<int, fs::path>> subs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("scenario_", 0) != 0) continue;
    int id = 0;
    const auto [ptr, ec] = std::from_chars(name.data() + 9, name.data() + name.size(), id);
    if (ec != std::errc() || ptr != name.data() + name.size()) continue;
    subs.emplace_back(id, entry.path());
  }
  std::sort(subs.begin(), subs.end());
  if (subs.empty()) throw IoError(fmt::format("no scenario_<id> directories in {}", dir));
  std::vector<Episode> out;
  for (const auto& [id, path] : subs) {
    Episode e;
    e.id = id;
    std::ifstream meta(path / "meta");
    if (!meta) throw IoError("cannot read " + (path / "meta").string());
    std::string line;
    while (std::getline(meta, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(fmt::format("{}: malformed meta line '{}'", path.string(), line));
      e.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    e.mesh = std::make_shared<const TriMesh>(load_mesh((path / "mesh.msh").string()));
    e.native = load_trajectory((path / "trajectory.bin").string());
    if (e.native.mesh_hash != e.mesh->hash() || e.native.node_count() != e.mesh->node_count()) {
      throw ParseError(fmt::format("{}: trajectory does not belong to the mesh", path.string()));
    }
    if (fs::exists(path / "labels_ha.bin")) {
      e.high_accuracy = load_trajectory((path / "labels_ha.bin").string());
      if (e.high_accuracy->node_count() != e.mesh->node_count()) {
        throw ParseError(fmt::format("{}: labels do not match the mesh", path.string()));
      }
    }
    e.refinement = static_cast<int>(parse_int(e.meta, "refinement"));
    const auto flow = e.meta.find("flow");
    if (flow != e.meta.end() && flow->second == "uniform") {
      e.statics = uniform_statics(e.mesh->node_count(), {parse_double(e.meta, "ux"), parse_double(e.meta, "uy")});
    } else {
      ChannelDomain d;
      d.obstacle = Circle{{parse_double(e.meta, "cx"), parse_double(e.meta, "cy")}, parse_double(e.meta, "radius")};
      e.statics = std::make_shared<const Matrix>(potential_flow(d, parse_double(e.meta, "u_mean"), e.mesh->positions()));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace msmgn
