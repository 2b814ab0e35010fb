#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "msmgn/dataset.hpp"

using namespace msmgn;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("msmgn_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

double lumped_l2(const TriMesh& mesh, const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const double area = mesh.signed_area(t);
    for (int k : mesh.triangles()[t]) s += area / 3.0 * std::pow(a(k, 0) - b(k, 0), 2);
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("scenario draws respect the sampling ranges") {
  const auto draws = sample_scenarios(2000, 11);
  REQUIRE(draws.size() == 2000);
  for (const auto& p : draws) {
    CHECK(p.radius >= 0.02);
    CHECK(p.radius <= 0.08);
    CHECK(p.center.x > 0.15);
    CHECK(p.center.x < 0.4);
    CHECK(p.center.y > 0.1);
    CHECK(p.center.y < 0.3);
    CHECK(p.u_mean >= 0.2);
    CHECK(p.u_mean <= 12.0);
    CHECK(p.edge_min >= 1e-3);
    CHECK(p.edge_min <= 1e-2);
  }
  const auto again = sample_scenarios(2000, 11);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    CHECK(draws[i].radius == again[i].radius);
    CHECK(draws[i].edge_min == again[i].edge_min);
    CHECK(draws[i].seed == again[i].seed);
  }
  CHECK(sample_scenarios(5, 12)[0].radius != draws[0].radius);
}

TEST_CASE("edge_min is flat in log space (chi-square at 5%)") {
  const auto draws = sample_scenarios(10000, 13);
  const int bins = 10;
  std::vector<int> count(bins, 0);
  for (const auto& p : draws) {
    const double u = (std::log10(p.edge_min) + 3.0);  // [0, 1]
    ++count[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(u * bins)))];
  }
  const double expected = 10000.0 / bins;
  double chi2 = 0.0;
  for (int c : count) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 16.919);  // 95th percentile, 9 degrees of freedom
}

TEST_CASE("native dataset pairs follow the solver") {
  ScenarioParams p = fixed_obstacle_params();
  p.edge_min = 2e-2;
  p.u_mean = 3.0;
  PdeConfig pde;
  pde.steps = 6;
  const std::vector<ScenarioParams> scenarios{p};
  const auto episodes = make_native_dataset(scenarios, pde);
  REQUIRE(episodes.size() == 1);
  const auto samples = make_samples(episodes[0], LabelMode::native);
  CHECK(samples.size() == 6);
  PdeConfig cfg = pde;
  cfg.u_mean = 3.0;
  const Trajectory direct = simulate(*episodes[0].mesh, p.domain(), cfg, initial_state(*episodes[0].mesh, p.domain(), cfg));
  for (const auto& s : samples) {
    CHECK(s.input == direct.frames[static_cast<std::size_t>(s.step)]);
    CHECK(s.target == direct.frames[static_cast<std::size_t>(s.step) + 1]);
    CHECK(s.provenance == LabelMode::native);
    CHECK(s.input.rows() == static_cast<Eigen::Index>(s.mesh->node_count()));
    CHECK(s.statics->rows() == s.input.rows());
  }
  CHECK_THROWS_AS(make_samples(episodes[0], LabelMode::high_accuracy), ConfigError);
}

TEST_CASE("split is a seeded partition") {
  const auto [train, test] = split_indices(50, 0.2, 3);
  CHECK(test.size() == 10);
  CHECK(train.size() == 40);
  std::set<int> all(train.begin(), train.end());
  all.insert(test.begin(), test.end());
  CHECK(all.size() == 50);
  const auto again = split_indices(50, 0.2, 3);
  CHECK(again.first == train);
  CHECK(again.second == test);
  CHECK(split_indices(50, 0.2, 4).second != test);
}

TEST_CASE("high-accuracy labels") {
  SUBCASE("refinement 1 reproduces native labels") {
    ScenarioParams p = fixed_obstacle_params();
    p.edge_min = 2e-2;
    PdeConfig pde;
    pde.steps = 4;
    const Episode e = simulate_scenario(p, pde, 1);
    REQUIRE(e.high_accuracy);
    for (std::size_t k = 0; k < e.native.frames.size(); ++k) {
      CHECK((e.high_accuracy->frames[k] - e.native.frames[k]).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("interpolating a linear-in-space solution is exact") {
    const ChannelDomain dom = fixed_obstacle_params().domain();
    const TriMesh fine = generate_mesh(dom, 5e-3), coarse = generate_mesh(dom, 2e-2);
    Trajectory t;
    t.dt = 0.01;
    for (int k = 0; k < 3; ++k) {
      Matrix f(static_cast<Eigen::Index>(fine.node_count()), 1);
      for (std::size_t i = 0; i < fine.node_count(); ++i) {
        const Vec2 q = fine.position(static_cast<int>(i));
        f(static_cast<Eigen::Index>(i), 0) = 1.0 + 2.0 * q.x - 3.0 * q.y + 0.5 * k;
      }
      t.frames.push_back(f);
    }
    const Trajectory on = interpolate_trajectory(fine, t, coarse);
    CHECK(on.mesh_hash == coarse.hash());
    for (int k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < coarse.node_count(); ++i) {
        const Vec2 q = coarse.position(static_cast<int>(i));
        const double exact = 1.0 + 2.0 * q.x - 3.0 * q.y + 0.5 * k;
        CHECK(std::abs(on.frames[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i), 0) - exact) <=
              1e-12 * std::abs(exact) + 1e-14);
      }
    }
  }
  SUBCASE("labels beat the coarse solver against the analytic Gaussian") {
    GaussianCase c;
    c.x0 = {0.3, 0.5};
    c.sigma0 = 0.08;
    c.velocity = {1.0, 0.0};
    c.mu = 1e-3;
    const Episode e = simulate_gaussian(c, 5e-2, 0.01, 10, 4);
    REQUIRE(e.high_accuracy);
    for (std::size_t k = 1; k < e.native.frames.size(); ++k) {
      const Matrix exact = c.field(e.mesh->positions(), 0.01 * static_cast<double>(k));
      CHECK(lumped_l2(*e.mesh, e.high_accuracy->frames[k], exact) < lumped_l2(*e.mesh, e.native.frames[k], exact));
    }
  }
}

TEST_CASE("fixed-obstacle test set") {
  PdeConfig pde;
  pde.steps = 2;
  const FixedObstacleSet set = fixed_obstacle_testset(4, 5e-3, 2e-2, 4e-3, pde, 5);
  REQUIRE(set.meshes.size() == 4);
  CHECK(std::is_sorted(set.resolutions.begin(), set.resolutions.end(), std::greater<>()));
  for (std::size_t k = 0; k < set.meshes.size(); ++k) {
    CHECK(set.meshes[k]->total_area() == doctest::Approx(set.reference_mesh->total_area()).epsilon(2e-3));
    CHECK(set.resolutions[k] >= 5e-3);
    CHECK(set.resolutions[k] <= 2e-2);
    if (k > 0) CHECK(set.meshes[k]->node_count() >= set.meshes[k - 1]->node_count());
    CHECK(set.reference_on(k).frames.size() == 3);
    CHECK(set.statics_on(k)->rows() == static_cast<Eigen::Index>(set.meshes[k]->node_count()));
  }
  CHECK(set.reference.mesh_hash == set.reference_mesh->hash());
  CHECK(set.reference_mesh->node_count() > set.meshes.back()->node_count());
  CHECK(set.pde.u_mean == 0.85);
  const std::vector<double> r{1e-2, 5e-3};
  const FixedObstacleSet two = fixed_obstacle_testset(r, 2.5e-3, pde);
  // Superlinear growth of node count as edge_min halves.
  CHECK(two.meshes[1]->node_count() > 2 * two.meshes[0]->node_count());
  CHECK(two.reference_mesh->node_count() > 2 * two.meshes[1]->node_count());
  CHECK_THROWS_AS(fixed_obstacle_testset(r, 1e-2, pde), ConfigError);
}

TEST_CASE("dataset directory round trip is byte-reproducible") {
  PdeConfig pde;
  pde.steps = 3;
  ScenarioRanges ranges;
  ranges.edge_min_lo = 1.5e-2;
  ranges.edge_min_hi = 2e-2;
  const auto scenarios = sample_scenarios(2, 7, ranges);
  const auto episodes = make_high_accuracy_dataset(scenarios, pde, 2);
  const auto a = temp_dir("ds_a"), b = temp_dir("ds_b");
  write_dataset(a.string(), episodes);
  write_dataset(b.string(), make_high_accuracy_dataset(sample_scenarios(2, 7, ranges), pde, 2));
  for (const char* f : {"mesh.msh", "trajectory.bin", "labels_ha.bin", "meta"}) {
    for (int id : {0, 1}) {
      const auto rel = std::filesystem::path("scenario_" + std::to_string(id)) / f;
      REQUIRE(std::filesystem::exists(a / rel));
      CHECK(slurp(a / rel) == slurp(b / rel));
    }
  }
  const std::string meta = slurp(a / "scenario_0" / "meta");
  for (const char* key : {"radius=", "cx=", "cy=", "u_mean=", "edge_min=", "seed=", "mu=", "dt=", "provenance="}) {
    CHECK(meta.find(key) != std::string::npos);
  }
  const auto back = read_dataset(a.string());
  REQUIRE(back.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back[k].mesh->hash() == episodes[k].mesh->hash());
    CHECK(back[k].native.frames.back() == episodes[k].native.frames.back());
    CHECK(back[k].high_accuracy->frames.back() == episodes[k].high_accuracy->frames.back());
    CHECK(*back[k].statics == *episodes[k].statics);
    CHECK(back[k].refinement == 2);
  }
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
  CHECK_THROWS_AS(read_dataset((a / "missing").string()), IoError);
}
