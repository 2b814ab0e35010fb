#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "msmgn/processor.hpp"

using namespace msmgn;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ProcessorBlock make_block(int d, std::mt19937_64& rng) {
  ProcessorBlock b;
  b.edge = nn::Mlp("e", 3 * d, 16, d, true, rng);
  b.node = nn::Mlp("n", 2 * d, 16, d, true, rng);
  return b;
}

struct Sample {
  Matrix state;
  Matrix statics;
  Matrix target;
};

Sample random_sample(const TriMesh& mesh, std::mt19937_64& rng) {
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  Sample s;
  s.state = random_matrix(n, 1, rng);
  s.statics = random_matrix(n, 2, rng);
  s.target = s.state + random_matrix(n, 1, rng, 0.1);
  return s;
}

Model small_model(const std::string& schedule, std::uint64_t seed, int latent = 8) {
  ModelConfig cfg;
  cfg.latent = latent;
  cfg.hidden = latent;
  cfg.schedule = schedule;
  return Model(cfg, seed);
}

// Fine input rows whose perturbation changes output row i, by direct perturbation.
std::vector<std::set<int>> influence(Model& model, const MultiGraph& g, const Sample& s) {
  const Matrix base = model.predict(g, s.state, s.statics);
  std::vector<std::set<int>> reached(static_cast<std::size_t>(base.rows()));
  for (Eigen::Index j = 0; j < s.state.rows(); ++j) {
    Matrix bumped = s.state;
    bumped(j, 0) += 0.5;
    const Matrix out = model.predict(g, bumped, s.statics);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      if (out(i, 0) != base(i, 0)) reached[static_cast<std::size_t>(i)].insert(static_cast<int>(j));
    }
  }
  return reached;
}

ChannelDomain cylinder_channel() {
  ChannelDomain d;
  d.obstacle = Circle{{0.275, 0.25}, 0.05};
  return d;
}

}  // namespace

TEST_CASE("schedule examples") {
  const Schedule a = parse_schedule("p=1H 11L 1H (U=1,D=1)");
  CHECK(a.total_mps() == 15);
  REQUIRE(a.steps.size() == 15);
  CHECK(a.steps.front() == StepKind::H);
  CHECK(a.steps[1] == StepKind::D);
  for (int k = 2; k < 13; ++k) CHECK(a.steps[static_cast<std::size_t>(k)] == StepKind::L);
  CHECK(a.steps[13] == StepKind::U);
  CHECK(a.steps[14] == StepKind::H);
  CHECK(a.multiscale());

  const Schedule b = parse_schedule("p=3H 6L 3H 6L 3H (U=2, D=2)");
  CHECK(b.total_mps() == 25);
  CHECK(b.h_count == 9);
  CHECK(b.l_count == 12);
  CHECK(b.u_count == 2);
  CHECK(b.d_count == 2);

  const Schedule c = parse_schedule("p=15H (U=0,D=0)");
  CHECK(c.total_mps() == 15);
  CHECK(!c.multiscale());
  CHECK(std::all_of(c.steps.begin(), c.steps.end(), [](StepKind k) { return k == StepKind::H; }));

  CHECK(parse_schedule("p=1H 5L 1H (D=1,U=1)").total_mps() == 9);
  CHECK(parse_schedule(b.canonical()).steps == b.steps);
}

TEST_CASE("schedule errors") {
  for (const char* bad : {"", "p=", "1H (U=0,D=0)", "p=1H", "p=0H (U=0,D=0)", "p=1X (U=0,D=0)", "p=1L (U=0,D=0)",
                          "p=1H 2L (U=0,D=1)", "p=1H 2L 1H (U=2,D=1)", "p=1H 2L 1H (U=0,D=0)",
                          "p=1H (U=0,D=0) extra", "p=1 H (U=0,D=0)", "p=-1H (U=0,D=0)"}) {
    CHECK_THROWS_AS(parse_schedule(bad), ParseError);
  }
}

TEST_CASE("same-level update examples") {
  std::mt19937_64 rng(11);
  const TriMesh mesh = generate_mesh(cylinder_channel(), 5e-2);
  const GraphGeometry geo = mesh_graph(mesh);
  const int d = 6;
  nn::Tape t(false);
  EncodedGraph g{t.constant(random_matrix(static_cast<Eigen::Index>(geo.node_count()), d, rng)),
                 t.constant(random_matrix(static_cast<Eigen::Index>(geo.edge_count()), d, rng)), &geo};

  SUBCASE("zero weights leave latents unchanged") {
    ProcessorBlock block = make_block(d, rng);
    block.edge.zero();
    block.node.zero();
    for (auto* update : {&high_res_update, &low_res_update}) {
      const EncodedGraph out = (*update)(t, g, block);
      CHECK(out.nodes.value() == g.nodes.value());
      CHECK(out.edges.value() == g.edges.value());
    }
  }

  SUBCASE("permuting edge storage order is bit-identical") {
    ProcessorBlock block = make_block(d, rng);
    const EncodedGraph out = high_res_update(t, g, block);
    std::vector<int> perm(geo.edge_count());
    for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = static_cast<int>(k);
    std::shuffle(perm.begin(), perm.end(), rng);
    GraphGeometry shuffled = geo;
    std::vector<int> s(perm.size()), r(perm.size());
    Matrix lat(g.edges.rows(), d);
    for (std::size_t k = 0; k < perm.size(); ++k) {
      const auto src = static_cast<std::size_t>(perm[k]);
      s[k] = (*geo.senders)[src];
      r[k] = (*geo.receivers)[src];
      lat.row(static_cast<Eigen::Index>(k)) = g.edges.value().row(perm[k]);
    }
    shuffled.order = aggregation_order(s, r);
    shuffled.senders = std::make_shared<const std::vector<int>>(s);
    shuffled.receivers = std::make_shared<const std::vector<int>>(r);
    const EncodedGraph p = high_res_update(t, EncodedGraph{g.nodes, t.constant(lat), &shuffled}, block);
    CHECK(p.nodes.value() == out.nodes.value());
    for (std::size_t k = 0; k < perm.size(); ++k) {
      CHECK(p.edges.value().row(static_cast<Eigen::Index>(k)) == out.edges.value().row(perm[k]));
    }
  }
}

TEST_CASE("node with no incoming edges aggregates zero") {
  std::mt19937_64 rng(12);
  const int d = 4;
  GraphGeometry geo;
  geo.positions = {{0, 0}, {1, 0}, {2, 0}};
  geo.kinds = {NodeKind::interior, NodeKind::interior, NodeKind::interior};
  const std::vector<int> s{0}, r{1};
  geo.senders = std::make_shared<const std::vector<int>>(s);
  geo.receivers = std::make_shared<const std::vector<int>>(r);
  geo.order = aggregation_order(s, r);
  geo.edge_features = edge_features(geo.positions, geo.positions, s, r);
  ProcessorBlock block = make_block(d, rng);
  nn::Tape t(false);
  const Matrix v = random_matrix(3, d, rng);
  const EncodedGraph out = low_res_update(t, {t.constant(v), t.constant(random_matrix(1, d, rng)), &geo}, block);
  for (Eigen::Index i : {0, 2}) {
    Matrix in(1, 2 * d);
    in << v.row(i), RowVector::Zero(d);
    const Matrix expected = v.row(i) + block.node.forward(in);
    CHECK((out.nodes.value().row(i) - expected).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("one low-res update reaches exactly one coarse hop") {
  std::mt19937_64 rng(13);
  const TriMesh coarse = generate_mesh({1.0, 0.4, std::nullopt}, 0.2);
  REQUIRE(coarse.node_count() <= 30);
  const GraphGeometry geo = mesh_graph(coarse);
  const auto adj = oracle::adjacency(coarse);
  const int d = 4;
  ProcessorBlock block = make_block(d, rng);
  const Matrix e = random_matrix(static_cast<Eigen::Index>(geo.edge_count()), d, rng);
  const Matrix v = random_matrix(static_cast<Eigen::Index>(geo.node_count()), d, rng);
  nn::Tape t(false);
  const Matrix base = low_res_update(t, {t.constant(v), t.constant(e), &geo}, block).nodes.value();
  for (int j = 0; j < static_cast<int>(geo.node_count()); ++j) {
    Matrix bumped = v;
    bumped.row(j).array() += 0.3;
    const Matrix out = low_res_update(t, {t.constant(bumped), t.constant(e), &geo}, block).nodes.value();
    const auto dist = oracle::bfs(adj, j);
    for (int i = 0; i < out.rows(); ++i) {
      const bool changed = out.row(i) != base.row(i);
      CHECK(changed == (dist[static_cast<std::size_t>(i)] <= 1));
    }
  }
}

TEST_CASE("transfer updates touch only connected targets and leave sources alone") {
  std::mt19937_64 rng(14);
  const ChannelDomain dom{1.0, 0.4, std::nullopt};
  const TriMesh fine = generate_mesh(dom, 0.1);
  const TriMesh coarse = generate_mesh(dom, 0.2);
  const int d = 4;
  nn::Tape t(false);
  for (auto dir : {TransferDirection::down, TransferDirection::up}) {
    const TriMesh& src = dir == TransferDirection::down ? fine : coarse;
    const TriMesh& dst = dir == TransferDirection::down ? coarse : fine;
    const TransferGeometry tg = build_transfer(src.positions(), dst, dir);
    auto run = [&](ProcessorBlock& block, const Matrix& s, const Matrix& r, const Matrix& e) {
      return dir == TransferDirection::down ? downsample_update(t, t.constant(s), t.constant(r), t.constant(e), tg, block)
                                            : upsample_update(t, t.constant(s), t.constant(r), t.constant(e), tg, block);
    };
    const Matrix vs = random_matrix(static_cast<Eigen::Index>(src.node_count()), d, rng);
    const Matrix vr = random_matrix(static_cast<Eigen::Index>(dst.node_count()), d, rng);
    const Matrix e = random_matrix(static_cast<Eigen::Index>(tg.edge_count()), d, rng);

    ProcessorBlock zero = make_block(d, rng);
    zero.edge.zero();
    zero.node.zero();
    CHECK(run(zero, vs, vr, e).target_nodes.value() == vr);

    ProcessorBlock block = make_block(d, rng);
    const Matrix base = run(block, vs, vr, e).target_nodes.value();
    std::set<int> has_incoming(tg.receivers->begin(), tg.receivers->end());
    for (int i = 0; i < base.rows(); ++i) {
      if (has_incoming.count(i)) continue;
      Matrix in(1, 2 * d);
      in << vr.row(i), RowVector::Zero(d);
      CHECK((base.row(i) - (vr.row(i) + block.node.forward(in))).cwiseAbs().maxCoeff() < 1e-14);
    }
    for (int j = 0; j < static_cast<int>(src.node_count()); ++j) {
      Matrix bumped = vs;
      bumped.row(j).array() += 0.3;
      const Matrix out = run(block, bumped, vr, e).target_nodes.value();
      std::set<int> linked;
      for (std::size_t k = 0; k < tg.edge_count(); ++k) {
        if ((*tg.senders)[k] == j) linked.insert((*tg.receivers)[k]);
      }
      for (int i = 0; i < out.rows(); ++i) CHECK((out.row(i) != base.row(i)) == (linked.count(i) > 0));
    }
    CHECK_THROWS_AS(run(block, vr, vr, e), ShapeError);
  }
}

TEST_CASE("zero-weight decoder is the identity on interior nodes") {
  std::mt19937_64 rng(15);
  const ChannelDomain dom = cylinder_channel();
  const TriMesh fine = generate_mesh(dom, 2e-2), coarse = generate_mesh(dom, 5e-2);
  const MultiGraph g = make_multigraph(fine, coarse);
  Model model = small_model("p=1H 2L 1H (U=1,D=1)", 3);
  const Sample s = random_sample(fine, rng);
  model.update_normalizers(g, s.state, s.statics, s.target);
  for (nn::Parameter* p : model.parameters()) {
    if (p->name.rfind("dec.", 0) == 0) p->value.setZero();
  }
  CHECK(model.predict(g, s.state, s.statics) == s.state);

  Model all_zero = small_model("p=2H (U=0,D=0)", 4);
  all_zero.update_normalizers(g, s.state, s.statics, s.target);
  all_zero.zero_weights();
  CHECK(all_zero.predict(g, s.state, s.statics) == s.state);
}

TEST_CASE("prescribed nodes keep their input value") {
  std::mt19937_64 rng(16);
  const TriMesh fine = generate_mesh(cylinder_channel(), 2e-2);
  const MultiGraph g = make_multigraph(fine);
  Model model = small_model("p=2H (U=0,D=0)", 5);
  const Sample s = random_sample(fine, rng);
  model.update_normalizers(g, s.state, s.statics, s.target);
  const Matrix out = model.predict(g, s.state, s.statics);
  int changed = 0;
  for (std::size_t i = 0; i < fine.node_count(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (is_prescribed(fine.kind(static_cast<int>(i)))) {
      CHECK(out(r, 0) == s.state(r, 0));
    } else {
      changed += out(r, 0) != s.state(r, 0) ? 1 : 0;
    }
  }
  CHECK(changed > 0);
}

TEST_CASE("receptive field of fine-only schedules") {
  std::mt19937_64 rng(17);
  const TriMesh fine = generate_mesh({1.0, 0.4, std::nullopt}, 0.1);
  REQUIRE(fine.node_count() <= 200);
  const MultiGraph g = make_multigraph(fine);
  const auto adj = oracle::adjacency(fine);
  for (int n : {1, 2}) {
    Model model = small_model(fmt::format("p={}H (U=0,D=0)", n), 6);
    const Sample s = random_sample(fine, rng);
    model.update_normalizers(g, s.state, s.statics, s.target);
    const auto reached = influence(model, g, s);
    int violations = 0, at_limit = 0;
    for (std::size_t i = 0; i < reached.size(); ++i) {
      if (is_prescribed(fine.kind(static_cast<int>(i)))) continue;
      const auto dist = oracle::bfs(adj, static_cast<int>(i));
      for (int j : reached[i]) {
        violations += dist[static_cast<std::size_t>(j)] > n + 1 ? 1 : 0;
        at_limit += dist[static_cast<std::size_t>(j)] == n ? 1 : 0;
      }
    }
    CHECK(violations == 0);
    CHECK(at_limit > 0);
  }
}

TEST_CASE("a D-L-U cycle carries influence beyond the fine-hop budget") {
  std::mt19937_64 rng(18);
  const ChannelDomain dom{1.0, 0.4, std::nullopt};
  const TriMesh fine = generate_mesh(dom, 0.05), coarse = generate_mesh(dom, 0.2);
  const MultiGraph g = make_multigraph(fine, coarse);
  const auto adj = oracle::adjacency(fine);
  Model model = small_model("p=1H 2L 1H (U=1,D=1)", 7);
  const Sample s = random_sample(fine, rng);
  model.update_normalizers(g, s.state, s.statics, s.target);
  const auto reached = influence(model, g, s);
  int beyond = 0, farthest = 0;
  for (std::size_t i = 0; i < reached.size(); ++i) {
    const auto dist = oracle::bfs(adj, static_cast<int>(i));
    for (int j : reached[i]) {
      const int dj = dist[static_cast<std::size_t>(j)];
      beyond += dj > 3 ? 1 : 0;
      farthest = std::max(farthest, dj);
    }
  }
  CHECK(beyond > 0);
  CHECK(farthest >= 6);
}

TEST_CASE("predictions are invariant under translation") {
  std::mt19937_64 rng(19);
  const ChannelDomain dom = cylinder_channel();
  const TriMesh fine = generate_mesh(dom, 2e-2), coarse = generate_mesh(dom, 5e-2);
  auto shift = [](const TriMesh& m) {
    std::vector<Vec2> p(m.positions().begin(), m.positions().end());
    for (auto& q : p) q = q + Vec2{2.5, -1.25};
    return TriMesh(p, {m.triangles().begin(), m.triangles().end()}, {m.kinds().begin(), m.kinds().end()},
                   m.edge_min(), m.edge_max());
  };
  const MultiGraph a = make_multigraph(fine, coarse), b = make_multigraph(shift(fine), shift(coarse));
  Model model = small_model("p=1H 2L 1H (U=1,D=1)", 8);
  const Sample s = random_sample(fine, rng);
  model.update_normalizers(a, s.state, s.statics, s.target);
  const Matrix pa = model.predict(a, s.state, s.statics), pb = model.predict(b, s.state, s.statics);
  CHECK((pa - pb).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("full-model parameter gradient matches central differences") {
  std::mt19937_64 rng(20);
  const ChannelDomain dom{1.0, 1.0, std::nullopt};
  const TriMesh fine = generate_mesh(dom, 0.5), coarse = generate_mesh(dom, 1.0);
  REQUIRE(fine.node_count() <= 30);
  const MultiGraph g = make_multigraph(fine, coarse);
  Model model = small_model("p=1H 2L 1H (U=1,D=1)", 9);
  const Sample s = random_sample(fine, rng);
  const Matrix noise = random_matrix(s.state.rows(), 1, rng, 0.02);
  model.update_normalizers(g, s.state, s.statics, s.target);
  // Zero-initialized biases put dead ReLU units exactly on their kink; move to a generic point.
  for (nn::Parameter* p : model.parameters()) p->value += random_matrix(p->value.rows(), p->value.cols(), rng, 0.1);
  {
    nn::Tape t(true);
    t.backward(model.loss(t, g, s.state, s.statics, s.target, &noise));
  }
  double worst = 0.0;
  for (nn::Parameter* p : model.parameters()) {
    const Matrix analytic = p->grad;
    auto f = [&](const Matrix& x) {
      const Matrix saved = p->value;
      p->value = x;
      nn::Tape t(false);
      const double v = model.loss(t, g, s.state, s.statics, s.target, &noise).value()(0, 0);
      p->value = saved;
      return v;
    };
    const Matrix fd = oracle::finite_difference(f, p->value);
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    worst = std::max(worst, (analytic - fd).cwiseAbs().maxCoeff() / scale);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip reproduces predictions bit-exactly") {
  std::mt19937_64 rng(21);
  const ChannelDomain dom = cylinder_channel();
  const TriMesh fine = generate_mesh(dom, 2e-2), coarse = generate_mesh(dom, 5e-2);
  const MultiGraph g = make_multigraph(fine, coarse);
  Model model = small_model("p=1H 2L 1H (U=1,D=1)", 10);
  const Sample s = random_sample(fine, rng);
  model.update_normalizers(g, s.state, s.statics, s.target);
  std::stringstream buf;
  nn::write_checkpoint(buf, model.to_checkpoint());
  Model back = Model::from_checkpoint(nn::read_checkpoint(buf));
  CHECK(back.parameter_count() == model.parameter_count());
  CHECK(back.predict(g, s.state, s.statics) == model.predict(g, s.state, s.statics));
}

TEST_CASE("model errors") {
  std::mt19937_64 rng(22);
  const TriMesh fine = generate_mesh(cylinder_channel(), 5e-2);
  Model ms = small_model("p=1H 2L 1H (U=1,D=1)", 1);
  const Sample s = random_sample(fine, rng);
  CHECK_THROWS_AS(ms.predict(make_multigraph(fine), s.state, s.statics), ConfigError);
  Model mgn = small_model("p=1H (U=0,D=0)", 1);
  const MultiGraph g = make_multigraph(fine);
  CHECK_THROWS_AS(mgn.predict(g, s.statics, s.statics), ShapeError);
  CHECK_THROWS_AS(mgn.predict(g, s.state.topRows(3), s.statics.topRows(3)), ShapeError);
  CHECK_THROWS_AS(small_model("p=1L (U=0,D=0)", 1), ParseError);
}
