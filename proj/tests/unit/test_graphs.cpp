#include <algorithm>
#include <random>
#include <set>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "msmgn/graphs.hpp"

using namespace msmgn;

namespace {

ChannelDomain cylinder_channel() {
  ChannelDomain d;
  d.obstacle = Circle{{0.275, 0.25}, 0.05};
  return d;
}

TriMesh translated(const TriMesh& m, Vec2 shift) {
  std::vector<Vec2> p(m.positions().begin(), m.positions().end());
  for (auto& q : p) q = q + shift;
  return TriMesh(p, {m.triangles().begin(), m.triangles().end()}, {m.kinds().begin(), m.kinds().end()},
                 m.edge_min(), m.edge_max());
}

}  // namespace

TEST_CASE("encode_fine on the two-triangle square") {
  const ChannelDomain square{1.0, 1.0, std::nullopt};
  const TriMesh mesh = generate_mesh(square, 1.0);
  const GraphGeometry g = mesh_graph(mesh);
  CHECK(g.node_count() == 4);
  CHECK(g.edge_count() == 10);
  std::mt19937_64 rng(1);
  nn::Mlp node_enc("n", kNodeKindCount + 1, 16, 8, true, rng), edge_enc("e", kEdgeFeatureWidth, 16, 8, true, rng);
  nn::Normalizer edge_norm(kEdgeFeatureWidth);
  nn::Tape t(false);
  const EncodedGraph enc = encode_fine(t, g, t.constant(Matrix::Ones(4, 1)), edge_norm, node_enc, edge_enc);
  CHECK(enc.nodes.rows() == 4);
  CHECK(enc.edges.rows() == 10);
  CHECK_THROWS_AS(encode_fine(t, g, t.constant(Matrix::Ones(5, 1)), edge_norm, node_enc, edge_enc), ShapeError);

  node_enc.zero();
  edge_enc.zero();
  const EncodedGraph zero = encode_fine(t, g, t.constant(Matrix::Ones(4, 1)), edge_norm, node_enc, edge_enc);
  CHECK(zero.nodes.value().cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.edges.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("edge latents are invariant under translation") {
  const TriMesh mesh = generate_mesh(cylinder_channel(), 2e-2);
  const TriMesh moved = translated(mesh, {0.3, -0.1});
  std::mt19937_64 rng(2);
  nn::Mlp node_enc("n", kNodeKindCount + 1, 16, 8, true, rng), edge_enc("e", kEdgeFeatureWidth, 16, 8, true, rng);
  nn::Mlp cnode_enc("cn", kNodeKindCount, 16, 8, true, rng);
  nn::Normalizer edge_norm(kEdgeFeatureWidth);
  const GraphGeometry a = mesh_graph(mesh), b = mesh_graph(moved);
  edge_norm.update(a.edge_features);
  nn::Tape t(false);
  const Matrix fields = Matrix::Constant(static_cast<Eigen::Index>(mesh.node_count()), 1, 0.5);
  const auto ea = encode_fine(t, a, t.constant(fields), edge_norm, node_enc, edge_enc);
  const auto eb = encode_fine(t, b, t.constant(fields), edge_norm, node_enc, edge_enc);
  CHECK((ea.edges.value() - eb.edges.value()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ea.nodes.value() == eb.nodes.value());
  const auto ca = encode_coarse(t, a, edge_norm, cnode_enc, edge_enc);
  const auto cb = encode_coarse(t, b, edge_norm, cnode_enc, edge_enc);
  CHECK((ca.edges.value() - cb.edges.value()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ca.nodes.value() == cb.nodes.value());
}

TEST_CASE("coarse node features are the node-kind one-hot only") {
  const TriMesh coarse = generate_mesh(cylinder_channel(), 1e-2);
  const GraphGeometry g = mesh_graph(coarse);
  std::mt19937_64 rng(3);
  nn::Mlp wrong("n", kNodeKindCount + 1, 8, 4, true, rng), right("n", kNodeKindCount, 8, 4, true, rng);
  nn::Mlp edge_enc("e", kEdgeFeatureWidth, 8, 4, true, rng);
  nn::Normalizer edge_norm(kEdgeFeatureWidth);
  nn::Tape t(false);
  CHECK_THROWS_AS(encode_coarse(t, g, edge_norm, wrong, edge_enc), ShapeError);
  CHECK_NOTHROW(encode_coarse(t, g, edge_norm, right, edge_enc));
  right.zero();
  edge_enc.zero();
  const auto zero = encode_coarse(t, g, edge_norm, right, edge_enc);
  CHECK(zero.nodes.value().cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.edges.value().cwiseAbs().maxCoeff() == 0.0);
  const Matrix onehot = node_kind_onehot(g.kinds);
  CHECK(onehot.cols() == kNodeKindCount);
  CHECK(onehot.rowwise().sum() == Matrix::Ones(onehot.rows(), 1));
}

TEST_CASE("raw edge features are antisymmetric in displacement") {
  const TriMesh mesh = generate_mesh(cylinder_channel(), 2e-2);
  const GraphGeometry g = mesh_graph(mesh);
  for (std::size_t k = 0; k + 1 < g.edge_count(); k += 2) {
    CHECK((*g.senders)[k] == (*g.receivers)[k + 1]);
    CHECK((*g.receivers)[k] == (*g.senders)[k + 1]);
    const auto fwd = g.edge_features.row(static_cast<Eigen::Index>(k));
    const auto back = g.edge_features.row(static_cast<Eigen::Index>(k + 1));
    CHECK(fwd(0) == -back(0));
    CHECK(fwd(1) == -back(1));
    CHECK(fwd(2) == back(2));
    CHECK(fwd(2) == doctest::Approx(std::hypot(fwd(0), fwd(1))));
  }
}

TEST_CASE("fine mesh inside one coarse triangle gives 3N down edges onto its corners") {
  const TriMesh fine = generate_mesh({1.0, 1.0, std::nullopt}, 0.25);
  const TriMesh coarse({{-1, -1}, {3, -1}, {-1, 3}}, {{0, 1, 2}}, std::vector<NodeKind>(3, NodeKind::interior), 4, 20);
  const TransferGeometry down = build_transfer(fine.positions(), coarse, TransferDirection::down);
  CHECK(down.edge_count() == 3 * fine.node_count());
  for (std::size_t k = 0; k < down.edge_count(); ++k) {
    CHECK((*down.receivers)[k] >= 0);
    CHECK((*down.receivers)[k] <= 2);
    CHECK((*down.senders)[k] == static_cast<int>(k / 3));
  }
}

TEST_CASE("transfer graphs on channel meshes match the exhaustive-scan oracle") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> radius(0.03, 0.07), cx(0.15, 0.4), cy(0.12, 0.28);
  for (int trial = 0; trial < 3; ++trial) {
    ChannelDomain d;
    d.obstacle = Circle{{cx(rng), cy(rng)}, radius(rng)};
    const TriMesh fine = generate_mesh(d, 6e-3);
    const TriMesh coarse = generate_mesh(d, 2e-2);
    for (auto dir : {TransferDirection::down, TransferDirection::up}) {
      const TriMesh& src = dir == TransferDirection::down ? fine : coarse;
      const TriMesh& dst = dir == TransferDirection::down ? coarse : fine;
      const TransferGeometry t = build_transfer(src.positions(), dst, dir);
      REQUIRE(t.edge_count() == 3 * src.node_count());
      for (std::size_t i = 0; i < src.node_count(); ++i) {
        const auto expected = oracle::locate(dst, src.position(static_cast<int>(i)));
        REQUIRE(expected.triangle >= 0);
        std::multiset<int> want(dst.triangles()[static_cast<std::size_t>(expected.triangle)].begin(),
                                dst.triangles()[static_cast<std::size_t>(expected.triangle)].end());
        std::multiset<int> got;
        for (int k = 0; k < 3; ++k) {
          CHECK((*t.senders)[3 * i + static_cast<std::size_t>(k)] == static_cast<int>(i));
          got.insert((*t.receivers)[3 * i + static_cast<std::size_t>(k)]);
        }
        CHECK(got == want);
      }
      const TransferGeometry again = build_transfer(src.positions(), dst, dir);
      CHECK(*again.receivers == *t.receivers);
      CHECK(again.edge_features == t.edge_features);
    }
  }
}

TEST_CASE("grid transfer examples") {
  SUBCASE("node at a cell center without obstacle connects to 4 corners") {
    const ChannelDomain square{1.0, 1.0, std::nullopt};
    const UniformGrid grid = make_grid(square, 0.5);
    CHECK(grid.nx == 2);
    CHECK(grid.graph.node_count() == 9);
    const TriMesh one({{0.25, 0.25}, {0.3, 0.25}, {0.25, 0.3}}, {{0, 1, 2}}, std::vector<NodeKind>(3, NodeKind::interior),
                      0.05, 0.25);
    const TransferGeometry down = build_grid_transfer(one, grid, TransferDirection::down);
    CHECK(down.edge_count() == 12);
    std::set<int> corners((*down.receivers).begin(), (*down.receivers).begin() + 4);
    CHECK(corners == std::set<int>{0, 1, 3, 4});
  }
  SUBCASE("one corner inside the obstacle is omitted") {
    ChannelDomain d{1.0, 1.0, Circle{{0.5, 0.5}, 0.1}};
    const UniformGrid grid = make_grid(d, 0.5);
    CHECK(grid.graph.node_count() == 8);  // the center point is excluded
    const TriMesh one({{0.25, 0.25}, {0.3, 0.25}, {0.25, 0.3}}, {{0, 1, 2}}, std::vector<NodeKind>(3, NodeKind::interior),
                      0.05, 0.25);
    const TransferGeometry down = build_grid_transfer(one, grid, TransferDirection::down);
    CHECK(down.edge_count() == 9);
    for (int r : *down.receivers) {
      CHECK(norm(grid.graph.positions[static_cast<std::size_t>(r)] - Vec2{0.5, 0.5}) >= 0.1);
    }
  }
  SUBCASE("channel mesh: at most 4 edges per node, up is the reverse of down") {
    const ChannelDomain d = cylinder_channel();
    const TriMesh fine = generate_mesh(d, 1e-2);
    const UniformGrid grid = make_grid(d, 5e-2);
    const TransferGeometry down = build_grid_transfer(fine, grid, TransferDirection::down);
    const TransferGeometry up = build_grid_transfer(fine, grid, TransferDirection::up);
    CHECK(down.edge_count() <= 4 * fine.node_count());
    CHECK(up.edge_count() == down.edge_count());
    std::vector<int> per_node(fine.node_count(), 0);
    for (int s : *down.senders) ++per_node[static_cast<std::size_t>(s)];
    CHECK(*std::max_element(per_node.begin(), per_node.end()) == 4);
    CHECK(*std::min_element(per_node.begin(), per_node.end()) >= 1);
    std::multiset<std::pair<int, int>> fwd, rev;
    for (std::size_t k = 0; k < down.edge_count(); ++k) fwd.insert({(*down.senders)[k], (*down.receivers)[k]});
    for (std::size_t k = 0; k < up.edge_count(); ++k) rev.insert({(*up.receivers)[k], (*up.senders)[k]});
    CHECK(fwd == rev);
    for (const Vec2& p : grid.graph.positions) CHECK(norm(p - d.obstacle->center) >= d.obstacle->radius);
  }
}

TEST_CASE("aggregation order sorts by receiver then sender") {
  const std::vector<int> s{3, 1, 2, 0, 1}, r{1, 0, 1, 1, 1};
  const IndexList order = aggregation_order(s, r);
  CHECK(*order == std::vector<int>{1, 3, 4, 2, 0});
}

TEST_CASE("multigraph masks mark inflow nodes as prescribed") {
  const ChannelDomain d = cylinder_channel();
  const TriMesh fine = generate_mesh(d, 1e-2);
  const MultiGraph g = make_multigraph(fine, generate_mesh(d, 2e-2));
  REQUIRE(g.has_coarse());
  int prescribed = 0;
  for (std::size_t i = 0; i < fine.node_count(); ++i) {
    CHECK((*g.prescribed)[i] == (fine.kind(static_cast<int>(i)) == NodeKind::inflow));
    CHECK((*g.loss_mask)[i] == !(*g.prescribed)[i]);
    prescribed += (*g.prescribed)[i] ? 1 : 0;
  }
  CHECK(prescribed > 0);
  CHECK(g.down.edge_count() == 3 * fine.node_count());
  CHECK(g.up.edge_count() == 3 * g.coarse->node_count());
}
