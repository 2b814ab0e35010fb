#include "msmgn/graphs.hpp"

#include <algorithm>
#include <cstdio>
#include <tuple>

#include <fmt/format.h>

namespace msmgn {
namespace {

IndexList share(std::vector<int> v) { return std::make_shared<const std::vector<int>>(std::move(v)); }

NodeKind lattice_kind(const ChannelDomain& d, Vec2 p) {
  if (p.x == 0.0) return NodeKind::inflow;
  if (p.x == d.length) return NodeKind::outflow;
  if (p.y == 0.0 || p.y == d.height) return NodeKind::wall;
  return NodeKind::interior;
}

void fill_masks(MultiGraph& g) {
  auto prescribed = std::make_shared<std::vector<bool>>(g.fine.node_count());
  auto loss = std::make_shared<std::vector<bool>>(g.fine.node_count());
  for (std::size_t i = 0; i < g.fine.node_count(); ++i) {
    (*prescribed)[i] = is_prescribed(g.fine.kinds[i]);
    (*loss)[i] = !(*prescribed)[i];
  }
  g.prescribed = std::move(prescribed);
  g.loss_mask = std::move(loss);
}

TransferGeometry reversed(const TransferGeometry& t, std::span<const Vec2> new_sender_pos,
                          std::span<const Vec2> new_receiver_pos) {
  // Regroup by the new source so edges stay sorted by sender.
  std::vector<std::size_t> order(t.edge_count());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return (*t.receivers)[a] < (*t.receivers)[b]; });
  std::vector<int> s, r;
  s.reserve(order.size());
  r.reserve(order.size());
  for (std::size_t k : order) {
    s.push_back((*t.receivers)[k]);
    r.push_back((*t.senders)[k]);
  }
  TransferGeometry out;
  out.direction = t.direction == TransferDirection::down ? TransferDirection::up : TransferDirection::down;
  out.source_nodes = t.target_nodes;
  out.target_nodes = t.source_nodes;
  out.edge_features = edge_features(new_sender_pos, new_receiver_pos, s, r);
  out.order = aggregation_order(s, r);
  out.senders = share(std::move(s));
  out.receivers = share(std::move(r));
  return out;
}

}  // namespace

IndexList aggregation_order(const std::vector<int>& senders, const std::vector<int>& receivers) {
  std::vector<int> order(senders.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ka = std::tie(receivers[static_cast<std::size_t>(a)], senders[static_cast<std::size_t>(a)], a);
    const auto kb = std::tie(receivers[static_cast<std::size_t>(b)], senders[static_cast<std::size_t>(b)], b);
    return ka < kb;
  });
  return share(std::move(order));
}

Matrix edge_features(std::span<const Vec2> sender_pos, std::span<const Vec2> receiver_pos,
                     const std::vector<int>& senders, const std::vector<int>& receivers) {
  Matrix f(static_cast<Eigen::Index>(senders.size()), kEdgeFeatureWidth);
  for (std::size_t k = 0; k < senders.size(); ++k) {
    const Vec2 d = sender_pos[static_cast<std::size_t>(senders[k])] -
                   receiver_pos[static_cast<std::size_t>(receivers[k])];
    const auto r = static_cast<Eigen::Index>(k);
    f(r, 0) = d.x;
    f(r, 1) = d.y;
    f(r, 2) = norm(d);
  }
  return f;
}

GraphGeometry mesh_graph(const TriMesh& mesh) {
  GraphGeometry g;
  g.positions.assign(mesh.positions().begin(), mesh.positions().end());
  g.kinds.assign(mesh.kinds().begin(), mesh.kinds().end());
  std::vector<int> s, r;
  s.reserve(2 * mesh.edges().size());
  r.reserve(2 * mesh.edges().size());
  for (const auto& e : mesh.edges()) {
    s.push_back(e[0]);
    r.push_back(e[1]);
    s.push_back(e[1]);
    r.push_back(e[0]);
  }
  g.edge_features = edge_features(g.positions, g.positions, s, r);
  g.order = aggregation_order(s, r);
  g.senders = share(std::move(s));
  g.receivers = share(std::move(r));
  return g;
}

Matrix node_kind_onehot(std::span<const NodeKind> kinds) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(kinds.size()), kNodeKindCount);
  for (std::size_t i = 0; i < kinds.size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<int>(kinds[i])) = 1.0;
  return m;
}

UniformGrid make_grid(const ChannelDomain& domain, double spacing) {
  domain.validate();
  if (!(spacing > 0.0)) throw ConfigError("grid spacing must be positive");
  UniformGrid grid;
  grid.nx = std::max(2, static_cast<int>(std::lround(domain.length / spacing)));
  grid.ny = std::max(2, static_cast<int>(std::lround(domain.height / spacing)));
  grid.dx = domain.length / grid.nx;
  grid.dy = domain.height / grid.ny;
  const int px = grid.nx + 1, py = grid.ny + 1;
  grid.node_of_point.assign(static_cast<std::size_t>(px) * py, -1);
  for (int j = 0; j < py; ++j) {
    for (int i = 0; i < px; ++i) {
      // Exact boundary coordinates so tags are unambiguous.
      const Vec2 p{i == grid.nx ? domain.length : i * grid.dx, j == grid.ny ? domain.height : j * grid.dy};
      if (domain.obstacle && norm(p - domain.obstacle->center) < domain.obstacle->radius) continue;
      grid.node_of_point[static_cast<std::size_t>(j) * px + i] = static_cast<int>(grid.graph.positions.size());
      grid.graph.positions.push_back(p);
      grid.graph.kinds.push_back(lattice_kind(domain, p));
    }
  }
  std::vector<int> s, r;
  auto link = [&](int a, int b) {
    if (a < 0 || b < 0) return;
    s.push_back(a);
    r.push_back(b);
    s.push_back(b);
    r.push_back(a);
  };
  for (int j = 0; j < py; ++j) {
    for (int i = 0; i < px; ++i) {
      const int here = grid.node_of_point[static_cast<std::size_t>(j) * px + i];
      if (i + 1 < px) link(here, grid.node_of_point[static_cast<std::size_t>(j) * px + i + 1]);
      if (j + 1 < py) link(here, grid.node_of_point[static_cast<std::size_t>(j + 1) * px + i]);
    }
  }
  grid.graph.edge_features = edge_features(grid.graph.positions, grid.graph.positions, s, r);
  grid.graph.order = aggregation_order(s, r);
  grid.graph.senders = share(std::move(s));
  grid.graph.receivers = share(std::move(r));
  return grid;
}

TransferGeometry build_transfer(std::span<const Vec2> source, const TriMesh& target, TransferDirection direction) {
  const PointLocator locator(target);
  std::vector<int> s, r;
  s.reserve(3 * source.size());
  r.reserve(3 * source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const BaryLocation loc = locator.locate(source[i]);
    for (int corner : target.triangles()[static_cast<std::size_t>(loc.triangle)]) {
      s.push_back(static_cast<int>(i));
      r.push_back(corner);
    }
  }
  TransferGeometry t;
  t.direction = direction;
  t.source_nodes = source.size();
  t.target_nodes = target.node_count();
  t.edge_features = edge_features(source, target.positions(), s, r);
  t.order = aggregation_order(s, r);
  t.senders = share(std::move(s));
  t.receivers = share(std::move(r));
  return t;
}

TransferGeometry build_grid_transfer(const TriMesh& fine, const UniformGrid& grid, TransferDirection direction) {
  const int px = grid.nx + 1;
  std::vector<int> s, r;
  std::vector<int> dropped;
  for (std::size_t n = 0; n < fine.node_count(); ++n) {
    const Vec2 p = fine.position(static_cast<int>(n));
    const int i = std::clamp(static_cast<int>(std::floor((p.x - grid.origin.x) / grid.dx)), 0, grid.nx - 1);
    const int j = std::clamp(static_cast<int>(std::floor((p.y - grid.origin.y) / grid.dy)), 0, grid.ny - 1);
    const int corners[4] = {j * px + i, j * px + i + 1, (j + 1) * px + i + 1, (j + 1) * px + i};
    bool any = false;
    for (int c : corners) {
      const int node = grid.node_of_point[static_cast<std::size_t>(c)];
      if (node < 0) continue;
      s.push_back(static_cast<int>(n));
      r.push_back(node);
      any = true;
    }
    if (!any) dropped.push_back(static_cast<int>(n));
  }
  if (!dropped.empty()) {
    fmt::print(stderr, "warning: {} fine nodes lie in lattice cells fully inside the obstacle and were dropped\n",
               dropped.size());
  }
  TransferGeometry down;
  down.direction = TransferDirection::down;
  down.source_nodes = fine.node_count();
  down.target_nodes = grid.graph.node_count();
  down.edge_features = edge_features(fine.positions(), grid.graph.positions, s, r);
  down.order = aggregation_order(s, r);
  down.senders = share(std::move(s));
  down.receivers = share(std::move(r));
  down.dropped = dropped;
  if (direction == TransferDirection::down) return down;
  TransferGeometry up = reversed(down, grid.graph.positions, fine.positions());
  up.dropped = std::move(dropped);
  return up;
}

MultiGraph make_multigraph(const TriMesh& fine) {
  MultiGraph g;
  g.fine = mesh_graph(fine);
  fill_masks(g);
  return g;
}

MultiGraph make_multigraph(const TriMesh& fine, const TriMesh& coarse) {
  MultiGraph g = make_multigraph(fine);
  g.coarse = mesh_graph(coarse);
  g.down = build_transfer(fine.positions(), coarse, TransferDirection::down);
  g.up = build_transfer(coarse.positions(), fine, TransferDirection::up);
  return g;
}

MultiGraph make_multigraph(const TriMesh& fine, const UniformGrid& grid) {
  MultiGraph g = make_multigraph(fine);
  g.coarse = grid.graph;
  g.down = build_grid_transfer(fine, grid, TransferDirection::down);
  g.up = build_grid_transfer(fine, grid, TransferDirection::up);
  return g;
}

EncodedGraph encode_fine(nn::Tape& tape, const GraphGeometry& g, nn::Var normalized_fields,
                         const nn::Normalizer& edge_norm, nn::Mlp& node_encoder, nn::Mlp& edge_encoder) {
  if (static_cast<std::size_t>(normalized_fields.rows()) != g.node_count()) {
    throw ShapeError(fmt::format("fields have {} rows but the graph has {} nodes", normalized_fields.rows(),
                                 g.node_count()));
  }
  const nn::Var parts[] = {tape.constant(node_kind_onehot(g.kinds)), normalized_fields};
  EncodedGraph out;
  out.nodes = node_encoder.apply(tape, nn::concat_cols(parts));
  out.edges = edge_encoder.apply(tape, tape.constant(edge_norm.apply(g.edge_features)));
  out.geometry = &g;
  return out;
}

EncodedGraph encode_coarse(nn::Tape& tape, const GraphGeometry& g, const nn::Normalizer& edge_norm,
                           nn::Mlp& node_encoder, nn::Mlp& edge_encoder) {
  EncodedGraph out;
  out.nodes = node_encoder.apply(tape, tape.constant(node_kind_onehot(g.kinds)));
  out.edges = edge_encoder.apply(tape, tape.constant(edge_norm.apply(g.edge_features)));
  out.geometry = &g;
  return out;
}

nn::Var encode_transfer(nn::Tape& tape, const TransferGeometry& t, const nn::Normalizer& edge_norm,
                        nn::Mlp& edge_encoder) {
  return edge_encoder.apply(tape, tape.constant(edge_norm.apply(t.edge_features)));
}

}  // namespace msmgn
