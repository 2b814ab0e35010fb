#include <algorithm>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "msmgn/mesh.hpp"

namespace msmgn {

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::interior: return "interior";
    case NodeKind::wall: return "wall";
    case NodeKind::inflow: return "inflow";
    case NodeKind::outflow: return "outflow";
    case NodeKind::obstacle: return "obstacle";
  }
  return "interior";
}

NodeKind parse_node_kind(std::string_view text) {
  for (int k = 0; k < kNodeKindCount; ++k) {
    const auto kind = static_cast<NodeKind>(k);
    if (to_string(kind) == text) return kind;
  }
  throw ParseError(fmt::format("unknown node kind '{}'", text));
}

double ChannelDomain::clearance() const {
  if (!obstacle) return std::numeric_limits<double>::infinity();
  const auto& c = *obstacle;
  return std::min({c.center.x - c.radius, length - c.center.x - c.radius, c.center.y - c.radius,
                   height - c.center.y - c.radius});
}

void ChannelDomain::validate() const {
  if (!(length > 0.0) || !(height > 0.0) || !std::isfinite(length) || !std::isfinite(height)) {
    throw Error(fmt::format("channel dimensions must be positive (got {} x {})", length, height));
  }
  if (obstacle) {
    if (!(obstacle->radius > 0.0)) throw Error("obstacle radius must be positive");
    if (!(clearance() > 0.0)) {
      throw Error(fmt::format("obstacle (center {}, {}, radius {}) is not strictly inside the channel",
                              obstacle->center.x, obstacle->center.y, obstacle->radius));
    }
  }
}

bool ChannelDomain::contains(Vec2 p, double tol) const {
  if (p.x < -tol || p.x > length + tol || p.y < -tol || p.y > height + tol) return false;
  if (obstacle && norm(p - obstacle->center) < obstacle->radius - tol) return false;
  return true;
}

TriMesh::TriMesh(std::vector<Vec2> positions, std::vector<TriangleIndices> triangles,
                 std::vector<NodeKind> kinds, double edge_min, double edge_max)
    : positions_(std::move(positions)),
      triangles_(std::move(triangles)),
      kinds_(std::move(kinds)),
      edge_min_(edge_min),
      edge_max_(edge_max) {
  if (kinds_.size() != positions_.size()) {
    throw ShapeError(fmt::format("node kind count {} != node count {}", kinds_.size(),
                                 positions_.size()));
  }
  const int n = static_cast<int>(positions_.size());
  for (const auto& p : positions_) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw NonFiniteError("non-finite node position");
  }
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    for (int v : triangles_[t]) {
      if (v < 0 || v >= n) {
        throw ShapeError(fmt::format("triangle {} references node {} (node count {})", t, v, n));
      }
    }
    if (!(signed_area(t) > 0.0)) {
      throw Error(fmt::format("triangle {} is degenerate or clockwise (signed area {})", t,
                              signed_area(t)));
    }
  }
  edges_.reserve(triangles_.size() * 3);
  for (const auto& tri : triangles_) {
    for (int k = 0; k < 3; ++k) {
      int a = tri[k];
      int b = tri[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges_.push_back({a, b});
    }
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

double TriMesh::signed_area(std::size_t t) const {
  const auto [a, b, c] = corners(t);
  return 0.5 * cross(b - a, c - a);
}

std::array<Vec2, 3> TriMesh::corners(std::size_t t) const {
  const auto& tri = triangles_[t];
  return {position(tri[0]), position(tri[1]), position(tri[2])};
}

double TriMesh::total_area() const {
  double area = 0.0;
  for (std::size_t t = 0; t < triangles_.size(); ++t) area += signed_area(t);
  return area;
}

std::uint64_t TriMesh::hash() const {
  std::uint64_t h = fnv1a(positions_.data(), positions_.size() * sizeof(Vec2));
  h = fnv1a(triangles_.data(), triangles_.size() * sizeof(TriangleIndices), h);
  h = fnv1a(kinds_.data(), kinds_.size() * sizeof(NodeKind), h);
  return h;
}

std::vector<std::string> mesh_invariant_violations(const TriMesh& mesh,
                                                   const ChannelDomain* domain) {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    if (!(mesh.signed_area(t) > 0.0)) out.push_back(fmt::format("triangle {} has area <= 0", t));
  }
  const double lo = kEdgeSlackLow * mesh.edge_min();
  const double hi = kEdgeSlackHigh * mesh.edge_max();
  for (const auto& e : mesh.edges()) {
    const double len = norm(mesh.position(e[0]) - mesh.position(e[1]));
    if (len < lo || len > hi) {
      out.push_back(fmt::format("edge ({}, {}) length {:.6g} outside [{:.6g}, {:.6g}]", e[0], e[1],
                                len, lo, hi));
      if (out.size() > 20) return out;
    }
  }

  // Boundary edges (used by exactly one triangle) form closed loops; a
  // connected triangulation with L loops has V - E + F = 2 - L.
  std::map<EdgeIndices, int> use;
  for (const auto& tri : mesh.triangles()) {
    for (int k = 0; k < 3; ++k) {
      int a = tri[k];
      int b = tri[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++use[{a, b}];
    }
  }
  std::vector<int> parent(mesh.node_count());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<char> on_boundary(mesh.node_count(), 0);
  for (const auto& [e, count] : use) {
    if (count > 2) out.push_back(fmt::format("edge ({}, {}) shared by {} triangles", e[0], e[1], count));
    if (count == 1) {
      on_boundary[e[0]] = on_boundary[e[1]] = 1;
      parent[find(e[0])] = find(e[1]);
    }
  }
  int loops = 0;
  for (std::size_t i = 0; i < mesh.node_count(); ++i) {
    if (on_boundary[i] && find(static_cast<int>(i)) == static_cast<int>(i)) ++loops;
  }
  const long long euler = static_cast<long long>(mesh.node_count()) -
                          static_cast<long long>(mesh.edges().size()) +
                          static_cast<long long>(mesh.triangle_count());
  if (euler != 2 - loops) {
    out.push_back(fmt::format("Euler characteristic V-E+F = {} but {} boundary loop(s) expect {}",
                              euler, loops, 2 - loops));
  }
  if (domain) {
    const int expected_loops = domain->obstacle ? 2 : 1;
    if (loops != expected_loops) {
      out.push_back(fmt::format("{} boundary loop(s), expected {}", loops, expected_loops));
    }
    const double tol = 1e-9 * domain->diagonal();
    for (std::size_t i = 0; i < mesh.node_count(); ++i) {
      if (!domain->contains(mesh.position(static_cast<int>(i)), tol)) {
        out.push_back(fmt::format("node {} lies outside the domain", i));
      }
    }
  }
  return out;
}

}  // namespace msmgn
