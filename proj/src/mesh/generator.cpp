#include <algorithm>
#include <deque>
#include <numbers>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "msmgn/mesh.hpp"

namespace msmgn {
namespace {

using Real = long double;

Real orient(Vec2 a, Vec2 b, Vec2 c) {
  return (Real(b.x) - a.x) * (Real(c.y) - a.y) - (Real(b.y) - a.y) * (Real(c.x) - a.x);
}

// > 0 when d lies strictly inside the circumcircle of counter-clockwise (a, b, c).
Real incircle(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const Real adx = Real(a.x) - d.x, ady = Real(a.y) - d.y;
  const Real bdx = Real(b.x) - d.x, bdy = Real(b.y) - d.y;
  const Real cdx = Real(c.x) - d.x, cdy = Real(c.y) - d.y;
  const Real ad = adx * adx + ady * ady;
  const Real bd = bdx * bdx + bdy * bdy;
  const Real cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

bool circumcircle(Vec2 a, Vec2 b, Vec2 c, Vec2& center, double& radius) {
  const double bx = b.x - a.x, by = b.y - a.y;
  const double cx = c.x - a.x, cy = c.y - a.y;
  const double d = 2.0 * (bx * cy - by * cx);
  if (d == 0.0) return false;
  const double b2 = bx * bx + by * by;
  const double c2 = cx * cx + cy * cy;
  const double ux = (cy * b2 - by * c2) / d;
  const double uy = (bx * c2 - cx * b2) / d;
  center = {a.x + ux, a.y + uy};
  radius = std::hypot(ux, uy);
  return std::isfinite(radius);
}

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

struct DelaunayTriangle {
  std::array<int, 3> v{};
  // n[k] is the neighbour across the edge opposite v[k].
  std::array<int, 3> n{-1, -1, -1};
  bool alive = true;
};

// Incremental Bowyer-Watson triangulation with constrained (uncrossable) edges.
// Vertices 0..2 form an enclosing super-triangle.
class Triangulation {
 public:
  explicit Triangulation(Vec2 lo, Vec2 hi) {
    const Vec2 c = 0.5 * (lo + hi);
    const double m = std::max({hi.x - lo.x, hi.y - lo.y, 1e-12});
    points_ = {{c.x - 40 * m, c.y - 30 * m}, {c.x + 40 * m, c.y - 30 * m}, {c.x, c.y + 40 * m}};
    kinds_ = {NodeKind::interior, NodeKind::interior, NodeKind::interior};
    tris_.push_back({{0, 1, 2}, {-1, -1, -1}, true});
  }

  int add_point(Vec2 p, NodeKind kind) {
    points_.push_back(p);
    kinds_.push_back(kind);
    return static_cast<int>(points_.size()) - 1;
  }
  void pop_point() {
    points_.pop_back();
    kinds_.pop_back();
  }

  void constrain(int a, int b) { constrained_.insert(edge_key(a, b)); }
  bool is_constrained(int a, int b) const { return constrained_.count(edge_key(a, b)) != 0; }

  int locate(Vec2 p, int hint) const {
    int t = (hint >= 0 && hint < static_cast<int>(tris_.size()) && tris_[hint].alive) ? hint
                                                                                      : first_alive();
    const std::size_t limit = 4 * tris_.size() + 16;
    for (std::size_t step = 0; step < limit && t >= 0; ++step) {
      const auto& tri = tris_[t];
      int next = -1;
      for (int j = 0; j < 3; ++j) {
        const int k = static_cast<int>((j + step) % 3);
        if (orient(points_[tri.v[(k + 1) % 3]], points_[tri.v[(k + 2) % 3]], p) < 0) {
          next = tri.n[k];
          break;
        }
      }
      if (next == -1) {
        bool inside = true;
        for (int k = 0; k < 3; ++k) {
          if (orient(points_[tri.v[(k + 1) % 3]], points_[tri.v[(k + 2) % 3]], p) < 0) inside = false;
        }
        if (inside) return t;
        break;
      }
      t = next;
    }
    for (std::size_t i = 0; i < tris_.size(); ++i) {
      const auto& tri = tris_[i];
      if (!tri.alive) continue;
      if (orient(points_[tri.v[0]], points_[tri.v[1]], p) >= 0 &&
          orient(points_[tri.v[1]], points_[tri.v[2]], p) >= 0 &&
          orient(points_[tri.v[2]], points_[tri.v[0]], p) >= 0) {
        return static_cast<int>(i);
      }
    }
    return -1;
  }

  // Inserts point `pi`, growing the cavity from triangle `start`. Returns false
  // (leaving the triangulation untouched) when the cavity is not star-shaped
  // from the point.
  bool insert(int pi, int start, std::vector<int>* created = nullptr) {
    const Vec2 p = points_[pi];
    if (start < 0 || !tris_[start].alive || !in_circle(start, p)) return false;
    ++stamp_;
    if (mark_.size() < tris_.size()) mark_.resize(tris_.size(), 0);
    cavity_.clear();
    cavity_.push_back(start);
    mark_[start] = stamp_;
    for (std::size_t i = 0; i < cavity_.size(); ++i) {
      const auto& tri = tris_[cavity_[i]];
      for (int k = 0; k < 3; ++k) {
        const int nb = tri.n[k];
        if (nb < 0 || mark_[nb] == stamp_) continue;
        if (is_constrained(tri.v[(k + 1) % 3], tri.v[(k + 2) % 3])) continue;
        if (in_circle(nb, p)) {
          mark_[nb] = stamp_;
          cavity_.push_back(nb);
        }
      }
    }
    struct Rim {
      int a, b, outer;
    };
    std::vector<Rim> rim;
    for (int t : cavity_) {
      const auto& tri = tris_[t];
      for (int k = 0; k < 3; ++k) {
        const int nb = tri.n[k];
        if (nb >= 0 && mark_[nb] == stamp_) continue;
        const int a = tri.v[(k + 1) % 3];
        const int b = tri.v[(k + 2) % 3];
        if (!(orient(points_[a], points_[b], p) > 0)) return false;
        rim.push_back({a, b, nb});
      }
    }

    std::vector<int> ids(rim.size());
    for (std::size_t i = 0; i < rim.size(); ++i) {
      if (i < cavity_.size()) {
        ids[i] = cavity_[i];
      } else {
        ids[i] = static_cast<int>(tris_.size());
        tris_.emplace_back();
      }
    }
    for (std::size_t i = rim.size(); i < cavity_.size(); ++i) tris_[cavity_[i]].alive = false;
    if (mark_.size() < tris_.size()) mark_.resize(tris_.size(), 0);
    std::unordered_map<int, int> by_start, by_end;
    for (std::size_t i = 0; i < rim.size(); ++i) {
      by_start[rim[i].a] = ids[i];
      by_end[rim[i].b] = ids[i];
    }
    for (std::size_t i = 0; i < rim.size(); ++i) {
      auto& tri = tris_[ids[i]];
      tri.alive = true;
      tri.v = {rim[i].a, rim[i].b, pi};
      tri.n[2] = rim[i].outer;
      tri.n[0] = by_start.at(rim[i].b);
      tri.n[1] = by_end.at(rim[i].a);
    }
    for (std::size_t i = 0; i < rim.size(); ++i) {
      const int outer = rim[i].outer;
      if (outer < 0) continue;
      // Match by shared edge: cavity slots are reused, so old ids are ambiguous.
      auto& o = tris_[outer];
      for (int k = 0; k < 3; ++k) {
        if (o.v[(k + 1) % 3] == rim[i].b && o.v[(k + 2) % 3] == rim[i].a) {
          o.n[k] = ids[i];
          break;
        }
      }
    }
    if (created) *created = ids;
    return true;
  }

  bool in_circle(int t, Vec2 p) const {
    const auto& v = tris_[t].v;
    return incircle(points_[v[0]], points_[v[1]], points_[v[2]], p) > 0;
  }

  bool has_edge(int a, int b) const {
    for (const auto& tri : tris_) {
      if (!tri.alive) continue;
      for (int k = 0; k < 3; ++k) {
        if ((tri.v[k] == a && tri.v[(k + 1) % 3] == b) || (tri.v[k] == b && tri.v[(k + 1) % 3] == a)) {
          return true;
        }
      }
    }
    return false;
  }

  int first_alive() const {
    for (std::size_t i = tris_.size(); i-- > 0;) {
      if (tris_[i].alive) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<Vec2> points_;
  std::vector<NodeKind> kinds_;
  std::vector<DelaunayTriangle> tris_;

 private:
  std::unordered_set<std::uint64_t> constrained_;
  std::vector<unsigned> mark_;
  unsigned stamp_ = 0;
  std::vector<int> cavity_;
};

struct Side {
  Vec2 from, to;
  NodeKind kind;
};

// Interior points of a straight side, spaced so every gap is at most the local
// target length (equidistribution of 1/h along the side).
std::vector<Vec2> discretize_side(const Side& side, const ChannelDomain& domain, double edge_min,
                                  const MeshSizing& sizing) {
  const double len = norm(side.to - side.from);
  const int samples = std::max(64, static_cast<int>(std::ceil(8.0 * len / edge_min)));
  std::vector<double> cumulative(samples + 1, 0.0);
  auto at = [&](double s) { return side.from + (s / len) * (side.to - side.from); };
  for (int i = 0; i < samples; ++i) {
    const double s0 = len * i / samples;
    const double s1 = len * (i + 1) / samples;
    const double h = target_edge_length(domain, edge_min, at(0.5 * (s0 + s1)), sizing);
    cumulative[i + 1] = cumulative[i] + (s1 - s0) / h;
  }
  const double total = cumulative.back();
  const int segments = std::max(1, static_cast<int>(std::ceil(total - 1e-9)));
  std::vector<Vec2> out;
  int i = 0;
  for (int k = 1; k < segments; ++k) {
    const double target = total * k / segments;
    while (cumulative[i + 1] < target) ++i;
    const double frac = (target - cumulative[i]) / (cumulative[i + 1] - cumulative[i]);
    out.push_back(at(len * (i + frac) / samples));
  }
  return out;
}

}  // namespace

double target_edge_length(const ChannelDomain& domain, double edge_min, Vec2 p,
                          const MeshSizing& sizing) {
  if (!domain.obstacle) return edge_min;
  const auto& c = *domain.obstacle;
  const double d = std::max(0.0, norm(p - c.center) - c.radius);
  const double grading = sizing.grading_radii * c.radius;
  return edge_min * std::min(kEdgeMaxRatio, 1.0 + d / grading);
}

TriMesh generate_mesh(const ChannelDomain& domain, double edge_min, const MeshSizing& sizing) {
  domain.validate();
  if (!(edge_min > 0.0) || !std::isfinite(edge_min)) {
    throw InfeasibleSizingError(fmt::format("edge_min must be positive (got {})", edge_min));
  }
  if (edge_min > std::min(domain.length, domain.height) * (1.0 + 1e-12)) {
    throw InfeasibleSizingError(fmt::format(
        "edge_min {} exceeds the channel's smaller side {}", edge_min,
        std::min(domain.length, domain.height)));
  }
  if (domain.obstacle && edge_min > domain.clearance()) {
    throw InfeasibleSizingError(fmt::format(
        "edge_min {} is larger than the obstacle clearance {} to the channel walls", edge_min,
        domain.clearance()));
  }
  const double estimated_nodes = domain.length * domain.height / (0.43 * edge_min * edge_min);
  if (estimated_nodes > 4e6) {
    throw InfeasibleSizingError(
        fmt::format("edge_min {} would produce roughly {:.3g} nodes", edge_min, estimated_nodes));
  }
  const double edge_max = kEdgeMaxRatio * edge_min;

  Triangulation tri({0.0, 0.0}, {domain.length, domain.height});
  const double L = domain.length, H = domain.height;
  // Corner tags: x = 0 is inflow (Dirichlet wins), remaining corners are walls.
  const int c00 = tri.add_point({0, 0}, NodeKind::inflow);
  const int c10 = tri.add_point({L, 0}, NodeKind::wall);
  const int c11 = tri.add_point({L, H}, NodeKind::wall);
  const int c01 = tri.add_point({0, H}, NodeKind::inflow);
  const std::array<Side, 4> sides{{{{0, 0}, {L, 0}, NodeKind::wall},
                                   {{L, 0}, {L, H}, NodeKind::outflow},
                                   {{L, H}, {0, H}, NodeKind::wall},
                                   {{0, H}, {0, 0}, NodeKind::inflow}}};
  const std::array<int, 5> corner_ids{c00, c10, c11, c01, c00};

  std::vector<std::array<int, 2>> segments;
  std::vector<int> pending;
  for (std::size_t s = 0; s < sides.size(); ++s) {
    int prev = corner_ids[s];
    for (Vec2 p : discretize_side(sides[s], domain, edge_min, sizing)) {
      const int id = tri.add_point(p, sides[s].kind);
      pending.push_back(id);
      segments.push_back({prev, id});
      prev = id;
    }
    segments.push_back({prev, corner_ids[s + 1]});
  }
  if (domain.obstacle) {
    const auto& c = *domain.obstacle;
    const double h = target_edge_length(domain, edge_min, c.center + Vec2{c.radius, 0.0}, sizing);
    const int n = std::max(3, static_cast<int>(std::ceil(2.0 * std::numbers::pi * c.radius / h - 1e-9)));
    int first = -1, prev = -1;
    for (int k = 0; k < n; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / n;
      const int id = tri.add_point({c.center.x + c.radius * std::cos(angle),
                                    c.center.y + c.radius * std::sin(angle)},
                                   NodeKind::obstacle);
      pending.push_back(id);
      if (prev >= 0) segments.push_back({prev, id});
      if (first < 0) first = id;
      prev = id;
    }
    segments.push_back({prev, first});
  }

  int hint = 0;
  for (int id : {c00, c10, c11, c01}) {
    const int t = tri.locate(tri.points_[id], hint);
    if (!tri.insert(id, t)) throw Error("mesh generator failed to insert a channel corner");
    hint = tri.first_alive();
  }
  for (int id : pending) {
    const int t = tri.locate(tri.points_[id], hint);
    std::vector<int> created;
    if (!tri.insert(id, t, &created)) {
      throw InfeasibleSizingError(
          fmt::format("boundary point ({}, {}) could not be inserted; spacing too tight for the geometry",
                      tri.points_[id].x, tri.points_[id].y));
    }
    hint = created.front();
  }
  for (const auto& s : segments) {
    if (!tri.has_edge(s[0], s[1])) {
      throw InfeasibleSizingError(fmt::format(
          "boundary segment ({:.4g}, {:.4g})-({:.4g}, {:.4g}) is not resolved at edge_min {}",
          tri.points_[s[0]].x, tri.points_[s[0]].y, tri.points_[s[1]].x, tri.points_[s[1]].y,
          edge_min));
    }
    tri.constrain(s[0], s[1]);
  }

  double longest_segment = 0.0;
  for (const auto& s : segments) {
    longest_segment = std::max(longest_segment, norm(tri.points_[s[0]] - tri.points_[s[1]]));
  }
  const double margin = 1e-12 * domain.scale();
  auto is_outside = [&](const DelaunayTriangle& t) { return t.v[0] < 3 || t.v[1] < 3 || t.v[2] < 3; };
  auto is_hole = [&](const DelaunayTriangle& t) {
    return tri.kinds_[t.v[0]] == NodeKind::obstacle && tri.kinds_[t.v[1]] == NodeKind::obstacle &&
           tri.kinds_[t.v[2]] == NodeKind::obstacle;
  };
  auto acceptable_site = [&](Vec2 c) {
    if (!(c.x > margin && c.x < L - margin && c.y > margin && c.y < H - margin)) return false;
    double boundary_distance = std::min({c.x, L - c.x, c.y, H - c.y});
    if (domain.obstacle) {
      const double d = norm(c - domain.obstacle->center) - domain.obstacle->radius;
      if (!(d > margin)) return false;
      boundary_distance = std::min(boundary_distance, d);
    }
    if (boundary_distance > longest_segment) return true;
    // Never insert inside a boundary segment's diametral circle; this keeps
    // every boundary segment a Delaunay edge.
    for (const auto& s : segments) {
      if (dot(tri.points_[s[0]] - c, tri.points_[s[1]] - c) < 0.0) return false;
    }
    return true;
  };

  const std::size_t max_points = static_cast<std::size_t>(8 * estimated_nodes) + 10000;
  std::deque<int> queue;
  for (std::size_t t = 0; t < tri.tris_.size(); ++t) {
    if (tri.tris_[t].alive) queue.push_back(static_cast<int>(t));
  }
  std::vector<int> created;
  while (!queue.empty()) {
    const int t = queue.front();
    queue.pop_front();
    const auto& cur = tri.tris_[t];
    if (!cur.alive || is_outside(cur) || is_hole(cur)) continue;
    Vec2 center;
    double radius = 0.0;
    if (!circumcircle(tri.points_[cur.v[0]], tri.points_[cur.v[1]], tri.points_[cur.v[2]], center,
                      radius)) {
      continue;
    }
    const double allowed = sizing.radius_factor * target_edge_length(domain, edge_min, center, sizing);
    if (radius <= allowed || !acceptable_site(center)) continue;
    const int id = tri.add_point(center, NodeKind::interior);
    if (!tri.insert(id, t, &created)) {
      tri.pop_point();
      continue;
    }
    if (tri.points_.size() > max_points) {
      throw InfeasibleSizingError("mesh refinement did not terminate within the node budget");
    }
    for (int c : created) queue.push_back(c);
  }

  std::vector<TriangleIndices> triangles;
  for (const auto& t : tri.tris_) {
    if (!t.alive || is_outside(t) || is_hole(t)) continue;
    triangles.push_back({t.v[0] - 3, t.v[1] - 3, t.v[2] - 3});
  }
  std::vector<Vec2> positions(tri.points_.begin() + 3, tri.points_.end());
  std::vector<NodeKind> kinds(tri.kinds_.begin() + 3, tri.kinds_.end());
  TriMesh mesh(std::move(positions), std::move(triangles), std::move(kinds), edge_min, edge_max);
  const auto violations = mesh_invariant_violations(mesh, &domain);
  if (!violations.empty()) {
    throw InfeasibleSizingError(fmt::format("generated mesh violates invariants at edge_min {}: {}",
                                            edge_min, violations.front()));
  }
  return mesh;
}

}  // namespace msmgn
