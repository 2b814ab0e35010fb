#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msmgn/common.hpp"

namespace msmgn {

enum class NodeKind : std::uint8_t { interior = 0, wall, inflow, outflow, obstacle };

inline constexpr int kNodeKindCount = 5;

std::string_view to_string(NodeKind kind);
NodeKind parse_node_kind(std::string_view text);

/// Nodes whose value is prescribed by a Dirichlet condition.
inline bool is_prescribed(NodeKind kind) { return kind == NodeKind::inflow; }

struct Circle {
  Vec2 center;
  double radius = 0.0;
};

/// Rectangular channel [0, length] x [0, height] with an optional disk removed.
/// x = 0 is the inflow side, x = length the outflow side.
struct ChannelDomain {
  double length = 1.0;
  double height = 0.4;
  std::optional<Circle> obstacle;

  double scale() const { return std::max(length, height); }
  double diagonal() const { return std::hypot(length, height); }
  /// Smallest gap between the obstacle and the channel walls (infinite without obstacle).
  double clearance() const;
  void validate() const;
  /// True if p lies in the closed domain, allowing `tol` slack on every boundary.
  bool contains(Vec2 p, double tol = 0.0) const;
};

using TriangleIndices = std::array<int, 3>;
using EdgeIndices = std::array<int, 2>;

/// Planar triangulation with per-node boundary tags. Immutable after construction.
class TriMesh {
 public:
  TriMesh() = default;
  /// Validates indices and orientation (every triangle counter-clockwise, non-degenerate).
  TriMesh(std::vector<Vec2> positions, std::vector<TriangleIndices> triangles,
          std::vector<NodeKind> kinds, double edge_min, double edge_max);

  std::size_t node_count() const { return positions_.size(); }
  std::size_t triangle_count() const { return triangles_.size(); }
  std::span<const Vec2> positions() const { return positions_; }
  std::span<const TriangleIndices> triangles() const { return triangles_; }
  std::span<const NodeKind> kinds() const { return kinds_; }
  /// Unique undirected edges (i < j), sorted lexicographically.
  std::span<const EdgeIndices> edges() const { return edges_; }
  Vec2 position(int i) const { return positions_[static_cast<std::size_t>(i)]; }
  NodeKind kind(int i) const { return kinds_[static_cast<std::size_t>(i)]; }
  double edge_min() const { return edge_min_; }
  double edge_max() const { return edge_max_; }

  double signed_area(std::size_t t) const;
  std::array<Vec2, 3> corners(std::size_t t) const;
  double total_area() const;
  /// Content hash over positions, triangles and kinds.
  std::uint64_t hash() const;

 private:
  std::vector<Vec2> positions_;
  std::vector<TriangleIndices> triangles_;
  std::vector<NodeKind> kinds_;
  std::vector<EdgeIndices> edges_;
  double edge_min_ = 0.0;
  double edge_max_ = 0.0;
};

/// Slack factors for the edge-length invariant.
inline constexpr double kEdgeSlackLow = 0.5;
inline constexpr double kEdgeSlackHigh = 1.5;
inline constexpr double kEdgeMaxRatio = 5.0;

/// Lists every violated mesh invariant (empty when valid): positive areas,
/// edge lengths in [0.5 edge_min, 1.5 edge_max], Euler characteristic, and
/// that no node lies inside the obstacle.
std::vector<std::string> mesh_invariant_violations(const TriMesh& mesh,
                                                   const ChannelDomain* domain = nullptr);

struct MeshSizing {
  /// Distance from the obstacle (in obstacle radii) over which the target edge
  /// grows from edge_min to edge_max.
  double grading_radii = 0.5;
  /// Circumradius bound relative to the local target edge length.
  double radius_factor = 0.75;
};

/// Local target edge length at p for the given edge_min.
double target_edge_length(const ChannelDomain& domain, double edge_min, Vec2 p,
                          const MeshSizing& sizing = {});

/// Delaunay refinement of the channel under a graded sizing field.
/// Throws InfeasibleSizingError when edge_min does not fit the geometry.
TriMesh generate_mesh(const ChannelDomain& domain, double edge_min,
                      const MeshSizing& sizing = {});

struct BaryLocation {
  int triangle = -1;
  std::array<double, 3> weights{};
};

/// Barycentric coordinates of p in triangle (a, b, c).
std::array<double, 3> barycentric(Vec2 a, Vec2 b, Vec2 c, Vec2 p);

/// Point location over a uniform background grid of triangle bounding boxes.
/// Containment ties resolve to the lowest triangle index; queries slightly
/// outside the mesh snap to the nearest triangle within the snap tolerance.
class PointLocator {
 public:
  static constexpr double kWeightTolerance = 1e-12;
  static constexpr double kSnapFactor = 1e-9;

  explicit PointLocator(const TriMesh& mesh, double cell_size = 0.0);

  BaryLocation locate(Vec2 p) const;
  double snap_tolerance() const { return snap_tol_; }
  const TriMesh& mesh() const { return *mesh_; }

 private:
  const TriMesh* mesh_;
  double cell_ = 1.0;
  double snap_tol_ = 0.0;
  Vec2 origin_;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<std::vector<int>> cells_;
};

BaryLocation locate_point(const TriMesh& mesh, Vec2 p);

/// Precomputed barycentric weights from a source mesh onto query points.
class InterpolationPlan {
 public:
  InterpolationPlan(const TriMesh& src, std::span<const Vec2> queries);

  /// field: src.node_count() x W; returns queries x W.
  Matrix apply(const Matrix& field) const;
  std::span<const BaryLocation> locations() const { return locations_; }

 private:
  std::vector<BaryLocation> locations_;
  std::vector<TriangleIndices> corners_;
  std::size_t src_nodes_ = 0;
};

Matrix interpolate_field(const TriMesh& src, const Matrix& field, std::span<const Vec2> queries);

// Text format "msmesh v1"; see docs/formats.md.
void write_mesh(std::ostream& out, const TriMesh& mesh);
TriMesh read_mesh(std::istream& in);
void save_mesh(const std::string& path, const TriMesh& mesh);
TriMesh load_mesh(const std::string& path);

}  // namespace msmgn
