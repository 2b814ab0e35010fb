#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "msmgn/mesh.hpp"

namespace msmgn {
namespace {

// Closest point on triangle (a, b, c) to p, returned as barycentric weights
// (Ericson, Real-Time Collision Detection, 5.1.5).
std::array<double, 3> closest_point_weights(Vec2 a, Vec2 b, Vec2 c, Vec2 p) {
  const Vec2 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
  const Vec2 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Vec2 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {1 - v - w, v, w};
}

Vec2 combine(const std::array<Vec2, 3>& corners, const std::array<double, 3>& w) {
  return {w[0] * corners[0].x + w[1] * corners[1].x + w[2] * corners[2].x,
          w[0] * corners[0].y + w[1] * corners[1].y + w[2] * corners[2].y};
}

}  // namespace

std::array<double, 3> barycentric(Vec2 a, Vec2 b, Vec2 c, Vec2 p) {
  const double area = cross(b - a, c - a);
  const double w0 = cross(b - p, c - p) / area;
  const double w1 = cross(c - p, a - p) / area;
  const double w2 = cross(a - p, b - p) / area;
  return {w0, w1, w2};
}

PointLocator::PointLocator(const TriMesh& mesh, double cell_size) : mesh_(&mesh) {
  if (mesh.triangle_count() == 0) throw Error("cannot locate points in a mesh without triangles");
  Vec2 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  Vec2 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  for (const auto& p : mesh.positions()) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  snap_tol_ = kSnapFactor * norm(hi - lo);
  if (!(cell_size > 0.0)) cell_size = mesh.edge_max();
  if (!(cell_size > 0.0)) cell_size = std::max(hi.x - lo.x, hi.y - lo.y) / 16.0;
  // Keep the grid bounded for tiny cells on large meshes.
  const double max_cells = 4.0 * static_cast<double>(mesh.triangle_count()) + 16.0;
  while (((hi.x - lo.x) / cell_size + 1) * ((hi.y - lo.y) / cell_size + 1) > max_cells) cell_size *= 2;
  cell_ = cell_size;
  origin_ = {lo.x - snap_tol_, lo.y - snap_tol_};
  nx_ = std::max(1, static_cast<int>(std::ceil((hi.x - lo.x + 2 * snap_tol_) / cell_)));
  ny_ = std::max(1, static_cast<int>(std::ceil((hi.y - lo.y + 2 * snap_tol_) / cell_)));
  cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const auto c = mesh.corners(t);
    const double x0 = std::min({c[0].x, c[1].x, c[2].x}) - snap_tol_;
    const double x1 = std::max({c[0].x, c[1].x, c[2].x}) + snap_tol_;
    const double y0 = std::min({c[0].y, c[1].y, c[2].y}) - snap_tol_;
    const double y1 = std::max({c[0].y, c[1].y, c[2].y}) + snap_tol_;
    const int i0 = std::clamp(static_cast<int>(std::floor((x0 - origin_.x) / cell_)), 0, nx_ - 1);
    const int i1 = std::clamp(static_cast<int>(std::floor((x1 - origin_.x) / cell_)), 0, nx_ - 1);
    const int j0 = std::clamp(static_cast<int>(std::floor((y0 - origin_.y) / cell_)), 0, ny_ - 1);
    const int j1 = std::clamp(static_cast<int>(std::floor((y1 - origin_.y) / cell_)), 0, ny_ - 1);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) cells_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(t));
    }
  }
}

BaryLocation PointLocator::locate(Vec2 p) const {
  const double fx = (p.x - origin_.x) / cell_;
  const double fy = (p.y - origin_.y) / cell_;
  const int i = static_cast<int>(std::floor(fx));
  const int j = static_cast<int>(std::floor(fy));
  if (!std::isfinite(fx) || !std::isfinite(fy) || i < 0 || j < 0 || i >= nx_ || j >= ny_) {
    throw OutsideDomainError(fmt::format("point ({}, {}) lies outside the mesh", p.x, p.y));
  }
  const auto& candidates = cells_[static_cast<std::size_t>(j) * nx_ + i];

  // Candidates are stored in ascending triangle order, so the first hit wins ties.
  for (int t : candidates) {
    const auto c = mesh_->corners(static_cast<std::size_t>(t));
    auto w = barycentric(c[0], c[1], c[2], p);
    if (w[0] >= -kWeightTolerance && w[1] >= -kWeightTolerance && w[2] >= -kWeightTolerance) {
      for (double& x : w) x = std::max(x, 0.0);
      const double sum = w[0] + w[1] + w[2];
      for (double& x : w) x /= sum;
      return {t, w};
    }
  }

  BaryLocation best;
  double best_d2 = snap_tol_ * snap_tol_;
  for (int t : candidates) {
    const auto c = mesh_->corners(static_cast<std::size_t>(t));
    const auto w = closest_point_weights(c[0], c[1], c[2], p);
    const double d2 = squared_norm(combine(c, w) - p);
    if (d2 <= best_d2 && (best.triangle < 0 || d2 < best_d2)) {
      best_d2 = d2;
      best = {t, w};
    }
  }
  if (best.triangle < 0) {
    throw OutsideDomainError(fmt::format("point ({}, {}) is farther than {:.3g} from every triangle",
                                         p.x, p.y, snap_tol_));
  }
  return best;
}

BaryLocation locate_point(const TriMesh& mesh, Vec2 p) { return PointLocator(mesh).locate(p); }

InterpolationPlan::InterpolationPlan(const TriMesh& src, std::span<const Vec2> queries)
    : src_nodes_(src.node_count()) {
  const PointLocator locator(src);
  locations_.reserve(queries.size());
  corners_.reserve(queries.size());
  for (const Vec2& q : queries) {
    locations_.push_back(locator.locate(q));
    corners_.push_back(src.triangles()[static_cast<std::size_t>(locations_.back().triangle)]);
  }
}

Matrix InterpolationPlan::apply(const Matrix& field) const {
  if (static_cast<std::size_t>(field.rows()) != src_nodes_) {
    throw ShapeError(fmt::format("field has {} rows but the source mesh has {} nodes", field.rows(),
                                 src_nodes_));
  }
  Matrix out(static_cast<Eigen::Index>(locations_.size()), field.cols());
  for (std::size_t q = 0; q < locations_.size(); ++q) {
    const auto& w = locations_[q].weights;
    const auto& c = corners_[q];
    out.row(static_cast<Eigen::Index>(q)) =
        w[0] * field.row(c[0]) + w[1] * field.row(c[1]) + w[2] * field.row(c[2]);
  }
  return out;
}

Matrix interpolate_field(const TriMesh& src, const Matrix& field, std::span<const Vec2> queries) {
  return InterpolationPlan(src, queries).apply(field);
}

}  // namespace msmgn
