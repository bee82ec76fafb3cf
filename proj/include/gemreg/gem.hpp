// SPDX-License-Identifier: Apache-2.0
//
// Gaussian ellipsoid model of a segment: merged statistical moments, the
// minimum oriented bounding box (rotating calipers on the projected hull),
// and the bounding-ellipsoid pseudo covariance that models center
// uncertainty.

#pragma once

#include "gemreg/core.hpp"
#include "gemreg/segmentation.hpp"
#include "gemreg/stats.hpp"

#include <algorithm>
#include <array>
#include <span>

namespace gemreg {

/// chi-square value (3 DoF) at 95% coverage, used for the center ellipsoid.
inline double chi2_95() {
  static const double v = chi2_quantile(0.05);
  return v;
}

struct Obb {
  Vec3 center = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();  // proper rotation, columns = box axes
  Vec3 extents = Vec3::Zero();          // full side lengths, descending
};

struct Gem {
  int id = -1;
  PrimitiveType type = PrimitiveType::cluster;
  std::size_t point_count = 0;
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();         // statistical covariance
  Mat3 pseudo_cov = Mat3::Zero();  // bounding-ellipsoid covariance
  Vec3 pseudo_eigenvalues = Vec3::Zero();  // descending, matches obb axes
  Obb obb;                                 // extents floored (see build_gem)
  double salience = 0;                     // area / volume / length by type
};

namespace detail {

struct Frame2d {
  Vec3 u, v;  // orthonormal, both orthogonal to the projection axis
};

inline Frame2d plane_basis(const Vec3& axis) {
  // seed with the global axis least aligned with the projection axis
  int least = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(axis[i]) < std::abs(axis[least])) least = i;
  Vec3 seed = Vec3::Zero();
  seed[least] = 1.0;
  Vec3 u = axis.cross(seed).normalized();
  Vec3 v = axis.cross(u);
  return {u, v};
}

/// Andrew monotone chain, strict turns; input is copied and sorted so the
/// hull does not depend on point order. Returns hull in CCW order.
inline std::vector<Eigen::Vector2d> convex_hull_2d(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
                          return a.x() == b.x() && a.y() == b.y();
                        }),
            pts.end());
  const std::size_t n = pts.size();
  if (n <= 2) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

struct Rect2d {
  Eigen::Vector2d dir;  // unit direction of the flush side
  double width = 0, height = 0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
};

/// Minimum-area enclosing rectangle of a hull; one side is flush with a hull
/// edge. Degenerate hulls (point, segment) produce zero-extent rectangles.
inline Rect2d min_area_rect(const std::vector<Eigen::Vector2d>& hull) {
  Rect2d best;
  if (hull.empty()) {
    best.dir = {1, 0};
    return best;
  }
  if (hull.size() == 1) {
    best.dir = {1, 0};
    best.center = hull[0];
    return best;
  }
  if (hull.size() == 2) {
    Eigen::Vector2d d = hull[1] - hull[0];
    const double len = d.norm();
    best.dir = len > 0 ? Eigen::Vector2d(d / len) : Eigen::Vector2d(1, 0);
    best.width = len;
    best.height = 0;
    best.center = 0.5 * (hull[0] + hull[1]);
    return best;
  }
  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < hull.size(); ++e) {
    const Eigen::Vector2d a = hull[e];
    const Eigen::Vector2d b = hull[(e + 1) % hull.size()];
    Eigen::Vector2d dir = b - a;
    const double len = dir.norm();
    if (len < 1e-15) continue;
    dir /= len;
    const Eigen::Vector2d perp(-dir.y(), dir.x());
    double lo_u = std::numeric_limits<double>::infinity(), hi_u = -lo_u;
    double lo_v = lo_u, hi_v = -lo_u;
    for (const Eigen::Vector2d& p : hull) {
      const double pu = p.x() * dir.x() + p.y() * dir.y();
      const double pv = p.x() * perp.x() + p.y() * perp.y();
      lo_u = std::min(lo_u, pu);
      hi_u = std::max(hi_u, pu);
      lo_v = std::min(lo_v, pv);
      hi_v = std::max(hi_v, pv);
    }
    const double area = (hi_u - lo_u) * (hi_v - lo_v);
    if (area < best_area) {
      best_area = area;
      best.dir = dir;
      best.width = hi_u - lo_u;
      best.height = hi_v - lo_v;
      best.center =
          0.5 * ((lo_u + hi_u) * dir + (lo_v + hi_v) * Eigen::Vector2d(-dir.y(), dir.x()));
    }
  }
  return best;
}

/// Descending-extent axis order; columns 0 and 1 sign-fixed to a
/// non-negative leading component, column 2 completes a proper rotation.
inline void canonicalize_frame(Mat3& rot, Vec3& extents) {
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return extents[a] > extents[b]; });
  Mat3 sorted;
  Vec3 e;
  for (int i = 0; i < 3; ++i) {
    sorted.col(i) = rot.col(order[i]);
    e[i] = extents[order[i]];
  }
  for (int i = 0; i < 2; ++i) {
    const Vec3 c = sorted.col(i);
    const bool flip =
        c.x() < 0 || (c.x() == 0 && (c.y() < 0 || (c.y() == 0 && c.z() < 0)));
    if (flip) sorted.col(i) = -c;
  }
  sorted.col(2) = sorted.col(0).cross(sorted.col(1));
  rot = sorted;
  extents = e;
}

}  // namespace detail

/// Minimum oriented bounding box: points are projected onto the plane
/// orthogonal to the given axis, the minimum-area rectangle of the projected
/// hull is found, and the box is lifted back with the axis extent.
inline Obb fit_obb(std::span<const Vec3> points, const Vec3& axis_in) {
  if (points.empty()) throw std::invalid_argument("fit_obb: no points");
  const Vec3 axis = axis_in.normalized();
  const detail::Frame2d frame = detail::plane_basis(axis);

  std::vector<Eigen::Vector2d> projected;
  projected.reserve(points.size());
  double lo_a = std::numeric_limits<double>::infinity(), hi_a = -lo_a;
  for (const Vec3& p : points) {
    projected.emplace_back(frame.u.dot(p), frame.v.dot(p));
    const double pa = axis.dot(p);
    lo_a = std::min(lo_a, pa);
    hi_a = std::max(hi_a, pa);
  }
  const detail::Rect2d rect = detail::min_area_rect(detail::convex_hull_2d(projected));

  const Vec3 d1 = rect.dir.x() * frame.u + rect.dir.y() * frame.v;
  const Vec3 d2 = -rect.dir.y() * frame.u + rect.dir.x() * frame.v;

  Obb obb;
  obb.center = rect.center.x() * frame.u + rect.center.y() * frame.v + 0.5 * (lo_a + hi_a) * axis;
  Mat3 rot;
  rot.col(0) = d1;
  rot.col(1) = d2;
  rot.col(2) = axis;
  Vec3 extents(rect.width, rect.height, hi_a - lo_a);
  detail::canonicalize_frame(rot, extents);
  obb.orientation = rot;
  obb.extents = extents;
  return obb;
}

/// Bounding ellipsoid inscribed in the box, expressed as a covariance whose
/// chi-square confidence region at the given value is that ellipsoid:
///   lambda_i = (s_i / (2 sqrt(chi2)))^2,  Sigma = R diag(lambda) R^T
inline std::pair<Mat3, Vec3> obe_pseudo_covariance(const Obb& obb, double chi2) {
  if (!(chi2 > 0)) throw std::invalid_argument("obe_pseudo_covariance: chi2 must be > 0");
  const double denom = 2.0 * std::sqrt(chi2);
  Vec3 lambda;
  for (int i = 0; i < 3; ++i) {
    const double half = obb.extents[i] / denom;
    lambda[i] = half * half;
  }
  const Mat3 cov = obb.orientation * lambda.asDiagonal() * obb.orientation.transpose();
  return {cov, lambda};
}

inline constexpr double kMinObbExtent = 0.1;  // meters; keeps the OBE full rank

/// Assemble the full model for one segment. The projection axis is the plane
/// normal, the line direction, or the covariance's smallest eigenvector for
/// clusters. Extents are floored before the ellipsoid so thin structures
/// still produce an invertible pseudo covariance.
inline Gem build_gem(const Segment& seg, const VoxelMap& map, const PointCloud& cloud,
                     double chi2 = 0) {
  if (chi2 <= 0) chi2 = chi2_95();
  std::vector<const VoxelCell*> cells;
  cells.reserve(seg.voxel_keys.size());
  for (const VoxelKey& k : seg.voxel_keys) {
    const VoxelCell* c = map.find(k);
    if (!c) throw ConsistencyError("build_gem: segment references a missing voxel");
    cells.push_back(c);
  }
  Gem gem;
  gem.id = seg.id;
  gem.type = seg.type;
  gem.point_count = seg.point_count;
  std::tie(gem.mean, gem.cov) = merge_moments(cells);

  Vec3 axis;
  switch (seg.type) {
    case PrimitiveType::plane:
      axis = seg.normal.value_or(Vec3::UnitZ());
      break;
    case PrimitiveType::line:
      axis = seg.direction.value_or(Vec3::UnitX());
      break;
    case PrimitiveType::cluster: {
      Vec3 ev;
      Mat3 vecs;
      symmetric_eigen_desc(gem.cov, &ev, &vecs);
      axis = vecs.col(2);
      break;
    }
  }

  std::vector<Vec3> pts;
  pts.reserve(seg.point_refs.size());
  for (std::uint32_t i : seg.point_refs) pts.push_back(cloud.points[i]);
  gem.obb = fit_obb(pts, axis);
  for (int i = 0; i < 3; ++i) gem.obb.extents[i] = std::max(gem.obb.extents[i], kMinObbExtent);

  std::tie(gem.pseudo_cov, gem.pseudo_eigenvalues) = obe_pseudo_covariance(gem.obb, chi2);

  const Vec3& s = gem.obb.extents;
  switch (seg.type) {
    case PrimitiveType::plane: gem.salience = s[0] * s[1]; break;
    case PrimitiveType::cluster: gem.salience = s[0] * s[1] * s[2]; break;
    case PrimitiveType::line: gem.salience = s[0]; break;
  }
  return gem;
}

/// Keep the J most salient models of each primitive type. Output is grouped
/// plane, cluster, line; within a type sorted by salience descending with
/// ties broken toward the lower segment id.
inline std::vector<Gem> select_top_j(std::vector<Gem> gems, int top_j) {
  std::vector<Gem> out;
  out.reserve(gems.size());
  for (PrimitiveType type : {PrimitiveType::plane, PrimitiveType::cluster, PrimitiveType::line}) {
    std::vector<Gem> bucket;
    for (const Gem& g : gems)
      if (g.type == type) bucket.push_back(g);
    std::sort(bucket.begin(), bucket.end(), [](const Gem& a, const Gem& b) {
      if (a.salience != b.salience) return a.salience > b.salience;
      return a.id < b.id;
    });
    if (top_j >= 0 && bucket.size() > static_cast<std::size_t>(top_j))
      bucket.resize(static_cast<std::size_t>(top_j));
    for (Gem& g : bucket) out.push_back(std::move(g));
  }
  return out;
}

}  // namespace gemreg
