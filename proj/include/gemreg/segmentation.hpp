// SPDX-License-Identifier: Apache-2.0
//
// Plane-aided segmentation of a non-ground voxel map into plane, cluster,
// and line segments, plus the relabeled semantic voxel map consumed by the
// verification stage.

#pragma once

#include "gemreg/core.hpp"
#include "gemreg/rng.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <queue>

namespace gemreg {

struct Segment {
  int id = -1;
  PrimitiveType type = PrimitiveType::cluster;
  std::vector<VoxelKey> voxel_keys;
  std::vector<std::uint32_t> point_refs;  // indices into the segmented cloud
  std::size_t point_count = 0;
  std::optional<Vec3> normal;     // planes: unit normal
  std::optional<Vec3> direction;  // lines: unit direction
};

struct SegmentationConfig {
  double eigen_ratio = 30.0;          // lambda2/lambda3 planarity gate
  double normal_threshold = 0.95;     // |n1.n2| merge gate
  double distance_threshold = 0.2;    // point-to-plane merge gate, meters
  double line_distance = 0.5;         // point-to-line inlier gate, meters
  double line_inlier_ratio = 0.5;     // fraction needed to call a cluster a line
  std::size_t min_points = 10;        // segments below this are dropped
  int line_iterations = 100;
  std::uint64_t seed = 0x73656773ULL;
};

/// Semantic voxel: the cell (whose label/segment_id are stamped) plus the
/// owning segment's normal or direction when the label has one.
struct SemanticVoxel {
  VoxelCell cell;
  Vec3 axis = Vec3::Zero();  // plane normal or line direction
  bool has_axis = false;
};

struct SemanticVoxelMap {
  double voxel_size = 1.0;
  std::vector<SemanticVoxel> cells;
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> index;

  const SemanticVoxel* find(const VoxelKey& k) const {
    auto it = index.find(k);
    return it == index.end() ? nullptr : &cells[it->second];
  }
};

/// Planarity test on one voxel: with eigenvalues l1 >= l2 >= l3 of the cell
/// covariance, the cell is planar iff l2/l3 >= eigen_ratio (thin disc).
/// The plane normal, when requested, is the l3 eigenvector.
inline bool classify_plane_voxel(const VoxelCell& cell, double eigen_ratio,
                                 Vec3* normal = nullptr) {
  if (cell.count < 3) return false;
  Vec3 ev;
  Mat3 vecs;
  symmetric_eigen_desc(cell.cov, &ev, &vecs);
  const double l2 = std::max(ev[1], 0.0);
  const double l3 = std::max(ev[2], 0.0);
  if (l2 <= 1e-12) return false;  // needs two extended axes
  if (l2 < eigen_ratio * l3) return false;
  if (normal) *normal = vecs.col(2);
  return true;
}

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);  // keep the smaller root
    parent[b] = a;
  }
};

inline void for_each_26_neighbor(const VoxelKey& k, const auto& fn) {
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        fn(VoxelKey{k.x + dx, k.y + dy, k.z + dz});
      }
}

}  // namespace detail

/// Region-growing merge of plane voxels. Two plane voxels join when they are
/// 26-adjacent, their normals agree (|n1.n2| >= normal_threshold), and each
/// center lies within distance_threshold of the other's plane. Components of
/// this symmetric relation become plane segments; each segment's normal is
/// refit from its aggregate covariance.
inline std::vector<Segment> grow_planes(const VoxelMap& map, const SegmentationConfig& cfg) {
  const std::size_t n = map.cells.size();
  std::vector<char> is_plane(n, 0);
  std::vector<Vec3> normals(n, Vec3::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 nv;
    if (classify_plane_voxel(map.cells[i], cfg.eigen_ratio, &nv)) {
      is_plane[i] = 1;
      normals[i] = nv;
    }
  }

  detail::UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_plane[i]) continue;
    const VoxelCell& a = map.cells[i];
    detail::for_each_26_neighbor(a.key, [&](const VoxelKey& nk) {
      auto it = map.index.find(nk);
      if (it == map.index.end()) return;
      const std::size_t j = it->second;
      if (j <= i || !is_plane[j]) return;  // each unordered pair once
      const VoxelCell& b = map.cells[j];
      const Vec3 d = a.mean - b.mean;
      if (std::abs(normals[i].dot(d)) > cfg.distance_threshold) return;
      if (std::abs(normals[j].dot(d)) > cfg.distance_threshold) return;
      if (std::abs(normals[i].dot(normals[j])) < cfg.normal_threshold) return;
      uf.unite(i, j);
    });
  }

  std::unordered_map<std::size_t, std::size_t> root_to_segment;
  std::vector<Segment> segments;
  std::vector<std::vector<const VoxelCell*>> member_cells;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_plane[i]) continue;
    const std::size_t root = uf.find(i);
    auto [it, inserted] = root_to_segment.try_emplace(root, segments.size());
    if (inserted) {
      segments.emplace_back();
      segments.back().type = PrimitiveType::plane;
      member_cells.emplace_back();
    }
    Segment& seg = segments[it->second];
    const VoxelCell& cell = map.cells[i];
    seg.voxel_keys.push_back(cell.key);
    seg.point_refs.insert(seg.point_refs.end(), cell.point_indices.begin(),
                          cell.point_indices.end());
    seg.point_count += cell.count;
    member_cells[it->second].push_back(&cell);
  }

  std::vector<Segment> kept;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].point_count < cfg.min_points) continue;
    auto [mu, sigma] = merge_moments(member_cells[s]);
    (void)mu;
    Vec3 ev;
    Mat3 vecs;
    symmetric_eigen_desc(sigma, &ev, &vecs);
    Vec3 normal = vecs.col(2);
    if (normal.z() < 0 || (normal.z() == 0 && (normal.y() < 0 || (normal.y() == 0 && normal.x() < 0))))
      normal = -normal;
    segments[s].normal = normal;
    kept.push_back(std::move(segments[s]));
  }
  return kept;
}

/// Connected components of the voxels not claimed by any plane, under
/// 26-adjacency. Components below min_points are discarded.
inline std::vector<Segment> cluster_remaining(const VoxelMap& map,
                                              const std::vector<Segment>& planes,
                                              const SegmentationConfig& cfg) {
  const std::size_t n = map.cells.size();
  std::vector<char> claimed(n, 0);
  for (const Segment& seg : planes)
    for (const VoxelKey& k : seg.voxel_keys) {
      auto it = map.index.find(k);
      if (it != map.index.end()) claimed[it->second] = 1;
    }

  std::vector<Segment> clusters;
  std::vector<char> visited(n, 0);
  for (std::size_t start = 0; start < n; ++start) {
    if (claimed[start] || visited[start]) continue;
    Segment seg;
    seg.type = PrimitiveType::cluster;
    std::queue<std::size_t> frontier;
    frontier.push(start);
    visited[start] = 1;
    while (!frontier.empty()) {
      const std::size_t i = frontier.front();
      frontier.pop();
      const VoxelCell& cell = map.cells[i];
      seg.voxel_keys.push_back(cell.key);
      seg.point_refs.insert(seg.point_refs.end(), cell.point_indices.begin(),
                            cell.point_indices.end());
      seg.point_count += cell.count;
      detail::for_each_26_neighbor(cell.key, [&](const VoxelKey& nk) {
        auto it = map.index.find(nk);
        if (it == map.index.end()) return;
        const std::size_t j = it->second;
        if (claimed[j] || visited[j]) return;
        visited[j] = 1;
        frontier.push(j);
      });
    }
    if (seg.point_count >= cfg.min_points) clusters.push_back(std::move(seg));
  }
  return clusters;
}

/// Random-sampling line fit over a segment's points. Returns true (and the
/// refit direction) when the best line's inlier ratio reaches
/// line_inlier_ratio. Seeded per segment, so results do not depend on the
/// order segments are processed in.
inline bool classify_line(const Segment& seg, const PointCloud& cloud,
                          const SegmentationConfig& cfg, Vec3* direction = nullptr) {
  const std::size_t n = seg.point_refs.size();
  if (n < 2) return false;

  auto point = [&](std::size_t i) -> const Vec3& { return cloud.points[seg.point_refs[i]]; };

  // degenerate: all points coincide; any direction has every point as inlier
  bool all_same = true;
  for (std::size_t i = 1; i < n && all_same; ++i)
    all_same = (point(i) - point(0)).norm() < 1e-12;
  if (all_same) {
    if (direction) *direction = Vec3::UnitX();
    return true;
  }

  Pcg32 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(seg.id) + 1));
  std::size_t best_count = 0;
  Vec3 best_dir = Vec3::UnitX();
  Vec3 best_origin = point(0);
  for (int it = 0; it < cfg.line_iterations; ++it) {
    const std::size_t a = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    const std::size_t b = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    Vec3 dir = point(b) - point(a);
    const double len = dir.norm();
    if (len < 1e-12) continue;
    dir /= len;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 d = point(i) - point(a);
      if ((d - dir * dir.dot(d)).norm() <= cfg.line_distance) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_dir = dir;
      best_origin = point(a);
    }
  }

  const double ratio = static_cast<double>(best_count) / static_cast<double>(n);
  if (ratio < cfg.line_inlier_ratio) return false;

  // refit direction from the inliers' principal axis
  Vec3 centroid = Vec3::Zero();
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = point(i) - best_origin;
    if ((d - best_dir * best_dir.dot(d)).norm() <= cfg.line_distance) {
      centroid += point(i);
      ++count;
    }
  }
  centroid /= static_cast<double>(count);
  Mat3 scatter = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = point(i) - best_origin;
    if ((d - best_dir * best_dir.dot(d)).norm() <= cfg.line_distance) {
      const Vec3 c = point(i) - centroid;
      scatter += c * c.transpose();
    }
  }
  Vec3 ev;
  Mat3 vecs;
  symmetric_eigen_desc(scatter, &ev, &vecs);
  Vec3 refit = vecs.col(0);
  if (refit.dot(best_dir) < 0) refit = -refit;
  if (direction) *direction = refit;
  return true;
}

/// Stamp every voxel with its owning segment. Overlapping claims are a
/// caller bug and raise ConsistencyError.
inline SemanticVoxelMap relabel_voxels(const std::vector<Segment>& planes,
                                       const std::vector<Segment>& clusters,
                                       const std::vector<Segment>& lines, const VoxelMap& map) {
  SemanticVoxelMap out;
  out.voxel_size = map.voxel_size;
  out.cells.reserve(map.cells.size());
  for (const VoxelCell& cell : map.cells) {
    SemanticVoxel sv;
    sv.cell = cell;
    sv.cell.label = VoxelLabel::unassigned;
    sv.cell.segment_id = -1;
    out.cells.push_back(std::move(sv));
  }
  out.index = map.index;

  auto stamp = [&](const Segment& seg, VoxelLabel label) {
    for (const VoxelKey& k : seg.voxel_keys) {
      auto it = out.index.find(k);
      if (it == out.index.end())
        throw ConsistencyError("relabel_voxels: segment references a missing voxel");
      SemanticVoxel& sv = out.cells[it->second];
      if (sv.cell.label != VoxelLabel::unassigned)
        throw ConsistencyError("relabel_voxels: voxel claimed by two segments");
      sv.cell.label = label;
      sv.cell.segment_id = seg.id;
      if (label == VoxelLabel::plane && seg.normal) {
        sv.axis = *seg.normal;
        sv.has_axis = true;
      } else if (label == VoxelLabel::line && seg.direction) {
        sv.axis = *seg.direction;
        sv.has_axis = true;
      }
    }
  };
  for (const Segment& seg : planes) stamp(seg, VoxelLabel::plane);
  for (const Segment& seg : clusters) stamp(seg, VoxelLabel::cluster);
  for (const Segment& seg : lines) stamp(seg, VoxelLabel::line);
  return out;
}

struct SegmentationResult {
  std::vector<Segment> planes;
  std::vector<Segment> clusters;
  std::vector<Segment> lines;
  SemanticVoxelMap semantic_map;
};

/// Full front half: plane growth, clustering of the remainder, line
/// reclassification of clusters, and voxel relabeling. Segment ids are
/// assigned in creation order and unique across all three lists.
inline SegmentationResult segment_cloud(const PointCloud& nonground, const VoxelMap& map,
                                        const SegmentationConfig& cfg) {
  SegmentationResult result;
  result.planes = grow_planes(map, cfg);
  int next_id = 0;
  for (Segment& seg : result.planes) seg.id = next_id++;

  std::vector<Segment> clusters = cluster_remaining(map, result.planes, cfg);
  for (Segment& seg : clusters) {
    seg.id = next_id++;
    Vec3 dir;
    if (classify_line(seg, nonground, cfg, &dir)) {
      seg.type = PrimitiveType::line;
      seg.direction = dir;
      result.lines.push_back(std::move(seg));
    } else {
      result.clusters.push_back(std::move(seg));
    }
  }
  result.semantic_map = relabel_voxels(result.planes, result.clusters, result.lines, map);
  return result;
}

}  // namespace gemreg
