// SPDX-License-Identifier: Apache-2.0
//
// Geometric verification: candidate poses are scored by a robust-kernel
// Chamfer distance from compressed source samples to the nearest target
// voxel primitive, and the lowest score wins.

#pragma once

#include "gemreg/estimator.hpp"
#include "gemreg/parallel.hpp"
#include "gemreg/segmentation.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <vector>

namespace gemreg {

enum class RobustKernelKind { dcs, tukey, cauchy, huber, tls };

inline const char* to_string(RobustKernelKind k) {
  switch (k) {
    case RobustKernelKind::dcs: return "dcs";
    case RobustKernelKind::tukey: return "tukey";
    case RobustKernelKind::cauchy: return "cauchy";
    case RobustKernelKind::huber: return "huber";
    case RobustKernelKind::tls: return "tls";
  }
  return "?";
}

inline RobustKernelKind kernel_from_string(const std::string& s) {
  if (s == "dcs") return RobustKernelKind::dcs;
  if (s == "tukey") return RobustKernelKind::tukey;
  if (s == "cauchy") return RobustKernelKind::cauchy;
  if (s == "huber") return RobustKernelKind::huber;
  if (s == "tls") return RobustKernelKind::tls;
  throw ConfigError("unknown robust kernel: " + s);
}

/// Robust cost of a non-negative residual r at scale phi. All kernels are
/// even, vanish at zero, and are non-decreasing in r. The dynamic covariance
/// scaling kernel is bounded by phi.
inline double robust_kernel(double r, RobustKernelKind kind, double phi) {
  if (!(phi > 0)) throw std::invalid_argument("robust_kernel: scale must be > 0");
  const double r2 = r * r;
  switch (kind) {
    case RobustKernelKind::dcs: {
      const double s = std::min(1.0, 2.0 * phi / (phi + r2));
      return s * s * r2 + (1.0 - s) * (1.0 - s) * phi;
    }
    case RobustKernelKind::tukey: {
      if (r >= phi) return phi * phi / 6.0;
      const double u = 1.0 - r2 / (phi * phi);
      return phi * phi / 6.0 * (1.0 - u * u * u);
    }
    case RobustKernelKind::cauchy:
      return phi * phi * std::log1p(r2 / (phi * phi));
    case RobustKernelKind::huber:
      return r <= phi ? r2 : phi * (2.0 * r - phi);
    case RobustKernelKind::tls:
      return std::min(r2, phi * phi);
  }
  return 0;
}

/// Limit of the kernel as r grows; the score of a sample with no target.
inline double kernel_saturation(RobustKernelKind kind, double phi) {
  switch (kind) {
    case RobustKernelKind::dcs: return phi;
    case RobustKernelKind::tukey: return phi * phi / 6.0;
    case RobustKernelKind::tls: return phi * phi;
    case RobustKernelKind::cauchy:
    case RobustKernelKind::huber: return std::numeric_limits<double>::infinity();
  }
  return 0;
}

struct TargetEntry {
  Vec3 center = Vec3::Zero();
  VoxelLabel label = VoxelLabel::unassigned;
  Vec3 axis = Vec3::Zero();  // plane normal or line direction
  bool has_axis = false;
};

struct SourceSample {
  Vec3 point = Vec3::Zero();
  VoxelLabel label = VoxelLabel::unassigned;
};

namespace detail {

/// Minimal 3-d k-d tree over fixed points; ties in the nearest-neighbor
/// search are broken toward the lower point index, so queries are fully
/// deterministic.
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
    if (points_.empty()) return;
    std::vector<int> idx(points_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    nodes_.reserve(points_.size());
    root_ = build(idx.begin(), idx.end(), 0);
  }

  bool empty() const { return nodes_.empty(); }

  /// Returns (index, squared distance) of the nearest stored point.
  std::pair<int, double> nearest(const Vec3& q) const {
    int best = -1;
    double best_sq = std::numeric_limits<double>::infinity();
    search(root_, q, &best, &best_sq);
    return {best, best_sq};
  }

 private:
  struct Node {
    int point = -1;
    int left = -1, right = -1;
    int axis = 0;
  };

  template <typename It>
  int build(It first, It last, int depth) {
    if (first == last) return -1;
    const int axis = depth % 3;
    const auto mid = first + (last - first) / 2;
    std::sort(first, last, [&](int a, int b) {
      const double ca = points_[static_cast<std::size_t>(a)][axis];
      const double cb = points_[static_cast<std::size_t>(b)][axis];
      return ca < cb || (ca == cb && a < b);
    });
    Node node;
    node.point = *mid;
    node.axis = axis;
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(first, mid, depth + 1);
    const int right = build(mid + 1, last, depth + 1);
    nodes_[static_cast<std::size_t>(self)].left = left;
    nodes_[static_cast<std::size_t>(self)].right = right;
    return self;
  }

  void search(int node_id, const Vec3& q, int* best, double* best_sq) const {
    if (node_id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    const Vec3& p = points_[static_cast<std::size_t>(node.point)];
    const double d_sq = (p - q).squaredNorm();
    if (d_sq < *best_sq || (d_sq == *best_sq && node.point < *best)) {
      *best_sq = d_sq;
      *best = node.point;
    }
    const double delta = q[node.axis] - p[node.axis];
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    search(near, q, best, best_sq);
    if (delta * delta <= *best_sq) search(far, q, best, best_sq);
  }

  const std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace detail

/// Compressed views of the two semantic maps: up to five points per source
/// voxel (the lowest original indices) and one labeled center per target
/// voxel, indexed for nearest-neighbor queries.
struct CompressedMaps {
  std::vector<SourceSample> source;
  std::vector<TargetEntry> target;
  std::shared_ptr<const detail::KdTree3> target_index;  // over target centers

  static constexpr std::size_t kMaxPointsPerSourceVoxel = 5;
};

inline CompressedMaps compress_maps(const SemanticVoxelMap& src_map, const PointCloud& src_cloud,
                                    const SemanticVoxelMap& tgt_map) {
  CompressedMaps maps;
  for (const SemanticVoxel& sv : src_map.cells) {
    const std::size_t take =
        std::min<std::size_t>(CompressedMaps::kMaxPointsPerSourceVoxel, sv.cell.point_indices.size());
    for (std::size_t i = 0; i < take; ++i)
      maps.source.push_back(
          SourceSample{src_cloud.points[sv.cell.point_indices[i]], sv.cell.label});
  }
  std::vector<Vec3> centers;
  centers.reserve(tgt_map.cells.size());
  for (const SemanticVoxel& sv : tgt_map.cells) {
    maps.target.push_back(TargetEntry{sv.cell.mean, sv.cell.label, sv.axis, sv.has_axis});
    centers.push_back(sv.cell.mean);
  }
  maps.target_index = std::make_shared<detail::KdTree3>(centers);
  return maps;
}

/// Residual of a transformed source point against its nearest target entity:
/// point-to-plane along the normal, point-to-line through the orthogonal
/// projector, plain Euclidean otherwise.
inline double primitive_residual(const Vec3& transformed_src, const TargetEntry& target) {
  const Vec3 delta = transformed_src - target.center;
  if (target.label == VoxelLabel::plane && target.has_axis)
    return std::abs(target.axis.dot(delta));
  if (target.label == VoxelLabel::line && target.has_axis)
    return (delta - target.axis * target.axis.dot(delta)).norm();
  return delta.norm();
}

/// Mean robust cost of all source samples under a pose. Empty maps yield the
/// kernel's saturation value. max_contribution (optional) receives the
/// largest single-sample cost, useful for checking the kernel bound.
inline double chamfer_score(const Pose& pose, const CompressedMaps& maps, RobustKernelKind kind,
                            double phi, unsigned workers = 1,
                            double* max_contribution = nullptr) {
  if (maps.source.empty() || maps.target.empty() || !maps.target_index ||
      maps.target_index->empty()) {
    if (max_contribution) *max_contribution = 0;
    return kernel_saturation(kind, phi);
  }
  const std::size_t n = maps.source.size();
  constexpr std::size_t kBlock = 1024;
  const std::size_t chunks = chunk_count(n, kBlock);
  std::vector<double> partial_sum(chunks, 0.0);
  std::vector<double> partial_max(chunks, 0.0);
  parallel_chunks(n, kBlock, workers, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    double sum = 0, mx = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3 moved = pose.apply(maps.source[i].point);
      const auto [index, dist_sq] = maps.target_index->nearest(moved);
      (void)dist_sq;
      const double r = primitive_residual(moved, maps.target[static_cast<std::size_t>(index)]);
      const double cost = robust_kernel(r, kind, phi);
      sum += cost;
      mx = std::max(mx, cost);
    }
    partial_sum[chunk] = sum;
    partial_max[chunk] = mx;
  });
  double total = 0, mx = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += partial_sum[c];
    mx = std::max(mx, partial_max[c]);
  }
  if (max_contribution) *max_contribution = mx;
  return total / static_cast<double>(n);
}

struct RegistrationResult {
  bool success = false;
  Pose pose;                    // best candidate, identity on failure
  double score = std::numeric_limits<double>::infinity();
  int chosen_level = -1;
  std::vector<TransformationCandidate> candidates;
  std::vector<double> scores;  // one per candidate
};

/// Score every candidate and keep the minimizer; ties go to the lowest
/// pyramid level (the tightest threshold).
inline RegistrationResult select_best(std::vector<TransformationCandidate> candidates,
                                      const CompressedMaps& maps, RobustKernelKind kind,
                                      double phi, unsigned workers = 1) {
  if (candidates.empty()) throw std::invalid_argument("select_best: no candidates");
  RegistrationResult result;
  result.candidates = std::move(candidates);
  result.scores.resize(result.candidates.size());
  for (std::size_t i = 0; i < result.candidates.size(); ++i)
    result.scores[i] = chamfer_score(result.candidates[i].pose, maps, kind, phi, workers);

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.candidates.size(); ++i) {
    const bool better = result.scores[i] < result.scores[best] ||
                        (result.scores[i] == result.scores[best] &&
                         result.candidates[i].level < result.candidates[best].level);
    if (better) best = i;
  }
  result.success = true;
  result.pose = result.candidates[best].pose;
  result.score = result.scores[best];
  result.chosen_level = result.candidates[best].level;
  return result;
}

}  // namespace gemreg
