// SPDX-License-Identifier: Apache-2.0
//
// Core value types shared across the registration pipeline: point clouds,
// voxel lattices with running Gaussian moments, rigid poses, and the exact
// moment-merge identity used by both segmentation and model building.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gemreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct MalformedFileError : std::runtime_error {
  explicit MalformedFileError(const std::string& what) : std::runtime_error(what) {}
};

struct ConsistencyError : std::logic_error {
  explicit ConsistencyError(const std::string& what) : std::logic_error(what) {}
};

struct UnderConstrainedError : std::runtime_error {
  explicit UnderConstrainedError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Rigid transform on SE(3), applied as p' = R p + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Mat3 rt = rotation.transpose();
    return Pose{rt, -(rt * translation)};
  }

  /// this ∘ rhs: first rhs, then this.
  Pose compose(const Pose& rhs) const {
    return Pose{rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
};

/// Rodrigues exponential of an axis-angle vector.
inline Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    Mat3 skew;
    skew << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return Mat3::Identity() + skew;
  }
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

/// Nearest proper rotation in the Frobenius sense.
inline Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<float> intensities;  // empty when the source format carries none

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline PointCloud transformed(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back(pose.apply(p));
  out.intensities = cloud.intensities;
  return out;
}

enum class PrimitiveType : std::uint8_t { plane, cluster, line };

inline const char* to_string(PrimitiveType t) {
  switch (t) {
    case PrimitiveType::plane: return "plane";
    case PrimitiveType::cluster: return "cluster";
    case PrimitiveType::line: return "line";
  }
  return "?";
}

enum class VoxelLabel : std::uint8_t { unassigned, ground, plane, cluster, line };

/// Integer lattice index of a voxel.
struct VoxelKey {
  std::int64_t x = 0, y = 0, z = 0;

  bool operator==(const VoxelKey&) const = default;
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    // 3D lattice hash with large odd primes
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349669ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_key_of(const Vec3& p, double voxel_size) {
  return VoxelKey{static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
                  static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
                  static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

/// One voxel with population Gaussian moments over its points.
struct VoxelCell {
  VoxelKey key;
  std::size_t count = 0;
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
  VoxelLabel label = VoxelLabel::unassigned;
  int segment_id = -1;
  std::vector<std::uint32_t> point_indices;  // ascending original order
};

/// Voxel lattice over a cloud; cells kept in first-touch order.
struct VoxelMap {
  double voxel_size = 1.0;
  std::vector<VoxelCell> cells;
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> index;

  const VoxelCell* find(const VoxelKey& k) const {
    auto it = index.find(k);
    return it == index.end() ? nullptr : &cells[it->second];
  }
  VoxelCell* find(const VoxelKey& k) {
    auto it = index.find(k);
    return it == index.end() ? nullptr : &cells[it->second];
  }
  std::size_t size() const { return cells.size(); }
};

/// Merge per-cell population moments into the population moments of the
/// union, without touching the underlying points:
///   mu    = sum_k N_k mu_k / N
///   Sigma = sum_k N_k (Sigma_k + mu_k mu_k^T) / N - mu mu^T
inline std::pair<Vec3, Mat3> merge_moments(const std::vector<const VoxelCell*>& cells) {
  double total = 0;
  Vec3 first_moment = Vec3::Zero();
  Mat3 second_moment = Mat3::Zero();
  for (const VoxelCell* c : cells) {
    const double n = static_cast<double>(c->count);
    total += n;
    first_moment += n * c->mean;
    second_moment += n * (c->cov + c->mean * c->mean.transpose());
  }
  if (total <= 0) throw UnderConstrainedError("merge_moments: zero total point count");
  const Vec3 mu = first_moment / total;
  Mat3 sigma = second_moment / total - mu * mu.transpose();
  sigma = 0.5 * (sigma + sigma.transpose().eval());
  return {mu, sigma};
}

inline std::pair<Vec3, Mat3> merge_moments(const std::vector<VoxelCell>& cells) {
  std::vector<const VoxelCell*> ptrs;
  ptrs.reserve(cells.size());
  for (const VoxelCell& c : cells) ptrs.push_back(&c);
  return merge_moments(ptrs);
}

/// Eigen-decomposition of a symmetric 3x3, eigenvalues descending.
inline void symmetric_eigen_desc(const Mat3& m, Vec3* eigenvalues, Mat3* eigenvectors) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(m);
  // Eigen returns ascending order
  Vec3 ev = es.eigenvalues();
  Mat3 vec = es.eigenvectors();
  if (eigenvalues) *eigenvalues = Vec3(ev[2], ev[1], ev[0]);
  if (eigenvectors) {
    eigenvectors->col(0) = vec.col(2);
    eigenvectors->col(1) = vec.col(1);
    eigenvectors->col(2) = vec.col(0);
  }
}

/// Clamp eigenvalues of a symmetric matrix from below.
inline Mat3 floor_eigenvalues(const Mat3& m, double floor) {
  Vec3 ev;
  Mat3 v;
  symmetric_eigen_desc(m, &ev, &v);
  for (int i = 0; i < 3; ++i) ev[i] = std::max(ev[i], floor);
  return v * ev.asDiagonal() * v.transpose();
}

}  // namespace gemreg
