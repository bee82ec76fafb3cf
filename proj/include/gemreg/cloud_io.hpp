// SPDX-License-Identifier: Apache-2.0
//
// Point cloud ingestion: KITTI .bin and ASCII PLY loaders, voxelization with
// running population moments, and consensus-plane ground removal.

#pragma once

#include "gemreg/core.hpp"
#include "gemreg/rng.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace gemreg {

/// KITTI velodyne format: packed little-endian float32 x, y, z, intensity.
/// Non-finite records are dropped; *rejected (when given) receives the count.
inline PointCloud load_kitti_bin(const std::string& path, std::size_t* rejected = nullptr) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw MalformedFileError("cannot open " + path);
  const std::streamoff bytes = in.tellg();
  if (bytes % 16 != 0)
    throw MalformedFileError(path + ": size " + std::to_string(bytes) +
                             " is not a multiple of 16");
  in.seekg(0);
  PointCloud cloud;
  const std::size_t n = static_cast<std::size_t>(bytes) / 16;
  cloud.points.reserve(n);
  cloud.intensities.reserve(n);
  std::size_t bad = 0;
  float rec[4];
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(rec), 16);
    if (!in) throw MalformedFileError(path + ": short read");
    if (!std::isfinite(rec[0]) || !std::isfinite(rec[1]) || !std::isfinite(rec[2]) ||
        !std::isfinite(rec[3])) {
      ++bad;
      continue;
    }
    cloud.points.emplace_back(rec[0], rec[1], rec[2]);
    cloud.intensities.push_back(rec[3]);
  }
  if (rejected) *rejected = bad;
  return cloud;
}

/// ASCII PLY subset: element vertex with float properties x, y, z; any extra
/// vertex properties are parsed and ignored. Other elements after the vertex
/// block are skipped.
inline PointCloud load_ply_ascii(const std::string& path, std::size_t* rejected = nullptr) {
  std::ifstream in(path);
  if (!in) throw MalformedFileError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw MalformedFileError(path + ": missing ply magic");

  long vertex_count = -1;
  int prop_count = 0;
  int ix = -1, iy = -1, iz = -1;
  bool in_vertex_element = false;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = (fmt == "ascii");
    } else if (tok == "element") {
      std::string name;
      long count = 0;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) vertex_count = count;
    } else if (tok == "property" && in_vertex_element) {
      std::string type, name;
      ls >> type >> name;
      if (name == "x") ix = prop_count;
      if (name == "y") iy = prop_count;
      if (name == "z") iz = prop_count;
      ++prop_count;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!ascii) throw MalformedFileError(path + ": not an ascii ply");
  if (vertex_count < 0 || ix < 0 || iy < 0 || iz < 0)
    throw MalformedFileError(path + ": vertex element with x y z properties required");

  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(vertex_count));
  std::size_t bad = 0;
  std::vector<double> vals(static_cast<std::size_t>(prop_count));
  for (long v = 0; v < vertex_count; ++v) {
    if (!std::getline(in, line))
      throw MalformedFileError(path + ": body ended before declared vertex count");
    std::istringstream ls(line);
    for (int c = 0; c < prop_count; ++c) {
      if (!(ls >> vals[static_cast<std::size_t>(c)]))
        throw MalformedFileError(path + ": malformed vertex line");
    }
    const Vec3 p(vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                 vals[static_cast<std::size_t>(iz)]);
    if (!p.allFinite()) {
      ++bad;
      continue;
    }
    cloud.points.push_back(p);
  }
  if (rejected) *rejected = bad;
  return cloud;
}

/// Partition points into cells of side voxel_size (floor indexing; a point
/// exactly on a boundary lands in the higher-index cell) and accumulate per
/// cell count, mean, and population covariance. Moments are accumulated
/// relative to each cell's lattice corner to keep them permutation-stable.
inline VoxelMap voxelize(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0)) throw std::invalid_argument("voxelize: voxel size must be > 0");
  struct Acc {
    double n = 0;
    Vec3 sum = Vec3::Zero();
    Mat3 sq = Mat3::Zero();
  };
  VoxelMap map;
  map.voxel_size = voxel_size;
  std::vector<Acc> acc;
  for (std::uint32_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const VoxelKey key = voxel_key_of(p, voxel_size);
    auto [it, inserted] = map.index.try_emplace(key, map.cells.size());
    if (inserted) {
      VoxelCell cell;
      cell.key = key;
      map.cells.push_back(cell);
      acc.emplace_back();
    }
    const std::size_t slot = it->second;
    const Vec3 local = p - Vec3(static_cast<double>(key.x), static_cast<double>(key.y),
                                static_cast<double>(key.z)) *
                               voxel_size;
    acc[slot].n += 1;
    acc[slot].sum += local;
    acc[slot].sq += local * local.transpose();
    map.cells[slot].point_indices.push_back(i);
  }
  for (std::size_t s = 0; s < map.cells.size(); ++s) {
    VoxelCell& cell = map.cells[s];
    const Acc& a = acc[s];
    const Vec3 origin = Vec3(static_cast<double>(cell.key.x), static_cast<double>(cell.key.y),
                             static_cast<double>(cell.key.z)) *
                        voxel_size;
    const Vec3 local_mean = a.sum / a.n;
    cell.count = static_cast<std::size_t>(a.n);
    cell.mean = origin + local_mean;
    Mat3 cov = a.sq / a.n - local_mean * local_mean.transpose();
    cell.cov = 0.5 * (cov + cov.transpose().eval());
  }
  return map;
}

struct GroundConfig {
  double distance_threshold = 0.3;   // point-to-plane inlier gate, meters
  double max_normal_angle_deg = 30;  // plane normal must be this close to +z
  double min_inlier_fraction = 0.2;  // consensus below this is not "dominant"
  int iterations = 200;
  std::uint64_t seed = 0x67656d72ULL;
};

struct GroundSplit {
  PointCloud ground;
  PointCloud nonground;
  std::vector<std::uint8_t> is_ground;  // per input point
};

/// Strip the dominant near-horizontal plane by random sampling consensus.
/// When no plane passes the normal and consensus gates, ground is empty.
inline GroundSplit remove_ground(const PointCloud& cloud, const GroundConfig& cfg = {}) {
  GroundSplit out;
  out.is_ground.assign(cloud.size(), 0);
  const std::size_t n = cloud.size();
  const double cos_gate = std::cos(cfg.max_normal_angle_deg * M_PI / 180.0);

  Vec3 best_normal = Vec3::UnitZ();
  Vec3 best_point = Vec3::Zero();
  std::size_t best_count = 0;
  if (n >= 3) {
    Pcg32 rng(cfg.seed);
    for (int it = 0; it < cfg.iterations; ++it) {
      const std::size_t a = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      const std::size_t b = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      const std::size_t c = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      if (a == b || b == c || a == c) continue;
      Vec3 normal = (cloud.points[b] - cloud.points[a]).cross(cloud.points[c] - cloud.points[a]);
      const double len = normal.norm();
      if (len < 1e-12) continue;
      normal /= len;
      if (normal.z() < 0) normal = -normal;
      if (normal.z() < cos_gate) continue;
      std::size_t count = 0;
      for (const Vec3& p : cloud.points)
        if (std::abs(normal.dot(p - cloud.points[a])) <= cfg.distance_threshold) ++count;
      if (count > best_count) {
        best_count = count;
        best_normal = normal;
        best_point = cloud.points[a];
      }
    }
  }

  const bool found =
      best_count >= std::max<std::size_t>(3, static_cast<std::size_t>(
                                                 cfg.min_inlier_fraction * static_cast<double>(n)));
  if (found) {
    // least-squares refit over the consensus set, kept only if it stays
    // within the normal gate
    Vec3 centroid = Vec3::Zero();
    std::size_t count = 0;
    for (const Vec3& p : cloud.points) {
      if (std::abs(best_normal.dot(p - best_point)) <= cfg.distance_threshold) {
        centroid += p;
        ++count;
      }
    }
    centroid /= static_cast<double>(count);
    Mat3 scatter = Mat3::Zero();
    for (const Vec3& p : cloud.points) {
      if (std::abs(best_normal.dot(p - best_point)) <= cfg.distance_threshold) {
        const Vec3 d = p - centroid;
        scatter += d * d.transpose();
      }
    }
    Vec3 ev;
    Mat3 vecs;
    symmetric_eigen_desc(scatter, &ev, &vecs);
    Vec3 refit = vecs.col(2);
    if (refit.z() < 0) refit = -refit;
    if (refit.z() >= cos_gate) {
      best_normal = refit;
      best_point = centroid;
    }
    for (std::size_t i = 0; i < n; ++i)
      out.is_ground[i] =
          std::abs(best_normal.dot(cloud.points[i] - best_point)) <= cfg.distance_threshold;
  }

  for (std::size_t i = 0; i < n; ++i) {
    PointCloud& dst = out.is_ground[i] ? out.ground : out.nonground;
    dst.points.push_back(cloud.points[i]);
    if (!cloud.intensities.empty()) dst.intensities.push_back(cloud.intensities[i]);
  }
  return out;
}

}  // namespace gemreg
