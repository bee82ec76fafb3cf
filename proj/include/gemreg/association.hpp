// SPDX-License-Identifier: Apache-2.0
//
// Putative correspondence generation: same-type models are matched by
// mutual-K-nearest-neighbor over the Gaussian Wasserstein distance, with the
// aligning transform substituted from the two box frames.

#pragma once

#include "gemreg/gem.hpp"
#include "gemreg/parallel.hpp"

#include <algorithm>
#include <limits>
#include <span>

namespace gemreg {

struct Correspondence {
  int x_index = -1;  // index into the source model list
  int y_index = -1;  // index into the target model list
  PrimitiveType type = PrimitiveType::cluster;
  double distance = 0;  // Wasserstein score under the best frame alignment
};

/// Frame-to-frame substitute for the unknown registration:
/// R = Ro(y) Ro(x)^T and t chosen so the source center maps exactly onto the
/// target center.
inline Pose alignment_substitute(const Gem& x, const Gem& y) {
  Pose pose;
  pose.rotation = y.obb.orientation * x.obb.orientation.transpose();
  pose.translation = y.mean - pose.rotation * x.mean;
  return pose;
}

namespace detail {

inline Mat3 psd_sqrt(const Mat3& m) {
  Vec3 ev;
  Mat3 vecs;
  symmetric_eigen_desc(m, &ev, &vecs);
  for (int i = 0; i < 3; ++i) ev[i] = std::sqrt(std::max(ev[i], 0.0));
  return vecs * ev.asDiagonal() * vecs.transpose();
}

// the four proper sign assignments of a box frame
inline const std::array<Vec3, 4>& proper_axis_flips() {
  static const std::array<Vec3, 4> flips = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1),
                                            Vec3(-1, -1, 1)};
  return flips;
}

}  // namespace detail

/// Squared 2-Wasserstein distance between the transformed source Gaussian
/// and the target Gaussian:
///   |mu'_x - mu_y|^2 + Tr(S'_x + S_y - 2 (S'_x^1/2 S_y S'_x^1/2)^1/2)
/// Covariance eigenvalues are floored at 1e-6 before the roots since plane
/// and line covariances are rank deficient.
inline double wasserstein_distance(const Gem& x, const Gem& y, const Mat3& rotation,
                                   const Vec3& translation) {
  const Vec3 mu = rotation * x.mean + translation;
  const Mat3 sx = floor_eigenvalues(rotation * x.cov * rotation.transpose(), 1e-6);
  const Mat3 sy = floor_eigenvalues(y.cov, 1e-6);
  const Mat3 root = detail::psd_sqrt(sx);
  const Mat3 inner = root * sy * root;
  const Mat3 cross = detail::psd_sqrt(inner);
  const double trace = (sx + sy).trace() - 2.0 * cross.trace();
  return (mu - y.mean).squaredNorm() + std::max(trace, 0.0);
}

/// Distance used by the matcher: the Wasserstein score minimized over the
/// four proper sign assignments of the source frame (the box orientation is
/// only defined up to them).
inline double gem_match_distance(const Gem& x, const Gem& y) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& f : detail::proper_axis_flips()) {
    Gem flipped = x;
    flipped.obb.orientation = x.obb.orientation * f.asDiagonal();
    const Pose pose = alignment_substitute(flipped, y);
    best = std::min(best, wasserstein_distance(x, y, pose.rotation, pose.translation));
  }
  return best;
}

/// Mutual-K-nearest-neighbor matching per primitive type. A pair is emitted
/// only when each side ranks inside the other's K nearest; output is sorted
/// by ascending distance (ties by indices).
inline std::vector<Correspondence> mknn_match(std::span<const Gem> xs, std::span<const Gem> ys,
                                              int k, unsigned workers = 1) {
  if (k < 1) throw std::invalid_argument("mknn_match: K must be >= 1");
  std::vector<Correspondence> out;
  for (PrimitiveType type : {PrimitiveType::plane, PrimitiveType::cluster, PrimitiveType::line}) {
    std::vector<int> xi, yi;
    for (int i = 0; i < static_cast<int>(xs.size()); ++i)
      if (xs[i].type == type) xi.push_back(i);
    for (int j = 0; j < static_cast<int>(ys.size()); ++j)
      if (ys[j].type == type) yi.push_back(j);
    if (xi.empty() || yi.empty()) continue;

    const std::size_t nx = xi.size(), ny = yi.size();
    std::vector<double> dist(nx * ny);
    parallel_chunks(nx * ny, 64, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t f = begin; f < end; ++f) {
        const std::size_t a = f / ny, b = f % ny;
        dist[f] = gem_match_distance(xs[static_cast<std::size_t>(xi[a])],
                                     ys[static_cast<std::size_t>(yi[b])]);
      }
    });

    auto rank_of = [&](std::span<const double> row_dist, std::size_t target) {
      // number of entries strictly better than target (ties by index)
      std::size_t rank = 0;
      for (std::size_t i = 0; i < row_dist.size(); ++i) {
        if (i == target) continue;
        if (row_dist[i] < row_dist[target] || (row_dist[i] == row_dist[target] && i < target))
          ++rank;
      }
      return rank;
    };

    for (std::size_t a = 0; a < nx; ++a) {
      std::vector<double> row(ny);
      for (std::size_t b = 0; b < ny; ++b) row[b] = dist[a * ny + b];
      for (std::size_t b = 0; b < ny; ++b) {
        if (rank_of(row, b) >= static_cast<std::size_t>(k)) continue;
        std::vector<double> col(nx);
        for (std::size_t a2 = 0; a2 < nx; ++a2) col[a2] = dist[a2 * ny + b];
        if (rank_of(col, a) >= static_cast<std::size_t>(k)) continue;
        out.push_back(Correspondence{xi[a], yi[b], type, dist[a * ny + b]});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Correspondence& a, const Correspondence& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.x_index != b.x_index) return a.x_index < b.x_index;
    return a.y_index < b.y_index;
  });
  return out;
}

}  // namespace gemreg
