// SPDX-License-Identifier: Apache-2.0
//
// Synthetic-scene generation and ground-truth metrics: seeded scenes built
// from plates, blobs, and rods, the rotation/translation error and success
// criterion, correspondence inlier metrics, and batch evaluation bucketed by
// translation magnitude.

#pragma once

#include "gemreg/pipeline.hpp"
#include "gemreg/rng.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <vector>

namespace gemreg {

struct SceneSpec {
  int planes = 10;
  int clusters = 10;
  int lines = 6;
  double extent = 70;        // scene cube side, meters
  double noise_sigma = 0.05; // per-point Gaussian noise, meters
  double overlap = 0.8;      // fraction of source retained in the target
  double max_yaw_deg = 180;
  double max_tilt_deg = 2;   // roll/pitch range
  double min_translation = 0;
  double max_translation = 10;
  double max_z_translation = 1;
  std::uint64_t seed = 1;
  // primitive construction knobs
  double plane_side_min = 4, plane_side_max = 10;
  double plane_point_spacing = 0.35;
  double cluster_radius_min = 0.8, cluster_radius_max = 2.5;
  int cluster_points = 400;
  double line_length_min = 3, line_length_max = 8;
  int line_points = 150;
};

struct SynthScene {
  PointCloud src;
  PointCloud tgt;
  Pose gt;                          // maps src coordinates into tgt coordinates
  std::vector<std::uint8_t> shared; // per src point: survived into the target
};

namespace detail {

inline Mat3 random_rotation(Pcg32& rng) {
  const Vec3 axis = rng.unit_vector();
  const double angle = rng.uniform(0, 2.0 * M_PI);
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

inline void sample_plate(Pcg32& rng, const SceneSpec& spec, std::vector<Vec3>* out) {
  const Vec3 center = Vec3(rng.uniform(-spec.extent / 2, spec.extent / 2),
                           rng.uniform(-spec.extent / 2, spec.extent / 2),
                           rng.uniform(-spec.extent / 2, spec.extent / 2));
  const Mat3 rot = random_rotation(rng);
  const double a = rng.uniform(spec.plane_side_min, spec.plane_side_max);
  const double b = rng.uniform(spec.plane_side_min, spec.plane_side_max);
  const double step = spec.plane_point_spacing;
  const int na = std::max(2, static_cast<int>(a / step));
  const int nb = std::max(2, static_cast<int>(b / step));
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const double u = (static_cast<double>(i) / (na - 1) - 0.5) * a;
      const double v = (static_cast<double>(j) / (nb - 1) - 0.5) * b;
      out->push_back(center + rot * Vec3(u, v, 0));
    }
}

inline void sample_blob(Pcg32& rng, const SceneSpec& spec, std::vector<Vec3>* out) {
  const Vec3 center = Vec3(rng.uniform(-spec.extent / 2, spec.extent / 2),
                           rng.uniform(-spec.extent / 2, spec.extent / 2),
                           rng.uniform(-spec.extent / 2, spec.extent / 2));
  const Mat3 rot = random_rotation(rng);
  const Vec3 radii(rng.uniform(spec.cluster_radius_min, spec.cluster_radius_max),
                   rng.uniform(spec.cluster_radius_min, spec.cluster_radius_max),
                   rng.uniform(spec.cluster_radius_min, spec.cluster_radius_max));
  for (int i = 0; i < spec.cluster_points; ++i) {
    const Vec3 u = rng.in_unit_ball();
    out->push_back(center + rot * u.cwiseProduct(radii));
  }
}

inline void sample_rod(Pcg32& rng, const SceneSpec& spec, std::vector<Vec3>* out) {
  const Vec3 center = Vec3(rng.uniform(-spec.extent / 2, spec.extent / 2),
                           rng.uniform(-spec.extent / 2, spec.extent / 2),
                           rng.uniform(-spec.extent / 2, spec.extent / 2));
  const Vec3 dir = rng.unit_vector();
  const double len = rng.uniform(spec.line_length_min, spec.line_length_max);
  for (int i = 0; i < spec.line_points; ++i) {
    const double s = rng.uniform(-len / 2, len / 2);
    const Vec3 jitter = rng.normal_vec3() * 0.02;
    out->push_back(center + dir * s + jitter);
  }
}

}  // namespace detail

/// Build one seeded scene pair. The target is the source transformed by a
/// sampled pose with points on the far side of a random half-space culled
/// until the retained fraction hits the overlap target; both sides carry
/// independent per-point noise.
inline SynthScene synth_scene(const SceneSpec& spec) {
  if (!(spec.overlap >= 0 && spec.overlap <= 1))
    throw std::invalid_argument("synth_scene: overlap must be in [0,1]");
  if (spec.planes < 0 || spec.clusters < 0 || spec.lines < 0)
    throw std::invalid_argument("synth_scene: counts must be non-negative");

  Pcg32 rng(spec.seed);
  std::vector<Vec3> base;
  for (int i = 0; i < spec.planes; ++i) detail::sample_plate(rng, spec, &base);
  for (int i = 0; i < spec.clusters; ++i) detail::sample_blob(rng, spec, &base);
  for (int i = 0; i < spec.lines; ++i) detail::sample_rod(rng, spec, &base);

  // ground-truth pose: bounded yaw/tilt, planar-ish translation
  const double yaw = rng.uniform(-spec.max_yaw_deg, spec.max_yaw_deg) * M_PI / 180.0;
  const double roll = rng.uniform(-spec.max_tilt_deg, spec.max_tilt_deg) * M_PI / 180.0;
  const double pitch = rng.uniform(-spec.max_tilt_deg, spec.max_tilt_deg) * M_PI / 180.0;
  SynthScene scene;
  scene.gt.rotation = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                       Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                       Eigen::AngleAxisd(roll, Vec3::UnitX()))
                          .toRotationMatrix();
  const double heading = rng.uniform(0, 2.0 * M_PI);
  const double magnitude = rng.uniform(spec.min_translation, spec.max_translation);
  const double tz = rng.uniform(-spec.max_z_translation, spec.max_z_translation);
  Vec3 t(std::cos(heading) * magnitude, std::sin(heading) * magnitude, tz);
  scene.gt.translation = t;

  // half-space culling against the overlap quantile of a random direction
  const double phi = rng.uniform(0, 2.0 * M_PI);
  const Vec3 cull_dir(std::cos(phi), std::sin(phi), 0);
  std::vector<double> proj(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) proj[i] = cull_dir.dot(base[i]);
  std::vector<double> sorted = proj;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t keep =
      std::min(base.size(), static_cast<std::size_t>(
                                std::ceil(spec.overlap * static_cast<double>(base.size()))));
  const double cutoff =
      keep == 0 ? -std::numeric_limits<double>::infinity() : sorted[keep - 1];

  scene.shared.assign(base.size(), 0);
  scene.src.points.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    scene.src.points.push_back(base[i] + rng.normal_vec3() * spec.noise_sigma);
    scene.shared[i] = proj[i] <= cutoff;
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (!scene.shared[i]) continue;
    scene.tgt.points.push_back(scene.gt.apply(base[i]) + rng.normal_vec3() * spec.noise_sigma);
  }
  return scene;
}

/// Geodesic rotation gap in degrees, trace argument clamped to [-1, 1].
inline double rotation_error_deg(const Mat3& estimated, const Mat3& truth) {
  const double arg = std::clamp(((estimated.transpose() * truth).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(arg) * 180.0 / M_PI;
}

inline double translation_error_m(const Mat3& r_estimated, const Vec3& t_estimated,
                                  const Vec3& t_truth) {
  return (r_estimated.transpose() * (t_truth - t_estimated)).norm();
}

/// The registration success criterion: under 5 degrees and under 2 meters.
inline bool is_success(double rotation_deg, double translation_m) {
  return rotation_deg < 5.0 && translation_m < 2.0;
}

struct MatchingMetrics {
  double inlier_ratio = 0;  // 0 when no correspondences (see undefined)
  std::size_t inlier_count = 0;
  std::size_t total = 0;
  bool recalled = false;  // strictly more than 3 inliers
  bool undefined = false; // no correspondences at all
};

/// A correspondence is an inlier when the true pose maps its source center
/// within half a meter of its target center.
inline MatchingMetrics matching_metrics(const std::vector<Correspondence>& corrs,
                                        std::span<const Gem> xs, std::span<const Gem> ys,
                                        const Pose& gt) {
  MatchingMetrics m;
  m.total = corrs.size();
  if (corrs.empty()) {
    m.undefined = true;
    return m;
  }
  for (const Correspondence& c : corrs) {
    const Vec3 moved = gt.apply(xs[static_cast<std::size_t>(c.x_index)].mean);
    if ((moved - ys[static_cast<std::size_t>(c.y_index)].mean).norm() < 0.5) ++m.inlier_count;
  }
  m.inlier_ratio = static_cast<double>(m.inlier_count) / static_cast<double>(m.total);
  m.recalled = m.inlier_count > 3;
  return m;
}

struct EvalRecord {
  double rotation_error_deg = 0;
  double translation_error_m = 0;
  bool success = false;
  double inlier_ratio = 0;
  bool recalled = false;
  double gt_translation_norm = 0;
  double runtime_ms = 0;
  int bucket = -1;  // 0: [0,10), 1: [10,20), 2: [20,30), 3: beyond
};

inline int translation_bucket(double magnitude) {
  if (magnitude < 10) return 0;
  if (magnitude < 20) return 1;
  if (magnitude < 30) return 2;
  return 3;
}

struct BucketSummary {
  std::size_t pairs = 0;
  std::size_t successes = 0;
  double success_rate() const {
    return pairs == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(pairs);
  }
};

struct BenchmarkSummary {
  std::vector<EvalRecord> records;
  std::array<BucketSummary, 4> buckets;
};

/// Register every scene pair and aggregate success by translation bucket.
inline BenchmarkSummary run_benchmark(const std::vector<SceneSpec>& specs, const Config& cfg) {
  BenchmarkSummary summary;
  summary.records.reserve(specs.size());
  for (const SceneSpec& spec : specs) {
    const SynthScene scene = synth_scene(spec);
    const PipelineReport report = register_clouds(scene.src, scene.tgt, cfg);
    EvalRecord rec;
    rec.runtime_ms = report.timings.total_ms;
    rec.gt_translation_norm = scene.gt.translation.norm();
    rec.bucket = translation_bucket(rec.gt_translation_norm);
    if (report.success) {
      rec.rotation_error_deg = rotation_error_deg(report.result.pose.rotation, scene.gt.rotation);
      rec.translation_error_m = translation_error_m(
          report.result.pose.rotation, report.result.pose.translation, scene.gt.translation);
      rec.success = is_success(rec.rotation_error_deg, rec.translation_error_m);
    } else {
      rec.rotation_error_deg = 180;
      rec.translation_error_m = std::numeric_limits<double>::infinity();
      rec.success = false;
    }
    if (report.artifacts) {
      const MatchingMetrics mm =
          matching_metrics(report.artifacts->correspondences, report.artifacts->src_gems,
                           report.artifacts->tgt_gems, scene.gt);
      rec.inlier_ratio = mm.inlier_ratio;
      rec.recalled = mm.recalled;
    }
    auto& bucket = summary.buckets[static_cast<std::size_t>(rec.bucket)];
    bucket.pairs += 1;
    bucket.successes += rec.success ? 1 : 0;
    summary.records.push_back(rec);
  }
  return summary;
}

}  // namespace gemreg
