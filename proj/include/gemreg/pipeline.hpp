// SPDX-License-Identifier: Apache-2.0
//
// End-to-end registration: ground removal, segmentation, model building,
// matching, pyramid pruning, per-level estimation, and verification.
// Failure is reported as a flagged result, never an exception, so batch
// evaluation can continue past hard pairs.

#pragma once

#include "gemreg/association.hpp"
#include "gemreg/cloud_io.hpp"
#include "gemreg/config.hpp"
#include "gemreg/gem.hpp"
#include "gemreg/pagor.hpp"
#include "gemreg/verification.hpp"

#include <chrono>
#include <memory>
#include <sstream>

namespace gemreg {

struct StageTimings {
  double correspondence_ms = 0;  // ground + voxelize + segment + models + matching
  double graph_ms = 0;
  double clique_ms = 0;
  double estimate_ms = 0;
  double verify_ms = 0;
  double total_ms = 0;
};

struct StageCounts {
  std::size_t src_planes = 0, src_clusters = 0, src_lines = 0;
  std::size_t tgt_planes = 0, tgt_clusters = 0, tgt_lines = 0;
  std::size_t correspondences = 0;
  std::vector<std::size_t> clique_sizes;  // one per pyramid level
};

/// Heavyweight intermediate products kept alive for evaluation tooling.
struct PipelineArtifacts {
  std::vector<Gem> src_gems;  // after top-J selection
  std::vector<Gem> tgt_gems;
  std::vector<Correspondence> correspondences;
};

struct PipelineReport {
  RegistrationResult result;
  StageTimings timings;
  StageCounts counts;
  bool success = false;
  std::shared_ptr<const PipelineArtifacts> artifacts;

  /// Canonical text of everything reproducible: pose, score, counts, per
  /// level clique sizes and scores. Excludes wall-clock timings, so two runs
  /// with the same inputs and config compare byte-for-byte.
  std::string deterministic_summary() const {
    std::ostringstream out;
    auto fmt = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    out << "success " << (success ? 1 : 0) << "\n";
    out << "rotation";
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << " " << fmt(result.pose.rotation(r, c));
    out << "\n";
    out << "translation";
    for (int i = 0; i < 3; ++i) out << " " << fmt(result.pose.translation[i]);
    out << "\n";
    out << "score " << fmt(result.score) << "\n";
    out << "chosen_level " << result.chosen_level << "\n";
    out << "segments " << counts.src_planes << " " << counts.src_clusters << " "
        << counts.src_lines << " " << counts.tgt_planes << " " << counts.tgt_clusters << " "
        << counts.tgt_lines << "\n";
    out << "correspondences " << counts.correspondences << "\n";
    out << "clique_sizes";
    for (std::size_t s : counts.clique_sizes) out << " " << s;
    out << "\n";
    out << "candidate_scores";
    for (std::size_t i = 0; i < result.candidates.size(); ++i)
      out << " " << result.candidates[i].level << ":" << fmt(result.scores[i]);
    out << "\n";
    return out.str();
  }
};

namespace detail {

inline double ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

struct FrontEnd {
  PointCloud nonground;
  VoxelMap voxels;
  SegmentationResult segmentation;
  std::vector<Gem> gems;  // top-J
};

inline FrontEnd run_front_end(const PointCloud& cloud, const Config& cfg) {
  FrontEnd fe;
  fe.nonground = remove_ground(cloud, cfg.ground()).nonground;
  fe.voxels = voxelize(fe.nonground, cfg.plane_voxel_size);
  fe.segmentation = segment_cloud(fe.nonground, fe.voxels, cfg.segmentation());

  std::vector<const Segment*> segments;
  for (const Segment& s : fe.segmentation.planes) segments.push_back(&s);
  for (const Segment& s : fe.segmentation.clusters) segments.push_back(&s);
  for (const Segment& s : fe.segmentation.lines) segments.push_back(&s);

  std::vector<Gem> gems(segments.size());
  parallel_chunks(segments.size(), 4, static_cast<unsigned>(cfg.pipeline_workers),
                  [&](std::size_t, std::size_t begin, std::size_t end) {
                    for (std::size_t i = begin; i < end; ++i)
                      gems[i] = build_gem(*segments[i], fe.voxels, fe.nonground);
                  });
  fe.gems = select_top_j(std::move(gems), cfg.association_top_j);
  return fe;
}

}  // namespace detail

/// Register the source cloud onto the target cloud. Levels whose clique has
/// fewer than 3 vertices produce no candidate; with no candidates at all the
/// report carries the identity pose and a failure flag.
inline PipelineReport register_clouds(const PointCloud& src, const PointCloud& tgt,
                                      const Config& cfg) {
  PipelineReport report;
  const unsigned workers = static_cast<unsigned>(std::max(1, cfg.pipeline_workers));
  const auto t_start = std::chrono::steady_clock::now();

  if (src.empty() || tgt.empty()) {
    report.timings.total_ms = detail::ms_since(t_start);
    return report;
  }

  // front end: segments, models, correspondences
  auto t0 = std::chrono::steady_clock::now();
  detail::FrontEnd src_fe = detail::run_front_end(src, cfg);
  detail::FrontEnd tgt_fe = detail::run_front_end(tgt, cfg);

  report.counts.src_planes = src_fe.segmentation.planes.size();
  report.counts.src_clusters = src_fe.segmentation.clusters.size();
  report.counts.src_lines = src_fe.segmentation.lines.size();
  report.counts.tgt_planes = tgt_fe.segmentation.planes.size();
  report.counts.tgt_clusters = tgt_fe.segmentation.clusters.size();
  report.counts.tgt_lines = tgt_fe.segmentation.lines.size();

  auto artifacts = std::make_shared<PipelineArtifacts>();
  artifacts->src_gems = src_fe.gems;
  artifacts->tgt_gems = tgt_fe.gems;

  std::vector<Correspondence> corrs =
      mknn_match(src_fe.gems, tgt_fe.gems, cfg.association_k, workers);
  report.counts.correspondences = corrs.size();
  artifacts->correspondences = corrs;
  report.artifacts = artifacts;
  report.timings.correspondence_ms = detail::ms_since(t0);

  // pyramid graphs
  t0 = std::chrono::steady_clock::now();
  PyramidGraph pyramid = build_pyramid(corrs, src_fe.gems, tgt_fe.gems, cfg.pagor_p_values, workers);
  report.timings.graph_ms = detail::ms_since(t0);

  // graduated cliques
  t0 = std::chrono::steady_clock::now();
  CliqueResult cliques = graduated_max_clique(pyramid);
  for (const auto& c : cliques.cliques) report.counts.clique_sizes.push_back(c.size());
  report.timings.clique_ms = detail::ms_since(t0);

  // one candidate per usable level
  t0 = std::chrono::steady_clock::now();
  const EstimatorConfig est_cfg = cfg.estimator();
  std::vector<TransformationCandidate> candidates(cliques.cliques.size());
  std::vector<char> usable(cliques.cliques.size(), 0);
  parallel_chunks(cliques.cliques.size(), 1, workers, [&](std::size_t, std::size_t begin,
                                                          std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      const std::vector<int>& clique = cliques.cliques[m];
      if (clique.size() < 3) continue;
      // identical cliques at consecutive levels still get their own solve;
      // identity initialization makes them equal, and the dedup below reuses
      // the earlier result instead of re-solving
      if (m > 0 && clique == cliques.cliques[m - 1]) continue;
      std::vector<D2dTerm> terms;
      terms.reserve(clique.size());
      for (int idx : clique) {
        const Correspondence& c = corrs[static_cast<std::size_t>(idx)];
        terms.push_back(make_d2d_term(src_fe.gems[static_cast<std::size_t>(c.x_index)],
                                      tgt_fe.gems[static_cast<std::size_t>(c.y_index)]));
      }
      try {
        candidates[m] = gnc_tls_solve(terms, est_cfg);
        candidates[m].level = static_cast<int>(m);
        candidates[m].inliers = clique;
        usable[m] = 1;
      } catch (const UnderConstrainedError&) {
        // degenerate clique geometry: skip the level
      }
    }
  });
  for (std::size_t m = 1; m < candidates.size(); ++m) {
    if (!usable[m] && cliques.cliques[m].size() >= 3 && cliques.cliques[m] == cliques.cliques[m - 1] &&
        usable[m - 1]) {
      candidates[m] = candidates[m - 1];
      candidates[m].level = static_cast<int>(m);
      usable[m] = 1;
    }
  }
  std::vector<TransformationCandidate> kept;
  for (std::size_t m = 0; m < candidates.size(); ++m)
    if (usable[m]) kept.push_back(std::move(candidates[m]));
  report.timings.estimate_ms = detail::ms_since(t0);

  // verification
  t0 = std::chrono::steady_clock::now();
  if (!kept.empty()) {
    const CompressedMaps maps =
        compress_maps(src_fe.segmentation.semantic_map, src_fe.nonground,
                      tgt_fe.segmentation.semantic_map);
    report.result =
        select_best(std::move(kept), maps, cfg.verify_kernel, cfg.verify_scale, workers);
    report.success = report.result.success;
  }
  report.timings.verify_ms = detail::ms_since(t0);
  report.timings.total_ms = detail::ms_since(t_start);
  return report;
}

}  // namespace gemreg
