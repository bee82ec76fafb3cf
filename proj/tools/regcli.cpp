// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: register a pair of clouds, dump correspondences,
// generate synthetic benchmark scenes, or evaluate a manifest of pairs.

#include "gemreg/bench.hpp"
#include "gemreg/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

gemreg::PointCloud load_cloud(const std::string& path) {
  std::size_t rejected = 0;
  gemreg::PointCloud cloud;
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply")
    cloud = gemreg::load_ply_ascii(path, &rejected);
  else
    cloud = gemreg::load_kitti_bin(path, &rejected);
  if (rejected > 0)
    std::cerr << "warning: " << path << ": dropped " << rejected
              << " non-finite point(s)\n";
  return cloud;
}

void save_kitti_bin(const gemreg::PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gemreg::MalformedFileError("cannot write " + path);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    float rec[4] = {static_cast<float>(cloud.points[i].x()),
                    static_cast<float>(cloud.points[i].y()),
                    static_cast<float>(cloud.points[i].z()),
                    cloud.intensities.empty() ? 0.0f : cloud.intensities[i]};
    out.write(reinterpret_cast<const char*>(rec), 16);
  }
}

void save_pose(const gemreg::Pose& pose, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw gemreg::MalformedFileError("cannot write " + path);
  char buf[64];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g ", pose.rotation(r, c));
      out << buf;
    }
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g%s", pose.translation[i], i == 2 ? "\n" : " ");
    out << buf;
  }
}

gemreg::Pose load_pose(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gemreg::MalformedFileError("cannot open " + path);
  gemreg::Pose pose;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(in >> pose.rotation(r, c)))
        throw gemreg::MalformedFileError(path + ": expected 12 numbers");
  for (int i = 0; i < 3; ++i)
    if (!(in >> pose.translation[i]))
      throw gemreg::MalformedFileError(path + ": expected 12 numbers");
  return pose;
}

json report_to_json(const gemreg::PipelineReport& report) {
  json j;
  j["success_flag"] = report.success;
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(report.result.pose.rotation(r, c));
  j["rotation"] = rot;
  j["translation"] = {report.result.pose.translation[0], report.result.pose.translation[1],
                      report.result.pose.translation[2]};
  j["score"] = std::isfinite(report.result.score) ? json(report.result.score) : json(nullptr);
  j["chosen_level"] = report.result.chosen_level;
  j["timings_ms"] = {{"correspondence", report.timings.correspondence_ms},
                     {"graph", report.timings.graph_ms},
                     {"clique", report.timings.clique_ms},
                     {"estimate", report.timings.estimate_ms},
                     {"verify", report.timings.verify_ms},
                     {"total", report.timings.total_ms}};
  j["clique_sizes"] = report.counts.clique_sizes;
  j["counts"] = {{"src_planes", report.counts.src_planes},
                 {"src_clusters", report.counts.src_clusters},
                 {"src_lines", report.counts.src_lines},
                 {"tgt_planes", report.counts.tgt_planes},
                 {"tgt_clusters", report.counts.tgt_clusters},
                 {"tgt_lines", report.counts.tgt_lines},
                 {"correspondences", report.counts.correspondences}};
  json scores = json::array();
  for (std::size_t i = 0; i < report.result.candidates.size(); ++i)
    scores.push_back(
        {{"level", report.result.candidates[i].level}, {"score", report.result.scores[i]}});
  j["candidate_scores"] = scores;
  return j;
}

gemreg::SceneSpec parse_scene_spec(const std::string& path, int* scene_count) {
  std::ifstream in(path);
  if (!in) throw gemreg::ConfigError("cannot open spec file " + path);
  gemreg::SceneSpec spec;
  *scene_count = 1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = gemreg::detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw gemreg::ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = gemreg::detail::trim(line.substr(0, eq));
    const std::string value = gemreg::detail::trim(line.substr(eq + 1));
    const double v = gemreg::detail::parse_double(key, value);
    if (key == "scenes") *scene_count = static_cast<int>(v);
    else if (key == "planes") spec.planes = static_cast<int>(v);
    else if (key == "clusters") spec.clusters = static_cast<int>(v);
    else if (key == "lines") spec.lines = static_cast<int>(v);
    else if (key == "extent") spec.extent = v;
    else if (key == "noise_sigma") spec.noise_sigma = v;
    else if (key == "overlap") spec.overlap = v;
    else if (key == "max_yaw_deg") spec.max_yaw_deg = v;
    else if (key == "max_tilt_deg") spec.max_tilt_deg = v;
    else if (key == "min_translation") spec.min_translation = v;
    else if (key == "max_translation") spec.max_translation = v;
    else if (key == "max_z_translation") spec.max_z_translation = v;
    else if (key == "seed") spec.seed = static_cast<std::uint64_t>(v);
    else if (key == "plane_side_min") spec.plane_side_min = v;
    else if (key == "plane_side_max") spec.plane_side_max = v;
    else if (key == "plane_point_spacing") spec.plane_point_spacing = v;
    else if (key == "cluster_radius_min") spec.cluster_radius_min = v;
    else if (key == "cluster_radius_max") spec.cluster_radius_max = v;
    else if (key == "cluster_points") spec.cluster_points = static_cast<int>(v);
    else if (key == "line_length_min") spec.line_length_min = v;
    else if (key == "line_length_max") spec.line_length_max = v;
    else if (key == "line_points") spec.line_points = static_cast<int>(v);
    else throw gemreg::ConfigError("unknown scene spec key: " + key);
  }
  return spec;
}

int cmd_register(const std::string& source, const std::string& target, const std::string& config,
                 const std::string& out, int threads) {
  gemreg::Config cfg = config.empty() ? gemreg::Config{} : gemreg::load_config(config);
  if (threads > 0) cfg.pipeline_workers = threads;
  const gemreg::PointCloud src = load_cloud(source);
  const gemreg::PointCloud tgt = load_cloud(target);
  const gemreg::PipelineReport report = gemreg::register_clouds(src, tgt, cfg);
  const json j = report_to_json(report);
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream f(out);
    if (!f) throw gemreg::MalformedFileError("cannot write " + out);
    f << j.dump(2) << "\n";
  }
  if (!report.success) std::cerr << "registration failed (no usable candidate)\n";
  return 0;
}

int cmd_match(const std::string& source, const std::string& target, const std::string& config,
              const std::string& out) {
  gemreg::Config cfg = config.empty() ? gemreg::Config{} : gemreg::load_config(config);
  const gemreg::PointCloud src = load_cloud(source);
  const gemreg::PointCloud tgt = load_cloud(target);
  const gemreg::detail::FrontEnd src_fe = gemreg::detail::run_front_end(src, cfg);
  const gemreg::detail::FrontEnd tgt_fe = gemreg::detail::run_front_end(tgt, cfg);
  const std::vector<gemreg::Correspondence> corrs =
      gemreg::mknn_match(src_fe.gems, tgt_fe.gems, cfg.association_k,
                         static_cast<unsigned>(std::max(1, cfg.pipeline_workers)));
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out.empty() && out != "-") {
    file.open(out);
    if (!file) throw gemreg::MalformedFileError("cannot write " + out);
    os = &file;
  }
  char buf[64];
  for (const gemreg::Correspondence& c : corrs) {
    std::snprintf(buf, sizeof(buf), "%.17g", c.distance);
    *os << gemreg::to_string(c.type) << " " << c.x_index << " " << c.y_index << " " << buf
        << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  int scene_count = 1;
  const gemreg::SceneSpec base = parse_scene_spec(spec_path, &scene_count);
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "pairs.txt");
  if (!manifest) throw gemreg::MalformedFileError("cannot write manifest in " + out_dir);
  for (int i = 0; i < scene_count; ++i) {
    gemreg::SceneSpec spec = base;
    spec.seed = gemreg::derive_seed(base.seed, static_cast<std::uint64_t>(i));
    const gemreg::SynthScene scene = gemreg::synth_scene(spec);
    char name[64];
    std::snprintf(name, sizeof(name), "pair_%04d", i);
    const std::string src_name = std::string(name) + "_src.bin";
    const std::string tgt_name = std::string(name) + "_tgt.bin";
    const std::string gt_name = std::string(name) + "_gt.txt";
    save_kitti_bin(scene.src, (fs::path(out_dir) / src_name).string());
    save_kitti_bin(scene.tgt, (fs::path(out_dir) / tgt_name).string());
    save_pose(scene.gt, (fs::path(out_dir) / gt_name).string());
    manifest << src_name << " " << tgt_name << " " << gt_name << "\n";
  }
  std::cout << "wrote " << scene_count << " scene pair(s) to " << out_dir << "\n";
  return 0;
}

int cmd_bench(const std::string& pairs_path, const std::string& config,
              const std::string& report_path) {
  gemreg::Config cfg = config.empty() ? gemreg::Config{} : gemreg::load_config(config);
  std::ifstream manifest(pairs_path);
  if (!manifest) throw gemreg::MalformedFileError("cannot open manifest " + pairs_path);
  const fs::path base_dir = fs::path(pairs_path).parent_path();

  std::ofstream report(report_path);
  if (!report) throw gemreg::MalformedFileError("cannot write report " + report_path);

  std::array<gemreg::BucketSummary, 4> buckets;
  std::string line;
  int pair_index = 0;
  while (std::getline(manifest, line)) {
    line = gemreg::detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string src_rel, tgt_rel, gt_rel;
    if (!(ls >> src_rel >> tgt_rel >> gt_rel))
      throw gemreg::MalformedFileError(pairs_path + ": expected 'src tgt gt' per line");
    const gemreg::PointCloud src = load_cloud((base_dir / src_rel).string());
    const gemreg::PointCloud tgt = load_cloud((base_dir / tgt_rel).string());
    const gemreg::Pose gt = load_pose((base_dir / gt_rel).string());

    const gemreg::PipelineReport run = gemreg::register_clouds(src, tgt, cfg);
    gemreg::EvalRecord rec;
    rec.runtime_ms = run.timings.total_ms;
    rec.gt_translation_norm = gt.translation.norm();
    rec.bucket = gemreg::translation_bucket(rec.gt_translation_norm);
    if (run.success) {
      rec.rotation_error_deg =
          gemreg::rotation_error_deg(run.result.pose.rotation, gt.rotation);
      rec.translation_error_m = gemreg::translation_error_m(
          run.result.pose.rotation, run.result.pose.translation, gt.translation);
      rec.success = gemreg::is_success(rec.rotation_error_deg, rec.translation_error_m);
    } else {
      rec.rotation_error_deg = 180;
      rec.translation_error_m = std::numeric_limits<double>::infinity();
    }
    if (run.artifacts) {
      const gemreg::MatchingMetrics mm =
          gemreg::matching_metrics(run.artifacts->correspondences, run.artifacts->src_gems,
                                   run.artifacts->tgt_gems, gt);
      rec.inlier_ratio = mm.inlier_ratio;
      rec.recalled = mm.recalled;
    }
    auto& bucket = buckets[static_cast<std::size_t>(rec.bucket)];
    bucket.pairs += 1;
    bucket.successes += rec.success ? 1 : 0;

    report << "pair=" << pair_index << " rot_err_deg=" << rec.rotation_error_deg
           << " trans_err_m=" << rec.translation_error_m << " success=" << (rec.success ? 1 : 0)
           << " inlier_ratio=" << rec.inlier_ratio << " recalled=" << (rec.recalled ? 1 : 0)
           << " gt_translation=" << rec.gt_translation_norm << " time_ms=" << rec.runtime_ms
           << "\n";
    ++pair_index;
  }

  report << "\n# aggregate\n";
  static const char* kBucketNames[4] = {"0-10m", "10-20m", "20-30m", "30m+"};
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (buckets[b].pairs == 0) continue;
    report << "bucket=" << kBucketNames[b] << " pairs=" << buckets[b].pairs
           << " successes=" << buckets[b].successes
           << " success_rate=" << buckets[b].success_rate() << "\n";
  }
  std::cout << "evaluated " << pair_index << " pair(s); report written to " << report_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segment-based global point cloud registration"};
  app.require_subcommand(1);

  std::string source, target, config, out, spec_path, out_dir, pairs_path, report_path;
  int threads = 0;

  CLI::App* reg = app.add_subcommand("register", "register a source cloud onto a target cloud");
  reg->add_option("--source", source, "source cloud (.bin or .ply)")->required();
  reg->add_option("--target", target, "target cloud (.bin or .ply)")->required();
  reg->add_option("--config", config, "config file (defaults used when omitted)");
  reg->add_option("--out", out, "output report path ('-' for stdout)");
  reg->add_option("--threads", threads, "worker threads (overrides pipeline.workers)");

  CLI::App* match = app.add_subcommand("match", "emit putative correspondences");
  match->add_option("--source", source, "source cloud")->required();
  match->add_option("--target", target, "target cloud")->required();
  match->add_option("--config", config, "config file");
  match->add_option("--out", out, "output path ('-' for stdout)");

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic scene pairs");
  synth->add_option("--spec", spec_path, "scene spec file")->required();
  synth->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* bench = app.add_subcommand("bench", "evaluate a manifest of registration pairs");
  bench->add_option("--pairs", pairs_path, "manifest: 'src tgt gt' per line")->required();
  bench->add_option("--config", config, "config file");
  bench->add_option("--report", report_path, "report output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (reg->parsed()) return cmd_register(source, target, config, out, threads);
    if (match->parsed()) return cmd_match(source, target, config, out);
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (bench->parsed()) return cmd_bench(pairs_path, config, report_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
