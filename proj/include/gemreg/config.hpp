// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value configuration with defaults for every pipeline stage.
// Unknown keys are rejected and serialization round-trips exactly.

#pragma once

#include "gemreg/cloud_io.hpp"
#include "gemreg/estimator.hpp"
#include "gemreg/segmentation.hpp"
#include "gemreg/verification.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gemreg {

struct Config {
  // plane extraction
  double plane_voxel_size = 1.0;
  double plane_eigen_ratio = 30.0;
  double plane_normal_threshold = 0.95;
  double plane_distance_threshold = 0.2;
  // line extraction
  double line_distance_threshold = 0.5;
  double line_inlier_ratio = 0.5;
  // association
  int association_top_j = 50;
  int association_k = 20;
  // pyramid thresholds, strictly descending upper-tail probabilities
  std::vector<double> pagor_p_values = {0.99, 0.95, 0.9, 0.8};
  // estimator
  double estimator_cbar_p = 0.01;
  double estimator_gnc_factor = 1.4;
  int estimator_max_iters = 100;
  // verification
  RobustKernelKind verify_kernel = RobustKernelKind::dcs;
  double verify_scale = 1.0;
  // ground removal
  double ground_distance_threshold = 0.3;
  double ground_normal_angle_deg = 30.0;
  double ground_min_inlier_fraction = 0.2;
  int ground_iterations = 200;
  // segmentation
  int segment_min_points = 10;
  // pipeline
  std::uint64_t pipeline_seed = 61297;
  int pipeline_workers = 1;

  bool operator==(const Config&) const = default;

  SegmentationConfig segmentation() const {
    SegmentationConfig c;
    c.eigen_ratio = plane_eigen_ratio;
    c.normal_threshold = plane_normal_threshold;
    c.distance_threshold = plane_distance_threshold;
    c.line_distance = line_distance_threshold;
    c.line_inlier_ratio = line_inlier_ratio;
    c.min_points = static_cast<std::size_t>(segment_min_points);
    c.seed = derive_seed(pipeline_seed, 1);
    return c;
  }

  GroundConfig ground() const {
    GroundConfig c;
    c.distance_threshold = ground_distance_threshold;
    c.max_normal_angle_deg = ground_normal_angle_deg;
    c.min_inlier_fraction = ground_min_inlier_fraction;
    c.iterations = ground_iterations;
    c.seed = derive_seed(pipeline_seed, 2);
    return c;
  }

  EstimatorConfig estimator() const {
    EstimatorConfig c;
    c.cbar_p = estimator_cbar_p;
    c.gnc_factor = estimator_gnc_factor;
    c.max_iterations = estimator_max_iters;
    return c;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + value + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": '" + value + "'");
  }
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace detail

inline void apply_config_entry(Config& cfg, const std::string& key, const std::string& value) {
  using detail::parse_double;
  using detail::parse_int;
  if (key == "plane.voxel_size") cfg.plane_voxel_size = parse_double(key, value);
  else if (key == "plane.eigen_ratio") cfg.plane_eigen_ratio = parse_double(key, value);
  else if (key == "plane.normal_threshold") cfg.plane_normal_threshold = parse_double(key, value);
  else if (key == "plane.distance_threshold") cfg.plane_distance_threshold = parse_double(key, value);
  else if (key == "line.distance_threshold") cfg.line_distance_threshold = parse_double(key, value);
  else if (key == "line.inlier_ratio") cfg.line_inlier_ratio = parse_double(key, value);
  else if (key == "association.top_j") cfg.association_top_j = static_cast<int>(parse_int(key, value));
  else if (key == "association.k") cfg.association_k = static_cast<int>(parse_int(key, value));
  else if (key == "pagor.p_values") cfg.pagor_p_values = detail::parse_double_list(key, value);
  else if (key == "estimator.cbar_p") cfg.estimator_cbar_p = parse_double(key, value);
  else if (key == "estimator.gnc_factor") cfg.estimator_gnc_factor = parse_double(key, value);
  else if (key == "estimator.max_iters") cfg.estimator_max_iters = static_cast<int>(parse_int(key, value));
  else if (key == "verify.kernel") cfg.verify_kernel = kernel_from_string(value);
  else if (key == "verify.scale") cfg.verify_scale = parse_double(key, value);
  else if (key == "ground.distance_threshold") cfg.ground_distance_threshold = parse_double(key, value);
  else if (key == "ground.normal_angle_deg") cfg.ground_normal_angle_deg = parse_double(key, value);
  else if (key == "ground.min_inlier_fraction") cfg.ground_min_inlier_fraction = parse_double(key, value);
  else if (key == "ground.iterations") cfg.ground_iterations = static_cast<int>(parse_int(key, value));
  else if (key == "segment.min_points") cfg.segment_min_points = static_cast<int>(parse_int(key, value));
  else if (key == "pipeline.seed") cfg.pipeline_seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "pipeline.workers") cfg.pipeline_workers = static_cast<int>(parse_int(key, value));
  else throw ConfigError("unknown config key: " + key);
}

inline Config parse_config(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string serialize_config(const Config& cfg) {
  using detail::format_double;
  std::ostringstream out;
  out << "plane.voxel_size = " << format_double(cfg.plane_voxel_size) << "\n";
  out << "plane.eigen_ratio = " << format_double(cfg.plane_eigen_ratio) << "\n";
  out << "plane.normal_threshold = " << format_double(cfg.plane_normal_threshold) << "\n";
  out << "plane.distance_threshold = " << format_double(cfg.plane_distance_threshold) << "\n";
  out << "line.distance_threshold = " << format_double(cfg.line_distance_threshold) << "\n";
  out << "line.inlier_ratio = " << format_double(cfg.line_inlier_ratio) << "\n";
  out << "association.top_j = " << cfg.association_top_j << "\n";
  out << "association.k = " << cfg.association_k << "\n";
  out << "pagor.p_values = ";
  for (std::size_t i = 0; i < cfg.pagor_p_values.size(); ++i)
    out << (i ? "," : "") << format_double(cfg.pagor_p_values[i]);
  out << "\n";
  out << "estimator.cbar_p = " << format_double(cfg.estimator_cbar_p) << "\n";
  out << "estimator.gnc_factor = " << format_double(cfg.estimator_gnc_factor) << "\n";
  out << "estimator.max_iters = " << cfg.estimator_max_iters << "\n";
  out << "verify.kernel = " << to_string(cfg.verify_kernel) << "\n";
  out << "verify.scale = " << format_double(cfg.verify_scale) << "\n";
  out << "ground.distance_threshold = " << format_double(cfg.ground_distance_threshold) << "\n";
  out << "ground.normal_angle_deg = " << format_double(cfg.ground_normal_angle_deg) << "\n";
  out << "ground.min_inlier_fraction = " << format_double(cfg.ground_min_inlier_fraction) << "\n";
  out << "ground.iterations = " << cfg.ground_iterations << "\n";
  out << "segment.min_points = " << cfg.segment_min_points << "\n";
  out << "pipeline.seed = " << cfg.pipeline_seed << "\n";
  out << "pipeline.workers = " << cfg.pipeline_workers << "\n";
  return out.str();
}

}  // namespace gemreg
