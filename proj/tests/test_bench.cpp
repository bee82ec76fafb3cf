// SPDX-License-Identifier: Apache-2.0

#include "gemreg/bench.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gemreg;

TEST_CASE("synthetic scenes") {
  SECTION("the same seed reproduces the scene bit for bit") {
    SceneSpec spec;
    spec.seed = 909;
    const SynthScene a = synth_scene(spec);
    const SynthScene b = synth_scene(spec);
    REQUIRE(a.src.size() == b.src.size());
    REQUIRE(a.tgt.size() == b.tgt.size());
    for (std::size_t i = 0; i < a.src.size(); ++i) CHECK(a.src.points[i] == b.src.points[i]);
    for (std::size_t i = 0; i < a.tgt.size(); ++i) CHECK(a.tgt.points[i] == b.tgt.points[i]);
    CHECK(a.gt.rotation == b.gt.rotation);
    CHECK(a.gt.translation == b.gt.translation);
  }

  SECTION("full overlap and zero noise make the target an exact transform") {
    SceneSpec spec;
    spec.seed = 4;
    spec.overlap = 1.0;
    spec.noise_sigma = 0.0;
    const SynthScene scene = synth_scene(spec);
    REQUIRE(scene.tgt.size() == scene.src.size());
    for (std::size_t i = 0; i < scene.src.size(); ++i)
      CHECK((scene.gt.apply(scene.src.points[i]) - scene.tgt.points[i]).norm() == 0.0);
  }

  SECTION("the shared fraction lands near the overlap target") {
    SceneSpec spec;
    spec.seed = 5;
    spec.overlap = 0.5;
    const SynthScene scene = synth_scene(spec);
    std::size_t shared = 0;
    for (std::uint8_t s : scene.shared) shared += s;
    const double fraction = static_cast<double>(shared) / static_cast<double>(scene.src.size());
    CHECK(std::abs(fraction - 0.5) < 0.05);
    CHECK(scene.tgt.size() == shared);
  }

  SECTION("ground truth is consistent with the shared points at zero noise") {
    SceneSpec spec;
    spec.seed = 6;
    spec.overlap = 0.6;
    spec.noise_sigma = 0.0;
    const SynthScene scene = synth_scene(spec);
    std::size_t t = 0;
    for (std::size_t i = 0; i < scene.src.size(); ++i) {
      if (!scene.shared[i]) continue;
      CHECK((scene.gt.apply(scene.src.points[i]) - scene.tgt.points[t]).norm() == 0.0);
      ++t;
    }
  }

  SECTION("impossible overlap targets are rejected") {
    SceneSpec spec;
    spec.overlap = 1.5;
    CHECK_THROWS_AS(synth_scene(spec), std::invalid_argument);
  }
}

TEST_CASE("pose error metrics") {
  SECTION("exact estimates have zero error") {
    const Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 2).normalized()).toRotationMatrix();
    const Vec3 t(4, 5, 6);
    CHECK(rotation_error_deg(r, r) == 0.0);
    CHECK(translation_error_m(r, t, t) == 0.0);
  }

  SECTION("a ten degree yaw reads as ten degrees") {
    const Mat3 r = Eigen::AngleAxisd(10.0 * M_PI / 180, Vec3::UnitZ()).toRotationMatrix();
    CHECK(rotation_error_deg(r, Mat3::Identity()) == Catch::Approx(10.0).margin(1e-9));
  }

  SECTION("identity rotations leave translation error euclidean") {
    CHECK(translation_error_m(Mat3::Identity(), Vec3::Zero(), Vec3(0, 0, 1.5)) ==
          Catch::Approx(1.5).margin(1e-12));
  }

  SECTION("rotation error is symmetric and matches the quaternion angle") {
    Pcg32 rng(8);
    for (int i = 0; i < 200; ++i) {
      const Mat3 a =
          Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector()).toRotationMatrix();
      const Mat3 b =
          Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector()).toRotationMatrix();
      const double ab = rotation_error_deg(a, b);
      CHECK(ab == Catch::Approx(rotation_error_deg(b, a)).margin(1e-9));
      CHECK(ab == Catch::Approx(oracles::quaternion_angle_deg(a, b)).margin(1e-6));
    }
  }
}

TEST_CASE("success criterion") {
  CHECK(is_success(0.0, 0.0));
  CHECK_FALSE(is_success(10.0, 0.0));
  CHECK(is_success(4.9, 1.99));
  CHECK_FALSE(is_success(5.0, 0.0));
  CHECK_FALSE(is_success(0.0, 2.0));
}

TEST_CASE("matching metrics") {
  auto gem_at = [](const Vec3& mean) {
    Gem g;
    g.mean = mean;
    return g;
  };
  Pose gt;
  gt.rotation = Eigen::AngleAxisd(0.5, Vec3::UnitZ()).toRotationMatrix();
  gt.translation = Vec3(3, 1, 0);

  std::vector<Gem> xs, ys;
  std::vector<Correspondence> corrs;
  for (int i = 0; i < 6; ++i) {
    const Vec3 mean(i * 2.0, -i * 1.0, 0.5);
    xs.push_back(gem_at(mean));
    ys.push_back(gem_at(gt.apply(mean)));
    Correspondence c;
    c.x_index = i;
    c.y_index = i;
    corrs.push_back(c);
  }

  SECTION("exact correspondences are all inliers and recalled") {
    const MatchingMetrics m = matching_metrics(corrs, xs, ys, gt);
    CHECK(m.inlier_ratio == 1.0);
    CHECK(m.recalled);
    CHECK_FALSE(m.undefined);
  }

  SECTION("no correspondences reports zero with a flag") {
    const MatchingMetrics m = matching_metrics({}, xs, ys, gt);
    CHECK(m.inlier_ratio == 0.0);
    CHECK_FALSE(m.recalled);
    CHECK(m.undefined);
  }

  SECTION("exactly three inliers is not recalled") {
    std::vector<Gem> ys_broken = ys;
    for (std::size_t i = 3; i < ys_broken.size(); ++i)
      ys_broken[i].mean += Vec3(10, 10, 0);  // break all but three
    const MatchingMetrics m = matching_metrics(corrs, xs, ys_broken, gt);
    CHECK(m.inlier_count == 3);
    CHECK_FALSE(m.recalled);
  }
}

TEST_CASE("batch evaluation") {
  SECTION("an empty spec list gives an empty table") {
    const BenchmarkSummary summary = run_benchmark({}, Config{});
    CHECK(summary.records.empty());
    for (const BucketSummary& b : summary.buckets) CHECK(b.pairs == 0);
  }

  SECTION("a small batch aggregates by translation bucket and reruns identically") {
    std::vector<SceneSpec> specs;
    for (int i = 0; i < 4; ++i) {
      SceneSpec spec;
      spec.seed = 100 + static_cast<std::uint64_t>(i);
      spec.min_translation = 5.0 * i;
      spec.max_translation = 5.0 * i + 4.0;
      specs.push_back(spec);
    }
    const Config cfg;
    const BenchmarkSummary a = run_benchmark(specs, cfg);
    const BenchmarkSummary b = run_benchmark(specs, cfg);
    REQUIRE(a.records.size() == 4);
    std::size_t bucketed = 0;
    for (const BucketSummary& bucket : a.buckets) bucketed += bucket.pairs;
    CHECK(bucketed == 4);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].rotation_error_deg == b.records[i].rotation_error_deg);
      CHECK(a.records[i].translation_error_m == b.records[i].translation_error_m);
      CHECK(a.records[i].success == b.records[i].success);
      CHECK(a.records[i].inlier_ratio == b.records[i].inlier_ratio);
    }
  }
}
