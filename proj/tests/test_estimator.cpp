// SPDX-License-Identifier: Apache-2.0

#include "gemreg/estimator.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gemreg;

namespace {

struct Instance {
  std::vector<D2dTerm> terms;
  Pose gt;
};

// inlier_count terms following the pose, the rest arbitrary outliers
Instance make_instance(Pcg32& rng, int inlier_count, int outlier_count, double noise_sigma,
                       double max_rotation_deg = 180, double max_translation = 30) {
  Instance inst;
  inst.gt.rotation = Eigen::AngleAxisd(rng.uniform(-max_rotation_deg, max_rotation_deg) * M_PI / 180.0,
                                       rng.unit_vector())
                         .toRotationMatrix();
  inst.gt.translation = rng.unit_vector() * rng.uniform(0, max_translation);
  for (int i = 0; i < inlier_count; ++i) {
    D2dTerm term;
    term.x_mean = rng.normal_vec3() * 18;
    term.y_mean = inst.gt.apply(term.x_mean) + rng.normal_vec3() * noise_sigma;
    term.x_cov = 0.005 * Mat3::Identity();
    term.y_cov = 0.005 * Mat3::Identity();
    inst.terms.push_back(term);
  }
  for (int i = 0; i < outlier_count; ++i) {
    D2dTerm term;
    term.x_mean = rng.normal_vec3() * 18;
    term.y_mean = rng.normal_vec3() * 18;
    term.x_cov = 0.005 * Mat3::Identity();
    term.y_cov = 0.005 * Mat3::Identity();
    inst.terms.push_back(term);
  }
  return inst;
}

double pose_rotation_error_deg(const Pose& a, const Pose& b) {
  const double arg =
      std::clamp(((a.rotation.transpose() * b.rotation).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(arg) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("plane covariance regularization") {
  SECTION("an axis-aligned plane becomes diag(1, 1, 1e-3)") {
    const Mat3 cov = Vec3(2.0, 1.5, 1e-6).asDiagonal();
    const Mat3 reg = regularize_plane_cov(cov);
    CHECK((reg - Mat3(Vec3(1, 1, 1e-3).asDiagonal())).norm() < 1e-12);
  }

  SECTION("rotation conjugates the regularized covariance") {
    Pcg32 rng(1);
    const Mat3 rot =
        Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector()).toRotationMatrix();
    const Mat3 cov = Vec3(3.0, 2.0, 1e-5).asDiagonal();
    const Mat3 rotated = rot * cov * rot.transpose();
    const Mat3 reg = regularize_plane_cov(rotated);
    const Mat3 expected = rot * Mat3(Vec3(1, 1, 1e-3).asDiagonal()) * rot.transpose();
    CHECK((reg - expected).norm() < 1e-9);
  }

  SECTION("non-plane models are floored, not replaced") {
    Gem g;
    g.type = PrimitiveType::cluster;
    g.cov = Vec3(2.0, 1.0, 0.5).asDiagonal();
    CHECK((prepare_estimation_cov(g) - g.cov).norm() < 1e-12);
  }
}

TEST_CASE("distribution-to-distribution residual") {
  SECTION("zero offset gives zero") {
    D2dTerm term;
    term.x_mean = Vec3(1, 2, 3);
    term.y_mean = Vec3(1, 2, 3);
    CHECK(d2d_residual(term, Mat3::Identity(), Vec3::Zero()) < 1e-12);
  }

  SECTION("hand-solved isotropic case") {
    D2dTerm term;
    term.x_mean = Vec3::Zero();
    term.y_mean = Vec3(1, 0, 0);
    term.x_cov = 0.5 * Mat3::Identity();
    term.y_cov = 0.5 * Mat3::Identity();
    CHECK(d2d_residual(term, Mat3::Identity(), Vec3::Zero()) == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("invariant under conjugation by a common rotation") {
    Pcg32 rng(14);
    for (int i = 0; i < 20; ++i) {
      D2dTerm term;
      term.x_mean = rng.normal_vec3() * 5;
      term.y_mean = rng.normal_vec3() * 5;
      term.x_cov = oracles::random_spd(rng, 0.1, 2);
      term.y_cov = oracles::random_spd(rng, 0.1, 2);
      Pose pose;
      pose.rotation =
          Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector()).toRotationMatrix();
      pose.translation = rng.normal_vec3();
      const double base = d2d_residual(term, pose.rotation, pose.translation);

      const Mat3 q =
          Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector()).toRotationMatrix();
      D2dTerm moved;
      moved.x_mean = q * term.x_mean;
      moved.y_mean = q * term.y_mean;
      moved.x_cov = q * term.x_cov * q.transpose();
      moved.y_cov = q * term.y_cov * q.transpose();
      const Mat3 conj_rot = q * pose.rotation * q.transpose();
      const Vec3 conj_t = q * pose.translation;
      CHECK(d2d_residual(moved, conj_rot, conj_t) == Catch::Approx(base).margin(1e-8));
    }
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  Pcg32 rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    const Instance inst = make_instance(rng, 10, 5, 0.05);
    std::vector<Mat3> infos;
    std::vector<double> weights;
    for (const D2dTerm& t : inst.terms) {
      infos.push_back((t.y_cov + t.x_cov).inverse());
      weights.push_back(rng.uniform(0.1, 1.0));
    }
    const WeightedD2dProblem problem(inst.terms, infos, weights);

    Pose pose;
    pose.rotation = Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector())
                        .toRotationMatrix();
    pose.translation = rng.normal_vec3() * 5;

    const Vec6 analytic = problem.gradient(pose);
    Vec6 numeric;
    const double h = 1e-6;
    for (int d = 0; d < 6; ++d) {
      Vec6 delta = Vec6::Zero();
      delta[d] = h;
      Pose plus = pose, minus = pose;
      plus.rotation = pose.rotation * so3_exp(delta.head<3>());
      plus.translation = pose.translation + delta.tail<3>();
      minus.rotation = pose.rotation * so3_exp(-delta.head<3>());
      minus.translation = pose.translation - delta.tail<3>();
      numeric[d] = (problem.value(plus) - problem.value(minus)) / (2 * h);
    }
    const double rel = (analytic - numeric).norm() / std::max(1.0, numeric.norm());
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("graduated non-convexity solver") {
  EstimatorConfig cfg;

  SECTION("degenerate inputs are rejected") {
    Pcg32 rng(3);
    Instance small = make_instance(rng, 2, 0, 0);
    CHECK_THROWS_AS(gnc_tls_solve(small.terms, cfg), UnderConstrainedError);

    std::vector<D2dTerm> identical(5);
    for (auto& t : identical) {
      t.x_mean = Vec3(1, 1, 1);
      t.y_mean = Vec3(2, 2, 2);
    }
    CHECK_THROWS_AS(gnc_tls_solve(identical, cfg), UnderConstrainedError);
  }

  SECTION("noiseless inliers recover any pose almost exactly") {
    Pcg32 rng(41);
    for (int trial = 0; trial < 25; ++trial) {
      const Instance inst = make_instance(rng, 12, 0, 0.0);
      const TransformationCandidate cand = gnc_tls_solve(inst.terms, cfg);
      CHECK(pose_rotation_error_deg(cand.pose, inst.gt) < 0.1);
      CHECK((cand.pose.translation - inst.gt.translation).norm() < 0.01);
      for (double w : cand.weights) CHECK(w >= 0.99);
    }
  }

  SECTION("70 percent outliers with center noise") {
    Pcg32 rng(42);
    int good = 0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
      const Instance inst = make_instance(rng, 15, 35, 0.1);
      const TransformationCandidate cand = gnc_tls_solve(inst.terms, cfg);
      const double rot_err = pose_rotation_error_deg(cand.pose, inst.gt);
      const double trans_err = (cand.pose.translation - inst.gt.translation).norm();
      if (rot_err < 2.0 && trans_err < 0.3) ++good;
    }
    CHECK(good >= trials - 1);
  }

  SECTION("returned rotation is proper") {
    Pcg32 rng(43);
    const Instance inst = make_instance(rng, 10, 20, 0.1);
    const TransformationCandidate cand = gnc_tls_solve(inst.terms, cfg);
    CHECK((cand.pose.rotation.transpose() * cand.pose.rotation - Mat3::Identity()).norm() <
          1e-9);
    CHECK(std::abs(cand.pose.rotation.determinant() - 1.0) < 1e-9);
  }

  SECTION("the truncated objective never increases across outer iterations") {
    Pcg32 rng(44);
    for (int trial = 0; trial < 15; ++trial) {
      const Instance inst = make_instance(rng, 15, 25, 0.08);
      const TransformationCandidate cand = gnc_tls_solve(inst.terms, cfg);
      for (std::size_t i = 1; i < cand.objective_trace.size(); ++i)
        CHECK(cand.objective_trace[i] <= cand.objective_trace[i - 1] + 1e-9);
    }
  }

  SECTION("a seed pose is honored") {
    Pcg32 rng(45);
    const Instance inst = make_instance(rng, 10, 0, 0.0);
    const Pose seed = inst.gt;
    const TransformationCandidate cand = gnc_tls_solve(inst.terms, cfg, &seed);
    CHECK(pose_rotation_error_deg(cand.pose, inst.gt) < 1e-4);
  }
}
