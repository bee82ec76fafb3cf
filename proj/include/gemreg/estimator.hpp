// SPDX-License-Identifier: Apache-2.0
//
// Robust pose estimation over a clique of model correspondences: truncated
// least squares on Mahalanobis distribution-to-distribution residuals,
// solved by graduated non-convexity with damped least-squares refinement on
// SE(3).

#pragma once

#include "gemreg/gem.hpp"
#include "gemreg/stats.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace gemreg {

/// One prepared correspondence term for the estimator.
struct D2dTerm {
  Vec3 x_mean = Vec3::Zero();
  Vec3 y_mean = Vec3::Zero();
  Mat3 x_cov = Mat3::Identity();
  Mat3 y_cov = Mat3::Identity();
};

/// Plane covariances collapse to a disc; rebuild them with eigenvalues
/// (1, 1, 1e-3) on the plane's own eigenvector frame so the residual acts as
/// plane-to-plane.
inline Mat3 regularize_plane_cov(const Mat3& cov) {
  Vec3 ev;
  Mat3 vecs;
  symmetric_eigen_desc(cov, &ev, &vecs);
  const Vec3 fixed(1.0, 1.0, 1e-3);
  return vecs * fixed.asDiagonal() * vecs.transpose();
}

/// Covariance as used by the estimator for one model.
inline Mat3 prepare_estimation_cov(const Gem& gem) {
  if (gem.type == PrimitiveType::plane) return regularize_plane_cov(gem.cov);
  return floor_eigenvalues(gem.cov, 1e-3);
}

inline D2dTerm make_d2d_term(const Gem& x, const Gem& y) {
  return D2dTerm{x.mean, y.mean, prepare_estimation_cov(x), prepare_estimation_cov(y)};
}

/// Mahalanobis residual of one term under a pose:
///   d = mu_y - (R mu_x + t),  r = d^T (S_y + R S_x R^T)^-1 d
inline double d2d_residual(const D2dTerm& term, const Mat3& rotation, const Vec3& translation) {
  const Vec3 d = term.y_mean - (rotation * term.x_mean + translation);
  const Mat3 combined = term.y_cov + rotation * term.x_cov * rotation.transpose();
  return d.dot(combined.ldlt().solve(d));
}

struct EstimatorConfig {
  double cbar_sq = 0;        // truncation threshold; <= 0 picks chi2_quantile(cbar_p)
  double cbar_p = 0.01;      // upper-tail probability used when cbar_sq is unset
  double gnc_factor = 1.4;   // control-parameter multiplier, > 1
  int max_iterations = 100;  // outer graduated iterations
  double weight_tol = 1e-3;  // max-norm weight change at convergence
  int inner_iterations = 50;

  double resolved_cbar_sq() const { return cbar_sq > 0 ? cbar_sq : chi2_quantile(cbar_p); }
};

struct TransformationCandidate {
  Pose pose;
  int level = -1;                // pyramid level the clique came from
  std::vector<int> inliers;      // correspondence indices used
  std::vector<double> weights;   // final per-term weights in [0,1]
  bool converged = false;
  std::vector<double> objective_trace;  // truncated cost after each outer step
};

/// Weighted squared-Mahalanobis objective with the information matrices
/// frozen, as seen by one inner refinement step. Exposes the analytic
/// gradient in the local 6-vector (axis-angle, translation) at the pose.
class WeightedD2dProblem {
 public:
  WeightedD2dProblem(const std::vector<D2dTerm>& terms, const std::vector<Mat3>& infos,
                     const std::vector<double>& weights)
      : terms_(terms), infos_(infos), weights_(weights) {}

  double value(const Pose& pose) const {
    double sum = 0;
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      const Vec3 d = terms_[k].y_mean - pose.apply(terms_[k].x_mean);
      sum += weights_[k] * d.dot(infos_[k] * d);
    }
    return sum;
  }

  /// Gradient with respect to the local update (w, dt), where the pose moves
  /// as R <- R exp([w]x), t <- t + dt.
  Vec6 gradient(const Pose& pose) const {
    Vec6 grad = Vec6::Zero();
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      const Vec3& x = terms_[k].x_mean;
      const Vec3 d = terms_[k].y_mean - pose.apply(x);
      const Vec3 md = infos_[k] * d;
      Mat3 skew;
      skew << 0, -x.z(), x.y(), x.z(), 0, -x.x(), -x.y(), x.x(), 0;
      const Mat3 dd_dw = pose.rotation * skew;  // d(d)/d(w)
      grad.head<3>() += 2.0 * weights_[k] * dd_dw.transpose() * md;
      grad.tail<3>() += -2.0 * weights_[k] * md;
    }
    return grad;
  }

  /// One damped least-squares solve from `pose`; returns the refined pose.
  Pose refine(const Pose& start, int max_iterations) const {
    Pose pose = start;
    double cost = value(pose);
    double damping = 1e-6;
    bool converged = false;
    for (int it = 0; it < max_iterations && !converged; ++it) {
      Eigen::Matrix<double, 6, 6> hessian = Eigen::Matrix<double, 6, 6>::Zero();
      Vec6 rhs = Vec6::Zero();
      for (std::size_t k = 0; k < terms_.size(); ++k) {
        if (weights_[k] <= 0) continue;
        const Vec3& x = terms_[k].x_mean;
        const Vec3 d = terms_[k].y_mean - pose.apply(x);
        Mat3 skew;
        skew << 0, -x.z(), x.y(), x.z(), 0, -x.x(), -x.y(), x.x(), 0;
        Eigen::Matrix<double, 3, 6> jac;
        jac.leftCols<3>() = pose.rotation * skew;
        jac.rightCols<3>() = -Mat3::Identity();
        const Eigen::Matrix<double, 3, 6> mj = infos_[k] * jac;
        hessian += weights_[k] * jac.transpose() * mj;
        rhs += weights_[k] * jac.transpose() * (infos_[k] * d);
      }
      bool stepped = false;
      for (int attempt = 0; attempt < 12; ++attempt) {
        Eigen::Matrix<double, 6, 6> damped = hessian;
        for (int i = 0; i < 6; ++i)
          damped(i, i) += damping * std::max(hessian(i, i), 1e-12);
        const Vec6 step = damped.ldlt().solve(-rhs);
        if (!step.allFinite()) {
          damping *= 10;
          continue;
        }
        Pose trial;
        trial.rotation = project_to_so3(pose.rotation * so3_exp(step.head<3>()));
        trial.translation = pose.translation + step.tail<3>();
        const double trial_cost = value(trial);
        if (trial_cost < cost) {
          pose = trial;
          cost = trial_cost;
          damping = std::max(damping / 3.0, 1e-12);
          stepped = true;
          converged = step.norm() < 1e-12;
          break;
        }
        damping *= 10;
      }
      if (!stepped) break;
    }
    return pose;
  }

 private:
  const std::vector<D2dTerm>& terms_;
  const std::vector<Mat3>& infos_;
  const std::vector<double>& weights_;
};

namespace detail {

/// Closed-form weighted point-to-point alignment (Kabsch). Solves the
/// isotropic relaxation of the weighted problem globally; used as a jump
/// proposal so the annealing can escape the basin the local refinement is
/// stuck in. Returns false when the weight mass is too degenerate.
inline bool weighted_kabsch(const std::vector<D2dTerm>& terms, const std::vector<double>& weights,
                            Pose* pose) {
  double mass = 0;
  Vec3 x_bar = Vec3::Zero(), y_bar = Vec3::Zero();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    mass += weights[k];
    x_bar += weights[k] * terms[k].x_mean;
    y_bar += weights[k] * terms[k].y_mean;
  }
  if (mass < 1e-12) return false;
  x_bar /= mass;
  y_bar /= mass;
  Mat3 cross = Mat3::Zero();
  for (std::size_t k = 0; k < terms.size(); ++k)
    cross += weights[k] * (terms[k].x_mean - x_bar) * (terms[k].y_mean - y_bar).transpose();
  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 flip = Mat3::Identity();
  flip(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1 : 1;
  pose->rotation = svd.matrixV() * flip * svd.matrixU().transpose();
  pose->translation = y_bar - pose->rotation * x_bar;
  return true;
}

inline std::vector<Mat3> information_matrices(const std::vector<D2dTerm>& terms,
                                              const Mat3& rotation) {
  std::vector<Mat3> infos;
  infos.reserve(terms.size());
  for (const D2dTerm& t : terms) {
    const Mat3 combined = t.y_cov + rotation * t.x_cov * rotation.transpose();
    infos.push_back(combined.inverse());
  }
  return infos;
}

inline std::vector<double> residuals(const std::vector<D2dTerm>& terms,
                                     const std::vector<Mat3>& infos, const Pose& pose) {
  std::vector<double> r(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const Vec3 d = terms[k].y_mean - pose.apply(terms[k].x_mean);
    r[k] = d.dot(infos[k] * d);
  }
  return r;
}

inline double truncated_cost(const std::vector<double>& residuals, double cbar_sq) {
  double sum = 0;
  for (double r : residuals) sum += std::min(r, cbar_sq);
  return sum;
}

}  // namespace detail

/// Graduated non-convexity on the truncated least-squares objective. Starts
/// from the identity (or a seed), alternates closed-form weight updates with
/// damped least-squares pose refinement, and anneals the control parameter
/// until the surrogate matches the truncated cost.
inline TransformationCandidate gnc_tls_solve(const std::vector<D2dTerm>& terms,
                                             const EstimatorConfig& cfg,
                                             const Pose* seed = nullptr) {
  if (terms.size() < 3)
    throw UnderConstrainedError("gnc_tls_solve: need at least 3 correspondences");
  double spread = 0;
  for (std::size_t i = 1; i < terms.size(); ++i)
    spread = std::max(spread, (terms[i].x_mean - terms[0].x_mean).norm());
  if (spread < 1e-9)
    throw UnderConstrainedError("gnc_tls_solve: source centers are all identical");
  if (!(cfg.gnc_factor > 1)) throw std::invalid_argument("gnc_tls_solve: factor must be > 1");

  const double cbar_sq = cfg.resolved_cbar_sq();
  TransformationCandidate cand;
  cand.pose = seed ? *seed : Pose{};
  cand.weights.assign(terms.size(), 1.0);

  std::vector<Mat3> infos = detail::information_matrices(terms, cand.pose.rotation);
  std::vector<double> res = detail::residuals(terms, infos, cand.pose);
  cand.objective_trace.push_back(detail::truncated_cost(res, cbar_sq));

  // first solve with every weight at one, as the most convex surrogate
  {
    const WeightedD2dProblem problem(terms, infos, cand.weights);
    Pose first = problem.refine(cand.pose, cfg.inner_iterations);
    Pose jump;
    if (detail::weighted_kabsch(terms, cand.weights, &jump)) {
      const Pose polished = problem.refine(jump, cfg.inner_iterations);
      if (problem.value(polished) < problem.value(first)) first = polished;
    }
    const std::vector<Mat3> first_infos = detail::information_matrices(terms, first.rotation);
    const std::vector<double> first_res = detail::residuals(terms, first_infos, first);
    const double first_cost = detail::truncated_cost(first_res, cbar_sq);
    if (first_cost <= cand.objective_trace.back() + 1e-12) {
      cand.pose = first;
      infos = first_infos;
      res = first_res;
      cand.objective_trace.push_back(first_cost);
    }
  }

  const double r_max = *std::max_element(res.begin(), res.end());
  // surrogate equals TLS once mu is large; start from the most convex value
  double mu = (2.0 * r_max > cbar_sq) ? cbar_sq / (2.0 * r_max - cbar_sq) : 1e6;
  mu = std::max(mu, 1e-12);

  std::vector<double> prev_weights = cand.weights;
  for (int outer = 0; outer < cfg.max_iterations; ++outer) {
    // closed-form TLS weight update under the surrogate
    const double lo = mu / (mu + 1.0) * cbar_sq;
    const double hi = (mu + 1.0) / mu * cbar_sq;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      if (res[k] <= lo)
        cand.weights[k] = 1.0;
      else if (res[k] >= hi)
        cand.weights[k] = 0.0;
      else
        cand.weights[k] =
            std::clamp(std::sqrt(cbar_sq * mu * (mu + 1.0) / res[k]) - mu, 0.0, 1.0);
    }

    double max_change = 0;
    for (std::size_t k = 0; k < terms.size(); ++k)
      max_change = std::max(max_change, std::abs(cand.weights[k] - prev_weights[k]));
    // the surrogate equals TLS only once mu is large; stopping on a stable
    // weight vector alone would bail out while every weight is still tiny
    const bool surrogate_is_tls = mu >= 64.0;
    if (outer > 0 && max_change < cfg.weight_tol && surrogate_is_tls) {
      cand.converged = true;
      break;
    }
    prev_weights = cand.weights;

    const WeightedD2dProblem problem(terms, infos, cand.weights);
    Pose refined = problem.refine(cand.pose, cfg.inner_iterations);
    // the damped local step cannot leave its basin; a closed-form weighted
    // alignment can, so offer it as a second start and keep the better one
    Pose jump;
    if (detail::weighted_kabsch(terms, cand.weights, &jump)) {
      const Pose polished = problem.refine(jump, cfg.inner_iterations);
      if (problem.value(polished) < problem.value(refined)) refined = polished;
    }

    // keep the truncated cost non-increasing: a step that helps the
    // surrogate but hurts the robust objective is skipped (mu still grows)
    const std::vector<Mat3> new_infos = detail::information_matrices(terms, refined.rotation);
    const std::vector<double> new_res = detail::residuals(terms, new_infos, refined);
    const double new_cost = detail::truncated_cost(new_res, cbar_sq);
    if (new_cost <= cand.objective_trace.back() + 1e-12) {
      cand.pose = refined;
      infos = new_infos;
      res = new_res;
      cand.objective_trace.push_back(new_cost);
    } else {
      cand.objective_trace.push_back(cand.objective_trace.back());
    }
    mu *= cfg.gnc_factor;
  }

  cand.pose.rotation = project_to_so3(cand.pose.rotation);
  return cand;
}

}  // namespace gemreg
