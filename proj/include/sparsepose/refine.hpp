#pragma once

// Per-frame IK refinement. For every instrumented location, the rotations of a
// few ancestor joints are adjusted (in 6D parameters, with Adam) so that the
// global orientation of the instrumented bone matches the measured one:
//
//   J = sum over active locations of || FK(pose).global_rot[joint] - measured ||_F^2

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sparsepose/body.hpp"
#include "sparsepose/combos.hpp"
#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"

namespace sparsepose {

struct RefineConfig {
  int iterations = 10;
  double step = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Joint whose global orientation each location measures.
  LocationArray<int> instrumented = {joint::kLeftWrist, joint::kRightWrist, joint::kLeftHip, joint::kRightHip,
                                     joint::kHead};
  /// Joints optimized for each location.
  LocationArray<std::vector<int>> optimized = {
      std::vector<int>{joint::kLeftElbow, joint::kLeftShoulder},
      std::vector<int>{joint::kRightElbow, joint::kRightShoulder},
      std::vector<int>{joint::kLeftHip},
      std::vector<int>{joint::kRightHip},
      std::vector<int>{joint::kNeck, joint::kHead}};

  void validate(const Skeleton& skel) const {
    if (iterations < 0 || !(step > 0.0)) throw InvalidConfig("refinement needs iterations >= 0 and a positive step");
    for (Location l : kAllLocations) {
      const int target = instrumented[index_of(l)];
      if (target < 0 || target >= kNumJoints) throw InvalidConfig("instrumented joint out of range");
      for (int j : optimized[index_of(l)]) {
        if (j < 0 || j >= kNumJoints || !skel.is_ancestor_or_self(j, target)) {
          throw InvalidConfig(std::string("optimized joint for ") + to_string(l) +
                              " must be an ancestor of (or equal to) its instrumented joint");
        }
      }
    }
  }
};

/// The objective restricted to the 6D parameters of the optimized joints.
class RefineProblem {
 public:
  RefineProblem(const Pose& pose, const LocationArray<RotMat>& measured, LocationMask mask, const Skeleton& skel,
                const RefineConfig& cfg)
      : base_(pose), measured_(measured), mask_(mask), skel_(&skel), cfg_(&cfg) {
    for (Location l : kAllLocations) {
      if (!mask.contains(l)) continue;
      for (int j : cfg.optimized[index_of(l)])
        if (std::find(joints_.begin(), joints_.end(), j) == joints_.end()) joints_.push_back(j);
    }
    std::sort(joints_.begin(), joints_.end());
  }

  const std::vector<int>& joints() const { return joints_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(6 * joints_.size()); }

  Eigen::VectorXd initial_params() const {
    Eigen::VectorXd p(size());
    for (std::size_t k = 0; k < joints_.size(); ++k) p.segment<6>(static_cast<Eigen::Index>(6 * k)) = matrix_to_rot6d(base_.local_rot[joints_[k]]);
    return p;
  }

  Pose pose_at(const Eigen::VectorXd& p) const {
    Pose out = base_;
    for (std::size_t k = 0; k < joints_.size(); ++k)
      out.local_rot[joints_[k]] = gram_schmidt(p.segment<6>(static_cast<Eigen::Index>(6 * k)));
    return out;
  }

  double objective(const Eigen::VectorXd& p) const { return objective_of(forward_kinematics(pose_at(p), *skel_)); }

  Eigen::VectorXd gradient(const Eigen::VectorXd& p) const {
    const Pose pose = pose_at(p);
    const FkResult fk = forward_kinematics(pose, *skel_);
    JointArray<Vec3> dpos;
    dpos.fill(Vec3::Zero());
    JointArray<RotMat> drot;
    drot.fill(RotMat::Zero());
    for (Location l : kAllLocations) {
      if (!mask_.contains(l)) continue;
      const int j = cfg_->instrumented[index_of(l)];
      drot[j] += 2.0 * (fk.global_rot[j] - measured_[index_of(l)]);
    }
    const auto dlocal = forward_kinematics_backward(pose, *skel_, fk, dpos, drot);
    Eigen::VectorXd g(size());
    for (std::size_t k = 0; k < joints_.size(); ++k) {
      const auto seg = static_cast<Eigen::Index>(6 * k);
      g.segment<6>(seg) = gram_schmidt_backward(p.segment<6>(seg), dlocal[joints_[k]]);
    }
    return g;
  }

  double objective_of(const FkResult& fk) const {
    double j = 0.0;
    for (Location l : kAllLocations) {
      if (!mask_.contains(l)) continue;
      j += (fk.global_rot[cfg_->instrumented[index_of(l)]] - measured_[index_of(l)]).squaredNorm();
    }
    return j;
  }

 private:
  Pose base_;
  LocationArray<RotMat> measured_;
  LocationMask mask_;
  const Skeleton* skel_;
  const RefineConfig* cfg_;
  std::vector<int> joints_;
};

struct RefineResult {
  Pose pose;
  double initial_objective = 0.0;
  double final_objective = 0.0;          // objective of the returned (best) iterate
  std::vector<double> history;           // objective after each iteration
};

/// `measured` is only read at the mask's locations.
inline RefineResult refine(const Pose& pose, const LocationArray<RotMat>& measured, LocationMask mask,
                           const Skeleton& skel, const RefineConfig& cfg = {}) {
  cfg.validate(skel);
  RefineProblem problem(pose, measured, mask, skel, cfg);
  RefineResult out;
  out.pose = pose;
  if (problem.joints().empty()) return out;

  Eigen::VectorXd p = problem.initial_params();
  out.initial_objective = problem.objective(p);
  out.final_objective = out.initial_objective;
  Eigen::VectorXd best = p;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(p.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(p.size());
  for (int it = 1; it <= cfg.iterations; ++it) {
    const Eigen::VectorXd g = problem.gradient(p);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg.beta1, it);
    const double c2 = 1.0 - std::pow(cfg.beta2, it);
    p.array() -= cfg.step * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
    const double j = problem.objective(p);
    out.history.push_back(j);
    if (j < out.final_objective) {
      out.final_objective = j;
      best = p;
    }
  }
  if (out.final_objective < out.initial_objective) out.pose = problem.pose_at(best);
  return out;
}

/// Geodesic residual (degrees) between the instrumented bone and its measurement.
inline double orientation_residual_deg(const Pose& pose, const RotMat& measured, int joint_index, const Skeleton& skel) {
  return geodesic_angle_deg(forward_kinematics(pose, skel).global_rot[joint_index], measured);
}

}  // namespace sparsepose
