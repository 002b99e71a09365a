#pragma once

// Pose error metrics: MPJRE (deg), MPJPE (cm), MPJVE (cm), Jitter (10^2 m/s^3).

#include <cmath>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparsepose/body.hpp"
#include "sparsepose/errors.hpp"

namespace sparsepose {

namespace region {
inline const std::vector<int> kArms = {13, 14, 16, 17, 18, 19, 20, 21, 22, 23};
inline const std::vector<int> kLegs = {1, 2, 4, 5, 7, 8, 10, 11};
inline const std::vector<int> kHead = {12, 15};
inline const std::vector<int> kTorso = {0, 3, 6, 9};
inline const std::vector<int> kEndEffectors = {10, 11, 15, 22, 23};
inline const std::vector<int> kNonEndEffectors = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
}  // namespace region

namespace detail {
inline void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeMismatch("prediction and ground truth differ in length");
  if (a == 0) throw EmptySequence("metrics need at least one frame");
}
}  // namespace detail

/// Per-joint mean global angular error in degrees (averaged over frames).
inline JointArray<double> per_joint_rotation_error_deg(std::span<const Pose> pred, std::span<const Pose> gt,
                                                       const Skeleton& skel) {
  detail::check_lengths(pred.size(), gt.size());
  JointArray<double> err{};
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const FkResult a = forward_kinematics(pred[t], skel);
    const FkResult b = forward_kinematics(gt[t], skel);
    for (int j = 0; j < kNumJoints; ++j) err[j] += geodesic_angle_deg(a.global_rot[j], b.global_rot[j]);
  }
  for (double& e : err) e /= static_cast<double>(pred.size());
  return err;
}

/// Per-joint mean root-aligned position error in centimeters.
inline JointArray<double> per_joint_position_error_cm(std::span<const Pose> pred, std::span<const Pose> gt,
                                                      const Skeleton& skel) {
  detail::check_lengths(pred.size(), gt.size());
  JointArray<double> err{};
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const FkResult a = forward_kinematics(pred[t], skel);
    const FkResult b = forward_kinematics(gt[t], skel);
    for (int j = 0; j < kNumJoints; ++j) err[j] += (a.global_pos[j] - b.global_pos[j]).norm() * 100.0;
  }
  for (double& e : err) e /= static_cast<double>(pred.size());
  return err;
}

inline double mean_over(const JointArray<double>& per_joint, const std::vector<int>& joints) {
  double s = 0.0;
  for (int j : joints) s += per_joint[j];
  return s / static_cast<double>(joints.size());
}

inline double mean_all(const JointArray<double>& per_joint) {
  double s = 0.0;
  for (double v : per_joint) s += v;
  return s / kNumJoints;
}

inline double mpjre(std::span<const Pose> pred, std::span<const Pose> gt, const Skeleton& skel) {
  return mean_all(per_joint_rotation_error_deg(pred, gt, skel));
}

inline double mpjpe(std::span<const Pose> pred, std::span<const Pose> gt, const Skeleton& skel) {
  return mean_all(per_joint_position_error_cm(pred, gt, skel));
}

inline double mpjve(std::span<const Pose> pred, std::span<const Pose> gt, const Skeleton& skel,
                    const SkinnedVertexSet& mesh) {
  detail::check_lengths(pred.size(), gt.size());
  if (mesh.size() == 0) throw EmptySequence("vertex set is empty");
  double sum = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const auto a = skin_vertices(forward_kinematics(pred[t], skel), skel, mesh);
    const auto b = skin_vertices(forward_kinematics(gt[t], skel), skel, mesh);
    for (std::size_t v = 0; v < a.size(); ++v) sum += (a[v] - b[v]).norm();
  }
  return sum / static_cast<double>(pred.size() * mesh.size()) * 100.0;
}

/// Mean jerk magnitude from the third central difference
/// (p[t+2] - 2p[t+1] + 2p[t-1] - p[t-2]) * fps^3 / 2, over joints and the
/// frames t in [2, n-3], divided by 100. Zero when fewer than 5 frames.
inline double jitter(std::span<const JointArray<Vec3>> positions, double fps) {
  if (positions.size() < 5) return 0.0;
  const double scale = fps * fps * fps / 2.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 2; t + 2 < positions.size(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec3 d = positions[t + 2][j] - 2.0 * positions[t + 1][j] + 2.0 * positions[t - 1][j] - positions[t - 2][j];
      sum += d.norm() * scale;
      ++count;
    }
  }
  return sum / static_cast<double>(count) / 100.0;
}

inline double jitter(std::span<const Pose> poses, const Skeleton& skel, double fps) {
  std::vector<JointArray<Vec3>> pos;
  pos.reserve(poses.size());
  for (const Pose& p : poses) pos.push_back(forward_kinematics(p, skel).global_pos);
  return jitter(std::span<const JointArray<Vec3>>(pos), fps);
}

struct EvalReport {
  double mpjre_deg = 0.0;
  double mpjpe_cm = 0.0;
  double mpjve_cm = 0.0;
  double jitter = 0.0;  // 10^2 m/s^3
  std::size_t frames = 0;
  JointArray<double> joint_rot_deg{};
  JointArray<double> joint_pos_cm{};
  std::vector<std::pair<std::string, std::pair<double, double>>> regions;  // name -> (deg, cm)

  std::string table(const Skeleton& skel) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "frames  " << frames << "\n";
    os << "MPJRE   " << mpjre_deg << " deg\n";
    os << "MPJPE   " << mpjpe_cm << " cm\n";
    os << "MPJVE   " << mpjve_cm << " cm\n";
    os << "Jitter  " << jitter << " (10^2 m/s^3)\n\n";
    os << std::left << std::setw(18) << "region" << std::right << std::setw(10) << "deg" << std::setw(10) << "cm" << "\n";
    for (const auto& [name, v] : regions)
      os << std::left << std::setw(18) << name << std::right << std::setw(10) << v.first << std::setw(10) << v.second
         << "\n";
    os << "\n" << std::left << std::setw(18) << "joint" << std::right << std::setw(10) << "deg" << std::setw(10) << "cm"
       << "\n";
    for (int j = 0; j < kNumJoints; ++j)
      os << std::left << std::setw(18) << skel.joint_names[j] << std::right << std::setw(10) << joint_rot_deg[j]
         << std::setw(10) << joint_pos_cm[j] << "\n";
    return os.str();
  }

  std::string key_values() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "frames=" << frames << "\nmpjre_deg=" << mpjre_deg << "\nmpjpe_cm=" << mpjpe_cm << "\nmpjve_cm=" << mpjve_cm
       << "\njitter=" << jitter << "\n";
    for (const auto& [name, v] : regions) os << "region." << name << ".deg=" << v.first << "\nregion." << name << ".cm=" << v.second << "\n";
    for (int j = 0; j < kNumJoints; ++j) os << "joint." << j << ".deg=" << joint_rot_deg[j] << "\njoint." << j << ".cm=" << joint_pos_cm[j] << "\n";
    return os.str();
  }
};

inline EvalReport evaluate(std::span<const Pose> pred, std::span<const Pose> gt, const Skeleton& skel,
                           const SkinnedVertexSet& mesh, double fps) {
  EvalReport r;
  r.frames = pred.size();
  r.joint_rot_deg = per_joint_rotation_error_deg(pred, gt, skel);
  r.joint_pos_cm = per_joint_position_error_cm(pred, gt, skel);
  r.mpjre_deg = mean_all(r.joint_rot_deg);
  r.mpjpe_cm = mean_all(r.joint_pos_cm);
  r.mpjve_cm = mpjve(pred, gt, skel, mesh);
  r.jitter = jitter(pred, skel, fps);
  const std::vector<std::pair<std::string, const std::vector<int>*>> groups = {
      {"arms", &region::kArms},          {"legs", &region::kLegs},
      {"head", &region::kHead},          {"torso", &region::kTorso},
      {"end_effectors", &region::kEndEffectors}, {"non_end_effectors", &region::kNonEndEffectors}};
  for (const auto& [name, joints] : groups)
    r.regions.push_back({name, {mean_over(r.joint_rot_deg, *joints), mean_over(r.joint_pos_cm, *joints)}});
  return r;
}

}  // namespace sparsepose
