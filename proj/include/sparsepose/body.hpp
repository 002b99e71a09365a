#pragma once

// 24-joint kinematic body (SMPL joint order), forward kinematics and a
// linear-blend-skinned vertex set used for the vertex error metric.

#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"

namespace sparsepose {

constexpr int kNumJoints = 24;

namespace joint {
constexpr int kPelvis = 0;
constexpr int kLeftHip = 1;
constexpr int kRightHip = 2;
constexpr int kSpine1 = 3;
constexpr int kLeftKnee = 4;
constexpr int kRightKnee = 5;
constexpr int kSpine2 = 6;
constexpr int kLeftAnkle = 7;
constexpr int kRightAnkle = 8;
constexpr int kSpine3 = 9;
constexpr int kLeftFoot = 10;
constexpr int kRightFoot = 11;
constexpr int kNeck = 12;
constexpr int kLeftCollar = 13;
constexpr int kRightCollar = 14;
constexpr int kHead = 15;
constexpr int kLeftShoulder = 16;
constexpr int kRightShoulder = 17;
constexpr int kLeftElbow = 18;
constexpr int kRightElbow = 19;
constexpr int kLeftWrist = 20;
constexpr int kRightWrist = 21;
constexpr int kLeftHand = 22;
constexpr int kRightHand = 23;
}  // namespace joint

template <typename T>
using JointArray = std::array<T, kNumJoints>;

struct Skeleton {
  static constexpr int kRoot = -1;

  JointArray<int> parent{};
  JointArray<Vec3> rest_offset{};  // meters, parent joint -> joint, T-pose
  JointArray<std::string> joint_names{};

  void validate() const {
    int roots = 0;
    for (int i = 0; i < kNumJoints; ++i) {
      if (parent[i] == kRoot) {
        ++roots;
        if (i != 0) throw InvalidConfig("skeleton root must be joint 0");
      } else if (parent[i] < 0 || parent[i] >= i) {
        throw InvalidConfig("skeleton joints must be topologically ordered (parent < child)");
      }
      if (!rest_offset[i].allFinite()) throw InvalidConfig("non-finite rest offset");
    }
    if (roots != 1) throw InvalidConfig("skeleton must have exactly one root");
  }

  /// Joint positions of the identity (T-)pose with the root at the origin.
  JointArray<Vec3> rest_positions() const {
    JointArray<Vec3> pos{};
    pos[0] = Vec3::Zero();
    for (int i = 1; i < kNumJoints; ++i) pos[i] = pos[parent[i]] + rest_offset[i];
    return pos;
  }

  bool is_ancestor_or_self(int ancestor, int j) const {
    for (int k = j; k != kRoot; k = parent[k]) {
      if (k == ancestor) return true;
    }
    return false;
  }
};

struct Pose {
  JointArray<RotMat> local_rot{};  // index 0 is the global root orientation

  static Pose identity() {
    Pose p;
    p.local_rot.fill(RotMat::Identity());
    return p;
  }
};

struct FkResult {
  JointArray<RotMat> global_rot{};
  JointArray<Vec3> global_pos{};  // root at the origin
};

inline FkResult forward_kinematics(const Pose& pose, const Skeleton& skel) {
  FkResult fk;
  fk.global_rot[0] = pose.local_rot[0];
  fk.global_pos[0] = Vec3::Zero();
  for (int i = 1; i < kNumJoints; ++i) {
    const int p = skel.parent[i];
    fk.global_rot[i] = fk.global_rot[p] * pose.local_rot[i];
    fk.global_pos[i] = fk.global_pos[p] + fk.global_rot[p] * skel.rest_offset[i];
  }
  return fk;
}

/// Reverse-mode pass through forward_kinematics. Takes dL/dglobal_pos and
/// dL/dglobal_rot and returns dL/dlocal_rot. Either input may be all zeros.
inline JointArray<RotMat> forward_kinematics_backward(const Pose& pose, const Skeleton& skel, const FkResult& fk,
                                                      const JointArray<Vec3>& grad_pos,
                                                      const JointArray<RotMat>& grad_global_rot) {
  JointArray<Vec3> dpos = grad_pos;
  JointArray<RotMat> dglob = grad_global_rot;
  JointArray<RotMat> dlocal{};
  for (int i = kNumJoints - 1; i >= 1; --i) {
    const int p = skel.parent[i];
    dpos[p] += dpos[i];
    dglob[p] += dpos[i] * skel.rest_offset[i].transpose();
    dglob[p] += dglob[i] * pose.local_rot[i].transpose();
    dlocal[i] = fk.global_rot[p].transpose() * dglob[i];
  }
  dlocal[0] = dglob[0];
  return dlocal;
}

struct SkinnedVertexSet {
  std::vector<Vec3> vertices;  // rest pose, meters, root at origin
  Eigen::MatrixXd weights;     // vertices.size() x kNumJoints

  std::size_t size() const { return vertices.size(); }

  void validate() const {
    if (weights.rows() != static_cast<Eigen::Index>(vertices.size()) || weights.cols() != kNumJoints) {
      throw InvalidConfig("skinning weight matrix must be N x 24");
    }
    for (Eigen::Index v = 0; v < weights.rows(); ++v) {
      if (weights.row(v).minCoeff() < 0.0) throw InvalidConfig("negative skinning weight");
      if (std::abs(weights.row(v).sum() - 1.0) > 1e-6) throw InvalidConfig("skinning weights must sum to 1");
    }
  }
};

/// Linear blend skinning: v' = sum_j w_j (G_j (v - rest_j) + p_j).
inline std::vector<Vec3> skin_vertices(const FkResult& fk, const Skeleton& skel, const SkinnedVertexSet& mesh) {
  const auto rest = skel.rest_positions();
  std::vector<Vec3> out(mesh.size(), Vec3::Zero());
  for (std::size_t v = 0; v < mesh.size(); ++v) {
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < kNumJoints; ++j) {
      const double w = mesh.weights(static_cast<Eigen::Index>(v), j);
      if (w == 0.0) continue;
      acc += w * (fk.global_rot[j] * (mesh.vertices[v] - rest[j]) + fk.global_pos[j]);
    }
    out[v] = acc;
  }
  return out;
}

inline Skeleton default_skeleton() {
  Skeleton s;
  s.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  s.joint_names = {"pelvis",         "left_hip",       "right_hip",   "spine1",      "left_knee",   "right_knee",
                   "spine2",         "left_ankle",     "right_ankle", "spine3",      "left_foot",   "right_foot",
                   "neck",           "left_collar",    "right_collar", "head",       "left_shoulder", "right_shoulder",
                   "left_elbow",     "right_elbow",    "left_wrist",  "right_wrist", "left_hand",   "right_hand"};
  // Mean adult body, y up, +x toward the body's left, +z forward. Arms horizontal (T-pose).
  s.rest_offset = {Vec3(0.0, 0.0, 0.0),       Vec3(0.058, -0.082, -0.018), Vec3(-0.060, -0.091, -0.014),
                   Vec3(0.004, 0.124, -0.038), Vec3(0.043, -0.386, 0.008),  Vec3(-0.043, -0.383, -0.005),
                   Vec3(0.004, 0.138, 0.028),  Vec3(-0.015, -0.426, -0.037), Vec3(0.019, -0.420, -0.035),
                   Vec3(0.002, 0.056, 0.002),  Vec3(0.041, -0.060, 0.122),  Vec3(-0.035, -0.063, 0.130),
                   Vec3(-0.013, 0.212, -0.033), Vec3(0.072, 0.120, -0.019), Vec3(-0.083, 0.119, -0.024),
                   Vec3(0.010, 0.089, 0.050),  Vec3(0.123, 0.045, -0.019),  Vec3(-0.113, 0.048, -0.009),
                   Vec3(0.255, -0.016, -0.021), Vec3(-0.260, -0.014, -0.031), Vec3(0.266, 0.009, -0.003),
                   Vec3(-0.269, 0.007, -0.006), Vec3(0.087, -0.010, -0.016), Vec3(-0.089, -0.009, -0.010)};
  return s;
}

namespace detail {

inline double bone_radius(int j) {
  switch (j) {
    case joint::kLeftHip: case joint::kRightHip: return 0.08;
    case joint::kLeftKnee: case joint::kRightKnee: return 0.07;
    case joint::kLeftAnkle: case joint::kRightAnkle: return 0.05;
    case joint::kLeftFoot: case joint::kRightFoot: return 0.04;
    case joint::kSpine1: case joint::kSpine2: case joint::kSpine3: return 0.12;
    case joint::kNeck: return 0.06;
    case joint::kHead: return 0.09;
    case joint::kLeftCollar: case joint::kRightCollar: return 0.06;
    case joint::kLeftShoulder: case joint::kRightShoulder: return 0.05;
    case joint::kLeftElbow: case joint::kRightElbow: return 0.045;
    case joint::kLeftWrist: case joint::kRightWrist: return 0.035;
    default: return 0.03;
  }
}

inline std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& dir) {
  const Vec3 seed = std::abs(dir.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 e1 = dir.cross(seed).normalized();
  return {e1, dir.cross(e1).normalized()};
}

}  // namespace detail

/// Capsule-like vertex rings around every bone (12 per bone), end caps on the
/// leaf joints, and a ring around the pelvis.
inline SkinnedVertexSet default_vertex_set(const Skeleton& skel = default_skeleton()) {
  const auto rest = skel.rest_positions();
  std::vector<Vec3> verts;
  std::vector<std::array<std::pair<int, double>, 2>> owners;
  auto add = [&](const Vec3& v, int j0, double w0, int j1 = 0, double w1 = 0.0) {
    verts.push_back(v);
    owners.push_back({std::pair{j0, w0}, std::pair{j1, w1}});
  };

  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    add(Vec3(0.14 * std::cos(a), 0.0, 0.11 * std::sin(a)), 0, 1.0);
  }

  std::array<bool, kNumJoints> has_child{};
  for (int i = 1; i < kNumJoints; ++i) has_child[skel.parent[i]] = true;

  for (int j = 1; j < kNumJoints; ++j) {
    const int p = skel.parent[j];
    const Vec3 a = rest[p];
    const Vec3 b = rest[j];
    const Vec3 dir = (b - a).normalized();
    const auto [e1, e2] = detail::perpendicular_basis(dir);
    const double r = detail::bone_radius(j);
    for (double t : {0.2, 0.5, 0.8}) {
      for (int k = 0; k < 4; ++k) {
        const double ang = 0.5 * std::numbers::pi * k + 0.25 * std::numbers::pi;
        const Vec3 v = a + t * (b - a) + r * (std::cos(ang) * e1 + std::sin(ang) * e2);
        if (t < 0.7) {
          add(v, p, 1.0);
        } else {
          add(v, p, 0.75, j, 0.25);
        }
      }
    }
    if (!has_child[j]) {
      // end cap owned by the leaf joint
      Vec3 tip_dir = dir;
      double tip_len = 0.08;
      if (j == joint::kHead) {
        tip_dir = Vec3::UnitY();
        tip_len = 0.14;
      }
      for (int k = 0; k < 4; ++k) {
        const double ang = 0.5 * std::numbers::pi * k;
        add(b + 0.5 * tip_len * tip_dir + r * (std::cos(ang) * e1 + std::sin(ang) * e2), j, 1.0);
      }
      add(b + tip_len * tip_dir, j, 1.0);
      if (j == joint::kLeftFoot || j == joint::kRightFoot) add(b + Vec3(0.0, -0.03, 0.0), j, 1.0);
    }
  }

  SkinnedVertexSet mesh;
  mesh.vertices = std::move(verts);
  mesh.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mesh.vertices.size()), kNumJoints);
  for (std::size_t v = 0; v < owners.size(); ++v) {
    for (const auto& [j, w] : owners[v]) mesh.weights(static_cast<Eigen::Index>(v), j) += w;
  }
  return mesh;
}

// Body file (text):
//   sparsepose-body 1
//   joints 24
//   <index> <name> <parent> <ox> <oy> <oz>        x24
//   vertices <N>
//   <x> <y> <z> <k> <joint> <weight> ...          xN, k nonzero weights
inline void save_body(const std::string& path, const Skeleton& skel, const SkinnedVertexSet& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << std::setprecision(17);
  out << "sparsepose-body 1\njoints " << kNumJoints << "\n";
  for (int i = 0; i < kNumJoints; ++i) {
    const Vec3& o = skel.rest_offset[i];
    out << i << ' ' << skel.joint_names[i] << ' ' << skel.parent[i] << ' ' << o.x() << ' ' << o.y() << ' ' << o.z()
        << '\n';
  }
  out << "vertices " << mesh.size() << '\n';
  for (std::size_t v = 0; v < mesh.size(); ++v) {
    const auto row = mesh.weights.row(static_cast<Eigen::Index>(v));
    out << mesh.vertices[v].x() << ' ' << mesh.vertices[v].y() << ' ' << mesh.vertices[v].z() << ' '
        << (row.array() != 0.0).count();
    for (int j = 0; j < kNumJoints; ++j) {
      if (row(j) != 0.0) out << ' ' << j << ' ' << row(j);
    }
    out << '\n';
  }
}

inline std::pair<Skeleton, SkinnedVertexSet> load_body(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  auto fail = [&](const std::string& what) { return FormatError("body file '" + path + "': " + what); };
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "sparsepose-body") throw fail("bad header");
  if (version != 1) throw fail("unsupported version " + std::to_string(version));
  int joints = 0;
  if (!(in >> tag >> joints) || tag != "joints" || joints != kNumJoints) throw fail("expected 24 joints");
  Skeleton skel;
  for (int i = 0; i < kNumJoints; ++i) {
    int idx = 0;
    double x = 0, y = 0, z = 0;
    if (!(in >> idx >> skel.joint_names[i] >> skel.parent[i] >> x >> y >> z) || idx != i) throw fail("bad joint row");
    skel.rest_offset[i] = Vec3(x, y, z);
  }
  skel.validate();
  std::size_t n = 0;
  if (!(in >> tag >> n) || tag != "vertices") throw fail("missing vertex section");
  SkinnedVertexSet mesh;
  mesh.vertices.resize(n);
  mesh.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), kNumJoints);
  for (std::size_t v = 0; v < n; ++v) {
    double x = 0, y = 0, z = 0;
    int k = 0;
    if (!(in >> x >> y >> z >> k) || k < 0 || k > kNumJoints) throw fail("bad vertex row");
    mesh.vertices[v] = Vec3(x, y, z);
    for (int e = 0; e < k; ++e) {
      int j = 0;
      double w = 0;
      if (!(in >> j >> w) || j < 0 || j >= kNumJoints) throw fail("bad weight entry");
      mesh.weights(static_cast<Eigen::Index>(v), j) = w;
    }
  }
  mesh.validate();
  return {skel, mesh};
}

}  // namespace sparsepose
