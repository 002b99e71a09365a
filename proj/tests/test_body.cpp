#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace sparsepose;
using sptest::random_pose;
using sptest::random_rotation;

namespace {

Skeleton chain3() {
  Skeleton s;
  for (int i = 0; i < kNumJoints; ++i) {
    s.parent[i] = i == 0 ? Skeleton::kRoot : 0;
    s.rest_offset[i] = Vec3::Zero();
    s.joint_names[i] = "j" + std::to_string(i);
  }
  s.parent[2] = 1;
  s.rest_offset[1] = Vec3(0, 1, 0);
  s.rest_offset[2] = Vec3(0, 1, 0);
  return s;
}

// Plain matrix chaining, independent of forward_kinematics.
JointArray<Vec3> brute_force_positions(const Pose& p, const Skeleton& s) {
  JointArray<Vec3> out{};
  for (int j = 0; j < kNumJoints; ++j) {
    std::vector<int> path;
    for (int k = j; k != Skeleton::kRoot; k = s.parent[k]) path.insert(path.begin(), k);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int k : path) {
      Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
      t.block<3, 3>(0, 0) = p.local_rot[k];
      t.block<3, 1>(0, 3) = k == 0 ? Vec3::Zero() : s.rest_offset[k];
      m = m * t;
    }
    out[j] = m.block<3, 1>(0, 3);
  }
  return out;
}

}  // namespace

TEST(Fk, IdentityPoseGivesRestPositions) {
  const Skeleton skel = default_skeleton();
  const FkResult fk = forward_kinematics(Pose::identity(), skel);
  const auto rest = skel.rest_positions();
  for (int j = 0; j < kNumJoints; ++j) {
    EXPECT_LT((fk.global_pos[j] - rest[j]).norm(), 1e-15);
    EXPECT_TRUE(fk.global_rot[j].isApprox(RotMat::Identity()));
  }
}

TEST(Fk, ThreeJointChain) {
  const Skeleton skel = chain3();
  skel.validate();
  Pose p = Pose::identity();
  p.local_rot[0] = rot_z(std::numbers::pi / 2);
  const FkResult fk = forward_kinematics(p, skel);
  EXPECT_LT((fk.global_pos[2] - Vec3(-2, 0, 0)).norm(), 1e-12);
  EXPECT_LT((brute_force_positions(p, skel)[2] - Vec3(-2, 0, 0)).norm(), 1e-12);
}

TEST(Fk, MatchesBruteForceChaining) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng, 90);
    const FkResult fk = forward_kinematics(p, skel);
    const auto oracle = brute_force_positions(p, skel);
    for (int j = 0; j < kNumJoints; ++j) EXPECT_LT((fk.global_pos[j] - oracle[j]).norm(), 1e-12);
  }
}

TEST(Fk, BoneLengthsPreserved) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const FkResult fk = forward_kinematics(random_pose(rng, 180), skel);
    for (int j = 1; j < kNumJoints; ++j)
      EXPECT_NEAR((fk.global_pos[j] - fk.global_pos[skel.parent[j]]).norm(), skel.rest_offset[j].norm(), 1e-9);
  }
}

TEST(Fk, RootRotationEquivariance) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(3);
  const Pose p = random_pose(rng);
  const RotMat q = random_rotation(rng);
  Pose rotated = p;
  rotated.local_rot[0] = q * p.local_rot[0];
  const FkResult a = forward_kinematics(p, skel), b = forward_kinematics(rotated, skel);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_LT((q * a.global_pos[j] - b.global_pos[j]).norm(), 1e-9);
}

TEST(Fk, NonDescendantsUnaffected) {
  const Skeleton skel = default_skeleton();
  const auto rest = skel.rest_positions();
  Pose p = Pose::identity();
  p.local_rot[joint::kLeftElbow] = rot_x(1.0);
  const FkResult fk = forward_kinematics(p, skel);
  for (int j = 0; j < kNumJoints; ++j) {
    if (skel.is_ancestor_or_self(joint::kLeftElbow, j) && j != joint::kLeftElbow) {
      EXPECT_GT((fk.global_pos[j] - rest[j]).norm(), 1e-3);
    } else {
      EXPECT_EQ(fk.global_pos[j], rest[j]) << j;
    }
  }
}

TEST(Fk, BackwardMatchesFiniteDifferences) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(4);
  const Pose p = random_pose(rng);
  JointArray<RotMat> gr{};
  JointArray<Vec3> gp{};
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& g : gr) g = RotMat::NullaryExpr([&](Eigen::Index, Eigen::Index) { return n(rng); });
  for (auto& g : gp) g = Vec3(n(rng), n(rng), n(rng));
  const auto objective = [&](const Pose& q) {
    const FkResult fk = forward_kinematics(q, skel);
    double s = 0.0;
    for (int j = 0; j < kNumJoints; ++j) s += fk.global_rot[j].cwiseProduct(gr[j]).sum() + fk.global_pos[j].dot(gp[j]);
    return s;
  };
  const FkResult fk = forward_kinematics(p, skel);
  const auto analytic = forward_kinematics_backward(p, skel, fk, gp, gr);
  const double h = 1e-6;
  for (int j : {0, 3, 9, 16, 18, 20}) {
    for (int k = 0; k < 9; ++k) {
      Pose a = p, b = p;
      a.local_rot[j](k / 3, k % 3) += h;
      b.local_rot[j](k / 3, k % 3) -= h;
      const double numeric = (objective(a) - objective(b)) / (2 * h);
      EXPECT_NEAR(analytic[j](k / 3, k % 3), numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST(DefaultBody, SkeletonInvariantsAndTopology) {
  const Skeleton skel = default_skeleton();
  EXPECT_NO_THROW(skel.validate());
  EXPECT_TRUE(skel.is_ancestor_or_self(joint::kLeftShoulder, joint::kLeftWrist));
  EXPECT_TRUE(skel.is_ancestor_or_self(joint::kLeftElbow, joint::kLeftWrist));
  EXPECT_TRUE(skel.is_ancestor_or_self(joint::kRightShoulder, joint::kRightWrist));
  EXPECT_TRUE(skel.is_ancestor_or_self(joint::kRightElbow, joint::kRightWrist));
  EXPECT_FALSE(skel.is_ancestor_or_self(joint::kLeftElbow, joint::kRightWrist));
}

TEST(DefaultBody, HeightAndVertexDensity) {
  const Skeleton skel = default_skeleton();
  const SkinnedVertexSet mesh = default_vertex_set(skel);
  EXPECT_NO_THROW(mesh.validate());
  EXPECT_GE(mesh.size(), 10u * (kNumJoints - 1));
  double lo = 1e9, hi = -1e9;
  for (const Vec3& v : mesh.vertices) {
    lo = std::min(lo, v.y());
    hi = std::max(hi, v.y());
  }
  EXPECT_GE(hi - lo, 1.5);
  EXPECT_LE(hi - lo, 1.9);
}

TEST(Skinning, IdentityPoseReturnsRestVertices) {
  const Skeleton skel = default_skeleton();
  const SkinnedVertexSet mesh = default_vertex_set(skel);
  const auto posed = skin_vertices(forward_kinematics(Pose::identity(), skel), skel, mesh);
  for (std::size_t v = 0; v < mesh.size(); ++v) EXPECT_LT((posed[v] - mesh.vertices[v]).norm(), 1e-12);
}

TEST(Skinning, OneHotAndBlendedVertices) {
  const Skeleton skel = chain3();
  const auto rest = skel.rest_positions();
  SkinnedVertexSet mesh;
  mesh.vertices = {Vec3(0.5, 1.5, 0), Vec3(0.5, 1.5, 0)};
  mesh.weights = Eigen::MatrixXd::Zero(2, kNumJoints);
  mesh.weights(0, 1) = 1.0;
  mesh.weights(1, 1) = 0.5;
  mesh.weights(1, 2) = 0.5;
  Pose p = Pose::identity();
  p.local_rot[1] = rot_z(std::numbers::pi / 2);
  const FkResult fk = forward_kinematics(p, skel);
  const auto posed = skin_vertices(fk, skel, mesh);
  const Vec3 rigid1 = fk.global_rot[1] * (mesh.vertices[0] - rest[1]) + fk.global_pos[1];
  const Vec3 rigid2 = fk.global_rot[2] * (mesh.vertices[0] - rest[2]) + fk.global_pos[2];
  EXPECT_LT((posed[0] - rigid1).norm(), 1e-15);
  EXPECT_LT((posed[1] - 0.5 * (rigid1 + rigid2)).norm(), 1e-15);
  // Joint 1 at (0,1,0) rotated 90 deg about z: (0.5, 0.5, 0) offset maps to (-0.5, 0.5, 0).
  EXPECT_LT((rigid1 - Vec3(-0.5, 1.5, 0)).norm(), 1e-12);
}

TEST(BodyFile, RoundTrip) {
  const Skeleton skel = default_skeleton();
  const SkinnedVertexSet mesh = default_vertex_set(skel);
  const auto path = std::filesystem::temp_directory_path() / "sparsepose_body_test.txt";
  save_body(path.string(), skel, mesh);
  const auto [s2, m2] = load_body(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(s2.parent, skel.parent);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_LT((s2.rest_offset[j] - skel.rest_offset[j]).norm(), 1e-6);
  ASSERT_EQ(m2.size(), mesh.size());
  EXPECT_LT((m2.weights - mesh.weights).cwiseAbs().maxCoeff(), 1e-6);
}
