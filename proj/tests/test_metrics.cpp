#include <gtest/gtest.h>

#include "sparsepose/metrics.hpp"
#include "test_util.hpp"

using namespace sparsepose;

namespace {

std::vector<JointArray<Vec3>> trajectory(int frames, double fps, const std::function<double(double)>& x) {
  std::vector<JointArray<Vec3>> out(frames);
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < kNumJoints; ++j) out[t][j] = Vec3(x(t / fps), 0.1 * j, 0.0);
  return out;
}

}  // namespace

TEST(Metrics, ZeroOnIdenticalStreams) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(1);
  std::vector<Pose> poses;
  for (int t = 0; t < 10; ++t) poses.push_back(sptest::random_pose(rng));
  EXPECT_NEAR(mpjre(poses, poses, skel), 0.0, 1e-4);
  EXPECT_EQ(mpjpe(poses, poses, skel), 0.0);
  EXPECT_EQ(mpjve(poses, poses, skel, default_vertex_set(skel)), 0.0);
  std::vector<Pose> still(10, poses[0]);
  EXPECT_NEAR(jitter(still, skel, 25.0), 0.0, 1e-9);
}

TEST(Metrics, RotationErrorInheritedByDescendants) {
  const Skeleton skel = default_skeleton();
  std::vector<Pose> gt = {Pose::identity()}, pred = gt;
  pred[0].local_rot[joint::kLeftElbow] = rot_x(std::numbers::pi / 2);
  // elbow, wrist and hand all rotate by 90 degrees globally
  EXPECT_NEAR(mpjre(pred, gt, skel), 3 * 90.0 / 24.0, 1e-9);
}

TEST(Metrics, MirroredRootClosedForm) {
  const Skeleton skel = default_skeleton();
  std::vector<Pose> gt = {Pose::identity()}, pred = gt;
  pred[0].local_rot[0] = rot_y(std::numbers::pi);
  double expected = 0.0;
  for (const Vec3& p : skel.rest_positions()) expected += 2.0 * std::hypot(p.x(), p.z());
  EXPECT_NEAR(mpjpe(pred, gt, skel), 100.0 * expected / kNumJoints, 1e-9);
}

TEST(Metrics, OneHotVerticesReduceToJointDistances) {
  const Skeleton skel = default_skeleton();
  SkinnedVertexSet mesh;
  const auto rest = skel.rest_positions();
  mesh.weights = Eigen::MatrixXd::Zero(kNumJoints, kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) {
    mesh.vertices.push_back(rest[j]);
    mesh.weights(j, j) = 1.0;
  }
  std::mt19937_64 rng(2);
  std::vector<Pose> gt, pred;
  for (int t = 0; t < 5; ++t) {
    gt.push_back(sptest::random_pose(rng));
    pred.push_back(sptest::random_pose(rng));
  }
  EXPECT_NEAR(mpjve(pred, gt, skel, mesh), mpjpe(pred, gt, skel), 1e-9);
}

TEST(Jitter, PolynomialTrajectories) {
  EXPECT_NEAR(jitter(trajectory(50, 25, [](double) { return 1.0; }), 25), 0.0, 1e-12);
  EXPECT_NEAR(jitter(trajectory(50, 25, [](double t) { return 3.0 * t; }), 25), 0.0, 1e-9);
  EXPECT_NEAR(jitter(trajectory(50, 25, [](double t) { return t * t * t; }), 25), 0.06, 0.06 * 1e-6);
  EXPECT_NEAR(jitter(trajectory(200, 100, [](double t) { return t * t * t; }), 100), 0.06, 0.06 * 0.01);
}

TEST(Jitter, TimeReversalInvariant) {
  auto traj = trajectory(60, 25, [](double t) { return std::sin(3 * t) + t * t; });
  const double forward = jitter(traj, 25);
  std::reverse(traj.begin(), traj.end());
  EXPECT_NEAR(jitter(traj, 25), forward, 1e-9);
}

TEST(Metrics, LengthMismatchThrows) {
  const Skeleton skel = default_skeleton();
  std::vector<Pose> a(3, Pose::identity()), b(4, Pose::identity());
  EXPECT_THROW(mpjpe(a, b, skel), ShapeMismatch);
}

TEST(EvalReport, RegionsAndFormatting) {
  const Skeleton skel = default_skeleton();
  std::vector<Pose> gt(6, Pose::identity()), pred = gt;
  for (auto& p : pred) p.local_rot[joint::kRightKnee] = rot_x(0.5);
  const EvalReport r = evaluate(pred, gt, skel, default_vertex_set(skel), 25.0);
  EXPECT_EQ(r.frames, 6u);
  EXPECT_GT(r.mpjpe_cm, 0.0);
  for (const auto& [name, v] : r.regions) {
    if (name == "arms" || name == "head" || name == "torso") EXPECT_NEAR(v.second, 0.0, 1e-9) << name;
    if (name == "legs") EXPECT_GT(v.second, 0.0);
  }
  EXPECT_NE(r.table(skel).find("MPJPE"), std::string::npos);
  EXPECT_NE(r.key_values().find("mpjpe_cm="), std::string::npos);
}
