#include <gtest/gtest.h>

#include <algorithm>

#include "sparsepose/refine.hpp"
#include "test_util.hpp"

using namespace sparsepose;

namespace {

LocationArray<RotMat> measure(const Pose& p, const Skeleton& skel, const RefineConfig& cfg = {}) {
  const FkResult fk = forward_kinematics(p, skel);
  LocationArray<RotMat> m;
  for (Location l : kAllLocations) m[index_of(l)] = fk.global_rot[cfg.instrumented[index_of(l)]];
  return m;
}

}  // namespace

TEST(Refine, ExactMeasurementsLeavePoseUnchanged) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(1);
  const Pose p = sptest::random_pose(rng);
  const LocationMask all = LocationMask::all();
  RefineProblem problem(p, measure(p, skel), all, skel, RefineConfig{});
  EXPECT_LT(problem.gradient(problem.initial_params()).norm(), 1e-12);
  const RefineResult r = refine(p, measure(p, skel), all, skel);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_EQ(r.pose.local_rot[j], p.local_rot[j]);
}

TEST(Refine, EmptyMaskIsIdentity) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(2);
  const Pose p = sptest::random_pose(rng);
  LocationArray<RotMat> garbage;
  garbage.fill(sptest::random_rotation(rng));
  const RefineResult r = refine(p, garbage, LocationMask{}, skel);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_EQ(r.pose.local_rot[j], p.local_rot[j]);
}

TEST(Refine, ElbowPerturbationResidualHalved) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose truth = sptest::random_pose(rng, 30);
    const auto measured = measure(truth, skel);
    Pose perturbed = truth;
    perturbed.local_rot[joint::kLeftElbow] = axis_angle(sptest::random_unit(rng), 20 * kDegToRad) * perturbed.local_rot[joint::kLeftElbow];
    const RotMat target = measured[index_of(Location::LeftWrist)];
    const double before = orientation_residual_deg(perturbed, target, joint::kLeftWrist, skel);
    const RefineResult r = refine(perturbed, measured, LocationMask::of({Location::LeftWrist}), skel);
    EXPECT_LE(orientation_residual_deg(r.pose, target, joint::kLeftWrist, skel), 0.5 * before) << trial;
  }
}

TEST(Refine, BestIterateNeverWorse) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(4);
  RefineConfig aggressive;
  aggressive.step = 2.0;  // overshoots on purpose
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = sptest::random_pose(rng);
    LocationArray<RotMat> measured;
    for (auto& m : measured) m = sptest::random_rotation(rng);
    const RefineResult r = refine(p, measured, LocationMask::all(), skel, aggressive);
    EXPECT_LE(r.final_objective, r.initial_objective);
    EXPECT_DOUBLE_EQ(r.final_objective, std::min(r.initial_objective, *std::min_element(r.history.begin(), r.history.end())));
  }
}

TEST(Refine, OnlyMappedAncestorsChange) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(5);
  const Pose p = sptest::random_pose(rng);
  LocationArray<RotMat> measured;
  for (auto& m : measured) m = sptest::random_rotation(rng);
  const LocationMask mask = LocationMask::of({Location::RightWrist, Location::LeftPocket});
  const RefineResult r = refine(p, measured, mask, skel);
  const std::vector<int> allowed = {joint::kRightElbow, joint::kRightShoulder, joint::kLeftHip};
  for (int j = 0; j < kNumJoints; ++j)
    if (std::find(allowed.begin(), allowed.end(), j) == allowed.end()) EXPECT_EQ(r.pose.local_rot[j], p.local_rot[j]) << j;
}

TEST(Refine, GradientMatchesFiniteDifferences) {
  const Skeleton skel = default_skeleton();
  std::mt19937_64 rng(6);
  const RefineConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const Pose p = sptest::random_pose(rng);
    LocationArray<RotMat> measured;
    for (auto& m : measured) m = sptest::random_rotation(rng);
    RefineProblem problem(p, measured, LocationMask::all(), skel, cfg);
    Eigen::VectorXd x = problem.initial_params();
    x += 0.1 * Eigen::VectorXd::Random(x.size());
    const Eigen::VectorXd g = problem.gradient(x);
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      Eigen::VectorXd a = x, b = x;
      a[k] += h;
      b[k] -= h;
      const double numeric = (problem.objective(a) - problem.objective(b)) / (2 * h);
      worst = std::max(worst, std::abs(g[k] - numeric) / std::max({std::abs(g[k]), std::abs(numeric), 1e-6}));
    }
    EXPECT_LE(worst, 1e-4);
  }
}

TEST(Refine, RejectsNonAncestorMapping) {
  RefineConfig cfg;
  cfg.optimized[index_of(Location::LeftWrist)] = {joint::kRightElbow};
  EXPECT_THROW(refine(Pose::identity(), {}, LocationMask::all(), default_skeleton(), cfg), InvalidConfig);
}
