#include <gtest/gtest.h>

#include "sparsepose/calib.hpp"
#include "test_util.hpp"

using namespace sparsepose;
using sptest::random_rotation;
using sptest::random_unit;

namespace {

std::vector<RotMat> repeated(const RotMat& r, std::size_t n = 75) { return std::vector<RotMat>(n, r); }

std::vector<RotMat> jittered(const RotMat& r, const Vec3& axis, double deg, std::mt19937_64& rng, std::size_t n = 75) {
  std::uniform_real_distribution<double> u(-deg, deg);
  std::vector<RotMat> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(r * axis_angle(axis, u(rng) * kDegToRad));
  return out;
}

}  // namespace

TEST(Alignment, IdenticalReadings) {
  std::mt19937_64 rng(1);
  const RotMat r = random_rotation(rng);
  EXPECT_LT((build_alignment(repeated(r)) - r).norm(), 1e-12);
}

TEST(Alignment, JitteredReadingsAverageOut) {
  std::mt19937_64 rng(2);
  const RotMat r = random_rotation(rng);
  EXPECT_LT(geodesic_angle_deg(build_alignment(jittered(r, random_unit(rng), 1.0, rng)), r), 0.2);
}

TEST(Alignment, Errors) {
  EXPECT_THROW(build_alignment(repeated(RotMat::Identity(), 74)), InsufficientSamples);
  auto readings = repeated(RotMat::Identity());
  readings[40] = rot_x(std::numbers::pi / 2);
  EXPECT_THROW(build_alignment(readings), InconsistentReadings);
}

TEST(TposeOffset, AlignedMountingIsIdentity) {
  const RotMat off = build_tpose_offset(RotMat::Identity(), repeated(RotMat::Identity()));
  EXPECT_LT((off - RotMat::Identity()).norm(), 1e-12);
}

TEST(TposeOffset, RecoversMountingRotation) {
  std::mt19937_64 rng(3);
  const RotMat align = random_rotation(rng);
  const RotMat mount = rot_x(std::numbers::pi / 2);  // device frame relative to bone
  // Bone is identity during the T-pose, so the device reads align * mount.
  const RotMat off = build_tpose_offset(align, jittered(align * mount, Vec3::UnitZ(), 0.5, rng));
  EXPECT_LT(geodesic_angle_deg(off, mount.transpose()), 0.2);
}

TEST(ApplyCalibration, TposeMapsToIdentityUnderJitter) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const RotMat frame = random_rotation(rng), mount = random_rotation(rng);
    const LocationCalibration c{build_alignment(jittered(frame, random_unit(rng), 1.0, rng)), RotMat::Identity()};
    const auto tpose = jittered(frame * mount, random_unit(rng), 1.0, rng);
    const LocationCalibration cal{c.align, build_tpose_offset(c.align, tpose)};
    EXPECT_LT(geodesic_angle_deg(apply_calibration(cal, mean_rotation(tpose), Vec3::Zero()).bone_orient, RotMat::Identity()), 0.5);
  }
}

TEST(ApplyCalibration, ForwardSimulationClosure) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const RotMat frame = random_rotation(rng), mount = random_rotation(rng);
    const LocationCalibration cal{build_alignment(repeated(frame)), build_tpose_offset(build_alignment(repeated(frame)), repeated(frame * mount))};
    for (int k = 0; k < 10; ++k) {
      const RotMat bone = random_rotation(rng);
      const Vec3 accel_device(0.3, -1.2, 2.0);
      const RotMat raw = frame * bone * mount;
      const CalibratedReading out = apply_calibration(cal, raw, accel_device);
      EXPECT_LT((out.bone_orient - bone).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LT((out.global_accel - bone * mount * accel_device).norm(), 1e-9);
    }
  }
}

TEST(ApplyCalibration, ZeroAccelStaysZero) {
  std::mt19937_64 rng(6);
  const LocationCalibration c{random_rotation(rng), random_rotation(rng)};
  EXPECT_EQ(apply_calibration(c, random_rotation(rng), Vec3::Zero()).global_accel, Vec3::Zero());
}

TEST(ApplyCalibration, GlobalFrameChangeConjugates) {
  std::mt19937_64 rng(7);
  const RotMat frame = random_rotation(rng), mount = random_rotation(rng), q = random_rotation(rng);
  const RotMat raw = frame * random_rotation(rng) * mount;
  const auto tpose = repeated(frame * mount);
  // Same physical readings; only the chosen global frame differs by q.
  const LocationCalibration a{frame, build_tpose_offset(frame, tpose)};
  const LocationCalibration b{frame * q.transpose(), build_tpose_offset(frame * q.transpose(), tpose)};
  const RotMat bone_a = apply_calibration(a, raw, Vec3::Zero()).bone_orient;
  EXPECT_LT((apply_calibration(b, raw, Vec3::Zero()).bone_orient - q * bone_a * q.transpose()).norm(), 1e-9);
}

TEST(Profile, FileRoundTrip) {
  std::mt19937_64 rng(8);
  CalibrationProfile p;
  p.set(Location::Head, {random_rotation(rng), random_rotation(rng)});
  p.set(Location::LeftWrist, {random_rotation(rng), random_rotation(rng)});
  const CalibrationProfile back = decode_profile(encode_profile(p));
  EXPECT_FALSE(back.entries[index_of(Location::RightPocket)].has_value());
  EXPECT_LT((back.at(Location::Head).align - p.at(Location::Head).align).norm(), 1e-6);
  EXPECT_LT((back.at(Location::LeftWrist).offset - p.at(Location::LeftWrist).offset).norm(), 1e-6);
}
