#pragma once

// Device-to-global alignment and device-to-bone offsets.
//
//   bone_orient  = (R_align^T * raw_orient) * R_off
//   global_accel = (R_align^T * raw_orient) * raw_accel
//
// R_align is the mean device reading while all devices sit in one common
// physical orientation; R_off is chosen so that the bone orientation during a
// T-pose is identity. Raw acceleration is assumed to be gravity-free user
// acceleration in the device frame.

#include <optional>
#include <span>
#include <string>

#include "sparsepose/binio.hpp"
#include "sparsepose/combos.hpp"
#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"

namespace sparsepose {

constexpr std::size_t kMinCalibrationSamples = 75;  // 3 s at 25 Hz
constexpr double kMaxCalibrationSpreadDeg = 15.0;

struct LocationCalibration {
  RotMat align = RotMat::Identity();
  RotMat offset = RotMat::Identity();
};

struct CalibrationProfile {
  LocationArray<std::optional<LocationCalibration>> entries{};

  /// Identity when the location was never calibrated.
  LocationCalibration at(Location l) const { return entries[index_of(l)].value_or(LocationCalibration{}); }
  void set(Location l, const LocationCalibration& c) { entries[index_of(l)] = c; }
};

/// Chordal mean: arithmetic mean of the matrices projected to the nearest rotation.
inline RotMat mean_rotation(std::span<const RotMat> readings) {
  if (readings.size() < kMinCalibrationSamples) {
    throw InsufficientSamples("calibration needs at least " + std::to_string(kMinCalibrationSamples) + " samples, got " +
                              std::to_string(readings.size()));
  }
  Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
  for (const RotMat& r : readings) sum += r;
  const RotMat mean = nearest_rotation(sum / static_cast<double>(readings.size()));
  for (const RotMat& r : readings) {
    if (geodesic_angle_deg(r, mean) > kMaxCalibrationSpreadDeg) {
      throw InconsistentReadings("calibration sample deviates more than 15 deg from the mean");
    }
  }
  return mean;
}

inline RotMat build_alignment(std::span<const RotMat> readings) { return mean_rotation(readings); }

inline RotMat build_tpose_offset(const RotMat& align, std::span<const RotMat> tpose_readings) {
  return (align.transpose() * mean_rotation(tpose_readings)).transpose();
}

struct CalibratedReading {
  RotMat bone_orient;
  Vec3 global_accel;
};

inline CalibratedReading apply_calibration(const LocationCalibration& c, const RotMat& raw_orient, const Vec3& raw_accel) {
  const RotMat device_global = c.align.transpose() * raw_orient;
  return {device_global * c.offset, device_global * raw_accel};
}

// Profile file, little-endian:
//   "SPCB" | u16 version=1 | u8 count | count x (u8 location, 9 x f32 align, 9 x f32 offset), row-major.
inline binio::Bytes encode_profile(const CalibrationProfile& p) {
  binio::Writer w;
  w.str("SPCB");
  w.u16(1);
  std::uint8_t count = 0;
  for (const auto& e : p.entries) count += e.has_value();
  w.u8(count);
  for (Location l : kAllLocations) {
    const auto& e = p.entries[index_of(l)];
    if (!e) continue;
    w.u8(static_cast<std::uint8_t>(index_of(l)));
    for (const RotMat* m : {&e->align, &e->offset})
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) w.f32(static_cast<float>((*m)(r, c)));
  }
  return w.take();
}

inline CalibrationProfile decode_profile(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("SPCB");
  if (const auto v = r.u16(); v != 1) throw FormatError("unsupported calibration profile version " + std::to_string(v));
  CalibrationProfile p;
  const std::uint8_t count = r.u8();
  for (std::uint8_t i = 0; i < count; ++i) {
    const std::uint8_t loc = r.u8();
    if (loc >= kNumLocations) throw FormatError("calibration profile has an unknown location id");
    LocationCalibration c;
    for (RotMat* m : {&c.align, &c.offset})
      for (int rr = 0; rr < 3; ++rr)
        for (int cc = 0; cc < 3; ++cc) (*m)(rr, cc) = r.f32();
    c.align = nearest_rotation(c.align);
    c.offset = nearest_rotation(c.offset);
    p.entries[loc] = c;
  }
  if (!r.at_end()) throw FormatError("trailing bytes in calibration profile");
  return p;
}

inline void save_profile(const std::string& path, const CalibrationProfile& p) { binio::write_file(path, encode_profile(p)); }
inline CalibrationProfile load_profile(const std::string& path) { return decode_profile(binio::read_file(path)); }

}  // namespace sparsepose
