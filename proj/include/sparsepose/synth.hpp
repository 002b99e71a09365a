#pragma once

// Synthetic IMU generation from pose streams: resampling, virtual sensors,
// finite-difference acceleration, smoothing, network input layout, and the
// motion / dataset file formats.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsepose/binio.hpp"
#include "sparsepose/body.hpp"
#include "sparsepose/combos.hpp"
#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"

namespace sparsepose {

/// Acceleration is divided by this before entering the network.
constexpr double kAccScale = 30.0;
constexpr int kInputDim = kNumLocations * 12;
constexpr int kSmoothWindow = 5;

using InputVector = Eigen::Matrix<double, kInputDim, 1>;

struct MotionFrame {
  Vec3 root_translation = Vec3::Zero();  // meters
  JointArray<Quat> local_rot{};
};

struct MotionSequence {
  double fps = 25.0;
  std::vector<MotionFrame> frames;

  std::size_t size() const { return frames.size(); }
  double duration() const { return static_cast<double>(frames.size()) / fps; }

  Pose pose(std::size_t i) const {
    Pose p;
    for (int j = 0; j < kNumJoints; ++j) p.local_rot[j] = quat_to_matrix(frames[i].local_rot[j]);
    return p;
  }
  std::vector<Pose> poses() const {
    std::vector<Pose> out;
    out.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(pose(i));
    return out;
  }
};

struct VirtualSensor {
  Location location = Location::Head;
  int joint = joint::kHead;
  Vec3 local_offset = Vec3::Zero();  // meters, in the joint frame at rest
};

inline bool canonical_sensor_joint(Location loc, int j) {
  switch (loc) {
    case Location::LeftWrist: return j == joint::kLeftWrist;
    case Location::RightWrist: return j == joint::kRightWrist;
    case Location::LeftPocket: return j == joint::kLeftHip;
    case Location::RightPocket: return j == joint::kRightHip;
    case Location::Head: return j == joint::kHead;
  }
  return false;
}

inline void validate(const VirtualSensor& s) {
  if (!canonical_sensor_joint(s.location, s.joint)) {
    throw InvalidSensor(std::string("sensor at ") + to_string(s.location) + " must attach to its canonical joint");
  }
}

/// Wrist tops, front pant pockets on the upper legs, and the scalp.
inline LocationArray<VirtualSensor> default_sensors() {
  return {VirtualSensor{Location::LeftWrist, joint::kLeftWrist, Vec3(0.0, 0.03, 0.0)},
          VirtualSensor{Location::RightWrist, joint::kRightWrist, Vec3(0.0, 0.03, 0.0)},
          VirtualSensor{Location::LeftPocket, joint::kLeftHip, Vec3(0.08, -0.12, 0.10)},
          VirtualSensor{Location::RightPocket, joint::kRightHip, Vec3(-0.08, -0.12, 0.10)},
          VirtualSensor{Location::Head, joint::kHead, Vec3(0.0, 0.10, 0.0)}};
}

struct ImuSlot {
  bool present = false;
  Vec3 accel = Vec3::Zero();           // m/s^2, global frame
  RotMat orient = RotMat::Zero();      // global frame; all zeros when absent

  static ImuSlot absent() { return {}; }
};

struct ImuFrame {
  double timestamp = 0.0;  // seconds
  LocationArray<ImuSlot> slots{};

  const ImuSlot& operator[](Location l) const { return slots[index_of(l)]; }
  ImuSlot& operator[](Location l) { return slots[index_of(l)]; }

  LocationMask present_mask() const {
    LocationMask m;
    for (Location l : kAllLocations)
      if ((*this)[l].present) m.set(l);
    return m;
  }
};

/// Frame count becomes round(duration * target_fps). Rotations follow the
/// shorter great arc between neighbouring source frames, translations are linear.
inline MotionSequence resample(const MotionSequence& seq, double target_fps) {
  if (seq.frames.empty()) throw EmptySequence("cannot resample an empty sequence");
  if (!(target_fps > 0.0) || !(seq.fps > 0.0)) throw InvalidConfig("frame rates must be positive");
  MotionSequence out;
  out.fps = target_fps;
  const auto n_out = static_cast<std::size_t>(std::llround(seq.duration() * target_fps));
  out.frames.resize(n_out);
  const std::size_t last = seq.frames.size() - 1;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double s = static_cast<double>(i) * seq.fps / target_fps;
    auto i0 = static_cast<std::size_t>(std::floor(s));
    double frac = s - static_cast<double>(i0);
    if (i0 >= last) {
      i0 = last;
      frac = 0.0;
    }
    const MotionFrame& a = seq.frames[i0];
    if (frac < 1e-12) {
      out.frames[i] = a;
      continue;
    }
    const MotionFrame& b = seq.frames[i0 + 1];
    MotionFrame& f = out.frames[i];
    f.root_translation = (1.0 - frac) * a.root_translation + frac * b.root_translation;
    for (int j = 0; j < kNumJoints; ++j) f.local_rot[j] = slerp(a.local_rot[j], b.local_rot[j], frac);
  }
  return out;
}

/// All listed sensors present. Acceleration is the second difference of the
/// sensor's world position (no gravity); the two edge frames repeat their
/// neighbour's value.
inline std::vector<ImuFrame> synthesize_imu(const MotionSequence& seq, std::span<const VirtualSensor> sensors,
                                            const Skeleton& skel) {
  if (seq.frames.size() < 3) throw TooShort("acceleration synthesis needs at least 3 frames");
  LocationMask seen;
  for (const VirtualSensor& s : sensors) {
    validate(s);
    if (seen.contains(s.location)) throw InvalidSensor("duplicate sensor location");
    seen.set(s.location);
  }

  const std::size_t n = seq.frames.size();
  std::vector<ImuFrame> out(n);
  std::vector<std::vector<Vec3>> pos(sensors.size(), std::vector<Vec3>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const FkResult fk = forward_kinematics(seq.pose(t), skel);
    out[t].timestamp = static_cast<double>(t) / seq.fps;
    for (std::size_t k = 0; k < sensors.size(); ++k) {
      const VirtualSensor& s = sensors[k];
      pos[k][t] = fk.global_pos[s.joint] + seq.frames[t].root_translation + fk.global_rot[s.joint] * s.local_offset;
      ImuSlot& slot = out[t][s.location];
      slot.present = true;
      slot.orient = fk.global_rot[s.joint];
    }
  }
  const double fps2 = seq.fps * seq.fps;
  for (std::size_t k = 0; k < sensors.size(); ++k) {
    const Location loc = sensors[k].location;
    for (std::size_t t = 1; t + 1 < n; ++t) {
      out[t][loc].accel = (pos[k][t + 1] - 2.0 * pos[k][t] + pos[k][t - 1]) * fps2;
    }
    out[0][loc].accel = out[1][loc].accel;
    out[n - 1][loc].accel = out[n - 2][loc].accel;
  }
  return out;
}

inline std::vector<ImuFrame> synthesize_imu(const MotionSequence& seq, const Skeleton& skel) {
  const auto sensors = default_sensors();
  return synthesize_imu(seq, sensors, skel);
}

/// Causal moving average over the last `window` frames (fewer at the start).
/// Per slot, only frames where the slot was present are averaged; the
/// orientation average is projected back onto SO(3). Shared by the offline
/// dataset path and the live aggregator path.
class TrailingSmoother {
 public:
  explicit TrailingSmoother(int window = kSmoothWindow) : window_(window) {
    if (window <= 0 || window % 2 == 0) throw InvalidConfig("smoothing window must be odd and positive");
  }

  ImuFrame push(const ImuFrame& frame) {
    history_.push_back(frame);
    if (static_cast<int>(history_.size()) > window_) history_.pop_front();
    ImuFrame out;
    out.timestamp = frame.timestamp;
    for (Location l : kAllLocations) {
      if (!frame[l].present) continue;
      Vec3 acc = Vec3::Zero();
      Eigen::Matrix3d rot = Eigen::Matrix3d::Zero();
      int n = 0;
      for (const ImuFrame& h : history_) {
        if (!h[l].present) continue;
        acc += h[l].accel;
        rot += h[l].orient;
        ++n;
      }
      ImuSlot& s = out[l];
      s.present = true;
      s.accel = acc / n;
      s.orient = n == 1 ? frame[l].orient : nearest_rotation(rot / n);
    }
    return out;
  }

  void reset() { history_.clear(); }
  int window() const { return window_; }

 private:
  int window_;
  std::deque<ImuFrame> history_;
};

inline std::vector<ImuFrame> smooth(std::span<const ImuFrame> frames, int window = kSmoothWindow) {
  TrailingSmoother smoother(window);
  std::vector<ImuFrame> out;
  out.reserve(frames.size());
  for (const ImuFrame& f : frames) out.push_back(smoother.push(f));
  return out;
}

/// Network input: slots [LeftWrist, RightWrist, LeftPocket, RightPocket, Head],
/// each [accel / 30 (3), orientation row-major (9)]; slots outside the mask are zero.
inline InputVector scale_and_flatten(const ImuFrame& frame, LocationMask mask) {
  InputVector v = InputVector::Zero();
  for (Location l : kAllLocations) {
    const ImuSlot& s = frame[l];
    if (!mask.contains(l) || !s.present) continue;
    const int base = 12 * index_of(l);
    for (int a = 0; a < 3; ++a) v(base + a) = s.accel(a) / kAccScale;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) v(base + 3 + 3 * r + c) = s.orient(r, c);
  }
  return v;
}

/// Copy of `frame` with every slot outside `mask` marked absent and zeroed.
inline ImuFrame apply_mask(const ImuFrame& frame, LocationMask mask) {
  ImuFrame out = frame;
  for (Location l : kAllLocations)
    if (!mask.contains(l)) out[l] = ImuSlot::absent();
  return out;
}

struct MaskedStream {
  LocationMask mask;
  std::vector<ImuFrame> frames;
};

/// One masked copy of the stream per canonical location set (24 in total).
inline std::vector<MaskedStream> expand_combinations(std::span<const ImuFrame> frames) {
  std::vector<MaskedStream> out;
  for (LocationMask m : enumerate_location_sets()) {
    MaskedStream s{m, {}};
    s.frames.reserve(frames.size());
    for (const ImuFrame& f : frames) s.frames.push_back(apply_mask(f, m));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Motion file, little-endian:
//   "SPMO" | u16 version=1 | f32 fps | u32 frame_count
//   per frame: 3 x f32 root translation, 24 x (w,x,y,z) f32 quaternions
// ---------------------------------------------------------------------------

inline binio::Bytes encode_motion(const MotionSequence& seq) {
  binio::Writer w;
  w.str("SPMO");
  w.u16(1);
  w.f32(static_cast<float>(seq.fps));
  w.u32(static_cast<std::uint32_t>(seq.frames.size()));
  for (const MotionFrame& f : seq.frames) {
    for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(f.root_translation(a)));
    for (const Quat& q : f.local_rot) {
      w.f32(static_cast<float>(q.w));
      w.f32(static_cast<float>(q.x));
      w.f32(static_cast<float>(q.y));
      w.f32(static_cast<float>(q.z));
    }
  }
  return w.take();
}

inline MotionSequence decode_motion(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("SPMO");
  if (const auto v = r.u16(); v != 1) throw FormatError("unsupported motion file version " + std::to_string(v));
  MotionSequence seq;
  seq.fps = r.f32();
  if (!(seq.fps > 0.0)) throw FormatError("motion file fps must be positive");
  const std::uint32_t n = r.u32();
  if (r.remaining() != static_cast<std::size_t>(n) * (3 + 4 * kNumJoints) * 4) throw FormatError("motion file size mismatch");
  seq.frames.resize(n);
  for (MotionFrame& f : seq.frames) {
    for (int a = 0; a < 3; ++a) f.root_translation(a) = r.f32();
    for (Quat& q : f.local_rot) {
      q.w = r.f32();
      q.x = r.f32();
      q.y = r.f32();
      q.z = r.f32();
      if (std::abs(q.norm() - 1.0) > 1e-3) throw FormatError("motion file holds a non-unit quaternion");
      q = q.normalized();
    }
  }
  return seq;
}

inline void save_motion(const std::string& path, const MotionSequence& seq) { binio::write_file(path, encode_motion(seq)); }
inline MotionSequence load_motion(const std::string& path) { return decode_motion(binio::read_file(path)); }

// ---------------------------------------------------------------------------
// Synthesized-IMU dataset, little-endian:
//   "SPDS" | u16 version=1 | f32 fps | u32 frame_count | u8 flags (bit0: poses follow each frame)
//   per frame: f64 timestamp,
//              5 x (u8 present, 3 x f32 accel, 9 x f32 orientation row-major),
//              u8 mask id,
//              [24 x (w,x,y,z) f32 ground-truth local rotations if flags bit0]
// A timestamp that does not increase starts a new sequence.
// ---------------------------------------------------------------------------

struct ImuSequence {
  std::vector<ImuFrame> frames;
  std::vector<LocationMask> masks;  // one per frame
  std::vector<Pose> poses;          // empty or one per frame
};

struct ImuDataset {
  double fps = 25.0;
  std::vector<ImuSequence> sequences;

  bool has_poses() const {
    return !sequences.empty() && std::all_of(sequences.begin(), sequences.end(), [](const ImuSequence& s) {
      return s.poses.size() == s.frames.size();
    });
  }
  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.frames.size();
    return n;
  }
};

inline binio::Bytes encode_dataset(const ImuDataset& ds) {
  const bool poses = ds.has_poses();
  binio::Writer w;
  w.str("SPDS");
  w.u16(1);
  w.f32(static_cast<float>(ds.fps));
  w.u32(static_cast<std::uint32_t>(ds.total_frames()));
  w.u8(poses ? 1 : 0);
  for (const ImuSequence& s : ds.sequences) {
    if (s.masks.size() != s.frames.size()) throw ShapeMismatch("dataset sequence needs one mask per frame");
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      const ImuFrame& f = s.frames[t];
      w.f64(f.timestamp);
      for (const ImuSlot& slot : f.slots) {
        w.u8(slot.present ? 1 : 0);
        for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(slot.accel(a)));
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(slot.orient(r, c)));
      }
      w.u8(s.masks[t].id());
      if (poses) {
        for (const RotMat& m : s.poses[t].local_rot) {
          const Quat q = matrix_to_quat(m);
          w.f32(static_cast<float>(q.w));
          w.f32(static_cast<float>(q.x));
          w.f32(static_cast<float>(q.y));
          w.f32(static_cast<float>(q.z));
        }
      }
    }
  }
  return w.take();
}

inline ImuDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("SPDS");
  if (const auto v = r.u16(); v != 1) throw FormatError("unsupported dataset version " + std::to_string(v));
  ImuDataset ds;
  ds.fps = r.f32();
  const std::uint32_t n = r.u32();
  const bool poses = (r.u8() & 1U) != 0;
  const std::size_t record = 8 + 5 * (1 + 12 * 4) + 1 + (poses ? kNumJoints * 16 : 0);
  if (r.remaining() != static_cast<std::size_t>(n) * record) throw FormatError("dataset size mismatch");
  double prev_t = 0.0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ImuFrame f;
    f.timestamp = r.f64();
    for (ImuSlot& slot : f.slots) {
      slot.present = r.u8() != 0;
      for (int a = 0; a < 3; ++a) slot.accel(a) = r.f32();
      for (int rr = 0; rr < 3; ++rr)
        for (int c = 0; c < 3; ++c) slot.orient(rr, c) = r.f32();
    }
    const LocationMask mask = LocationMask::from_id(r.u8());
    if (ds.sequences.empty() || f.timestamp <= prev_t) ds.sequences.emplace_back();
    prev_t = f.timestamp;
    ImuSequence& s = ds.sequences.back();
    s.frames.push_back(f);
    s.masks.push_back(mask);
    if (poses) {
      Pose p;
      for (RotMat& m : p.local_rot) {
        Quat q;
        q.w = r.f32();
        q.x = r.f32();
        q.y = r.f32();
        q.z = r.f32();
        m = quat_to_matrix(q);
      }
      s.poses.push_back(p);
    }
  }
  return ds;
}

inline void save_dataset(const std::string& path, const ImuDataset& ds) { binio::write_file(path, encode_dataset(ds)); }
inline ImuDataset load_dataset(const std::string& path) { return decode_dataset(binio::read_file(path)); }

}  // namespace sparsepose
