#pragma once

// Glue between the modules: motion -> synthesized dataset, dataset -> network
// inputs, predictions and evaluation.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsepose/body.hpp"
#include "sparsepose/combos.hpp"
#include "sparsepose/metrics.hpp"
#include "sparsepose/net.hpp"
#include "sparsepose/refine.hpp"
#include "sparsepose/synth.hpp"

namespace sparsepose {

/// Synthesize, smooth and mask a motion. With `mask` unset every canonical
/// location set gets its own sequence; otherwise one sequence with that mask.
inline ImuDataset synthesize_dataset(const MotionSequence& motion, const Skeleton& skel,
                                     std::optional<LocationMask> mask = std::nullopt, int smooth_window = kSmoothWindow) {
  std::vector<ImuFrame> frames = smooth(synthesize_imu(motion, skel), smooth_window);
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i].timestamp = static_cast<double>(i) / motion.fps;
  const std::vector<Pose> poses = motion.poses();
  ImuDataset ds;
  ds.fps = motion.fps;
  auto add = [&](LocationMask m) {
    ImuSequence s;
    s.frames.reserve(frames.size());
    for (const ImuFrame& f : frames) s.frames.push_back(apply_mask(f, m));
    s.masks.assign(frames.size(), m);
    s.poses = poses;
    ds.sequences.push_back(std::move(s));
  };
  if (mask) {
    add(*mask);
  } else {
    for (LocationMask m : enumerate_location_sets()) add(m);
  }
  return ds;
}

inline void append(ImuDataset& into, ImuDataset from) {
  if (into.sequences.empty()) into.fps = from.fps;
  for (auto& s : from.sequences) into.sequences.push_back(std::move(s));
}

/// T x 60 network inputs of one sequence (each frame masked by its own mask).
inline net::Matrix<double> sequence_inputs(const ImuSequence& s) {
  net::Matrix<double> x(static_cast<Eigen::Index>(s.frames.size()), kInputDim);
  for (std::size_t t = 0; t < s.frames.size(); ++t)
    x.row(static_cast<Eigen::Index>(t)) = scale_and_flatten(s.frames[t], s.masks[t]).transpose();
  return x;
}

inline std::vector<net::TrainingSequence> training_sequences(const ImuDataset& ds) {
  if (!ds.has_poses()) throw EmptyDataset("training needs a dataset with ground-truth poses");
  std::vector<net::TrainingSequence> out;
  for (const ImuSequence& s : ds.sequences) out.push_back({sequence_inputs(s), s.poses});
  return out;
}

/// Measured bone orientations of one frame, for refinement.
inline LocationArray<RotMat> measured_orientations(const ImuFrame& f) {
  LocationArray<RotMat> m;
  for (Location l : kAllLocations) m[index_of(l)] = f[l].present ? f[l].orient : RotMat::Identity();
  return m;
}

struct PredictOptions {
  int window = 125;
  bool refine = false;
  RefineConfig refine_config;
};

/// Online-protocol predictions for every frame of a sequence.
template <typename T>
std::vector<Pose> predict_sequence(const net::ModelWeights<T>& w, const ImuSequence& s, const Skeleton& skel,
                                   const PredictOptions& opt = {}) {
  std::vector<Pose> poses = net::decode_sequence(net::predict_online(w, sequence_inputs(s), opt.window));
  if (opt.refine) {
    for (std::size_t t = 0; t < poses.size(); ++t) {
      const LocationMask m = s.masks[t] & s.frames[t].present_mask();
      poses[t] = refine(poses[t], measured_orientations(s.frames[t]), m, skel, opt.refine_config).pose;
    }
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Pose stream file, little-endian:
//   "SPPS" | u16 version=1 | f32 fps | u32 frame_count
//   per frame: f64 timestamp, 24 x (w,x,y,z) f32 local joint rotations
// ---------------------------------------------------------------------------

struct PoseStream {
  double fps = 25.0;
  std::vector<double> timestamps;
  std::vector<Pose> poses;
};

inline binio::Bytes encode_pose_stream(const PoseStream& ps) {
  if (ps.timestamps.size() != ps.poses.size()) throw ShapeMismatch("pose stream needs one timestamp per pose");
  binio::Writer w;
  w.str("SPPS");
  w.u16(1);
  w.f32(static_cast<float>(ps.fps));
  w.u32(static_cast<std::uint32_t>(ps.poses.size()));
  for (std::size_t i = 0; i < ps.poses.size(); ++i) {
    w.f64(ps.timestamps[i]);
    for (const RotMat& r : ps.poses[i].local_rot) {
      const Quat q = matrix_to_quat(r);
      for (double v : {q.w, q.x, q.y, q.z}) w.f32(static_cast<float>(v));
    }
  }
  return w.take();
}

inline PoseStream decode_pose_stream(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("SPPS");
  if (const auto v = r.u16(); v != 1) throw FormatError("unsupported pose stream version " + std::to_string(v));
  PoseStream ps;
  ps.fps = r.f32();
  const std::uint32_t n = r.u32();
  if (r.remaining() != static_cast<std::size_t>(n) * (8 + kNumJoints * 16)) throw FormatError("pose stream size mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    ps.timestamps.push_back(r.f64());
    Pose p;
    for (RotMat& m : p.local_rot) {
      Quat q;
      q.w = r.f32();
      q.x = r.f32();
      q.y = r.f32();
      q.z = r.f32();
      m = quat_to_matrix(q);
    }
    ps.poses.push_back(p);
  }
  return ps;
}

inline void save_pose_stream(const std::string& path, const PoseStream& ps) { binio::write_file(path, encode_pose_stream(ps)); }
inline PoseStream load_pose_stream(const std::string& path) { return decode_pose_stream(binio::read_file(path)); }

/// Constant rest-pose predictor.
inline std::vector<Pose> rest_pose_baseline(std::size_t frames) { return std::vector<Pose>(frames, Pose::identity()); }

}  // namespace sparsepose
