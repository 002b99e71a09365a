#pragma once

// Seeded procedural motions for desk-scale experiments: a sinusoidal gait,
// alternating arm raises and jumping jacks. Every sequence draws its own
// frequency, amplitudes, phases and a few small low-frequency wobbles from the
// seed, so different seeds give different (but similar) clips.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "sparsepose/body.hpp"
#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"
#include "sparsepose/synth.hpp"

namespace sparsepose {

enum class MotionKind { Walk, ArmSwing, Jacks };

inline const char* to_string(MotionKind k) {
  switch (k) {
    case MotionKind::Walk: return "walk";
    case MotionKind::ArmSwing: return "armswing";
    case MotionKind::Jacks: return "jacks";
  }
  return "?";
}

inline MotionKind parse_motion_kind(const std::string& s) {
  if (s == "walk") return MotionKind::Walk;
  if (s == "armswing") return MotionKind::ArmSwing;
  if (s == "jacks") return MotionKind::Jacks;
  throw InvalidConfig("unknown motion kind '" + s + "' (expected walk, armswing or jacks)");
}

namespace detail {

struct Wobble {
  double amp = 0.0, freq = 0.0, phase = 0.0;
  double operator()(double t) const { return amp * std::sin(2.0 * std::numbers::pi * freq * t + phase); }
};

class MotionRng {
 public:
  explicit MotionRng(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double jitter(double value, double rel) { return value * uniform(1.0 - rel, 1.0 + rel); }
  Wobble wobble(double max_amp_deg) {
    return {uniform(0.0, max_amp_deg) * kDegToRad, uniform(0.1, 0.5), uniform(0.0, 2.0 * std::numbers::pi)};
  }

 private:
  std::mt19937_64 rng_;
};

inline Quat to_quat(const RotMat& m) { return matrix_to_quat(m); }

}  // namespace detail

/// `seconds * fps` frames (rounded) of the requested motion.
inline MotionSequence generate_motion(MotionKind kind, double seconds, std::uint64_t seed, double fps = 25.0) {
  if (!(seconds > 0.0) || !(fps > 0.0)) throw InvalidConfig("motion length and fps must be positive");
  using std::numbers::pi;
  detail::MotionRng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(kind) + 1);
  const auto n = static_cast<std::size_t>(std::llround(seconds * fps));

  const double freq = kind == MotionKind::Walk ? rng.uniform(0.8, 1.1) : rng.uniform(0.4, 0.8);
  const double phase = rng.uniform(0.0, 2.0 * pi);
  const double heading = rng.uniform(-10.0, 10.0) * kDegToRad;
  const double speed = kind == MotionKind::Walk ? rng.uniform(0.9, 1.4) : 0.0;
  const double arm_down = rng.jitter(78.0, 0.08) * kDegToRad;
  const double hip_amp = rng.jitter(25.0, 0.2) * kDegToRad;
  const double knee_amp = rng.jitter(40.0, 0.2) * kDegToRad;
  const double arm_amp = rng.jitter(kind == MotionKind::Walk ? 25.0 : 70.0, 0.2) * kDegToRad;
  const double elbow_amp = rng.jitter(30.0, 0.3) * kDegToRad;
  const double leg_abduct = rng.jitter(14.0, 0.2) * kDegToRad;
  const double bounce = rng.jitter(kind == MotionKind::Jacks ? 0.08 : 0.03, 0.2);
  // An arm-raise session picks front or side raises.
  const bool side_raise = rng.uniform(0.0, 1.0) < 0.5;
  detail::Wobble yaw = rng.wobble(6.0), spine = rng.wobble(5.0), neck = rng.wobble(10.0), nod = rng.wobble(8.0);
  detail::Wobble larm = rng.wobble(6.0), rarm = rng.wobble(6.0), lleg = rng.wobble(4.0), rleg = rng.wobble(4.0);

  MotionSequence seq;
  seq.fps = fps;
  seq.frames.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double w = 2.0 * pi * freq * t + phase;
    JointArray<RotMat> r;
    r.fill(RotMat::Identity());
    Vec3 root = Vec3::Zero();

    r[joint::kPelvis] = rot_y(heading + yaw(t));
    r[joint::kSpine1] = rot_x(spine(t));
    r[joint::kNeck] = rot_y(neck(t));
    r[joint::kHead] = rot_x(nod(t));

    // Arms hang at the sides unless a motion moves them.
    double l_down = -arm_down, r_down = arm_down;  // about z; arms lie along +-x at rest
    double l_fwd = larm(t), r_fwd = rarm(t);       // about x; negative swings forward
    double l_elbow = 0.0, r_elbow = 0.0;
    double l_hip = lleg(t), r_hip = rleg(t), l_knee = 0.0, r_knee = 0.0, l_abd = 0.0, r_abd = 0.0;

    switch (kind) {
      case MotionKind::Walk: {
        const double s = std::sin(w);
        l_hip += -hip_amp * s;
        r_hip += hip_amp * s;
        l_knee = knee_amp * std::max(0.0, std::sin(w + 0.5 * pi));
        r_knee = knee_amp * std::max(0.0, std::sin(w + 1.5 * pi));
        l_fwd += arm_amp * s;  // counter-swing: left arm moves with the right leg
        r_fwd += -arm_amp * s;
        l_elbow = elbow_amp * (0.5 + 0.5 * std::max(0.0, -s));
        r_elbow = elbow_amp * (0.5 + 0.5 * std::max(0.0, s));
        r[joint::kSpine3] = rot_y(0.15 * hip_amp * s);
        root = Vec3(std::sin(heading), 0.0, std::cos(heading)) * (speed * t) +
               Vec3(0.0, bounce * std::cos(2.0 * w), 0.0);
        break;
      }
      case MotionKind::ArmSwing: {
        const double a = 0.5 - 0.5 * std::cos(w);
        const double b = 0.5 - 0.5 * std::cos(w + pi);
        if (side_raise) {
          l_down += arm_amp * a;
          r_down -= arm_amp * b;
        } else {
          l_fwd -= arm_amp * a;
          r_fwd -= arm_amp * b;
        }
        l_elbow = 0.3 * elbow_amp * a;
        r_elbow = 0.3 * elbow_amp * b;
        root = Vec3(0.0, 0.01 * std::sin(w), 0.0);
        break;
      }
      case MotionKind::Jacks: {
        const double a = 0.5 - 0.5 * std::cos(w);
        l_down += (arm_down + 0.8 * arm_amp) * a * 1.1;
        r_down -= (arm_down + 0.8 * arm_amp) * a * 1.1;
        l_abd = leg_abduct * a;
        r_abd = -leg_abduct * a;
        l_knee = 0.25 * knee_amp * std::abs(std::sin(w));
        r_knee = l_knee;
        root = Vec3(0.0, bounce * std::abs(std::sin(w)), 0.0);
        break;
      }
    }

    r[joint::kLeftShoulder] = rot_x(l_fwd) * rot_z(l_down);
    r[joint::kRightShoulder] = rot_x(r_fwd) * rot_z(r_down);
    // Elbows flex forward around the (lowered) upper-arm frame.
    r[joint::kLeftElbow] = rot_y(-l_elbow);
    r[joint::kRightElbow] = rot_y(r_elbow);
    r[joint::kLeftHip] = rot_z(l_abd) * rot_x(l_hip);
    r[joint::kRightHip] = rot_z(r_abd) * rot_x(r_hip);
    r[joint::kLeftKnee] = rot_x(l_knee);
    r[joint::kRightKnee] = rot_x(r_knee);

    MotionFrame& f = seq.frames[i];
    f.root_translation = root;
    for (int j = 0; j < kNumJoints; ++j) f.local_rot[j] = detail::to_quat(r[j]);
  }
  return seq;
}

}  // namespace sparsepose
