#pragma once

// Device wire protocol, frame scanner, the 25 Hz host aggregator and dataset
// replay over a local socket.
//
// Wire frame, 43 bytes, little-endian:
//   0  u8[2]  magic 0x49 0x50
//   2  u8     version (1)
//   3  u8     device id (0 phone, 1 watch, 2 earbuds)
//   4  u8     flags (bit0 screen on, bit1 proximity)
//   5  u64    timestamp, microseconds (sender clock)
//   13 f32[3] acceleration, m/s^2, device frame, gravity removed
//   25 f32[4] orientation quaternion (w, x, y, z)
//   41 u16    CRC-16/CCITT-FALSE of bytes [0, 41)

#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <sys/socket.h>
#include <unistd.h>

#include "sparsepose/binio.hpp"
#include "sparsepose/calib.hpp"
#include "sparsepose/combos.hpp"
#include "sparsepose/errors.hpp"
#include "sparsepose/rotmath.hpp"
#include "sparsepose/synth.hpp"
#include "sparsepose/tracker.hpp"

namespace sparsepose::stream {

constexpr std::array<std::uint8_t, 2> kWireMagic = {0x49, 0x50};
constexpr std::uint8_t kWireVersion = 1;
constexpr std::size_t kWireFrameSize = 43;
constexpr double kStandardGravity = 9.80665;

enum class DeviceId : std::uint8_t { Phone = 0, Watch = 1, Earbuds = 2 };
constexpr int kNumDevices = 3;

inline const char* to_string(DeviceId d) {
  switch (d) {
    case DeviceId::Phone: return "phone";
    case DeviceId::Watch: return "watch";
    case DeviceId::Earbuds: return "earbuds";
  }
  return "?";
}

namespace flag {
constexpr std::uint8_t kScreenOn = 0x01;
constexpr std::uint8_t kProximity = 0x02;
}  // namespace flag

struct WireFrame {
  std::uint8_t version = kWireVersion;
  DeviceId device = DeviceId::Phone;
  std::uint8_t flags = 0;
  std::uint64_t timestamp_us = 0;
  std::array<float, 3> accel{};
  std::array<float, 4> orient{1.0f, 0.0f, 0.0f, 0.0f};  // w, x, y, z

  friend bool operator==(const WireFrame&, const WireFrame&) = default;
};

/// CRC-16/CCITT-FALSE: polynomial 0x1021, initial value 0xFFFF, no reflection.
inline std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : data) {
    crc ^= static_cast<std::uint16_t>(b) << 8;
    for (int i = 0; i < 8; ++i) crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021) : static_cast<std::uint16_t>(crc << 1);
  }
  return crc;
}

using WireBytes = std::array<std::uint8_t, kWireFrameSize>;

inline WireBytes encode(const WireFrame& f) {
  binio::Writer w;
  w.u8(kWireMagic[0]);
  w.u8(kWireMagic[1]);
  w.u8(f.version);
  w.u8(static_cast<std::uint8_t>(f.device));
  w.u8(f.flags);
  w.u64(f.timestamp_us);
  for (float a : f.accel) w.f32(a);
  for (float q : f.orient) w.f32(q);
  w.u16(crc16_ccitt(w.bytes()));
  WireBytes out;
  std::memcpy(out.data(), w.bytes().data(), kWireFrameSize);
  return out;
}

enum class WireError { BadMagic, BadCrc, Truncated, UnknownVersion, UnknownDevice };

inline const char* to_string(WireError e) {
  switch (e) {
    case WireError::BadMagic: return "BadMagic";
    case WireError::BadCrc: return "BadCrc";
    case WireError::Truncated: return "Truncated";
    case WireError::UnknownVersion: return "UnknownVersion";
    case WireError::UnknownDevice: return "UnknownDevice";
  }
  return "?";
}

class WireFormatError : public FormatError {
 public:
  explicit WireFormatError(WireError e) : FormatError(std::string("wire frame rejected: ") + to_string(e)), error_(e) {}
  WireError error() const { return error_; }

 private:
  WireError error_;
};

/// Decodes exactly one frame from the first kWireFrameSize bytes.
inline std::variant<WireFrame, WireError> try_decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 1 && bytes[0] != kWireMagic[0]) return WireError::BadMagic;
  if (bytes.size() >= 2 && bytes[1] != kWireMagic[1]) return WireError::BadMagic;
  if (bytes.size() < kWireFrameSize) return WireError::Truncated;
  binio::Reader crc_reader(bytes.subspan(kWireFrameSize - 2, 2));
  if (crc_reader.u16() != crc16_ccitt(bytes.first(kWireFrameSize - 2))) return WireError::BadCrc;
  binio::Reader r(bytes.first(kWireFrameSize - 2));
  r.u8();
  r.u8();
  WireFrame f;
  f.version = r.u8();
  if (f.version != kWireVersion) return WireError::UnknownVersion;
  const std::uint8_t dev = r.u8();
  if (dev >= kNumDevices) return WireError::UnknownDevice;
  f.device = static_cast<DeviceId>(dev);
  f.flags = r.u8();
  f.timestamp_us = r.u64();
  for (float& a : f.accel) a = r.f32();
  for (float& q : f.orient) q = r.f32();
  return f;
}

inline WireFrame decode(std::span<const std::uint8_t> bytes) {
  auto v = try_decode(bytes);
  if (auto* e = std::get_if<WireError>(&v)) throw WireFormatError(*e);
  return std::get<WireFrame>(v);
}

/// Splits a byte stream into frames. On a bad frame it skips one byte and
/// searches for the next magic.
class FrameScanner {
 public:
  void push(std::span<const std::uint8_t> bytes) {
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
    scan();
  }

  std::optional<WireFrame> pop() {
    if (frames_.empty()) return std::nullopt;
    WireFrame f = frames_.front();
    frames_.pop_front();
    return f;
  }

  std::size_t errors() const { return errors_; }
  std::size_t skipped_bytes() const { return skipped_; }
  std::size_t pending_bytes() const { return buffer_.size() - pos_; }

 private:
  void scan() {
    while (buffer_.size() - pos_ >= 2) {
      if (buffer_[pos_] != kWireMagic[0] || buffer_[pos_ + 1] != kWireMagic[1]) {
        ++pos_;
        ++skipped_;
        continue;
      }
      if (buffer_.size() - pos_ < kWireFrameSize) break;
      auto v = try_decode(std::span<const std::uint8_t>(buffer_.data() + pos_, kWireFrameSize));
      if (auto* f = std::get_if<WireFrame>(&v)) {
        frames_.push_back(*f);
        pos_ += kWireFrameSize;
      } else {
        ++errors_;
        ++pos_;
        ++skipped_;
      }
    }
    if (pos_ > 4096) {
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos_));
      pos_ = 0;
    }
  }

  std::vector<std::uint8_t> buffer_;
  std::size_t pos_ = 0;
  std::deque<WireFrame> frames_;
  std::size_t errors_ = 0;
  std::size_t skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Aggregator
// ---------------------------------------------------------------------------

enum class ClockMode {
  SenderTime,       // device timestamps are used as-is (simulation, replay)
  FirstSeenOffset,  // each device is shifted by (arrival - sender time) of its first frame
};

struct AggregatorConfig {
  double tick_hz = 25.0;
  double timeout_s = 0.2;
  double lateness_s = 0.0;  // how long a tick waits for late frames
  ClockMode clock = ClockMode::SenderTime;
  tracking::UserPrefs prefs;
  tracking::TrackerConfig tracker;
  CalibrationProfile calibration;

  std::int64_t period_us() const { return std::llround(1e6 / tick_hz); }
  std::int64_t timeout_us() const { return std::llround(timeout_s * 1e6); }

  void validate() const {
    if (!(tick_hz > 0.0)) throw InvalidConfig("tick rate must be positive");
    if (timeout_us() < 2 * period_us()) throw InvalidConfig("dropout timeout must cover at least two ticks");
    if (lateness_s < 0.0) throw InvalidConfig("lateness must be non-negative");
  }
};

struct Tick {
  std::int64_t time_us = 0;
  ImuFrame frame;        // calibrated, per body location
  DeviceState devices;   // placement used for this tick
  LocationMask mask;     // locations with live data
};

/// One (time, placement) entry replaces the tracker's placement from that time on.
using PlacementSchedule = std::vector<std::pair<std::int64_t, DeviceState>>;

class Aggregator {
 public:
  explicit Aggregator(AggregatorConfig cfg = {}) : cfg_(std::move(cfg)), tracker_(cfg_.prefs, cfg_.tracker) {
    cfg_.validate();
  }

  void set_placement_schedule(PlacementSchedule schedule) {
    std::stable_sort(schedule.begin(), schedule.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    schedule_ = std::move(schedule);
  }

  /// Frames must be pushed in non-decreasing (host) time order per device.
  /// `arrival_us` is only read in FirstSeenOffset mode.
  void push(const WireFrame& f, std::int64_t arrival_us = 0) {
    RotMat orient;
    try {
      orient = quat_to_matrix(Quat{f.orient[0], f.orient[1], f.orient[2], f.orient[3]});
    } catch (const NonUnitQuaternion&) {
      ++rejected_;
      return;
    }
    Device& d = devices_[static_cast<std::size_t>(f.device)];
    const auto sender = static_cast<std::int64_t>(f.timestamp_us);
    if (cfg_.clock == ClockMode::FirstSeenOffset && !d.offset_us) d.offset_us = arrival_us - sender;
    const std::int64_t t = sender + d.offset_us.value_or(0);
    if (d.last_pushed_us && t <= *d.last_pushed_us) {
      ++out_of_order_;
      return;
    }
    d.last_pushed_us = t;
    if (!next_tick_us_) next_tick_us_ = ceil_to_grid(t);
    Sample s{t, f.flags, Vec3(f.accel[0], f.accel[1], f.accel[2]), orient};
    d.queue.push_back(s);
    ++accepted_;
    watermark_us_ = std::max(watermark_us_.value_or(t), t);
    emit_until(*watermark_us_ - std::llround(cfg_.lateness_s * 1e6), false);
  }

  void push_bytes(std::span<const std::uint8_t> bytes, std::int64_t arrival_us = 0) {
    scanner_.push(bytes);
    while (auto f = scanner_.pop()) push(*f, arrival_us);
  }

  /// Emits every remaining tick up to the newest sample.
  void finish() {
    if (watermark_us_) emit_until(*watermark_us_, true);
  }

  std::vector<Tick> take_ticks() { return std::exchange(ticks_, {}); }
  std::vector<tracking::DeviceEvent> take_events() { return std::exchange(events_, {}); }

  std::size_t accepted() const { return accepted_; }
  std::size_t rejected() const { return rejected_ + scanner_.errors(); }
  std::size_t out_of_order() const { return out_of_order_; }
  std::uint64_t ticks_emitted() const { return tick_count_; }

 private:
  struct Sample {
    std::int64_t t = 0;
    std::uint8_t flags = 0;
    Vec3 accel = Vec3::Zero();
    RotMat orient = RotMat::Identity();
  };
  struct Device {
    std::deque<Sample> queue;
    std::optional<Sample> held;
    std::optional<std::int64_t> offset_us;
    std::optional<std::int64_t> last_pushed_us;
    bool active = false;
    std::uint8_t flags = 0;
    bool seen_flags = false;
  };

  std::int64_t ceil_to_grid(std::int64_t t) const {
    const std::int64_t p = cfg_.period_us();
    const std::int64_t q = t >= 0 ? (t + p - 1) / p : -((-t) / p);
    return q * p;
  }

  // Emits ticks T with T < limit (T <= limit when inclusive).
  void emit_until(std::int64_t limit, bool inclusive) {
    while (next_tick_us_ && (inclusive ? *next_tick_us_ <= limit : *next_tick_us_ < limit)) {
      emit(*next_tick_us_);
      *next_tick_us_ += cfg_.period_us();
    }
  }

  void event(std::int64_t t, tracking::EventKind kind, tracking::Source source = tracking::Source::Phone,
             double value = 0.0) {
    tracking::DeviceEvent e;
    e.t = static_cast<double>(t) * 1e-6;
    e.kind = kind;
    e.source = source;
    e.value = value;
    events_.push_back(e);
    tracker_.push(e);
  }

  void emit(std::int64_t T) {
    using tracking::EventKind;
    using tracking::Source;
    for (int id = 0; id < kNumDevices; ++id) {
      Device& d = devices_[static_cast<std::size_t>(id)];
      while (!d.queue.empty() && d.queue.front().t <= T) {
        d.held = d.queue.front();
        d.queue.pop_front();
      }
      const bool live = d.held && T - d.held->t <= cfg_.timeout_us();
      const auto dev = static_cast<DeviceId>(id);
      if (live != d.active) {
        d.active = live;
        switch (dev) {
          case DeviceId::Phone: event(T, live ? EventKind::PhonePresent : EventKind::PhoneAbsent); break;
          case DeviceId::Watch: event(T, live ? EventKind::WatchConnected : EventKind::WatchDisconnected, Source::Watch); break;
          case DeviceId::Earbuds:
            event(T, live ? EventKind::EarbudsConnected : EventKind::EarbudsDisconnected, Source::Earbuds);
            break;
        }
      }
      if (!live) continue;
      if (dev == DeviceId::Phone) {
        const std::uint8_t changed = static_cast<std::uint8_t>(d.flags ^ d.held->flags);
        if ((changed & flag::kScreenOn) || !d.seen_flags)
          event(T, (d.held->flags & flag::kScreenOn) ? EventKind::ScreenOn : EventKind::ScreenOff);
        if ((changed & flag::kProximity) || !d.seen_flags)
          event(T, (d.held->flags & flag::kProximity) ? EventKind::ProximityTriggered : EventKind::ProximityClear);
        d.flags = d.held->flags;
        d.seen_flags = true;
      }
      if (dev != DeviceId::Earbuds) {
        event(T, EventKind::MotionMagnitude, dev == DeviceId::Phone ? Source::Phone : Source::Watch,
              d.held->accel.norm() / kStandardGravity);
      }
    }

    DeviceState placement = tracker_.state().devices;
    if (!schedule_.empty()) {
      placement = DeviceState{};
      for (const auto& [t, s] : schedule_) {
        if (t > T) break;
        placement = s;
      }
    }

    Tick tick;
    tick.time_us = T;
    tick.frame.timestamp = static_cast<double>(T) * 1e-6;
    tick.devices = placement;
    // Later writers win when devices share a location: earbud case, phone, watch, earbuds in ears.
    auto fill = [&](DeviceId id, std::optional<Location> loc) {
      const Device& d = devices_[static_cast<std::size_t>(id)];
      if (!loc || !d.active) return;
      const CalibratedReading c = apply_calibration(cfg_.calibration.at(*loc), d.held->orient, d.held->accel);
      ImuSlot& slot = tick.frame[*loc];
      slot.present = true;
      slot.orient = c.bone_orient;
      slot.accel = c.global_accel;
    };
    if (placement.earbuds != EarbudsPlace::InEars) fill(DeviceId::Earbuds, location_of(placement.earbuds));
    fill(DeviceId::Phone, location_of(placement.phone));
    fill(DeviceId::Watch, location_of(placement.watch));
    if (placement.earbuds == EarbudsPlace::InEars) fill(DeviceId::Earbuds, location_of(placement.earbuds));
    tick.mask = tick.frame.present_mask();
    ticks_.push_back(std::move(tick));
    ++tick_count_;
  }

  AggregatorConfig cfg_;
  tracking::Tracker tracker_;
  PlacementSchedule schedule_;
  FrameScanner scanner_;
  std::array<Device, kNumDevices> devices_{};
  std::optional<std::int64_t> next_tick_us_;
  std::optional<std::int64_t> watermark_us_;
  std::vector<Tick> ticks_;
  std::vector<tracking::DeviceEvent> events_;
  std::size_t accepted_ = 0;
  std::size_t rejected_ = 0;
  std::size_t out_of_order_ = 0;
  std::uint64_t tick_count_ = 0;
};

// ---------------------------------------------------------------------------
// Replay: turn a recorded dataset back into device frames.
// ---------------------------------------------------------------------------

struct ReplayScript {
  std::vector<WireFrame> frames;  // sorted by timestamp, then device id
  PlacementSchedule schedule;
};

inline std::uint8_t phone_flags(PhonePlace p) {
  switch (p) {
    case PhonePlace::LeftHand:
    case PhonePlace::RightHand: return flag::kScreenOn;
    case PhonePlace::LeftPocket:
    case PhonePlace::RightPocket: return flag::kProximity;
    case PhonePlace::AtHead: return flag::kScreenOn | flag::kProximity;
    case PhonePlace::Absent: return 0;
  }
  return 0;
}

/// Each location in a frame's mask is carried by the device that
/// representative_device_state assigns to it. Devices report their
/// orientation as is (identity calibration) and acceleration in their own
/// frame. Sequences after the first are shifted to start one second after the
/// previous one ends.
inline ReplayScript make_replay_script(const ImuDataset& ds) {
  ReplayScript script;
  std::int64_t offset_us = 0;
  std::int64_t last_us = -1;
  std::optional<DeviceState> current;
  for (const ImuSequence& seq : ds.sequences) {
    if (seq.frames.empty()) continue;
    const auto first_us = std::llround(seq.frames.front().timestamp * 1e6);
    if (last_us >= 0) offset_us = last_us + 1'000'000 - first_us;
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      const ImuFrame& f = seq.frames[i];
      const std::int64_t t = std::llround(f.timestamp * 1e6) + offset_us;
      last_us = t;
      const LocationMask mask = seq.masks[i] & f.present_mask();
      const DeviceState placement = mask.empty() ? DeviceState{} : representative_device_state(mask);
      if (!current || !(*current == placement)) {
        script.schedule.emplace_back(t, placement);
        current = placement;
      }
      auto emit = [&](DeviceId id, std::optional<Location> loc) {
        if (!loc) return;
        const ImuSlot& slot = f[*loc];
        WireFrame w;
        w.device = id;
        w.timestamp_us = static_cast<std::uint64_t>(t);
        w.flags = id == DeviceId::Phone ? phone_flags(placement.phone) : 0;
        const Quat q = matrix_to_quat(slot.orient);
        w.orient = {static_cast<float>(q.w), static_cast<float>(q.x), static_cast<float>(q.y), static_cast<float>(q.z)};
        const RotMat sent = quat_to_matrix(Quat{w.orient[0], w.orient[1], w.orient[2], w.orient[3]});
        const Vec3 local = sent.transpose() * slot.accel;
        w.accel = {static_cast<float>(local(0)), static_cast<float>(local(1)), static_cast<float>(local(2))};
        script.frames.push_back(w);
      };
      emit(DeviceId::Phone, location_of(placement.phone));
      emit(DeviceId::Watch, location_of(placement.watch));
      emit(DeviceId::Earbuds, location_of(placement.earbuds));
    }
  }
  return script;
}

struct ReplayStats {
  std::size_t frames_sent = 0;
  std::size_t bytes_received = 0;
  double wall_seconds = 0.0;
};

/// Sends `frames` through a local stream socket, paced by their timestamps
/// divided by `speed` (speed <= 0 sends as fast as possible). Every chunk of
/// received bytes is handed to `on_bytes` on the calling thread.
inline ReplayStats replay_over_socket(std::span<const WireFrame> frames, double speed,
                                      const std::function<void(std::span<const std::uint8_t>)>& on_bytes) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw Error(std::string("socketpair failed: ") + std::strerror(errno));
  ReplayStats stats;
  const auto start = std::chrono::steady_clock::now();
  std::atomic<bool> send_failed{false};
  std::thread sender([&, out = fds[1]] {
    const std::uint64_t t0 = frames.empty() ? 0 : frames.front().timestamp_us;
    for (const WireFrame& f : frames) {
      if (speed > 0.0) {
        const auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                     std::chrono::duration<double, std::micro>(static_cast<double>(f.timestamp_us - t0) / speed));
        std::this_thread::sleep_until(due);
      }
      const WireBytes b = encode(f);
      std::size_t off = 0;
      while (off < b.size()) {
        const ssize_t n = ::send(out, b.data() + off, b.size() - off, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
          send_failed = true;
          break;
        }
        off += static_cast<std::size_t>(n);
      }
      if (send_failed) break;
    }
    ::shutdown(out, SHUT_WR);
  });
  std::array<std::uint8_t, 4096> buf{};
  std::exception_ptr failure;
  for (;;) {
    const ssize_t n = ::recv(fds[0], buf.data(), buf.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    stats.bytes_received += static_cast<std::size_t>(n);
    if (failure) continue;
    try {
      on_bytes(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
    } catch (...) {
      failure = std::current_exception();
    }
  }
  sender.join();
  ::close(fds[0]);
  ::close(fds[1]);
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.frames_sent = frames.size();
  if (failure) std::rethrow_exception(failure);
  if (send_failed) throw Error("replay socket closed early");
  return stats;
}

/// Replay `ds` through a socket into an aggregator driven by the recorded
/// placements; returns the emitted ticks.
inline std::vector<Tick> replay_dataset(const ImuDataset& ds, double speed, AggregatorConfig cfg = {},
                                        ReplayStats* stats = nullptr) {
  const ReplayScript script = make_replay_script(ds);
  cfg.clock = ClockMode::SenderTime;
  Aggregator agg(cfg);
  agg.set_placement_schedule(script.schedule);
  const ReplayStats s = replay_over_socket(script.frames, speed, [&](std::span<const std::uint8_t> b) { agg.push_bytes(b); });
  agg.finish();
  if (stats) *stats = s;
  return agg.take_ticks();
}

/// Same aggregation without the socket.
inline std::vector<Tick> aggregate_in_process(const ReplayScript& script, AggregatorConfig cfg = {}) {
  cfg.clock = ClockMode::SenderTime;
  Aggregator agg(cfg);
  agg.set_placement_schedule(script.schedule);
  for (const WireFrame& f : script.frames) agg.push(f);
  agg.finish();
  return agg.take_ticks();
}

}  // namespace sparsepose::stream
