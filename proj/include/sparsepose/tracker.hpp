#pragma once

// Active device tracking: device events + user preferences -> DeviceState and
// LocationMask. The transition function is pure; Tracker wraps it.
//
// Phone placement, first matching rule wins:
//   phone absent                         -> Absent
//   screen on and proximity triggered    -> AtHead (on a call), or Hand when earbuds are in
//   screen off and proximity triggered   -> Pocket
//   screen on and phone moving           -> Hand
//   otherwise                            -> previous placement (Pocket on first sight)
// Side of hand/pocket: with the watch worn and a fresh UWB reading, near means
// the watch side and far the other side; otherwise the user's default.
// Watch worn iff connected and moving. Earbuds in ears iff connected, unless a
// scripted EarbudsInCase event put them in a pocket.

#include <cmath>
#include <deque>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sparsepose/combos.hpp"
#include "sparsepose/errors.hpp"

namespace sparsepose::tracking {

enum class Side { Left, Right };

inline const char* to_string(Side s) { return s == Side::Left ? "Left" : "Right"; }
inline Side opposite(Side s) { return s == Side::Left ? Side::Right : Side::Left; }

struct UserPrefs {
  Side default_pocket = Side::Right;
  Side default_hand = Side::Right;
  Side watch_wrist = Side::Left;
};

struct TrackerConfig {
  double motion_threshold_g = 0.02;   // rolling RMS of user-acceleration magnitude
  double motion_window_s = 1.0;
  double uwb_near_m = 0.35;
  double uwb_hysteresis_m = 0.05;     // total band width around uwb_near_m
  double connectivity_timeout_s = 2.0;
};

enum class EventKind {
  ScreenOn,
  ScreenOff,
  ProximityTriggered,
  ProximityClear,
  MotionMagnitude,  // value in g
  UwbDistance,      // value in meters
  WatchConnected,
  WatchDisconnected,
  EarbudsConnected,
  EarbudsDisconnected,
  EarbudsInCase,    // side selects the pocket
  PhonePresent,
  PhoneAbsent,
};

enum class Source { Phone, Watch, Earbuds };

struct DeviceEvent {
  double t = 0.0;
  EventKind kind = EventKind::ScreenOn;
  double value = 0.0;
  Source source = Source::Phone;
  Side side = Side::Left;
};

struct TrackerState {
  double now = -std::numeric_limits<double>::infinity();
  bool phone_present = true;
  bool screen_on = false;
  bool proximity = false;
  bool watch_connected = false;
  bool earbuds_connected = false;
  std::optional<Side> earbuds_case;
  // (timestamp, magnitude in g) samples within the motion window of the newest one
  std::deque<std::pair<double, double>> phone_motion;
  std::deque<std::pair<double, double>> watch_motion;
  std::optional<double> uwb_time;
  bool uwb_near = false;

  DeviceState devices;
  LocationMask mask;
};

namespace detail {

inline void add_motion(std::deque<std::pair<double, double>>& q, double t, double g, double window) {
  q.emplace_back(t, g);
  while (!q.empty() && q.front().first <= t - window) q.pop_front();
}

inline bool moving(const std::deque<std::pair<double, double>>& q, double now, const TrackerConfig& cfg) {
  if (q.empty() || now - q.back().first > cfg.connectivity_timeout_s) return false;
  double s = 0.0;
  for (const auto& [t, g] : q) s += g * g;
  return std::sqrt(s / static_cast<double>(q.size())) > cfg.motion_threshold_g;
}

inline std::optional<Side> uwb_side(const TrackerState& s, const UserPrefs& prefs, bool watch_worn,
                                    const TrackerConfig& cfg) {
  if (!watch_worn || !s.uwb_time || s.now - *s.uwb_time > cfg.connectivity_timeout_s) return std::nullopt;
  return s.uwb_near ? prefs.watch_wrist : opposite(prefs.watch_wrist);
}

inline PhonePlace hand(Side s) { return s == Side::Left ? PhonePlace::LeftHand : PhonePlace::RightHand; }
inline PhonePlace pocket(Side s) { return s == Side::Left ? PhonePlace::LeftPocket : PhonePlace::RightPocket; }

}  // namespace detail

/// Pure transition. Events of unknown meaning for the state are ignored.
inline TrackerState step(TrackerState s, const DeviceEvent& e, const UserPrefs& prefs, const TrackerConfig& cfg = {}) {
  s.now = std::max(s.now, e.t);
  switch (e.kind) {
    case EventKind::ScreenOn: s.screen_on = true; break;
    case EventKind::ScreenOff: s.screen_on = false; break;
    case EventKind::ProximityTriggered: s.proximity = true; break;
    case EventKind::ProximityClear: s.proximity = false; break;
    case EventKind::MotionMagnitude:
      if (e.source == Source::Phone) detail::add_motion(s.phone_motion, e.t, e.value, cfg.motion_window_s);
      if (e.source == Source::Watch) detail::add_motion(s.watch_motion, e.t, e.value, cfg.motion_window_s);
      break;
    case EventKind::UwbDistance: {
      const double half = cfg.uwb_hysteresis_m / 2.0;
      if (!s.uwb_time) {
        s.uwb_near = e.value < cfg.uwb_near_m;
      } else if (e.value < cfg.uwb_near_m - half) {
        s.uwb_near = true;
      } else if (e.value > cfg.uwb_near_m + half) {
        s.uwb_near = false;
      }
      s.uwb_time = e.t;
      break;
    }
    case EventKind::WatchConnected: s.watch_connected = true; break;
    case EventKind::WatchDisconnected:
      s.watch_connected = false;
      s.watch_motion.clear();
      s.uwb_time.reset();
      break;
    case EventKind::EarbudsConnected:
      s.earbuds_connected = true;
      s.earbuds_case.reset();
      break;
    case EventKind::EarbudsDisconnected:
      s.earbuds_connected = false;
      s.earbuds_case.reset();
      break;
    case EventKind::EarbudsInCase: s.earbuds_case = e.side; break;
    case EventKind::PhonePresent: s.phone_present = true; break;
    case EventKind::PhoneAbsent:
      s.phone_present = false;
      s.phone_motion.clear();
      break;
  }

  DeviceState d;
  const bool watch_worn = s.watch_connected && detail::moving(s.watch_motion, s.now, cfg);
  d.watch = !watch_worn ? WatchPlace::Absent
                        : (prefs.watch_wrist == Side::Left ? WatchPlace::LeftWrist : WatchPlace::RightWrist);
  if (s.earbuds_case) {
    d.earbuds = *s.earbuds_case == Side::Left ? EarbudsPlace::CaseLeftPocket : EarbudsPlace::CaseRightPocket;
  } else if (s.earbuds_connected) {
    d.earbuds = EarbudsPlace::InEars;
  }
  const std::optional<Side> near_side = detail::uwb_side(s, prefs, watch_worn, cfg);
  const Side hand_side = near_side.value_or(prefs.default_hand);
  const Side pocket_side = near_side.value_or(prefs.default_pocket);
  if (!s.phone_present) {
    d.phone = PhonePlace::Absent;
  } else if (s.screen_on && s.proximity) {
    d.phone = d.earbuds == EarbudsPlace::InEars ? detail::hand(hand_side) : PhonePlace::AtHead;
  } else if (!s.screen_on && s.proximity) {
    d.phone = detail::pocket(pocket_side);
  } else if (s.screen_on && detail::moving(s.phone_motion, s.now, cfg)) {
    d.phone = detail::hand(hand_side);
  } else if (s.devices.phone != PhonePlace::Absent) {
    d.phone = s.devices.phone;
  } else {
    d.phone = detail::pocket(pocket_side);
  }
  // A held-over AtHead cannot coexist with earbuds in the ears.
  if (d.phone == PhonePlace::AtHead && d.earbuds == EarbudsPlace::InEars) d.phone = detail::hand(hand_side);
  s.devices = d;
  s.mask = d.all_absent() ? LocationMask{} : to_location_mask(d);
  return s;
}

class Tracker {
 public:
  explicit Tracker(UserPrefs prefs, TrackerConfig cfg = {}) : prefs_(prefs), cfg_(cfg) {}

  const TrackerState& push(const DeviceEvent& e) {
    state_ = step(state_, e, prefs_, cfg_);
    return state_;
  }
  const TrackerState& state() const { return state_; }
  const UserPrefs& prefs() const { return prefs_; }

 private:
  UserPrefs prefs_;
  TrackerConfig cfg_;
  TrackerState state_;
};

// ---------------------------------------------------------------------------
// Scenario text: one event per line, `t=<seconds> [source:]<Event> [value]`.
// Blank lines and lines starting with '#' are skipped. A `prefs` line sets
// the user preferences: `prefs pocket=Right hand=Right watch=Left`.
// ---------------------------------------------------------------------------

struct Scenario {
  UserPrefs prefs;
  std::vector<DeviceEvent> events;
};

namespace detail {

inline Side parse_side(const std::string& s, int line) {
  if (s == "Left" || s == "left") return Side::Left;
  if (s == "Right" || s == "right") return Side::Right;
  throw FormatError("line " + std::to_string(line) + ": expected Left or Right, got '" + s + "'");
}

inline EventKind parse_event_kind(const std::string& s, int line) {
  static const std::pair<const char*, EventKind> table[] = {
      {"ScreenOn", EventKind::ScreenOn},
      {"ScreenOff", EventKind::ScreenOff},
      {"ProximityTriggered", EventKind::ProximityTriggered},
      {"ProximityClear", EventKind::ProximityClear},
      {"MotionMagnitude", EventKind::MotionMagnitude},
      {"UwbDistance", EventKind::UwbDistance},
      {"WatchConnected", EventKind::WatchConnected},
      {"WatchDisconnected", EventKind::WatchDisconnected},
      {"EarbudsConnected", EventKind::EarbudsConnected},
      {"EarbudsDisconnected", EventKind::EarbudsDisconnected},
      {"EarbudsInCase", EventKind::EarbudsInCase},
      {"PhonePresent", EventKind::PhonePresent},
      {"PhoneAbsent", EventKind::PhoneAbsent},
  };
  for (const auto& [name, kind] : table)
    if (s == name) return kind;
  throw FormatError("line " + std::to_string(line) + ": unknown event '" + s + "'");
}

inline Source parse_source(const std::string& s, int line) {
  if (s == "phone") return Source::Phone;
  if (s == "watch") return Source::Watch;
  if (s == "earbuds") return Source::Earbuds;
  throw FormatError("line " + std::to_string(line) + ": unknown source '" + s + "'");
}

}  // namespace detail

inline Scenario parse_scenario(std::istream& in) {
  Scenario sc;
  std::string text;
  int line = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  while (std::getline(in, text)) {
    ++line;
    const auto first = text.find_first_not_of(" \t\r");
    if (first == std::string::npos || text[first] == '#') continue;
    std::istringstream ls(text);
    std::string head;
    ls >> head;
    if (head == "prefs") {
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("line " + std::to_string(line) + ": expected key=value");
        const std::string key = kv.substr(0, eq);
        const Side side = detail::parse_side(kv.substr(eq + 1), line);
        if (key == "pocket") sc.prefs.default_pocket = side;
        else if (key == "hand") sc.prefs.default_hand = side;
        else if (key == "watch") sc.prefs.watch_wrist = side;
        else throw FormatError("line " + std::to_string(line) + ": unknown preference '" + key + "'");
      }
      continue;
    }
    if (head.rfind("t=", 0) != 0) throw FormatError("line " + std::to_string(line) + ": expected t=<seconds>");
    DeviceEvent e;
    try {
      std::size_t used = 0;
      e.t = std::stod(head.substr(2), &used);
      if (used != head.size() - 2) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(line) + ": bad timestamp '" + head + "'");
    }
    if (e.t < last_t) throw FormatError("line " + std::to_string(line) + ": timestamps must not decrease");
    last_t = e.t;
    std::string ev;
    if (!(ls >> ev)) throw FormatError("line " + std::to_string(line) + ": missing event");
    if (const auto colon = ev.find(':'); colon != std::string::npos) {
      e.source = detail::parse_source(ev.substr(0, colon), line);
      ev = ev.substr(colon + 1);
    }
    e.kind = detail::parse_event_kind(ev, line);
    std::string value;
    const bool has_value = static_cast<bool>(ls >> value);
    switch (e.kind) {
      case EventKind::MotionMagnitude:
      case EventKind::UwbDistance:
        if (!has_value) throw FormatError("line " + std::to_string(line) + ": " + ev + " needs a value");
        try {
          e.value = std::stod(value);
        } catch (const std::exception&) {
          throw FormatError("line " + std::to_string(line) + ": bad value '" + value + "'");
        }
        break;
      case EventKind::EarbudsInCase:
        if (!has_value) throw FormatError("line " + std::to_string(line) + ": EarbudsInCase needs Left or Right");
        e.side = detail::parse_side(value, line);
        break;
      default:
        if (has_value) throw FormatError("line " + std::to_string(line) + ": " + ev + " takes no value");
    }
    sc.events.push_back(e);
  }
  return sc;
}

/// State after a group of events sharing one timestamp, emitted when it differs
/// from the state before the group.
struct Transition {
  double t = 0.0;
  DeviceState devices;
  LocationMask mask;

  std::string to_string() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "t=" << t << ' ' << devices.to_string() << " mask=" << mask.binary() << ' ' << mask.to_string();
    return os.str();
  }
};

inline std::vector<Transition> run_scenario(const Scenario& sc, const TrackerConfig& cfg = {}) {
  std::vector<Transition> out;
  TrackerState s;
  for (std::size_t i = 0; i < sc.events.size();) {
    const DeviceState before = s.devices;
    const double t = sc.events[i].t;
    for (; i < sc.events.size() && sc.events[i].t == t; ++i) s = step(s, sc.events[i], sc.prefs, cfg);
    if (!(s.devices == before)) out.push_back({t, s.devices, s.mask});
  }
  return out;
}

}  // namespace sparsepose::tracking
