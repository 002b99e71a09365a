#pragma once

// Device placements (phone, watch, earbuds) and the body-location masks they
// induce.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparsepose/errors.hpp"

namespace sparsepose {

enum class Location : std::uint8_t { LeftWrist = 0, RightWrist = 1, LeftPocket = 2, RightPocket = 3, Head = 4 };

constexpr int kNumLocations = 5;
constexpr std::array<Location, kNumLocations> kAllLocations = {Location::LeftWrist, Location::RightWrist,
                                                              Location::LeftPocket, Location::RightPocket,
                                                              Location::Head};

template <typename T>
using LocationArray = std::array<T, kNumLocations>;

constexpr int index_of(Location loc) { return static_cast<int>(loc); }

inline const char* to_string(Location loc) {
  switch (loc) {
    case Location::LeftWrist: return "LeftWrist";
    case Location::RightWrist: return "RightWrist";
    case Location::LeftPocket: return "LeftPocket";
    case Location::RightPocket: return "RightPocket";
    case Location::Head: return "Head";
  }
  return "?";
}

/// Subset of the five canonical locations. Serialized as a 5-bit id where bit i
/// is location i (so 0b10000 is head only).
class LocationMask {
 public:
  constexpr LocationMask() = default;
  static constexpr LocationMask from_id(std::uint8_t id) {
    if (id > 0x1F) throw InvalidState("location mask id out of range");
    LocationMask m;
    m.bits_ = id;
    return m;
  }
  static LocationMask of(std::initializer_list<Location> locs) {
    LocationMask m;
    for (Location l : locs) m.set(l);
    return m;
  }
  static constexpr LocationMask all() { return from_id(0x1F); }

  constexpr bool contains(Location loc) const { return (bits_ >> index_of(loc)) & 1U; }
  constexpr void set(Location loc, bool on = true) {
    const auto bit = static_cast<std::uint8_t>(1U << index_of(loc));
    bits_ = on ? static_cast<std::uint8_t>(bits_ | bit) : static_cast<std::uint8_t>(bits_ & ~bit);
  }
  constexpr int count() const { return std::popcount(bits_); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t id() const { return bits_; }

  constexpr LocationMask operator&(LocationMask o) const { return from_id(bits_ & o.bits_); }
  constexpr LocationMask operator|(LocationMask o) const { return from_id(bits_ | o.bits_); }
  constexpr auto operator<=>(const LocationMask&) const = default;

  std::string to_string() const {
    std::string s = "{";
    for (Location l : kAllLocations) {
      if (!contains(l)) continue;
      if (s.size() > 1) s += ',';
      s += sparsepose::to_string(l);
    }
    return s + "}";
  }

  std::string binary() const {
    std::string s = "0b";
    for (int i = kNumLocations - 1; i >= 0; --i) s += ((bits_ >> i) & 1U) ? '1' : '0';
    return s;
  }

 private:
  std::uint8_t bits_ = 0;
};

enum class PhonePlace : std::uint8_t { LeftPocket, RightPocket, LeftHand, RightHand, AtHead, Absent };
enum class WatchPlace : std::uint8_t { LeftWrist, RightWrist, Absent };
enum class EarbudsPlace : std::uint8_t { InEars, CaseLeftPocket, CaseRightPocket, Absent };

inline const char* to_string(PhonePlace p) {
  switch (p) {
    case PhonePlace::LeftPocket: return "LeftPocket";
    case PhonePlace::RightPocket: return "RightPocket";
    case PhonePlace::LeftHand: return "LeftHand";
    case PhonePlace::RightHand: return "RightHand";
    case PhonePlace::AtHead: return "AtHead";
    case PhonePlace::Absent: return "Absent";
  }
  return "?";
}
inline const char* to_string(WatchPlace p) {
  switch (p) {
    case WatchPlace::LeftWrist: return "LeftWrist";
    case WatchPlace::RightWrist: return "RightWrist";
    case WatchPlace::Absent: return "Absent";
  }
  return "?";
}
inline const char* to_string(EarbudsPlace p) {
  switch (p) {
    case EarbudsPlace::InEars: return "InEars";
    case EarbudsPlace::CaseLeftPocket: return "CaseLeftPocket";
    case EarbudsPlace::CaseRightPocket: return "CaseRightPocket";
    case EarbudsPlace::Absent: return "Absent";
  }
  return "?";
}

struct DeviceState {
  PhonePlace phone = PhonePlace::Absent;
  WatchPlace watch = WatchPlace::Absent;
  EarbudsPlace earbuds = EarbudsPlace::Absent;

  bool all_absent() const {
    return phone == PhonePlace::Absent && watch == WatchPlace::Absent && earbuds == EarbudsPlace::Absent;
  }
  bool valid() const { return !all_absent() && !(earbuds == EarbudsPlace::InEars && phone == PhonePlace::AtHead); }
  int device_count() const {
    return (phone != PhonePlace::Absent) + (watch != WatchPlace::Absent) + (earbuds != EarbudsPlace::Absent);
  }
  std::string to_string() const {
    return std::string("phone=") + sparsepose::to_string(phone) + " watch=" + sparsepose::to_string(watch) +
           " earbuds=" + sparsepose::to_string(earbuds);
  }
  friend bool operator==(const DeviceState&, const DeviceState&) = default;
};

inline std::optional<Location> location_of(PhonePlace p) {
  switch (p) {
    case PhonePlace::LeftPocket: return Location::LeftPocket;
    case PhonePlace::RightPocket: return Location::RightPocket;
    case PhonePlace::LeftHand: return Location::LeftWrist;
    case PhonePlace::RightHand: return Location::RightWrist;
    case PhonePlace::AtHead: return Location::Head;
    case PhonePlace::Absent: return std::nullopt;
  }
  return std::nullopt;
}
inline std::optional<Location> location_of(WatchPlace p) {
  switch (p) {
    case WatchPlace::LeftWrist: return Location::LeftWrist;
    case WatchPlace::RightWrist: return Location::RightWrist;
    case WatchPlace::Absent: return std::nullopt;
  }
  return std::nullopt;
}
inline std::optional<Location> location_of(EarbudsPlace p) {
  switch (p) {
    case EarbudsPlace::InEars: return Location::Head;
    case EarbudsPlace::CaseLeftPocket: return Location::LeftPocket;
    case EarbudsPlace::CaseRightPocket: return Location::RightPocket;
    case EarbudsPlace::Absent: return std::nullopt;
  }
  return std::nullopt;
}

/// Devices sharing a body point collapse into one location.
inline LocationMask to_location_mask(const DeviceState& s) {
  if (!s.valid()) throw InvalidState("device state " + s.to_string() + " is not a valid arrangement");
  LocationMask m;
  if (auto l = location_of(s.phone)) m.set(*l);
  if (auto l = location_of(s.watch)) m.set(*l);
  if (auto l = location_of(s.earbuds)) m.set(*l);
  return m;
}

constexpr std::array<PhonePlace, 6> kAllPhonePlaces = {PhonePlace::LeftPocket, PhonePlace::RightPocket,
                                                       PhonePlace::LeftHand,   PhonePlace::RightHand,
                                                       PhonePlace::AtHead,     PhonePlace::Absent};
constexpr std::array<WatchPlace, 3> kAllWatchPlaces = {WatchPlace::LeftWrist, WatchPlace::RightWrist,
                                                       WatchPlace::Absent};
constexpr std::array<EarbudsPlace, 4> kAllEarbudsPlaces = {EarbudsPlace::InEars, EarbudsPlace::CaseLeftPocket,
                                                           EarbudsPlace::CaseRightPocket, EarbudsPlace::Absent};

/// Full 6 x 3 x 4 product, including the excluded arrangements.
inline std::vector<DeviceState> enumerate_raw_device_states() {
  std::vector<DeviceState> out;
  for (PhonePlace p : kAllPhonePlaces)
    for (WatchPlace w : kAllWatchPlaces)
      for (EarbudsPlace e : kAllEarbudsPlaces) out.push_back({p, w, e});
  return out;
}

/// The 68 supported arrangements (phone-at-head with earbuds in, and nothing
/// carried, are excluded).
inline std::vector<DeviceState> enumerate_device_states() {
  auto raw = enumerate_raw_device_states();
  std::erase_if(raw, [](const DeviceState& s) { return !s.valid(); });
  return raw;
}

/// Canonical order: by cardinality, then by id.
inline bool canonical_less(LocationMask a, LocationMask b) {
  return a.count() != b.count() ? a.count() < b.count() : a.id() < b.id();
}

/// The 24 distinct location sets reachable from the supported arrangements.
inline std::vector<LocationMask> enumerate_location_sets() {
  std::vector<LocationMask> out;
  for (const DeviceState& s : enumerate_device_states()) {
    const LocationMask m = to_location_mask(s);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

inline bool is_canonical_location_set(LocationMask m) {
  static const auto sets = enumerate_location_sets();
  return std::find(sets.begin(), sets.end(), m) != sets.end();
}

/// An arrangement realizing `mask` with one device per location (no merged
/// body points). Used to turn a recorded location stream back into devices.
inline DeviceState representative_device_state(LocationMask mask) {
  for (const DeviceState& s : enumerate_device_states()) {
    if (s.device_count() == mask.count() && to_location_mask(s) == mask) return s;
  }
  throw InvalidState("no device arrangement produces mask " + mask.to_string());
}

}  // namespace sparsepose
