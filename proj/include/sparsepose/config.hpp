#pragma once

// key=value configuration files. '#' starts a comment; blank lines are ignored.
//
//   embed_dim=64          hidden_dim=64        layers=2        bidirectional=1
//   batch=16              lr=0.003             window=125      epochs=80
//   max_steps=2000        seed=1
//   motion_threshold_g=0.02  motion_window_s=1  uwb_near_m=0.35
//   uwb_hysteresis_m=0.05    connectivity_timeout_s=2
//   refine_iterations=10     refine_step=0.05

#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "sparsepose/errors.hpp"
#include "sparsepose/net.hpp"
#include "sparsepose/refine.hpp"
#include "sparsepose/tracker.hpp"

namespace sparsepose {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in) {
    KeyValueConfig c;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("config line " + std::to_string(n) + ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw FormatError("config line " + std::to_string(n) + ": empty key");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<double> number(const std::string& key) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig("config key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  template <typename T>
  void read(const std::string& key, T& into) const {
    if (const auto v = number(key)) into = static_cast<T>(*v);
  }

  /// Keys present in the file that no reader asked for.
  std::set<std::string> unused() const {
    std::set<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.insert(k);
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

inline void apply(const KeyValueConfig& c, net::ModelConfig& m) {
  c.read("embed_dim", m.embed_dim);
  c.read("hidden_dim", m.hidden_dim);
  c.read("layers", m.layers);
  if (const auto b = c.number("bidirectional")) m.bidirectional = *b != 0.0;
  m.validate();
}

inline void apply(const KeyValueConfig& c, net::TrainConfig& t) {
  c.read("batch", t.batch);
  c.read("lr", t.lr);
  c.read("window", t.window);
  c.read("epochs", t.epochs);
  c.read("max_steps", t.max_steps);
  c.read("seed", t.seed);
  t.validate();
}

inline void apply(const KeyValueConfig& c, tracking::TrackerConfig& t) {
  c.read("motion_threshold_g", t.motion_threshold_g);
  c.read("motion_window_s", t.motion_window_s);
  c.read("uwb_near_m", t.uwb_near_m);
  c.read("uwb_hysteresis_m", t.uwb_hysteresis_m);
  c.read("connectivity_timeout_s", t.connectivity_timeout_s);
}

inline void apply(const KeyValueConfig& c, RefineConfig& r) {
  c.read("refine_iterations", r.iterations);
  c.read("refine_step", r.step);
}

}  // namespace sparsepose
