#pragma once

// Training configuration: a flat "key = value" text file. Blank lines and
// '#' comments are ignored; unknown keys are rejected with the list of valid
// ones.

#include <charconv>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "uception/error.hpp"
#include "uception/model.hpp"

namespace uception {

struct TrainConfig {
  std::string arch = "uception";  // or "unet3d"
  std::size_t depth = 10;
  std::size_t levels = 3;
  double dropout = 0.25;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  std::size_t cycle_epochs = 20;
  std::size_t epochs = 40;
  std::size_t batch = 2;
  std::size_t patch = 64;
  std::uint64_t seed = 0;
  double smooth = 1.0;
  double min_fg_frac = 0.0;
  std::size_t snapshots = 5;
  std::size_t precision = 32;  // bits per real: 32 or 64
  std::size_t steps = 0;       // optimizer steps per epoch; 0 = one per training volume
  double threshold = 0.9;      // validation report threshold

  bool operator==(const TrainConfig&) const = default;
};

namespace detail {

struct ConfigField {
  std::string_view key;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline std::string show(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

[[noreturn]] inline void bad_config(std::string_view key, std::string_view value,
                                    std::string_view expected) {
  throw Error(ErrorCode::Config, std::string(key),
              "invalid value '" + std::string(value) + "' (expected " + std::string(expected) + ")");
}

template <class U>
U parse_config_number(std::string_view key, std::string_view value) {
  U out{};
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || p != end) {
    bad_config(key, value, std::is_integral_v<U> ? "a non-negative integer" : "a number");
  }
  if constexpr (std::is_floating_point_v<U>) {
    if (!std::isfinite(out)) bad_config(key, value, "a finite number");
  }
  return out;
}

template <class U>
ConfigField number_field(std::string_view key, U TrainConfig::*member) {
  return {key,
          [key, member](TrainConfig& c, std::string_view v) {
            c.*member = parse_config_number<U>(key, v);
          },
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<U>) {
              return show(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"arch",
       [](TrainConfig& c, std::string_view v) {
         if (v != "uception" && v != "unet3d") bad_config("arch", v, "uception or unet3d");
         c.arch = std::string(v);
       },
       [](const TrainConfig& c) { return c.arch; }},
      number_field("depth", &TrainConfig::depth),
      number_field("levels", &TrainConfig::levels),
      number_field("dropout", &TrainConfig::dropout),
      number_field("lr_max", &TrainConfig::lr_max),
      number_field("lr_min", &TrainConfig::lr_min),
      number_field("cycle_epochs", &TrainConfig::cycle_epochs),
      number_field("epochs", &TrainConfig::epochs),
      number_field("batch", &TrainConfig::batch),
      number_field("patch", &TrainConfig::patch),
      number_field("seed", &TrainConfig::seed),
      number_field("smooth", &TrainConfig::smooth),
      number_field("min_fg_frac", &TrainConfig::min_fg_frac),
      number_field("snapshots", &TrainConfig::snapshots),
      number_field("precision", &TrainConfig::precision),
      number_field("steps", &TrainConfig::steps),
      number_field("threshold", &TrainConfig::threshold),
  };
  return fields;
}

inline std::string_view trim_config(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::config_fields()) keys.emplace_back(f.key);
  return keys;
}

inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(cfg, detail::trim_config(value));
      return;
    }
  }
  std::string valid;
  for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
  throw Error(ErrorCode::Config, std::string(key), "unknown key; valid keys are: " + valid);
}

inline void validate(const TrainConfig& c) {
  auto bad = [](const char* key, const char* why) { throw Error(ErrorCode::Config, key, why); };
  if (c.depth == 0) bad("depth", "must be positive");
  if (c.levels == 0 || c.levels > 6) bad("levels", "must lie in [1, 6]");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) bad("dropout", "must lie in [0, 1)");
  if (!(c.lr_max > 0.0)) bad("lr_max", "must be positive");
  if (!(c.lr_min >= 0.0 && c.lr_min <= c.lr_max)) bad("lr_min", "must lie in [0, lr_max]");
  if (c.cycle_epochs == 0) bad("cycle_epochs", "must be positive");
  if (c.epochs == 0) bad("epochs", "must be positive");
  if (c.batch == 0) bad("batch", "must be positive");
  if (c.patch == 0 || c.patch % (std::size_t{1} << c.levels) != 0) {
    bad("patch", "must be a positive multiple of 2^levels");
  }
  if (!(c.smooth >= 0.0)) bad("smooth", "must be >= 0");
  if (!(c.min_fg_frac >= 0.0 && c.min_fg_frac <= 1.0)) bad("min_fg_frac", "must lie in [0, 1]");
  if (c.snapshots == 0) bad("snapshots", "must be positive");
  if (c.precision != 32 && c.precision != 64) bad("precision", "must be 32 or 64");
  if (!(c.threshold >= 0.0)) bad("threshold", "must be >= 0");
}

inline TrainConfig parse_config(std::string_view text, TrainConfig cfg = {}) {
  std::vector<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim_config(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::Config, "line " + std::to_string(line_no), "expected 'key = value'");
    }
    const auto key = detail::trim_config(line.substr(0, eq));
    for (const auto& s : seen)
      if (s == key) throw Error(ErrorCode::Config, std::string(key), "key given twice");
    set_config_value(cfg, key, line.substr(eq + 1));
    seen.emplace_back(key);
  }
  validate(cfg);
  return cfg;
}

inline std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) {
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

inline ModelCfg model_config(const TrainConfig& c) {
  ModelCfg m;
  m.arch = c.arch == "unet3d" ? Arch::UNet3d : Arch::Uception;
  m.depth = c.depth;
  m.levels = c.levels;
  m.dropout_rate = c.dropout;
  m.init_seed = c.seed;
  return m;
}

}  // namespace uception
