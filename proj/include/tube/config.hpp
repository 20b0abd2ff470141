// SPDX-License-Identifier: MIT
#pragma once

// Configuration files: structured-text descriptions of the scatterer layout,
// channel kind, horizon-audit budget, and optional run defaults.  The format
// is JSON with // and /* */ comments allowed.  Loading is shape checking
// only; geometric soundness is the business of validate_configuration and
// certify_config.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tube/errors.hpp"
#include "tube/geometry.hpp"
#include "tube/serialize.hpp"

namespace tube {

// Everything a config file can say.  Command-line flags override the
// optional run defaults.
struct LoadedConfig {
  TubeConfig tube;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> injection;
  std::optional<double> rate;
};

namespace detail {

// Reject unknown keys outright: a typo that silently falls back to a default
// would change physics without a trace.
inline void allow_keys(const nlohmann::json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) {
      throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
    }
  }
}

inline double config_number(const nlohmann::json& obj, const std::string& where,
                            const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_number()) {
    throw ConfigError(where + ": missing or non-numeric \"" + key + "\"");
  }
  return obj.at(key).get<double>();
}

inline long config_integer(const nlohmann::json& obj, const std::string& where,
                           const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_number_integer()) {
    throw ConfigError(where + ": \"" + key + "\" must be an integer");
  }
  return obj.at(key).get<long>();
}

}  // namespace detail

inline LoadedConfig parse_config_text(const std::string& text,
                                      const std::string& origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/true,
                                /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError(origin + ": top level must be an object");
  }
  detail::allow_keys(doc, origin, {"disks", "tube", "horizon", "margin",
                                   "seed", "injection", "rate"});

  LoadedConfig out;

  if (!doc.contains("disks") || !doc["disks"].is_array() ||
      doc["disks"].empty()) {
    throw ConfigError(origin + ": \"disks\" must be a non-empty array");
  }
  for (const auto& d : doc["disks"]) {
    if (!d.is_object()) {
      throw ConfigError(origin + ": each disk must be an object");
    }
    detail::allow_keys(d, origin + ": disk", {"center", "radius"});
    if (!d.contains("center") || !d["center"].is_array() ||
        d["center"].size() != 2 || !d["center"][0].is_number() ||
        !d["center"][1].is_number()) {
      throw ConfigError(origin + ": disk \"center\" must be [x, y]");
    }
    ScattererDisk disk;
    disk.center = {d["center"][0].get<double>(), d["center"][1].get<double>()};
    disk.radius = detail::config_number(d, origin + ": disk", "radius");
    out.tube.disks.push_back(disk);
  }

  if (!doc.contains("tube") || !doc["tube"].is_object()) {
    throw ConfigError(origin + ": \"tube\" must be an object");
  }
  const auto& tube = doc["tube"];
  detail::allow_keys(tube, origin + ": tube", {"kind", "length"});
  if (!tube.contains("kind") || !tube["kind"].is_string()) {
    throw ConfigError(origin + ": tube \"kind\" must be a string");
  }
  const std::string kind = tube["kind"].get<std::string>();
  if (kind == "finite") {
    out.tube.kind = TubeKind::Finite;
  } else if (kind == "semi_infinite") {
    out.tube.kind = TubeKind::SemiInfinite;
  } else if (kind == "bi_infinite") {
    out.tube.kind = TubeKind::BiInfinite;
  } else {
    throw ConfigError(origin + ": unknown tube kind \"" + kind + "\"");
  }
  if (out.tube.kind == TubeKind::Finite) {
    out.tube.length = detail::config_integer(tube, origin + ": tube", "length");
  } else if (tube.contains("length")) {
    throw ConfigError(origin + ": \"length\" only applies to finite tubes");
  }

  if (doc.contains("horizon")) {
    const auto& h = doc["horizon"];
    if (!h.is_object()) {
      throw ConfigError(origin + ": \"horizon\" must be an object");
    }
    detail::allow_keys(h, origin + ": horizon",
                       {"max_denominator", "mc_trajectories", "mc_steps"});
    if (h.contains("max_denominator")) {
      out.tube.audit.max_denominator = static_cast<int>(
          detail::config_integer(h, origin + ": horizon", "max_denominator"));
    }
    if (h.contains("mc_trajectories")) {
      out.tube.audit.mc_trajectories =
          detail::config_integer(h, origin + ": horizon", "mc_trajectories");
    }
    if (h.contains("mc_steps")) {
      out.tube.audit.mc_steps =
          detail::config_integer(h, origin + ": horizon", "mc_steps");
    }
  }

  if (doc.contains("margin")) {
    out.tube.margin = detail::config_number(doc, origin, "margin");
  }
  if (doc.contains("seed")) {
    // Non-negative integer literals parse as unsigned; anything else (sign,
    // fraction, string) is rejected.
    if (!doc["seed"].is_number_unsigned()) {
      throw ConfigError(origin + ": \"seed\" must be a non-negative integer");
    }
    out.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("injection")) {
    if (!doc["injection"].is_string()) {
      throw ConfigError(origin + ": \"injection\" must be a string");
    }
    out.injection = doc["injection"].get<std::string>();
  }
  if (doc.contains("rate")) {
    out.rate = detail::config_number(doc, origin, "rate");
  }
  return out;
}

inline LoadedConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ConfigError("cannot read config file " + path);
  }
  std::ostringstream text;
  text << is.rdbuf();
  return parse_config_text(text.str(), path);
}

// Stable identity of a configuration: geometry, channel kind, margin, and
// audit budget, hashed from a fixed binary encoding so file formatting and
// comments cannot matter.  The derived free-flight bounds are excluded —
// certifying a configuration must not change which runs it can resume.
inline std::uint64_t config_fingerprint(const TubeConfig& c) {
  BinaryWriter w;
  w.put_u64(0x636f6e6669675631ULL);
  w.put_u64(c.disks.size());
  for (const auto& d : c.disks) {
    w.put_f64(d.center.x);
    w.put_f64(d.center.y);
    w.put_f64(d.radius);
  }
  w.put_u64(static_cast<std::uint64_t>(c.kind));
  w.put_i64(c.kind == TubeKind::Finite ? c.length : 0);
  w.put_f64(c.margin);
  w.put_i64(c.audit.max_denominator);
  w.put_i64(c.audit.mc_trajectories);
  w.put_i64(c.audit.mc_steps);
  return fnv1a_64(w.bytes());
}

}  // namespace tube
