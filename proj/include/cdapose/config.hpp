#pragma once

// JSON (de)serialisation of run configuration, dotted-path overrides and
// config hashing.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <string>

#include "cdapose/batch.hpp"
#include "cdapose/datasets.hpp"
#include "cdapose/losses.hpp"
#include "cdapose/network.hpp"

namespace cdapose {

namespace config_detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace config_detail

inline json to_json(const ModelConfig& c) {
  return {{"input_height", c.input_height},   {"input_width", c.input_width},
          {"input_channels", c.input_channels}, {"stage_channels", c.stage_channels},
          {"use_se", c.use_se},               {"se_reduction", c.se_reduction},
          {"use_dan", c.use_dan},             {"head_channels", c.head_channels},
          {"num_keypoints", c.num_keypoints}, {"disc_hidden", c.disc_hidden},
          {"output_stride", c.output_stride}, {"disc_after_dan", c.disc_after_dan}};
}

inline ModelConfig model_config_from_json(const json& j) {
  using namespace config_detail;
  const std::string w = "model";
  check_keys(j, {"input_height", "input_width", "input_channels", "stage_channels", "use_se", "se_reduction", "use_dan",
                 "head_channels", "num_keypoints", "disc_hidden", "output_stride", "disc_after_dan"},
             w);
  ModelConfig c;
  read(j, "input_height", c.input_height, w);
  read(j, "input_width", c.input_width, w);
  read(j, "input_channels", c.input_channels, w);
  read(j, "stage_channels", c.stage_channels, w);
  read(j, "use_se", c.use_se, w);
  read(j, "se_reduction", c.se_reduction, w);
  read(j, "use_dan", c.use_dan, w);
  read(j, "head_channels", c.head_channels, w);
  read(j, "num_keypoints", c.num_keypoints, w);
  read(j, "disc_hidden", c.disc_hidden, w);
  read(j, "output_stride", c.output_stride, w);
  read(j, "disc_after_dan", c.disc_after_dan, w);
  c.validate();
  return c;
}

inline json to_json(const LossConfig& c) {
  return {{"w1", c.w1}, {"w2", c.w2}, {"alpha", c.alpha}, {"beta", c.beta}};
}

inline LossConfig loss_config_from_json(const json& j) {
  using namespace config_detail;
  check_keys(j, {"w1", "w2", "alpha", "beta"}, "loss");
  LossConfig c;
  read(j, "w1", c.w1, "loss");
  read(j, "w2", c.w2, "loss");
  read(j, "alpha", c.alpha, "loss");
  read(j, "beta", c.beta, "loss");
  return c;
}

inline json to_json(const TargetEncoding& e) {
  return {{"grid_h", e.grid_h}, {"grid_w", e.grid_w}, {"sigma", e.sigma}, {"stride", e.stride}};
}

inline json to_json(const DisturbanceParams& d) {
  return {{"noise_std", d.noise_std}, {"max_shift_fraction", d.max_shift_fraction}};
}

inline DisturbanceParams disturbance_from_json(const json& j) {
  using namespace config_detail;
  check_keys(j, {"noise_std", "max_shift_fraction"}, "disturbance");
  DisturbanceParams d;
  read(j, "noise_std", d.noise_std, "disturbance");
  read(j, "max_shift_fraction", d.max_shift_fraction, "disturbance");
  if (d.noise_std < 0 || d.max_shift_fraction < 0 || d.max_shift_fraction >= 0.5)
    throw ConfigError("disturbance: noise_std must be >= 0 and max_shift_fraction in [0, 0.5)");
  return d;
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + key + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json load_config_file(const std::filesystem::path& path) {
  const json doc = detail::parse_json_text(detail::read_text(path), path.string());
  if (!doc.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  return doc;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Hash of the canonical (key-sorted, compact) serialisation.
inline std::string config_hash(const json& doc) { return hex64(fnv1a(doc.dump())); }

}  // namespace cdapose
