#pragma once

// Model checkpoints as JSON. Parameters are stored as doubles, which
// round-trips float values exactly.

#include <filesystem>
#include <fstream>
#include <string>

#include "cdapose/config.hpp"
#include "cdapose/network.hpp"

namespace cdapose {

inline constexpr const char* kCheckpointFormat = "cdapose-checkpoint-1";

template <class T>
struct Checkpoint {
  Model<T> model;
  json meta;  // stage reached, epoch, config hash, free-form run info
};

template <class T>
json checkpoint_to_json(const Model<T>& model, const json& meta) {
  json j;
  j["format"] = kCheckpointFormat;
  j["model"] = to_json(model.config);
  j["seed"] = model.seed;
  j["meta"] = meta;
  j["groups"] = json::object();
  for (int g = 0; g < kGroupCount; ++g) j["groups"][to_string(static_cast<Group>(g))] = json::array();
  for (const auto& b : model.blocks) {
    json e;
    e["name"] = b.name;
    e["shape"] = b.shape;
    std::vector<double> v(b.value.begin(), b.value.end());
    e["values"] = v;
    j["groups"][to_string(b.group)].push_back(std::move(e));
  }
  j["checksum"] = hex64(parameter_checksum(model));
  return j;
}

template <class T>
void save_checkpoint(const Model<T>& model, const json& meta, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw UserError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(model, meta).dump() << "\n";
    if (!out) throw UserError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
Checkpoint<T> checkpoint_from_json(const json& j, const std::string& origin) {
  if (j.value("format", std::string()) != kCheckpointFormat)
    throw UserError(origin + ": not a checkpoint file");
  Checkpoint<T> ck;
  ck.model = Model<T>::build(model_config_from_json(j.at("model")), j.at("seed").get<std::uint64_t>());
  ck.meta = j.value("meta", json::object());
  for (auto& b : ck.model.blocks) {
    const auto& list = j.at("groups").at(to_string(b.group));
    const json* found = nullptr;
    for (const auto& e : list)
      if (e.at("name") == b.name) found = &e;
    if (!found) throw UserError(origin + ": missing parameter block " + b.name);
    const auto v = found->at("values").get<std::vector<double>>();
    if (v.size() != b.value.size()) throw UserError(origin + ": parameter block " + b.name + " has the wrong size");
    for (std::size_t i = 0; i < v.size(); ++i) b.value[i] = static_cast<T>(v[i]);
  }
  if (j.contains("checksum") && j["checksum"] != hex64(parameter_checksum(ck.model)))
    throw UserError(origin + ": checksum mismatch");
  return ck;
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UserError("checkpoint not found: " + path.string());
  const json j = detail::parse_json_text(detail::read_text(path), path.string());
  try {
    return checkpoint_from_json<T>(j, path.string());
  } catch (const json::exception& e) {
    throw UserError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace cdapose
