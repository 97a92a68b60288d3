#pragma once

// Record of what a command read and wrote.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cdapose/config.hpp"

namespace cdapose {

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> checkpoints;
  std::vector<std::string> logs;
  std::vector<std::string> outputs;
  int stage_reached = -1;
  json extra = json::object();

  json to_json() const {
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["checkpoints"] = checkpoints;
    j["logs"] = logs;
    j["outputs"] = outputs;
    if (stage_reached >= 0) j["stage_reached"] = stage_reached;
    if (!extra.empty()) j["extra"] = extra;
    return j;
  }

  /// Writes the manifest after checking that every referenced file exists.
  void write(const std::filesystem::path& path) const {
    for (const auto* list : {&inputs, &checkpoints, &logs, &outputs})
      for (const auto& p : *list)
        if (!std::filesystem::exists(p)) throw ContractViolation("manifest: artifact " + p + " does not exist");
    std::ofstream out(path);
    if (!out) throw UserError("cannot write " + path.string());
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace cdapose
