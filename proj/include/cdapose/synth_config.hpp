#pragma once

// Declarative synthetic-dataset configuration: either the built-in
// experiment preset or an explicit list of domain specs.

#include <string>
#include <vector>

#include "cdapose/config.hpp"
#include "cdapose/experiment.hpp"
#include "cdapose/synth.hpp"

namespace cdapose {

namespace config_detail {

inline Range range_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [lo, hi]");
  Range r{j[0].get<double>(), j[1].get<double>()};
  if (r.lo > r.hi) throw ConfigError(where + ": lo > hi");
  return r;
}

}  // namespace config_detail

inline json to_json(const SynthDomainSpec& s) {
  auto rng = [](Range r) { return json::array({r.lo, r.hi}); };
  return {{"name", s.name},
          {"y", s.y},
          {"proportions", s.proportions},
          {"proportion_jitter", s.proportion_jitter},
          {"texture",
           {{"fg", s.texture.fg},
            {"fg_jitter", s.texture.fg_jitter},
            {"bg", s.texture.bg},
            {"bg_jitter", s.texture.bg_jitter},
            {"noise", s.texture.noise},
            {"clutter", s.texture.clutter},
            {"invert", s.texture.invert}}},
          {"prior",
           {{"torso", rng(s.prior.torso)},
            {"head", rng(s.prior.head)},
            {"upper_arm", rng(s.prior.upper_arm)},
            {"forearm", rng(s.prior.forearm)},
            {"thigh", rng(s.prior.thigh)},
            {"shin", rng(s.prior.shin)}}},
          {"count", s.count},
          {"seed", s.seed},
          {"image_size", s.image_size},
          {"extent", rng(s.extent)},
          {"limb_width", s.limb_width},
          {"id_base", s.id_base}};
}

/// Reads one domain spec. Bone lengths come either as "proportions" (18
/// numbers in skeleton order) or as "bones" (bone name -> relative length,
/// normalised here; unnamed bones keep length 1).
inline SynthDomainSpec synth_spec_from_json(const json& j) {
  using namespace config_detail;
  const std::string w = "domain '" + j.value("name", std::string("?")) + "'";
  check_keys(j, {"name", "y", "role", "proportions", "bones", "proportion_jitter", "texture", "prior", "count", "seed",
                 "image_size", "extent", "limb_width", "id_base"},
             w);
  SynthDomainSpec s;
  read(j, "name", s.name, w);
  read(j, "y", s.y, w);
  if (j.contains("role")) {
    const auto role = j["role"].get<std::string>();
    if (role == "human") s.y = 0;
    else if (role == "animal" || role == "target") s.y = 1;
    else throw ConfigError(w + ": role must be human, animal or target");
  }
  if (j.contains("proportions") && j.contains("bones")) throw ConfigError(w + ": give proportions or bones, not both");
  if (j.contains("proportions")) {
    read(j, "proportions", s.proportions, w);
  } else if (j.contains("bones")) {
    const auto names = schemas::coco17_bone_names();
    std::vector<double> len(names.size(), 1.0);
    for (auto it = j["bones"].begin(); it != j["bones"].end(); ++it) {
      const auto pos = std::find(names.begin(), names.end(), it.key());
      if (pos == names.end()) throw ConfigError(w + ": unknown bone '" + it.key() + "'");
      len[pos - names.begin()] = it.value().get<double>();
    }
    s.proportions = normalized(len);
  } else {
    s.proportions = normalized(std::vector<double>(18, 1.0));
  }
  read(j, "proportion_jitter", s.proportion_jitter, w);
  if (j.contains("texture")) {
    const auto& t = j["texture"];
    check_keys(t, {"fg", "fg_jitter", "bg", "bg_jitter", "noise", "clutter", "invert"}, w + ".texture");
    read(t, "fg", s.texture.fg, w);
    read(t, "fg_jitter", s.texture.fg_jitter, w);
    read(t, "bg", s.texture.bg, w);
    read(t, "bg_jitter", s.texture.bg_jitter, w);
    read(t, "noise", s.texture.noise, w);
    read(t, "clutter", s.texture.clutter, w);
    read(t, "invert", s.texture.invert, w);
  }
  if (j.contains("prior")) {
    const auto& p = j["prior"];
    check_keys(p, {"torso", "head", "upper_arm", "forearm", "thigh", "shin"}, w + ".prior");
    const std::pair<const char*, Range*> fields[] = {{"torso", &s.prior.torso},     {"head", &s.prior.head},
                                                     {"upper_arm", &s.prior.upper_arm}, {"forearm", &s.prior.forearm},
                                                     {"thigh", &s.prior.thigh},     {"shin", &s.prior.shin}};
    for (const auto& [key, dst] : fields)
      if (p.contains(key)) *dst = range_from_json(p[key], w + ".prior." + key);
  }
  read(j, "count", s.count, w);
  read(j, "seed", s.seed, w);
  read(j, "image_size", s.image_size, w);
  if (j.contains("extent")) s.extent = range_from_json(j["extent"], w + ".extent");
  read(j, "limb_width", s.limb_width, w);
  read(j, "id_base", s.id_base, w);
  s.validate();
  return s;
}

/// Everything a synthetic run writes: labelled sources, the pose-free target
/// (split into an unlabelled training pool and a test part) and the sidecar
/// ground truth.
struct SynthDataset {
  AnnotationSet source;
  AnnotationSet target;
  HiddenTruth truth;
  std::vector<std::string> warnings;
};

inline SynthDataset synth_dataset_from_config(const json& cfg) {
  using namespace config_detail;
  check_keys(cfg, {"preset", "seed", "image_size", "human_count", "animal_per_species", "target_unlabeled", "target_test",
                   "domains", "test_fraction"},
             "synth");
  SynthDataset out;
  out.source.schema = schemas::coco17();
  out.target.schema = schemas::coco17();
  if (cfg.value("preset", std::string()) == "experiment") {
    ExperimentSetup setup;
    std::uint64_t seed = 1;
    read(cfg, "seed", seed, "synth");
    read(cfg, "image_size", setup.image_size, "synth");
    read(cfg, "human_count", setup.human_count, "synth");
    read(cfg, "animal_per_species", setup.animal_per_species, "synth");
    read(cfg, "target_unlabeled", setup.target_unlabeled, "synth");
    read(cfg, "target_test", setup.target_test, "synth");
    auto d = make_experiment_data(setup, seed);
    out.source.instances = std::move(d.human.instances);
    for (auto& i : d.animal.instances) out.source.instances.push_back(std::move(i));
    for (auto& i : d.unlabeled.instances) {
      i.split = Split::train;
      out.target.instances.push_back(std::move(i));
    }
    for (auto& i : d.test.instances) {
      i.split = Split::test;
      out.target.instances.push_back(std::move(i));
    }
    out.truth = std::move(d.truth);
    return out;
  }
  if (cfg.contains("preset")) throw ConfigError("synth: unknown preset '" + cfg["preset"].dump() + "'");
  if (!cfg.contains("domains") || !cfg["domains"].is_array() || cfg["domains"].empty())
    throw ConfigError("synth: need \"preset\": \"experiment\" or a non-empty \"domains\" list");
  double test_fraction = 0.4;
  read(cfg, "test_fraction", test_fraction, "synth");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("synth: test_fraction must be in [0, 1)");
  long long next_base = 0;
  int targets = 0;
  for (const auto& dj : cfg["domains"]) {
    auto spec = synth_spec_from_json(dj);
    if (!dj.contains("id_base")) spec.id_base = next_base;
    next_base = std::max(next_base, spec.id_base + spec.count);
    const bool is_target = dj.value("role", std::string()) == "target";
    if (is_target) {
      ++targets;
      auto items = render_domain(spec, &out.truth);
      for (auto& i : items) {
        i.pose.reset();
        i.z = 1;
        out.target.instances.push_back(std::move(i));
      }
    } else {
      for (auto& i : render_domain(spec)) out.source.instances.push_back(std::move(i));
    }
  }
  if (targets == 0) throw ConfigError("synth: no domain has role \"target\"");
  // Stratified split of the target pool; split() needs labelled stand-ins.
  AnnotationSet probe = truth_as_set(out.target, out.truth);
  auto tagged = split(probe, {1.0 - test_fraction, test_fraction}, cfg.value("seed", 1));
  for (std::size_t i = 0; i < out.target.instances.size(); ++i)
    out.target.instances[i].split = tagged.set.instances[i].split;
  out.warnings = std::move(tagged.warnings);
  out.source.validate();
  out.target.validate();
  return out;
}

}  // namespace cdapose
