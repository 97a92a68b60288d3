#pragma once

// Annotation ingestion and export (COCO keypoint layout), skeleton
// alignment, bone-proportion analysis and seeded stratified splits.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cdapose/core.hpp"
#include "cdapose/image_io.hpp"
#include "cdapose/schema.hpp"

namespace cdapose {

using json = nlohmann::json;

struct AnnotationSet {
  std::vector<Instance> instances;
  SkeletonSchema schema;

  std::size_t size() const { return instances.size(); }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& inst : instances) {
      if (!ids.insert(inst.id).second) throw SchemaError("duplicate instance id " + inst.id);
      if (inst.pose && static_cast<int>(inst.pose->size()) != schema.size())
        throw SchemaError("annotation " + inst.id + ": pose length does not match schema " + schema.name);
      validate_instance(inst);
    }
  }

  /// Instance counts per species, in first-appearance order.
  std::vector<std::pair<std::string, std::size_t>> class_counts() const {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& inst : instances) {
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == inst.species; });
      if (it == out.end()) out.emplace_back(inst.species, 1);
      else ++it->second;
    }
    return out;
  }
};

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports the byte *after* the offending token.
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    throw ParseError(origin + ": malformed JSON: " + e.what(), line_of(text, byte));
  }
}

inline SkeletonSchema schema_from_category(const json& cat) {
  SkeletonSchema s;
  s.keypoint_names = cat.at("keypoints").get<std::vector<std::string>>();
  const auto coco = schemas::coco17();
  const auto animal = schemas::animal20();
  if (s.keypoint_names == coco.keypoint_names) return schemas::by_name("coco17");
  if (s.keypoint_names == animal.keypoint_names) return animal;
  s.name = cat.value("keypoint_schema", std::string("custom"));
  if (cat.contains("skeleton"))
    for (const auto& b : cat["skeleton"]) s.bones.emplace_back(b.at(0).get<int>() - 1, b.at(1).get<int>() - 1);
  return s;
}

inline bool is_human_category(const json& cat) {
  return cat.value("name", std::string()) == "person" || cat.value("supercategory", std::string()) == "person";
}

}  // namespace detail

struct ParseOptions {
  bool load_images = false;  // read PPM/PGM files referenced by file_name
};

/// Reads a COCO-style keypoint annotation file. Extension keys understood on
/// annotations: "target" (1 marks a pose-unlabeled target sample; its
/// keypoints are not ingested) and "split" ("train" / "test").
inline AnnotationSet parse_annotations(const std::filesystem::path& path, const ParseOptions& opts = {}) {
  const std::string text = detail::read_text(path);
  const json doc = detail::parse_json_text(text, path.string());
  AnnotationSet set;
  try {
    if (!doc.contains("categories") || doc["categories"].empty())
      throw SchemaError(path.string() + ": no categories");
    std::map<long long, json> cats;
    for (const auto& c : doc["categories"]) cats[c.at("id").get<long long>()] = c;
    set.schema = detail::schema_from_category(doc["categories"][0]);
    for (const auto& [id, c] : cats)
      if (c.at("keypoints").get<std::vector<std::string>>() != set.schema.keypoint_names)
        throw SchemaError(path.string() + ": categories disagree on the keypoint list");
    set.schema.validate();

    std::map<long long, json> images;
    if (doc.contains("images"))
      for (const auto& im : doc["images"]) images[im.at("id").get<long long>()] = im;

    const int d = set.schema.size();
    for (const auto& a : doc.value("annotations", json::array())) {
      Instance inst;
      const std::string aid = a.at("id").dump();
      inst.id = a.at("id").is_string() ? a["id"].get<std::string>() : aid;
      const auto cat_it = cats.find(a.at("category_id").get<long long>());
      if (cat_it == cats.end()) throw SchemaError("annotation " + inst.id + ": unknown category");
      inst.species = cat_it->second.value("name", std::string());
      inst.y = detail::is_human_category(cat_it->second) ? 0 : 1;
      inst.z = a.value("target", 0);
      if (a.contains("split")) inst.split = split_from_string(a["split"].get<std::string>());
      if (a.contains("bbox") && a["bbox"].size() == 4) {
        const auto b = a["bbox"].get<std::vector<double>>();
        inst.bbox = BBox{b[0], b[1], b[2], b[3]};
      }
      if (inst.z == 0) {
        const auto kps = a.value("keypoints", std::vector<double>{});
        if (static_cast<int>(kps.size()) != 3 * d)
          throw SchemaError("annotation " + inst.id + ": expected " + std::to_string(d) + " keypoints, got " +
                            std::to_string(kps.size() / 3) + (kps.size() % 3 ? " (ragged)" : ""));
        Pose pose;
        pose.schema_id = set.schema.name;
        for (int k = 0; k < d; ++k)
          pose.keypoints.push_back({kps[3 * k], kps[3 * k + 1], static_cast<int>(std::lround(kps[3 * k + 2]))});
        inst.pose = std::move(pose);
      }
      const auto im_it = images.find(a.at("image_id").get<long long>());
      if (im_it != images.end()) {
        inst.file_name = im_it->second.value("file_name", std::string());
        if (opts.load_images && !inst.file_name.empty())
          inst.image = read_pnm(path.parent_path() / inst.file_name);
      }
      set.instances.push_back(std::move(inst));
    }
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  set.validate();
  return set;
}

/// Serialises a set in the layout parse_annotations reads.
inline json annotations_to_json(const AnnotationSet& set) {
  json doc;
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  doc["categories"] = json::array();
  std::vector<std::string> species;
  std::map<std::string, int> species_y;
  for (const auto& inst : set.instances)
    if (std::find(species.begin(), species.end(), inst.species) == species.end()) {
      species.push_back(inst.species);
      species_y[inst.species] = inst.y;
    }
  for (std::size_t c = 0; c < species.size(); ++c) {
    json cat;
    cat["id"] = c + 1;
    cat["name"] = species[c];
    cat["supercategory"] = species_y[species[c]] == 0 ? "person" : "animal";
    cat["keypoints"] = set.schema.keypoint_names;
    json sk = json::array();
    for (const auto& [a, b] : set.schema.bones) sk.push_back({a + 1, b + 1});
    cat["skeleton"] = sk;
    if (set.schema.name != "coco17" && set.schema.name != "animal20") cat["keypoint_schema"] = set.schema.name;
    doc["categories"].push_back(cat);
  }
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    const Instance& inst = set.instances[i];
    const long long img_id = static_cast<long long>(i) + 1;
    json im;
    im["id"] = img_id;
    im["file_name"] = inst.file_name;
    im["width"] = inst.image.width;
    im["height"] = inst.image.height;
    doc["images"].push_back(im);
    json a;
    long long numeric = 0;
    std::istringstream is(inst.id);
    if (is >> numeric && is.eof()) a["id"] = numeric;
    else a["id"] = inst.id;
    a["image_id"] = img_id;
    a["category_id"] =
        static_cast<int>(std::find(species.begin(), species.end(), inst.species) - species.begin()) + 1;
    if (inst.pose) {
      std::vector<double> flat;
      for (const auto& k : inst.pose->keypoints) {
        flat.push_back(k.x);
        flat.push_back(k.y);
        flat.push_back(k.v);
      }
      a["keypoints"] = flat;
      a["num_keypoints"] = inst.pose->annotated_count();
    } else {
      a["num_keypoints"] = 0;
    }
    if (inst.bbox) a["bbox"] = {inst.bbox->x, inst.bbox->y, inst.bbox->w, inst.bbox->h};
    if (inst.z == 1) a["target"] = 1;
    if (inst.split != Split::unassigned) a["split"] = to_string(inst.split);
    doc["annotations"].push_back(a);
  }
  return doc;
}

inline void write_annotations(const AnnotationSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path.string());
  out << annotations_to_json(set).dump(1) << "\n";
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> load_alignment_table(const std::filesystem::path& path) {
  const std::string text = detail::read_text(path);
  const json doc = detail::parse_json_text(text, path.string());
  if (!doc.is_object()) throw ConfigError(path.string() + ": alignment table must be a JSON object");
  std::map<std::string, std::string> table;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_string()) throw ConfigError(path.string() + ": alignment values must be names");
    table[it.key()] = it.value().get<std::string>();
  }
  return table;
}

/// Maps a pose from one schema into another through `from.alignment`.
/// Unmapped target slots come out with v = 0.
inline Pose align_skeleton(const Pose& pose, const SkeletonSchema& from, const SkeletonSchema& to) {
  if (static_cast<int>(pose.size()) != from.size())
    throw SchemaError("align_skeleton: pose length does not match schema " + from.name);
  if (!from.alignment) {
    if (from.name == to.name && from.keypoint_names == to.keypoint_names) return pose;
    throw ConfigError("align_skeleton: schema " + from.name + " has no alignment map");
  }
  if (from.alignment->target_schema != to.name)
    throw ConfigError("align_skeleton: schema " + from.name + " aligns to " + from.alignment->target_schema +
                      ", not " + to.name);
  Pose out;
  out.schema_id = to.name;
  out.keypoints.assign(to.size(), Keypoint{});
  for (int i = 0; i < from.size(); ++i) {
    const auto& m = from.alignment->map[i];
    if (!m) continue;
    if (*m >= to.size()) throw SchemaError("align_skeleton: alignment target out of range");
    out.keypoints[*m] = pose.keypoints[i];
  }
  return out;
}

inline AnnotationSet align_set(const AnnotationSet& set, const SkeletonSchema& to) {
  AnnotationSet out;
  out.schema = to;
  if (!out.schema.alignment) out.schema.alignment = schemas::identity_alignment(to);
  for (const auto& inst : set.instances) {
    Instance copy = inst;
    if (copy.pose) copy.pose = align_skeleton(*copy.pose, set.schema, to);
    out.instances.push_back(std::move(copy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bone proportions
// ---------------------------------------------------------------------------

struct BoneProfile {
  std::vector<double> proportions;
  std::size_t samples = 0;           // instances with at least one measurable bone
  std::vector<std::size_t> bone_samples;
};

struct BoneReport {
  std::vector<Bone> bones;
  std::vector<std::string> classes;            // classes with a profile, first-appearance order
  std::map<std::string, BoneProfile> profiles;
  std::vector<std::string> absent;             // classes without any measurable instance

  json to_json(const std::vector<std::string>& bone_names = {}) const {
    json j;
    j["bones"] = json::array();
    for (std::size_t b = 0; b < bones.size(); ++b) {
      json e = {{"from", bones[b].first}, {"to", bones[b].second}};
      if (b < bone_names.size()) e["name"] = bone_names[b];
      j["bones"].push_back(e);
    }
    j["classes"] = json::object();
    for (const auto& c : classes) {
      const auto& p = profiles.at(c);
      j["classes"][c] = {{"proportions", p.proportions}, {"samples", p.samples}};
    }
    j["absent"] = absent;
    return j;
  }
};

/// Per class: mean over instances of (bone length / that instance's total
/// measured length), renormalised to sum to one. A bone is measured on an
/// instance only when both endpoints are annotated.
inline BoneReport compute_bone_proportions(const AnnotationSet& set, const std::vector<Bone>& bones) {
  BoneReport rep;
  rep.bones = bones;
  const std::size_t B = bones.size();
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, std::vector<std::size_t>> counts;
  std::map<std::string, std::size_t> samples;
  for (const auto& inst : set.instances) {
    if (std::find(order.begin(), order.end(), inst.species) == order.end()) order.push_back(inst.species);
    auto& s = sums[inst.species];
    auto& c = counts[inst.species];
    if (s.empty()) {
      s.assign(B, 0.0);
      c.assign(B, 0);
    }
    if (!inst.pose) continue;
    const auto& kp = inst.pose->keypoints;
    std::vector<double> len(B, -1.0);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto [i, j] = bones[b];
      if (i < 0 || j < 0 || i >= static_cast<int>(kp.size()) || j >= static_cast<int>(kp.size()))
        throw SchemaError("compute_bone_proportions: bone index out of range");
      if (!kp[i].annotated() || !kp[j].annotated()) continue;
      len[b] = std::hypot(kp[i].x - kp[j].x, kp[i].y - kp[j].y);
      total += len[b];
    }
    if (!(total > 0.0)) continue;
    ++samples[inst.species];
    for (std::size_t b = 0; b < B; ++b)
      if (len[b] >= 0.0) {
        s[b] += len[b] / total;
        ++c[b];
      }
  }
  for (const auto& cls : order) {
    if (samples[cls] == 0) {
      rep.absent.push_back(cls);
      continue;
    }
    BoneProfile p;
    p.samples = samples[cls];
    p.bone_samples = counts[cls];
    p.proportions.assign(B, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      if (counts[cls][b] > 0) p.proportions[b] = sums[cls][b] / static_cast<double>(counts[cls][b]);
    const double norm = std::accumulate(p.proportions.begin(), p.proportions.end(), 0.0);
    for (auto& v : p.proportions) v /= norm;
    rep.classes.push_back(cls);
    rep.profiles[cls] = std::move(p);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitFractions {
  double train = 0.8;
  double test = 0.2;
};

struct SplitResult {
  AnnotationSet set;
  std::vector<std::string> warnings;
};

/// Seeded, class-stratified train/test assignment. Each class gets
/// round(n * train) training items; classes too small to populate both
/// sides go wholly to train with a warning.
inline SplitResult split(const AnnotationSet& set, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.test < 0 || std::abs(f.train + f.test - 1.0) > 1e-9)
    throw InvalidArgument("split: fractions must be non-negative and sum to 1");
  SplitResult out{set, {}};
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    const auto& sp = set.instances[i].species;
    if (!members.count(sp)) order.push_back(sp);
    members[sp].push_back(i);
  }
  for (std::size_t c = 0; c < order.size(); ++c) {
    auto idx = members[order[c]];
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + c);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    std::size_t n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.train + 0.5));
    n_train = std::min(n_train, n);
    const bool starved = (f.test > 0 && n_train == n) || (f.train > 0 && n_train == 0);
    if (starved) {
      out.warnings.push_back("split: class '" + order[c] + "' has too few instances to stratify; all assigned to train");
      n_train = n;
    }
    for (std::size_t k = 0; k < n; ++k)
      out.set.instances[idx[k]].split = k < n_train ? Split::train : Split::test;
  }
  return out;
}

inline AnnotationSet subset(const AnnotationSet& set, Split which) {
  AnnotationSet out;
  out.schema = set.schema;
  for (const auto& inst : set.instances)
    if (inst.split == which) out.instances.push_back(inst);
  return out;
}

}  // namespace cdapose
