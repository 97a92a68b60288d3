#pragma once

#include <map>
#include <string>
#include <vector>

#include "cdapose/core.hpp"

namespace cdapose::schemas {

/// The 17-keypoint reference layout with the 18 bones used for
/// bone-proportion analysis. The eye-eye link of the usual COCO skeleton is
/// not a bone here; every other COCO link is.
inline SkeletonSchema coco17() {
  SkeletonSchema s;
  s.name = "coco17";
  s.keypoint_names = {"nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",
                      "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
                      "right_wrist",   "left_hip",       "right_hip",  "left_knee",   "right_knee",
                      "left_ankle",    "right_ankle"};
  s.bones = {{15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12}, {5, 6}, {5, 7},
             {6, 8},   {7, 9},   {8, 10},  {0, 1},   {0, 2},   {1, 3},  {2, 4},  {3, 5}, {4, 6}};
  return s;
}

/// Bone names in the order of coco17().bones.
inline const std::vector<std::string>& coco17_bone_names() {
  static const std::vector<std::string> names = {
      "l_shin",      "l_thigh",     "r_shin",      "r_thigh",    "hips",       "l_flank",
      "r_flank",     "shoulders",   "l_upper_arm", "r_upper_arm", "l_forearm", "r_forearm",
      "l_nose_eye",  "r_nose_eye",  "l_eye_ear",   "r_eye_ear",  "l_ear_neck", "r_ear_neck"};
  return names;
}

/// Default animal -> reference correspondence (name -> name). Users may load a
/// different table from JSON.
inline std::map<std::string, std::string> default_animal_alignment_table() {
  return {{"left_eye", "left_eye"},
          {"right_eye", "right_eye"},
          {"left_ear", "left_ear"},
          {"right_ear", "right_ear"},
          {"nose", "nose"},
          {"left_front_elbow", "left_elbow"},
          {"right_front_elbow", "right_elbow"},
          {"left_back_elbow", "left_knee"},
          {"right_back_elbow", "right_knee"},
          {"left_front_paw", "left_wrist"},
          {"right_front_paw", "right_wrist"},
          {"left_back_paw", "left_ankle"},
          {"right_back_paw", "right_ankle"}};
}

/// Resolves a name -> name table into an index alignment from `from` into `to`.
inline Alignment make_alignment(const SkeletonSchema& from, const SkeletonSchema& to,
                                const std::map<std::string, std::string>& table) {
  Alignment a;
  a.target_schema = to.name;
  a.map.assign(from.size(), std::nullopt);
  for (const auto& [src, dst] : table) {
    const int i = from.index_of(src);
    const int j = to.index_of(dst);
    if (i < 0) throw SchemaError("alignment table: '" + src + "' is not a keypoint of " + from.name);
    if (j < 0) throw SchemaError("alignment table: '" + dst + "' is not a keypoint of " + to.name);
    a.map[i] = j;
  }
  return a;
}

/// Identity alignment of a schema onto itself.
inline Alignment identity_alignment(const SkeletonSchema& s) {
  Alignment a;
  a.target_schema = s.name;
  for (int i = 0; i < s.size(); ++i) a.map.emplace_back(i);
  return a;
}

/// 20-keypoint quadruped layout: 4 paws, 2 eyes, 2 ears, 4 elbows, nose,
/// throat, withers, tailbase and 4 knees.
inline SkeletonSchema animal20() {
  SkeletonSchema s;
  s.name = "animal20";
  s.keypoint_names = {"left_eye",          "right_eye",        "left_ear",          "right_ear",
                      "nose",              "throat",           "tailbase",          "withers",
                      "left_front_elbow",  "right_front_elbow", "left_back_elbow",  "right_back_elbow",
                      "left_front_knee",   "right_front_knee", "left_back_knee",    "right_back_knee",
                      "left_front_paw",    "right_front_paw",  "left_back_paw",     "right_back_paw"};
  s.bones = {{0, 1},  {0, 4},   {1, 4},   {0, 2},   {1, 3},   {4, 5},   {5, 7},
             {7, 6},  {7, 8},   {7, 9},   {6, 10},  {6, 11},  {8, 12},  {9, 13},
             {10, 14}, {11, 15}, {12, 16}, {13, 17}, {14, 18}, {15, 19}};
  s.alignment = make_alignment(s, coco17(), default_animal_alignment_table());
  return s;
}

inline SkeletonSchema by_name(const std::string& name) {
  if (name == "coco17") {
    auto s = coco17();
    s.alignment = identity_alignment(s);
    return s;
  }
  if (name == "animal20") return animal20();
  throw ConfigError("unknown skeleton schema '" + name + "'");
}

}  // namespace cdapose::schemas
