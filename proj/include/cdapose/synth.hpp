#pragma once

// Procedural articulated stick figures on the 17-keypoint layout. Every
// bone of a generated skeleton has exactly the length prescribed by the
// domain's proportion vector (up to per-instance jitter), including the two
// closed loops (torso quad and head ring), which are closed analytically.

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cdapose/datasets.hpp"

namespace cdapose {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct Texture {
  std::array<double, 3> fg = {0.8, 0.8, 0.8};
  double fg_jitter = 0.05;  // per-instance color std
  std::array<double, 3> bg = {0.2, 0.2, 0.2};
  double bg_jitter = 0.05;
  double noise = 0.03;      // per-pixel std
  int clutter = 2;          // random background rectangles
  double invert = 0.0;      // probability of swapping figure and background colours
};

/// Joint angles in degrees, image coordinates (0 = +x, 90 = down).
struct PosePrior {
  Range torso = {-95, -85};       // direction hips -> shoulders
  Range head = {-15, 15};         // head direction relative to torso axis
  Range upper_arm = {60, 120};
  Range forearm = {60, 120};
  Range thigh = {80, 100};
  Range shin = {80, 100};
};

struct SynthDomainSpec {
  std::string name = "domain";
  int y = 1;  // 1 = animal, 0 = human
  std::vector<double> proportions;  // 18 entries, order of schemas::coco17().bones
  double proportion_jitter = 0.03;  // relative std of each bone length per instance
  Texture texture;
  PosePrior prior;
  int count = 100;
  std::uint64_t seed = 1;
  int image_size = 64;
  Range extent = {0.6, 0.8};  // figure's longer side as a fraction of the image side
  double limb_width = 2.0;    // pixels
  long long id_base = 0;

  void validate() const {
    if (count < 1) throw InvalidArgument("synthetic domain '" + name + "': count must be >= 1");
    if (proportions.size() != 18)
      throw InvalidArgument("synthetic domain '" + name + "': need 18 bone proportions");
    double sum = 0.0;
    for (double p : proportions) {
      if (!(p > 0.0)) throw GenerationError("synthetic domain '" + name + "': zero-length bone in proportions");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InvalidArgument("synthetic domain '" + name + "': proportions must sum to 1");
    if (image_size < 8) throw InvalidArgument("synthetic domain '" + name + "': image too small");
    if (y != 0 && y != 1) throw InvalidArgument("synthetic domain '" + name + "': y must be 0 or 1");
  }
};

inline std::vector<double> normalized(std::vector<double> v) {
  double s = 0;
  for (double x : v) s += x;
  for (double& x : v) x /= s;
  return v;
}

struct TruthRecord {
  Pose pose;
  BBox bbox;
};

using HiddenTruth = std::map<std::string, TruthRecord>;

struct SynthOutput {
  AnnotationSet source;
  AnnotationSet target;      // poses withheld, z = 1
  HiddenTruth target_truth;  // for evaluation only
};

namespace synth_detail {

struct Vec {
  double x = 0, y = 0;
};
inline Vec operator+(Vec a, Vec b) { return {a.x + b.x, a.y + b.y}; }
inline Vec operator-(Vec a, Vec b) { return {a.x - b.x, a.y - b.y}; }
inline Vec operator*(Vec a, double s) { return {a.x * s, a.y * s}; }
inline double dot(Vec a, Vec b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec a) { return std::hypot(a.x, a.y); }
inline Vec dir(double deg) {
  const double r = deg * std::numbers::pi / 180.0;
  return {std::cos(r), std::sin(r)};
}

/// Intersection of two circles; returns the solution with the larger
/// projection on `prefer`.
inline std::optional<Vec> circle_meet(Vec c0, double r0, Vec c1, double r1, Vec prefer) {
  const Vec d = c1 - c0;
  const double dist = norm(d);
  if (dist < 1e-12 || dist > r0 + r1 || dist < std::abs(r0 - r1)) return std::nullopt;
  const double a = (r0 * r0 - r1 * r1 + dist * dist) / (2 * dist);
  const double h = std::sqrt(std::max(0.0, r0 * r0 - a * a));
  const Vec mid = c0 + d * (a / dist);
  const Vec perp{-d.y / dist, d.x / dist};
  const Vec p1 = mid + perp * h, p2 = mid - perp * h;
  return dot(p1, prefer) >= dot(p2, prefer) ? p1 : p2;
}

enum Kp { nose, l_eye, r_eye, l_ear, r_ear, l_sh, r_sh, l_el, r_el, l_wr, r_wr, l_hip, r_hip, l_kn, r_kn, l_an, r_an };
enum BoneIx {
  b_l_shin, b_l_thigh, b_r_shin, b_r_thigh, b_hips, b_l_flank, b_r_flank, b_shoulders, b_l_uarm, b_r_uarm,
  b_l_farm, b_r_farm, b_l_nose_eye, b_r_nose_eye, b_l_eye_ear, b_r_eye_ear, b_l_ear_neck, b_r_ear_neck
};

inline double uniform(std::mt19937_64& rng, Range r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

/// Skeleton in an arbitrary frame with exact bone lengths `len`.
inline std::array<Vec, 17> articulate(const std::vector<double>& len, const PosePrior& prior, std::mt19937_64& rng,
                                      const std::string& name) {
  std::array<Vec, 17> p{};
  constexpr int kTries = 200;
  for (int attempt = 0; attempt < kTries; ++attempt) {
    const double torso = uniform(rng, prior.torso);
    const Vec n = dir(torso + 90.0);
    p[l_hip] = n * (-len[b_hips] / 2);
    p[r_hip] = n * (len[b_hips] / 2);
    const double lean = std::uniform_real_distribution<double>(-25.0, 25.0)(rng);
    p[l_sh] = p[l_hip] + dir(torso + lean) * len[b_l_flank];
    auto rs = circle_meet(p[l_sh], len[b_shoulders], p[r_hip], len[b_r_flank], n);
    if (!rs) continue;
    p[r_sh] = *rs;

    p[l_el] = p[l_sh] + dir(uniform(rng, prior.upper_arm)) * len[b_l_uarm];
    p[r_el] = p[r_sh] + dir(uniform(rng, prior.upper_arm)) * len[b_r_uarm];
    p[l_wr] = p[l_el] + dir(uniform(rng, prior.forearm)) * len[b_l_farm];
    p[r_wr] = p[r_el] + dir(uniform(rng, prior.forearm)) * len[b_r_farm];
    p[l_kn] = p[l_hip] + dir(uniform(rng, prior.thigh)) * len[b_l_thigh];
    p[r_kn] = p[r_hip] + dir(uniform(rng, prior.thigh)) * len[b_r_thigh];
    p[l_an] = p[l_kn] + dir(uniform(rng, prior.shin)) * len[b_l_shin];
    p[r_an] = p[r_kn] + dir(uniform(rng, prior.shin)) * len[b_r_shin];

    const double head = torso + uniform(rng, prior.head);
    std::uniform_real_distribution<double> wobble(-35.0, 35.0);
    bool closed = false;
    for (int h = 0; h < 50 && !closed; ++h) {
      p[l_ear] = p[l_sh] + dir(head + wobble(rng)) * len[b_l_ear_neck];
      p[r_ear] = p[r_sh] + dir(head + wobble(rng)) * len[b_r_ear_neck];
      p[l_eye] = p[l_ear] + dir(head + wobble(rng)) * len[b_l_eye_ear];
      p[r_eye] = p[r_ear] + dir(head + wobble(rng)) * len[b_r_eye_ear];
      auto nz = circle_meet(p[l_eye], len[b_l_nose_eye], p[r_eye], len[b_r_nose_eye], dir(head));
      if (nz) {
        p[nose] = *nz;
        closed = true;
      }
    }
    if (closed) return p;
  }
  throw GenerationError("synthetic domain '" + name + "': proportions admit no closed torso/head configuration");
}

inline double seg_dist(Vec q, Vec a, Vec b) {
  const Vec ab = b - a;
  const double l2 = dot(ab, ab);
  const double t = l2 > 0 ? std::clamp(dot(q - a, ab) / l2, 0.0, 1.0) : 0.0;
  return norm(q - (a + ab * t));
}

inline bool inside_convex(Vec q, const std::array<Vec, 4>& poly) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Vec a = poly[i], b = poly[(i + 1) % 4];
    const double c = (b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x);
    const int s = c > 0 ? 1 : (c < 0 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

}  // namespace synth_detail

/// Renders `spec.count` instances. Labeled instances carry their pose; the
/// ground truth is always returned in `truth`.
inline std::vector<Instance> render_domain(const SynthDomainSpec& spec, HiddenTruth* truth = nullptr) {
  using namespace synth_detail;
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto schema = schemas::coco17();
  const int S = spec.image_size;
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    std::vector<double> len(18);
    for (int b = 0; b < 18; ++b)
      len[b] = spec.proportions[b] * std::max(0.2, 1.0 + spec.proportion_jitter * gauss(rng));
    auto p = articulate(len, spec.prior, rng, spec.name);

    // Fit into the frame.
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (const auto& q : p) {
      x0 = std::min(x0, q.x), y0 = std::min(y0, q.y), x1 = std::max(x1, q.x), y1 = std::max(y1, q.y);
    }
    const double side = std::max(x1 - x0, y1 - y0);
    const double scale = uniform(rng, spec.extent) * S / side;
    const double w = (x1 - x0) * scale, h = (y1 - y0) * scale;
    const double margin = spec.limb_width + 1.0;
    const double ox = std::uniform_real_distribution<double>(margin, std::max(margin, S - margin - w))(rng);
    const double oy = std::uniform_real_distribution<double>(margin, std::max(margin, S - margin - h))(rng);
    for (auto& q : p) q = Vec{(q.x - x0) * scale + ox, (q.y - y0) * scale + oy};

    // Texture.
    const auto& tx = spec.texture;
    std::array<double, 3> fg{}, bg{};
    for (int c = 0; c < 3; ++c) {
      fg[c] = std::clamp(tx.fg[c] + tx.fg_jitter * gauss(rng), 0.0, 1.0);
      bg[c] = std::clamp(tx.bg[c] + tx.bg_jitter * gauss(rng), 0.0, 1.0);
    }
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < tx.invert) std::swap(fg, bg);
    Image img(S, S, 3);
    for (int r = 0; r < S; ++r)
      for (int c = 0; c < S; ++c)
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = static_cast<float>(bg[ch]);
    for (int k = 0; k < tx.clutter; ++k) {
      const int rx = std::uniform_int_distribution<int>(0, S - 1)(rng);
      const int ry = std::uniform_int_distribution<int>(0, S - 1)(rng);
      const int rw = std::uniform_int_distribution<int>(3, S / 3)(rng);
      const int rh = std::uniform_int_distribution<int>(3, S / 3)(rng);
      const double shade = std::uniform_real_distribution<double>(-0.15, 0.15)(rng);
      for (int r = ry; r < std::min(S, ry + rh); ++r)
        for (int c = rx; c < std::min(S, rx + rw); ++c)
          for (int ch = 0; ch < 3; ++ch)
            img.at(r, c, ch) = static_cast<float>(std::clamp(bg[ch] + shade, 0.0, 1.0));
    }
    auto paint = [&](int r, int c, const std::array<double, 3>& col, double cover) {
      if (cover <= 0) return;
      cover = std::min(cover, 1.0);
      for (int ch = 0; ch < 3; ++ch)
        img.at(r, c, ch) = static_cast<float>(img.at(r, c, ch) * (1 - cover) + col[ch] * cover);
    };
    auto shaded = [&](double f) {
      return std::array<double, 3>{fg[0] * f, fg[1] * f, fg[2] * f};
    };
    const std::array<Vec, 4> body = {p[l_sh], p[r_sh], p[r_hip], p[l_hip]};
    const double half = spec.limb_width / 2.0;
    for (int r = 0; r < S; ++r)
      for (int c = 0; c < S; ++c) {
        const Vec q{c + 0.0, r + 0.0};
        if (inside_convex(q, body)) paint(r, c, shaded(0.85), 1.0);
        for (std::size_t b = 0; b < schema.bones.size(); ++b) {
          const auto [a, e] = schema.bones[b];
          const bool left = b == b_l_shin || b == b_l_thigh || b == b_l_uarm || b == b_l_farm ||
                            b == b_l_eye_ear || b == b_l_ear_neck || b == b_l_nose_eye || b == b_l_flank;
          paint(r, c, shaded(left ? 0.65 : 1.0), 0.5 + half - seg_dist(q, p[a], p[e]));
        }
        for (int k = 0; k < 17; ++k) {
          const std::array<double, 3> joint = {0.5 * fg[0] + 0.5, 0.5 * fg[1] + 0.5, 0.5 * fg[2] + 0.5};
          paint(r, c, k < 5 ? shaded(0.4) : joint, 0.5 + half * 0.9 - norm(q - p[k]));
        }
      }
    for (auto& v : img.pixels) v = static_cast<float>(std::clamp(v + tx.noise * gauss(rng), 0.0, 1.0));

    Pose pose;
    pose.schema_id = schema.name;
    for (const auto& q : p) pose.keypoints.push_back({q.x, q.y, 2});

    Instance inst;
    inst.id = std::to_string(spec.id_base + i);
    inst.image = std::move(img);
    inst.y = spec.y;
    inst.species = spec.name;
    inst.bbox = keypoint_extent(pose, spec.limb_width);
    inst.file_name = "images/" + inst.id + ".ppm";
    if (truth) (*truth)[inst.id] = {pose, *inst.bbox};
    inst.pose = std::move(pose);
    out.push_back(std::move(inst));
  }
  return out;
}

/// Source set fully labelled; target set emitted without poses (z = 1) with
/// its ground truth returned separately.
inline SynthOutput generate_synthetic(const SynthDomainSpec& source, const SynthDomainSpec& target) {
  if (target.y != 1) throw InvalidArgument("generate_synthetic: target domain must be an animal domain");
  SynthOutput out;
  auto schema = schemas::by_name("coco17");
  out.source.schema = schema;
  out.target.schema = schema;
  out.source.instances = render_domain(source);
  out.target.instances = render_domain(target, &out.target_truth);
  for (auto& inst : out.target.instances) {
    inst.pose.reset();
    inst.z = 1;
  }
  if (source.id_base == target.id_base)
    for (auto& inst : out.target.instances) {
      const long long id = std::stoll(inst.id) + source.id_base + source.count;
      const auto it = out.target_truth.find(inst.id);
      auto rec = it->second;
      out.target_truth.erase(it);
      inst.id = std::to_string(id);
      inst.file_name = "images/" + inst.id + ".ppm";
      out.target_truth[inst.id] = rec;
    }
  return out;
}

/// Writes ground truth in annotation-file layout (the evaluator's sidecar).
inline AnnotationSet truth_as_set(const AnnotationSet& target, const HiddenTruth& truth) {
  AnnotationSet s;
  s.schema = target.schema;
  for (const auto& inst : target.instances) {
    const auto it = truth.find(inst.id);
    if (it == truth.end()) continue;
    Instance copy = inst;
    copy.image = Image();
    copy.image.width = inst.image.width;
    copy.image.height = inst.image.height;
    copy.z = 0;
    copy.pose = it->second.pose;
    copy.bbox = it->second.bbox;
    s.instances.push_back(std::move(copy));
  }
  return s;
}

inline HiddenTruth truth_from_set(const AnnotationSet& set) {
  HiddenTruth t;
  for (const auto& inst : set.instances) {
    if (!inst.pose) continue;
    t[inst.id] = {*inst.pose, inst.bbox.value_or(keypoint_extent(*inst.pose))};
  }
  return t;
}

}  // namespace cdapose
