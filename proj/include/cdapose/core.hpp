#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdapose/error.hpp"

namespace cdapose {

// ---------------------------------------------------------------------------
// Keypoints and poses
// ---------------------------------------------------------------------------

/// COCO visibility convention.
enum class Visibility : int { unlabeled = 0, occluded = 1, visible = 2 };

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  int v = 0;  // 0 = not annotated, 1 = occluded, 2 = visible

  bool annotated() const noexcept { return v > 0; }
};

struct Pose {
  std::vector<Keypoint> keypoints;
  std::string schema_id;

  std::size_t size() const noexcept { return keypoints.size(); }
  std::size_t annotated_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(
        keypoints.begin(), keypoints.end(), [](const Keypoint& k) { return k.annotated(); }));
  }
};

struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  double max_side() const noexcept { return std::max(w, h); }
};

/// Tight box around the annotated keypoints, padded by `margin` on every side.
inline BBox keypoint_extent(const Pose& pose, double margin = 0.0) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  bool any = false;
  for (const auto& k : pose.keypoints) {
    if (!k.annotated()) continue;
    any = true;
    x0 = std::min(x0, k.x);
    y0 = std::min(y0, k.y);
    x1 = std::max(x1, k.x);
    y1 = std::max(y1, k.y);
  }
  if (!any) return {};
  return {x0 - margin, y0 - margin, (x1 - x0) + 2 * margin, (y1 - y0) + 2 * margin};
}

// ---------------------------------------------------------------------------
// Images and instances
// ---------------------------------------------------------------------------

/// Interleaved HWC pixel grid with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const noexcept { return pixels.empty(); }
  float& at(int r, int col, int ch) {
    return pixels[(static_cast<std::size_t>(r) * width + col) * channels + ch];
  }
  float at(int r, int col, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * width + col) * channels + ch];
  }
  bool operator==(const Image&) const = default;
};

enum class Split : int { unassigned = 0, train = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    default: return "unassigned";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s.empty() || s == "unassigned") return Split::unassigned;
  throw InvalidArgument("unknown split tag '" + s + "'");
}

struct Instance {
  std::string id;
  Image image;
  std::optional<Pose> pose;
  int y = 1;  // 1 = animal, 0 = human
  int z = 0;  // 1 = pose-unlabeled target sample
  std::string species;
  std::optional<BBox> bbox;
  Split split = Split::unassigned;
  std::string file_name;
};

/// Checks the domain-flag invariants of an instance at ingest time.
inline void validate_instance(const Instance& inst) {
  if ((inst.y != 0 && inst.y != 1) || (inst.z != 0 && inst.z != 1))
    throw InvalidArgument("instance " + inst.id + ": domain flags must be 0 or 1");
  if (inst.z == 1 && inst.pose)
    throw InvalidArgument("instance " + inst.id + ": target instances carry no pose");
  if (inst.z == 1 && inst.y != 1)
    throw InvalidArgument("instance " + inst.id + ": target instances must be animals");
  if (inst.z == 0 && !inst.pose)
    throw InvalidArgument("instance " + inst.id + ": source instances need a pose");
  if (inst.pose) {
    for (const auto& k : inst.pose->keypoints) {
      if (k.v < 0 || k.v > 2)
        throw InvalidArgument("instance " + inst.id + ": visibility outside {0,1,2}");
      if (k.annotated() && (!std::isfinite(k.x) || !std::isfinite(k.y)))
        throw InvalidArgument("instance " + inst.id + ": non-finite keypoint");
    }
  }
}

// ---------------------------------------------------------------------------
// Skeleton schemas
// ---------------------------------------------------------------------------

using Bone = std::pair<int, int>;

/// Partial injective map from one schema's keypoint indices into another's.
struct Alignment {
  std::string target_schema;
  std::vector<std::optional<int>> map;  // indexed by source keypoint
};

struct SkeletonSchema {
  std::string name;
  std::vector<std::string> keypoint_names;
  std::vector<Bone> bones;
  std::optional<Alignment> alignment;

  int size() const noexcept { return static_cast<int>(keypoint_names.size()); }

  int index_of(const std::string& kp) const {
    for (int i = 0; i < size(); ++i)
      if (keypoint_names[i] == kp) return i;
    return -1;
  }

  void validate() const {
    if (keypoint_names.empty()) throw SchemaError("schema " + name + " has no keypoints");
    const int d = size();
    for (const auto& [a, b] : bones)
      if (a < 0 || a >= d || b < 0 || b >= d)
        throw SchemaError("schema " + name + ": bone index out of range");
    if (alignment) {
      if (static_cast<int>(alignment->map.size()) != d)
        throw SchemaError("schema " + name + ": alignment map size mismatch");
      std::vector<int> seen;
      for (const auto& m : alignment->map) {
        if (!m) continue;
        if (*m < 0) throw SchemaError("schema " + name + ": negative alignment target");
        if (std::find(seen.begin(), seen.end(), *m) != seen.end())
          throw SchemaError("schema " + name + ": alignment is not injective");
        seen.push_back(*m);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// Per-keypoint activation grids in [0, 1] plus their peaks.
struct HeatmapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> maps;  // channels x height x width
  std::vector<std::pair<int, int>> peak_coords;  // (col, row) per channel
  std::vector<double> peak_values;

  double at(int k, int r, int c) const {
    return maps[(static_cast<std::size_t>(k) * height + r) * width + c];
  }

  /// Recomputes peak_coords / peak_values from maps. Ties resolve to the
  /// first cell in row-major order.
  void refresh_peaks() {
    peak_coords.assign(channels, {0, 0});
    peak_values.assign(channels, 0.0);
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int k = 0; k < channels; ++k) {
      const double* m = maps.data() + k * plane;
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i)
        if (m[i] > m[best]) best = i;
      peak_coords[k] = {static_cast<int>(best % width), static_cast<int>(best / width)};
      peak_values[k] = std::clamp(m[best], 0.0, 1.0);
    }
  }

  static HeatmapStack from_maps(int channels, int height, int width, std::vector<double> maps) {
    if (channels <= 0 || height <= 0 || width <= 0)
      throw InvalidArgument("heatmap stack dimensions must be positive");
    if (maps.size() != static_cast<std::size_t>(channels) * height * width)
      throw ShapeError("heatmap buffer does not match dimensions");
    HeatmapStack s;
    s.channels = channels;
    s.height = height;
    s.width = width;
    s.maps = std::move(maps);
    s.refresh_peaks();
    return s;
  }
};

/// Renders one unnormalized Gaussian (peak 1 at the keypoint) per annotated
/// keypoint. Grid coordinates are pixel coordinates divided by `stride`;
/// `sigma` is measured in grid cells.
inline HeatmapStack encode_heatmaps(const Pose& pose, int grid_h, int grid_w, double sigma,
                                    int stride = 4) {
  if (!(sigma > 0.0)) throw InvalidArgument("encode_heatmaps: sigma must be positive");
  if (grid_h <= 0 || grid_w <= 0) throw InvalidArgument("encode_heatmaps: grid dims must be positive");
  if (stride <= 0) throw InvalidArgument("encode_heatmaps: stride must be positive");
  const int d = static_cast<int>(pose.size());
  if (d == 0) throw InvalidArgument("encode_heatmaps: pose has no keypoints");
  std::vector<double> maps(static_cast<std::size_t>(d) * grid_h * grid_w, 0.0);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  for (int k = 0; k < d; ++k) {
    const Keypoint& kp = pose.keypoints[k];
    if (!kp.annotated()) continue;
    const double u = kp.x / stride;
    const double v = kp.y / stride;
    const int c0 = std::max(0, static_cast<int>(std::floor(u)) - radius);
    const int c1 = std::min(grid_w - 1, static_cast<int>(std::ceil(u)) + radius);
    const int r0 = std::max(0, static_cast<int>(std::floor(v)) - radius);
    const int r1 = std::min(grid_h - 1, static_cast<int>(std::ceil(v)) + radius);
    double* m = maps.data() + static_cast<std::size_t>(k) * grid_h * grid_w;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double du = c - u, dv = r - v;
        m[static_cast<std::size_t>(r) * grid_w + c] = std::exp(-(du * du + dv * dv) * inv);
      }
  }
  return HeatmapStack::from_maps(d, grid_h, grid_w, std::move(maps));
}

struct DecodedPose {
  Pose pose;
  double confidence = 0.0;
};

/// Per-channel argmax mapped back to pixels with a quarter-cell shift toward
/// the larger neighbour. Confidence is the mean channel peak value.
inline DecodedPose decode_heatmaps(const HeatmapStack& stack, int stride = 4) {
  DecodedPose out;
  out.pose.keypoints.resize(stack.channels);
  double sum = 0.0;
  for (int k = 0; k < stack.channels; ++k) {
    const auto [c, r] = stack.peak_coords[k];
    double dx = 0.0, dy = 0.0;
    if (c > 0 && c + 1 < stack.width) {
      const double right = stack.at(k, r, c + 1), left = stack.at(k, r, c - 1);
      if (right > left) dx = 0.25;
      else if (left > right) dx = -0.25;
    }
    if (r > 0 && r + 1 < stack.height) {
      const double down = stack.at(k, r + 1, c), up = stack.at(k, r - 1, c);
      if (down > up) dy = 0.25;
      else if (up > down) dy = -0.25;
    }
    out.pose.keypoints[k] = {(c + dx) * stride, (r + dy) * stride, 2};
    sum += stack.peak_values[k];
  }
  out.confidence = stack.channels > 0 ? sum / stack.channels : 0.0;
  return out;
}

}  // namespace cdapose
