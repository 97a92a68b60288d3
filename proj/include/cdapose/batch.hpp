#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cdapose/core.hpp"
#include "cdapose/network.hpp"

namespace cdapose {

/// Heatmap regression target for one item, with per-channel annotation mask.
template <class T>
struct PoseTarget {
  std::vector<T> maps;                // d x H' x W'
  std::vector<unsigned char> mask;    // 1 where the keypoint is annotated
  int y = 1;
  int z = 0;
};

template <class T>
PoseTarget<T> make_pose_target(const Pose& pose, int grid_h, int grid_w, double sigma, int stride, int y,
                               int z) {
  const HeatmapStack s = encode_heatmaps(pose, grid_h, grid_w, sigma, stride);
  PoseTarget<T> t;
  t.maps.assign(s.maps.begin(), s.maps.end());
  t.mask.resize(pose.size());
  for (std::size_t k = 0; k < pose.size(); ++k) t.mask[k] = pose.keypoints[k].annotated() ? 1 : 0;
  t.y = y;
  t.z = z;
  return t;
}

/// A training mini-batch. `targets[i]` is empty for pose-unlabeled items.
template <class T>
struct Batch {
  nn::Tensor<T> images;
  std::vector<int> y;
  std::vector<int> z;
  std::vector<std::optional<PoseTarget<T>>> targets;
  std::vector<std::string> ids;

  int size() const { return images.n; }
};

struct DisturbanceParams {
  double noise_std = 0.02;
  double max_shift_fraction = 0.05;
};

struct DisturbedSample {
  Image image;
  std::optional<Pose> pose;
  int shift_x = 0;
  int shift_y = 0;
};

/// Additive Gaussian pixel noise plus a crop jitter (integer translation of
/// up to `max_shift_fraction` of each side, edge-replicated). Keypoints move
/// with the content.
inline DisturbedSample apply_disturbance(const Image& image, const std::optional<Pose>& pose,
                                         std::uint64_t seed, const DisturbanceParams& params = {}) {
  std::mt19937_64 rng(seed);
  const int max_dx = static_cast<int>(std::floor(params.max_shift_fraction * image.width));
  const int max_dy = static_cast<int>(std::floor(params.max_shift_fraction * image.height));
  std::uniform_int_distribution<int> sx(-max_dx, max_dx), sy(-max_dy, max_dy);
  DisturbedSample out;
  out.shift_x = sx(rng);
  out.shift_y = sy(rng);
  out.image = Image(image.height, image.width, image.channels);
  std::normal_distribution<double> noise(0.0, params.noise_std);
  for (int r = 0; r < image.height; ++r) {
    const int rs = std::clamp(r - out.shift_y, 0, image.height - 1);
    for (int c = 0; c < image.width; ++c) {
      const int cs = std::clamp(c - out.shift_x, 0, image.width - 1);
      for (int ch = 0; ch < image.channels; ++ch) {
        const double v = image.at(rs, cs, ch) + (params.noise_std > 0 ? noise(rng) : 0.0);
        out.image.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  if (pose) {
    out.pose = *pose;
    for (auto& k : out.pose->keypoints) {
      if (!k.annotated()) continue;
      k.x += out.shift_x;
      k.y += out.shift_y;
    }
  }
  return out;
}

struct BatchItem {
  const Instance* instance = nullptr;
  const Pose* pose_override = nullptr;  // e.g. a pseudo label
};

struct TargetEncoding {
  int grid_h = 16;
  int grid_w = 16;
  double sigma = 2.0;
  int stride = 4;
};

/// Assembles a batch; when `disturb_seed` is set every item gets its own
/// derived disturbance seed.
template <class T>
Batch<T> assemble_batch(std::span<const BatchItem> items, const TargetEncoding& enc,
                        std::optional<std::uint64_t> disturb_seed = std::nullopt,
                        const DisturbanceParams& dparams = {}) {
  Batch<T> b;
  std::vector<Image> images;
  images.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Instance& inst = *items[i].instance;
    std::optional<Pose> pose;
    if (items[i].pose_override) pose = *items[i].pose_override;
    else if (inst.pose) pose = inst.pose;
    if (disturb_seed) {
      auto d = apply_disturbance(inst.image, pose, *disturb_seed * 1000003ULL + i, dparams);
      images.push_back(std::move(d.image));
      pose = std::move(d.pose);
    } else {
      images.push_back(inst.image);
    }
    b.y.push_back(inst.y);
    b.z.push_back(inst.z);
    b.ids.push_back(inst.id);
    if (pose && (inst.z == 0 || items[i].pose_override))
      b.targets.emplace_back(make_pose_target<T>(*pose, enc.grid_h, enc.grid_w, enc.sigma, enc.stride, inst.y,
                                                 items[i].pose_override ? 1 : inst.z));
    else
      b.targets.emplace_back(std::nullopt);
  }
  std::vector<const Image*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  b.images = to_tensor<T>(ptrs);
  return b;
}

}  // namespace cdapose
