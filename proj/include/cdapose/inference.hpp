#pragma once

#include <span>
#include <vector>

#include "cdapose/network.hpp"

namespace cdapose {

/// Runs the keypoint path over `instances` in chunks and decodes every item.
template <class T>
std::vector<DecodedPose> predict_poses(const Model<T>& model, std::span<const Instance* const> instances,
                                       int chunk = 64) {
  std::vector<DecodedPose> out;
  out.reserve(instances.size());
  for (std::size_t start = 0; start < instances.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(instances.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&instances[i]->image);
    const auto trace = model.forward(to_tensor<T>(images));
    for (int i = 0; i < trace.heatmaps.n; ++i) {
      out.push_back(decode_heatmaps(heatmap_stack(trace.heatmaps, i), model.config.output_stride));
    }
  }
  return out;
}

inline std::vector<const Instance*> pointers(const std::vector<Instance>& v) {
  std::vector<const Instance*> p;
  p.reserve(v.size());
  for (const auto& i : v) p.push_back(&i);
  return p;
}

}  // namespace cdapose
