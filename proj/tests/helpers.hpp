#pragma once

#include <random>
#include <vector>

#include "cdapose/batch.hpp"
#include "cdapose/network.hpp"
#include "cdapose/schema.hpp"

namespace cdapose::testing {

inline Pose random_pose(std::mt19937_64& rng, int d, double w, double h, double p_unannotated = 0.0) {
  std::uniform_real_distribution<double> ux(0.0, w - 1e-9), uy(0.0, h - 1e-9), u01(0.0, 1.0);
  Pose p;
  p.schema_id = "coco17";
  for (int k = 0; k < d; ++k) {
    Keypoint kp{ux(rng), uy(rng), u01(rng) < p_unannotated ? 0 : 2};
    p.keypoints.push_back(kp);
  }
  return p;
}

inline Image random_image(std::mt19937_64& rng, int h, int w, int c = 3) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image im(h, w, c);
  for (auto& v : im.pixels) v = u(rng);
  return im;
}

/// Small network exercising every layer type (conv stages, SE, DAN, two
/// transposed-conv blocks, discriminator).
inline ModelConfig tiny_config(bool se = true) {
  ModelConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.stage_channels = {4, 6};
  c.use_se = se;
  c.se_reduction = 2;
  c.head_channels = 5;
  c.num_keypoints = 3;
  c.disc_hidden = 5;
  c.output_stride = 1;
  return c;
}

/// Instances for a tiny mixed batch: one human, two labelled animals, one
/// unlabelled animal.
inline std::vector<Instance> tiny_instances(std::mt19937_64& rng, const ModelConfig& cfg) {
  std::vector<Instance> out;
  const int flags[4][2] = {{0, 0}, {1, 0}, {1, 0}, {1, 1}};
  for (int i = 0; i < 4; ++i) {
    Instance inst;
    inst.id = std::to_string(i);
    inst.image = random_image(rng, cfg.input_height, cfg.input_width, cfg.input_channels);
    inst.y = flags[i][0];
    inst.z = flags[i][1];
    if (inst.z == 0) inst.pose = random_pose(rng, cfg.num_keypoints, cfg.input_width, cfg.input_height, 0.2);
    out.push_back(std::move(inst));
  }
  return out;
}

template <class T>
Batch<T> tiny_batch(const std::vector<Instance>& items, const ModelConfig& cfg, double sigma = 1.5) {
  std::vector<BatchItem> b;
  for (const auto& inst : items) b.push_back({&inst, nullptr});
  TargetEncoding enc{cfg.grid_height(), cfg.grid_width(), sigma, cfg.output_stride};
  return assemble_batch<T>(b, enc);
}

}  // namespace cdapose::testing
