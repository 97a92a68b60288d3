#pragma once

// Finite-difference checks of the analytic backward pass, shared by the unit
// tests and the acceptance runner.

#include <array>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cdapose/losses.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

namespace cdapose::testing {

enum class LossKind { ddl, pose, wscda, pplo_target };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::ddl: return "ddl";
    case LossKind::pose: return "pose_loss";
    case LossKind::wscda: return "wscda_loss";
    case LossKind::pplo_target: return "pplo_target_loss";
  }
  return "?";
}

struct GradProblem {
  Model<double> model;
  Batch<double> batch;
  std::vector<std::optional<PoseTarget<double>>> pseudo;
  std::vector<int> accept;
  LossConfig loss{1.5, 10.0, -0.7, 3.0};
};

inline GradProblem make_grad_problem(std::uint64_t seed, const ModelConfig& cfg) {
  std::mt19937_64 rng(seed);
  GradProblem p{Model<double>::build(cfg, seed), {}, {}, {}};
  const auto items = tiny_instances(rng, cfg);
  p.batch = tiny_batch<double>(items, cfg);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Pose pose = random_pose(rng, cfg.num_keypoints, cfg.input_width, cfg.input_height);
    p.pseudo.push_back(make_pose_target<double>(pose, cfg.grid_height(), cfg.grid_width(), 1.5,
                                                cfg.output_stride, 1, 1));
    p.accept.push_back(i % 3 != 1);
  }
  return p;
}

/// Loss value of `kind`; fills `grads` with its plain (unreversed) gradient when given.
inline double loss_value(const GradProblem& p, LossKind kind, Gradients<double>* grads) {
  const auto& m = p.model;
  const auto trace = m.forward(p.batch.images);
  const auto& heat = trace.heatmaps;
  nn::Tensor<double> d_heat(heat.n, heat.c, heat.h, heat.w);
  switch (kind) {
    case LossKind::ddl: {
      const auto d = ddl<double>(trace.domain, p.batch.y, p.batch.z, p.loss.w1);
      if (grads) *grads = m.backward(trace, nullptr, d.grad, 1.0);
      return d.value;
    }
    case LossKind::pose: {
      const auto l = pose_loss<double>(heat, p.batch.targets, p.loss.w2, &d_heat, 1.0);
      if (grads) *grads = m.backward(trace, &d_heat, {}, 1.0);
      return l.total;
    }
    case LossKind::wscda: {
      auto d = ddl<double>(trace.domain, p.batch.y, p.batch.z, p.loss.w1);
      const auto l = pose_loss<double>(heat, p.batch.targets, p.loss.w2, &d_heat, p.loss.beta);
      for (auto& g : d.grad) g *= p.loss.alpha;
      if (grads) *grads = m.backward(trace, &d_heat, d.grad, 1.0);
      return wscda_loss(d.value, l.total, p.loss.alpha, p.loss.beta);
    }
    case LossKind::pplo_target: {
      const auto l = pplo_target_loss<double>(heat, p.pseudo, p.accept, &d_heat, 1.0);
      if (grads) *grads = m.backward(trace, &d_heat, {}, 1.0);
      return l.value;
    }
  }
  return 0.0;
}

struct GradCheckReport {
  std::array<int, kGroupCount> checked{};
  std::array<int, kGroupCount> failed{};
  std::string first_failure;

  int total_failed() const {
    int n = 0;
    for (int f : failed) n += f;
    return n;
  }
};

/// Compares analytic and central-difference gradients at `per_group` random
/// parameters of every group.
inline GradCheckReport check_gradients(GradProblem& p, LossKind kind, int per_group, std::uint64_t seed,
                                       double h = 1e-6) {
  Gradients<double> analytic;
  loss_value(p, kind, &analytic);
  std::array<std::vector<std::pair<int, std::size_t>>, kGroupCount> where;
  for (std::size_t b = 0; b < p.model.blocks.size(); ++b)
    for (std::size_t i = 0; i < p.model.blocks[b].value.size(); ++i)
      where[static_cast<int>(p.model.blocks[b].group)].push_back({static_cast<int>(b), i});
  std::mt19937_64 rng(seed);
  GradCheckReport r;
  for (int g = 0; g < kGroupCount; ++g) {
    auto& pool = where[g];
    std::shuffle(pool.begin(), pool.end(), rng);
    const int n = std::min<int>(per_group, static_cast<int>(pool.size()));
    for (int s = 0; s < n; ++s) {
      const auto [b, i] = pool[s];
      double& x = p.model.blocks[b].value[i];
      const double numeric = oracle::central_difference([&] { return loss_value(p, kind, nullptr); }, x, h);
      ++r.checked[g];
      if (!oracle::gradients_agree(analytic[b][i], numeric)) {
        ++r.failed[g];
        if (r.first_failure.empty()) {
          std::ostringstream os;
          os << to_string(kind) << " " << p.model.blocks[b].name << "[" << i << "]: analytic " << analytic[b][i]
             << " numeric " << numeric;
          r.first_failure = os.str();
        }
      }
    }
  }
  return r;
}

}  // namespace cdapose::testing
