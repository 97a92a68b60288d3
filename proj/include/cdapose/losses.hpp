#pragma once

// Loss stack of the adaptation framework: domain discrimination loss (two
// stacked cross-entropies), the rebalanced pose loss, their adversarial
// combination, and the self-paced pseudo-label target loss.

#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "cdapose/batch.hpp"
#include "cdapose/network.hpp"

namespace cdapose {

struct LossConfig {
  double w1 = 1.0;      // human-vs-animal term weight
  double w2 = 10.0;     // animal pose loss rebalancing weight
  double alpha = -1.0;  // DDL coefficient
  double beta = 500.0;  // pose coefficient

  void validate() const {
    if (!(alpha * beta < 0)) throw ConfigError("loss: alpha * beta must be negative");
    if (!(w2 >= 1.0)) throw ConfigError("loss: w2 must be >= 1");
    if (!(w1 > 0.0)) throw ConfigError("loss: w1 must be positive");
  }
};

template <class T>
struct LossWithGrad {
  T value = T(0);
  std::vector<T> grad;  // w.r.t. the loss inputs
};

/// Domain discrimination loss over N items. `domain` holds clamped
/// (y_hat, z_hat) pairs row-major. Gradient is w.r.t. those probabilities.
template <class T>
LossWithGrad<T> ddl(std::span<const T> domain, std::span<const int> y, std::span<const int> z, double w1) {
  const std::size_t n = y.size();
  if (domain.size() != 2 * n || z.size() != n) throw ShapeError("ddl: inputs disagree on batch size");
  LossWithGrad<T> out;
  out.grad.assign(2 * n, T(0));
  const T lo = static_cast<T>(kProbEpsilon), hi = static_cast<T>(1.0 - kProbEpsilon);
  const T w = static_cast<T>(w1);
  for (std::size_t i = 0; i < n; ++i) {
    if ((y[i] != 0 && y[i] != 1) || (z[i] != 0 && z[i] != 1)) throw InvalidArgument("ddl: flags must be 0/1");
    const T yh = std::clamp(domain[2 * i], lo, hi);
    const T zh = std::clamp(domain[2 * i + 1], lo, hi);
    const T yi = static_cast<T>(y[i]), zi = static_cast<T>(z[i]);
    out.value -= w * (yi * std::log(yh) + (T(1) - yi) * std::log(T(1) - yh));
    out.grad[2 * i] = -w * (yi / yh - (T(1) - yi) / (T(1) - yh));
    if (y[i] == 1) {
      out.value -= zi * std::log(zh) + (T(1) - zi) * std::log(T(1) - zh);
      out.grad[2 * i + 1] = -(zi / zh - (T(1) - zi) / (T(1) - zh));
    }
  }
  return out;
}

/// Convenience overload on DomainPrediction values.
inline double ddl(std::span<const DomainPrediction> preds, std::span<const int> y, std::span<const int> z,
                  double w1) {
  std::vector<double> flat;
  for (const auto& p : preds) {
    flat.push_back(p.y_hat);
    flat.push_back(p.z_hat);
  }
  return ddl<double>(flat, y, z, w1).value;
}

/// Mean squared error over the pixels of annotated channels of one item.
/// Accumulates d(scale * mse)/d(pred) into `grad` when given.
template <class T>
T masked_mse(const T* pred, const PoseTarget<T>& target, std::size_t plane, T scale, T* grad) {
  std::size_t channels = 0;
  for (auto m : target.mask) channels += m;
  if (channels == 0) return T(0);
  const T inv = T(1) / static_cast<T>(channels * plane);
  T acc = 0;
  for (std::size_t k = 0; k < target.mask.size(); ++k) {
    if (!target.mask[k]) continue;
    const T* p = pred + k * plane;
    const T* t = target.maps.data() + k * plane;
    T* g = grad ? grad + k * plane : nullptr;
    for (std::size_t j = 0; j < plane; ++j) {
      const T diff = p[j] - t[j];
      acc += diff * diff;
      if (g) g[j] += scale * T(2) * diff * inv;
    }
  }
  return acc * inv;
}

template <class T>
struct PoseLoss {
  T total = T(0);  // w2 * apel + hpel
  T apel = T(0);   // sum of animal item MSEs
  T hpel = T(0);   // sum of human item MSEs
  std::size_t items = 0;
};

/// Rebalanced pose loss: sum_i [w2 * y_i * MSE_i + (1 - y_i) * MSE_i] over
/// items that carry a target. A target built for a pose-unlabeled item is a
/// contract violation. `grad`, when given, must match `pred` and receives
/// d(scale * total)/d(pred).
template <class T>
PoseLoss<T> pose_loss(const nn::Tensor<T>& pred, std::span<const std::optional<PoseTarget<T>>> targets, double w2,
                      nn::Tensor<T>* grad = nullptr, T scale = T(1)) {
  if (static_cast<int>(targets.size()) != pred.n) throw ShapeError("pose_loss: one target slot per item");
  if (grad && !grad->same_shape(pred)) throw ShapeError("pose_loss: gradient buffer shape mismatch");
  PoseLoss<T> out;
  for (int i = 0; i < pred.n; ++i) {
    const auto& t = targets[i];
    if (!t) continue;
    if (t->z == 1) throw ContractViolation("pose_loss: pose-unlabeled item carries no pose loss");
    if (t->maps.size() != pred.item_size()) throw ShapeError("pose_loss: target size mismatch");
    const T weight = t->y == 1 ? static_cast<T>(w2) : T(1);
    const T mse = masked_mse(pred.item(i), *t, pred.plane(), scale * weight, grad ? grad->item(i) : nullptr);
    (t->y == 1 ? out.apel : out.hpel) += mse;
    ++out.items;
  }
  out.total = static_cast<T>(w2) * out.apel + out.hpel;
  return out;
}

/// Combined objective alpha * DDL + beta * pose; requires alpha * beta < 0.
inline double wscda_loss(double ddl_value, double pose_value, double alpha, double beta) {
  if (!(alpha * beta < 0)) throw ConfigError("wscda_loss: alpha * beta must be negative");
  return alpha * ddl_value + beta * pose_value;
}

template <class T>
struct TargetLoss {
  T value = T(0);
  std::size_t accepted = 0;
  bool no_pseudo_labels = true;
};

/// Self-paced target loss: sum_j accept_j * MSE(pred_j, pseudo_j). Rejected
/// items are never read.
template <class T>
TargetLoss<T> pplo_target_loss(const nn::Tensor<T>& pred, std::span<const std::optional<PoseTarget<T>>> pseudo,
                               std::span<const int> accept, nn::Tensor<T>* grad = nullptr, T scale = T(1)) {
  if (static_cast<int>(pseudo.size()) != pred.n || static_cast<int>(accept.size()) != pred.n)
    throw ShapeError("pplo_target_loss: one slot per item");
  TargetLoss<T> out;
  for (int j = 0; j < pred.n; ++j) {
    if (accept[j] == 0) continue;
    if (!pseudo[j]) throw InvalidArgument("pplo_target_loss: accepted item without pseudo label");
    out.value += masked_mse(pred.item(j), *pseudo[j], pred.plane(), scale, grad ? grad->item(j) : nullptr);
    ++out.accepted;
  }
  out.no_pseudo_labels = out.accepted == 0;
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial update
// ---------------------------------------------------------------------------

struct StepStats {
  double ddl = 0.0;
  double pose = 0.0;
  double apel = 0.0;
  double hpel = 0.0;
  double objective = 0.0;
  double disc_acc_y = 0.0;
  double disc_acc_z = 0.0;  // over animal items; NaN if none
  bool single_domain = false;
};

template <class T>
struct AdversarialGradients {
  Gradients<T> grads;
  StepStats stats;
};

/// Gradients for one adversarial update. The discriminator descends
/// |alpha| * DDL; its gradient into the shared features is reversed, so the
/// extractor follows alpha * dDDL + beta * dPose; DAN and head follow beta * dPose.
template <class T>
AdversarialGradients<T> adversarial_gradients(const Model<T>& model, const Batch<T>& batch, const LossConfig& cfg) {
  if (cfg.alpha * cfg.beta > 0) throw ConfigError("adversarial step: alpha and beta must not share a sign");
  AdversarialGradients<T> out;
  auto trace = model.forward(batch.images);
  auto d = ddl<T>(trace.domain, batch.y, batch.z, cfg.w1);
  nn::Tensor<T> d_heat(trace.heatmaps.n, trace.heatmaps.c, trace.heatmaps.h, trace.heatmaps.w);
  auto p = pose_loss<T>(trace.heatmaps, batch.targets, cfg.w2, &d_heat, static_cast<T>(cfg.beta));
  const T a = static_cast<T>(std::abs(cfg.alpha));
  for (auto& g : d.grad) g *= a;
  const T reversal = cfg.alpha < 0 ? T(-1) : T(1);
  out.grads = model.backward(trace, &d_heat, d.grad, reversal);

  auto& s = out.stats;
  s.ddl = static_cast<double>(d.value);
  s.pose = static_cast<double>(p.total);
  s.apel = static_cast<double>(p.apel);
  s.hpel = static_cast<double>(p.hpel);
  s.objective = cfg.alpha * s.ddl + cfg.beta * s.pose;
  std::set<std::pair<int, int>> groups;
  int correct_y = 0, correct_z = 0, animals = 0;
  for (int i = 0; i < batch.size(); ++i) {
    groups.insert({batch.y[i], batch.y[i] == 1 ? batch.z[i] : 0});
    const auto pred = trace.prediction(i);
    correct_y += (pred.y_hat > 0.5) == (batch.y[i] == 1);
    if (batch.y[i] == 1) {
      ++animals;
      correct_z += (pred.z_hat > 0.5) == (batch.z[i] == 1);
    }
  }
  s.single_domain = groups.size() < 2;
  s.disc_acc_y = batch.size() ? static_cast<double>(correct_y) / batch.size() : 0.0;
  s.disc_acc_z = animals ? static_cast<double>(correct_z) / animals : std::nan("");
  return out;
}

template <class T, class Optimizer>
StepStats adversarial_step(Model<T>& model, const Batch<T>& batch, const LossConfig& cfg, Optimizer& opt,
                           double lr) {
  auto ag = adversarial_gradients(model, batch, cfg);
  opt.step(model, ag.grads, lr);
  return ag.stats;
}

}  // namespace cdapose
