#pragma once

// Adversarial-contract probes shared by the unit tests and the acceptance runner.

#include <cmath>
#include <vector>

#include "cdapose/losses.hpp"
#include "cdapose/optim.hpp"

namespace cdapose::testing {

/// Largest |extractor DDL-path gradient + |alpha| * plain DDL gradient| and
/// |discriminator gradient - |alpha| * plain DDL gradient| over all
/// parameters, with beta = 0 so only the domain path contributes.
inline double reversal_error(const Model<double>& model, const Batch<double>& batch, double alpha, double w1) {
  LossConfig cfg{w1, 10.0, alpha, 0.0};
  const auto ag = adversarial_gradients(model, batch, cfg);
  const auto trace = model.forward(batch.images);
  const auto d = ddl<double>(trace.domain, batch.y, batch.z, w1);
  const auto plain = model.backward(trace, nullptr, d.grad, 1.0);
  const double a = std::abs(alpha);
  double worst = 0.0;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const Group g = model.blocks[b].group;
    for (std::size_t i = 0; i < plain[b].size(); ++i) {
      double expected = 0.0;
      if (g == Group::extractor) expected = -a * plain[b][i];
      if (g == Group::discriminator) expected = a * plain[b][i];
      worst = std::max(worst, std::abs(ag.grads[b][i] - expected));
    }
  }
  return worst;
}

struct DescentTrace {
  std::vector<double> before, after_discriminator, after_step;

  bool discriminator_always_descends() const {
    for (std::size_t i = 0; i < before.size(); ++i)
      if (!(after_discriminator[i] < before[i])) return false;
    return !before.empty();
  }
};

template <class T>
double batch_ddl(const Model<T>& model, const Batch<T>& batch, double w1) {
  const auto t = model.forward(batch.images);
  return static_cast<double>(ddl<T>(t.domain, batch.y, batch.z, w1).value);
}

/// Repeated beta = 0 adversarial steps on one batch. Before each full step the
/// discriminator's share of the update is applied to a copy, and the DDL it
/// reaches is recorded next to the DDL before and after the full step.
template <class T>
DescentTrace beta_zero_descent(Model<T> model, const Batch<T>& batch, double alpha, double lr, int steps) {
  LossConfig cfg{1.0, 10.0, alpha, 0.0};
  RmsProp<T> opt;
  DescentTrace out;
  for (int s = 0; s < steps; ++s) {
    const auto ag = adversarial_gradients(model, batch, cfg);
    out.before.push_back(batch_ddl(model, batch, cfg.w1));
    auto disc_only = ag.grads;
    for (std::size_t b = 0; b < model.blocks.size(); ++b)
      if (model.blocks[b].group != Group::discriminator) std::fill(disc_only[b].begin(), disc_only[b].end(), T(0));
    Model<T> probe = model;
    RmsProp<T> probe_opt = opt;
    probe_opt.step(probe, disc_only, lr);
    out.after_discriminator.push_back(batch_ddl(probe, batch, cfg.w1));
    opt.step(model, ag.grads, lr);
    out.after_step.push_back(batch_ddl(model, batch, cfg.w1));
  }
  return out;
}

}  // namespace cdapose::testing
