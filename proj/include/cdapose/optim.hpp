#pragma once

#include <cmath>

#include "cdapose/network.hpp"

namespace cdapose {

/// RMSProp with PyTorch's default behaviour (no momentum, eps outside sqrt).
template <class T>
class RmsProp {
 public:
  explicit RmsProp(double decay = 0.99, double eps = 1e-8) : decay_(decay), eps_(eps) {}

  void step(Model<T>& model, const Gradients<T>& grads, double lr) {
    if (square_avg_.size() != model.blocks.size()) square_avg_ = model.zero_gradients();
    const T a = static_cast<T>(decay_), one_minus = static_cast<T>(1.0 - decay_);
    const T e = static_cast<T>(eps_), rate = static_cast<T>(lr);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      auto& p = model.blocks[b].value;
      auto& v = square_avg_[b];
      const auto& g = grads[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = a * v[i] + one_minus * g[i] * g[i];
        p[i] -= rate * g[i] / (std::sqrt(v[i]) + e);
      }
    }
  }

  const Gradients<T>& state() const { return square_avg_; }
  void reset() { square_avg_.clear(); }

 private:
  double decay_;
  double eps_;
  Gradients<T> square_avg_;
};

/// Plain gradient descent, used where a first-order descent argument is
/// needed verbatim.
template <class T>
class Sgd {
 public:
  void step(Model<T>& model, const Gradients<T>& grads, double lr) {
    const T rate = static_cast<T>(lr);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      auto& p = model.blocks[b].value;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= rate * grads[b][i];
    }
  }
};

}  // namespace cdapose
