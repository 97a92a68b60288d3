#pragma once

// Four-part keypoint network: feature extractor -> domain adaptation network
// (DAN) -> keypoint head, with a domain discriminator branching off the
// extractor output.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cdapose/core.hpp"
#include "cdapose/nn.hpp"

namespace cdapose {

enum class Group : int { extractor = 0, dan = 1, keypoint_head = 2, discriminator = 3 };
inline constexpr int kGroupCount = 4;

inline const char* to_string(Group g) {
  switch (g) {
    case Group::extractor: return "extractor";
    case Group::dan: return "dan";
    case Group::keypoint_head: return "keypoint_head";
    case Group::discriminator: return "discriminator";
  }
  return "?";
}

/// Clamp applied to discriminator outputs before any log is taken.
inline constexpr double kProbEpsilon = 1e-7;

struct ModelConfig {
  int input_height = 64;
  int input_width = 64;
  int input_channels = 3;
  std::vector<int> stage_channels = {8, 16, 32, 32};  // one stride-2 3x3 conv per stage
  bool use_se = false;
  int se_reduction = 4;
  bool use_dan = true;
  int head_channels = 16;
  int num_keypoints = 17;
  int disc_hidden = 32;
  int output_stride = 4;
  bool disc_after_dan = false;  // discriminator reads DAN output instead of extractor output

  int extractor_stride() const { return 1 << static_cast<int>(stage_channels.size()); }
  int upsample_blocks() const {
    int blocks = 0;
    for (int s = extractor_stride(); s > output_stride; s /= 2) ++blocks;
    return blocks;
  }
  int grid_height() const { return input_height / output_stride; }
  int grid_width() const { return input_width / output_stride; }

  void validate() const {
    if (input_height <= 0 || input_width <= 0 || input_channels <= 0)
      throw ConfigError("model: input dimensions must be positive");
    if (stage_channels.empty()) throw ConfigError("model: at least one extractor stage is required");
    for (int c : stage_channels)
      if (c <= 0) throw ConfigError("model: stage channels must be positive");
    if (num_keypoints < 1) throw ConfigError("model: num_keypoints must be >= 1");
    if (head_channels < 1 || disc_hidden < 1 || se_reduction < 1)
      throw ConfigError("model: head_channels, disc_hidden and se_reduction must be >= 1");
    if (output_stride < 1 || (output_stride & (output_stride - 1)) != 0)
      throw ConfigError("model: output stride " + std::to_string(output_stride) +
                        " is not a power of two");
    if (input_height % output_stride != 0 || input_width % output_stride != 0)
      throw ConfigError("model: output stride must divide the input size");
    if (output_stride > extractor_stride())
      throw ConfigError("model: output stride exceeds the extractor stride");
    if (input_height % extractor_stride() != 0 || input_width % extractor_stride() != 0)
      throw ConfigError("model: input size must be divisible by 2^stages");
  }
};

/// Discriminator outputs for one item, clamped into (eps, 1 - eps).
struct DomainPrediction {
  double y_hat = 0.5;  // animal vs human
  double z_hat = 0.5;  // target vs source
};

template <class T>
using Gradients = std::vector<nn::Buffer<T>>;

template <class T>
class Model {
 public:
  struct Block {
    std::string name;
    Group group;
    std::vector<int> shape;
    nn::Buffer<T> value;
  };

  struct Layer {
    nn::ConvShape shape;
    int weight = -1;
    int bias = -1;
  };

  struct SELayer {
    int channels = 0, hidden = 0;
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  };

  /// Intermediate activations of one forward pass, needed by backward().
  struct Trace {
    nn::Tensor<T> input;
    std::vector<nn::Tensor<T>> stage_in, stage_pre, stage_act;
    std::vector<nn::Buffer<T>> se_pool, se_hpre, se_gate;
    nn::Tensor<T> features, dan_pre, dan_out;
    std::vector<nn::Tensor<T>> head_in, head_pre;
    nn::Tensor<T> heatmaps;  // sigmoid activations, N x d x H' x W'
    nn::Buffer<T> pool, disc_hpre, disc_h, disc_logits;
    nn::Buffer<T> domain;  // N x 2 clamped probabilities (y_hat, z_hat)
    std::vector<unsigned char> domain_clamped;

    int batch() const { return input.n; }
    DomainPrediction prediction(int i) const {
      return {static_cast<double>(domain[2 * i]), static_cast<double>(domain[2 * i + 1])};
    }
  };

  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<Block> blocks;
  std::vector<Layer> stages;
  std::vector<SELayer> se;
  Layer dan;
  std::vector<Layer> head;
  bool head_is_deconv = true;
  std::array<int, 4> disc{-1, -1, -1, -1};  // w1, b1, w2, b2

  static Model build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.config = cfg;
    m.seed = seed;
    std::mt19937_64 rng(seed);
    auto add = [&](std::string name, Group g, std::vector<int> shape, double stddev, double fill = 0.0) {
      Block b{std::move(name), g, std::move(shape), {}};
      std::size_t count = 1;
      for (int s : b.shape) count *= static_cast<std::size_t>(s);
      b.value.resize(count, static_cast<T>(fill));
      if (stddev > 0) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : b.value) v = static_cast<T>(dist(rng));
      }
      m.blocks.push_back(std::move(b));
      return static_cast<int>(m.blocks.size()) - 1;
    };

    int cin = cfg.input_channels;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
      const int cout = cfg.stage_channels[s];
      Layer l;
      l.shape = {cin, cout, 3, 2, 1};
      const std::string p = "extractor.stage" + std::to_string(s);
      l.weight = add(p + ".weight", Group::extractor, {cout, cin, 3, 3}, std::sqrt(2.0 / (cin * 9)));
      l.bias = add(p + ".bias", Group::extractor, {cout}, 0.0);
      m.stages.push_back(l);
      if (cfg.use_se) {
        SELayer e;
        e.channels = cout;
        e.hidden = std::max(1, cout / cfg.se_reduction);
        e.w1 = add(p + ".se.fc1.weight", Group::extractor, {e.hidden, cout}, std::sqrt(2.0 / cout));
        e.b1 = add(p + ".se.fc1.bias", Group::extractor, {e.hidden}, 0.0);
        e.w2 = add(p + ".se.fc2.weight", Group::extractor, {cout, e.hidden}, std::sqrt(1.0 / e.hidden));
        e.b2 = add(p + ".se.fc2.bias", Group::extractor, {cout}, 0.0);
        m.se.push_back(e);
      }
      cin = cout;
    }
    const int feat = cin;
    if (cfg.use_dan) {
      m.dan.shape = {feat, feat, 1, 1, 0};
      m.dan.weight = add("dan.adapter.weight", Group::dan, {feat, feat, 1, 1}, 0.1 * std::sqrt(2.0 / feat));
      m.dan.bias = add("dan.adapter.bias", Group::dan, {feat}, 0.0);
    }
    const int ups = cfg.upsample_blocks();
    m.head_is_deconv = ups > 0;
    if (ups == 0) {
      Layer l;
      l.shape = {feat, cfg.num_keypoints, 1, 1, 0};
      l.weight = add("head.out.weight", Group::keypoint_head, {cfg.num_keypoints, feat, 1, 1},
                     std::sqrt(1.0 / feat));
      l.bias = add("head.out.bias", Group::keypoint_head, {cfg.num_keypoints}, 0.0, -3.0);
      m.head.push_back(l);
    } else {
      int hin = feat;
      for (int b = 0; b < ups; ++b) {
        const bool last = b + 1 == ups;
        const int hout = last ? cfg.num_keypoints : cfg.head_channels;
        Layer l;
        l.shape = {hin, hout, 4, 2, 1};
        const std::string p = "head.up" + std::to_string(b);
        const double fan_in = hin * 4.0;
        l.weight = add(p + ".weight", Group::keypoint_head, {hin, hout, 4, 4},
                       last ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in));
        l.bias = add(p + ".bias", Group::keypoint_head, {hout}, 0.0, last ? -3.0 : 0.0);
        m.head.push_back(l);
        hin = hout;
      }
    }
    const int dh = cfg.disc_hidden;
    m.disc[0] = add("disc.fc1.weight", Group::discriminator, {dh, feat}, std::sqrt(2.0 / feat));
    m.disc[1] = add("disc.fc1.bias", Group::discriminator, {dh}, 0.0);
    m.disc[2] = add("disc.fc2.weight", Group::discriminator, {2, dh}, std::sqrt(1.0 / dh));
    m.disc[3] = add("disc.fc2.bias", Group::discriminator, {2}, 0.0);
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.value.size();
    return n;
  }

  std::size_t parameter_count(Group g) const {
    std::size_t n = 0;
    for (const auto& b : blocks)
      if (b.group == g) n += b.value.size();
    return n;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) g[i].assign(blocks[i].value.size(), T(0));
    return g;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.config = config;
    m.seed = seed;
    for (const auto& b : blocks)
      m.blocks.push_back({b.name, b.group, b.shape, nn::Buffer<U>(b.value.begin(), b.value.end())});
    for (const auto& l : stages) m.stages.push_back({l.shape, l.weight, l.bias});
    for (const auto& e : se) m.se.push_back({e.channels, e.hidden, e.w1, e.b1, e.w2, e.b2});
    m.dan = {dan.shape, dan.weight, dan.bias};
    for (const auto& l : head) m.head.push_back({l.shape, l.weight, l.bias});
    m.head_is_deconv = head_is_deconv;
    m.disc = disc;
    return m;
  }

  // ------------------------------------------------------------------------
  // Forward
  // ------------------------------------------------------------------------

  Trace forward(const nn::Tensor<T>& images) const {
    if (images.c != config.input_channels || images.h != config.input_height ||
        images.w != config.input_width)
      throw ShapeError("forward: expected images of " + std::to_string(config.input_channels) + "x" +
                       std::to_string(config.input_height) + "x" + std::to_string(config.input_width) +
                       ", got " + std::to_string(images.c) + "x" + std::to_string(images.h) + "x" +
                       std::to_string(images.w));
    Trace t;
    t.input = images;
    nn::Tensor<T> x = images;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const Layer& l = stages[s];
      t.stage_in.push_back(x);
      t.stage_pre.push_back(nn::conv_forward<T>(x, l.shape, span(l.weight), span(l.bias)));
      t.stage_act.push_back(nn::leaky_relu(t.stage_pre.back()));
      x = t.stage_act.back();
      if (config.use_se) x = se_forward(s, x, t);
    }
    t.features = x;
    if (config.use_dan) {
      t.dan_pre = nn::conv_forward<T>(x, dan.shape, span(dan.weight), span(dan.bias));
      t.dan_out = x;
      for (std::size_t i = 0; i < x.data.size(); ++i) t.dan_out.data[i] += nn::leaky(t.dan_pre.data[i]);
    } else {
      t.dan_out = x;
    }
    nn::Tensor<T> h = t.dan_out;
    for (std::size_t b = 0; b < head.size(); ++b) {
      const Layer& l = head[b];
      t.head_in.push_back(h);
      t.head_pre.push_back(head_is_deconv ? nn::deconv_forward<T>(h, l.shape, span(l.weight), span(l.bias))
                                          : nn::conv_forward<T>(h, l.shape, span(l.weight), span(l.bias)));
      if (b + 1 < head.size()) h = nn::leaky_relu(t.head_pre.back());
    }
    t.heatmaps = t.head_pre.back();
    for (auto& v : t.heatmaps.data) v = nn::sigmoid(v);

    const nn::Tensor<T>& disc_in = config.disc_after_dan ? t.dan_out : t.features;
    const int n = images.n, c = disc_in.c, dh = config.disc_hidden;
    t.pool = nn::global_avg_pool(disc_in);
    t.disc_hpre = nn::linear_forward<T>(t.pool, n, c, dh, span(disc[0]), span(disc[1]));
    t.disc_h = t.disc_hpre;
    for (auto& v : t.disc_h) v = nn::leaky(v);
    t.disc_logits = nn::linear_forward<T>(t.disc_h, n, dh, 2, span(disc[2]), span(disc[3]));
    t.domain.resize(t.disc_logits.size());
    t.domain_clamped.assign(t.disc_logits.size(), 0);
    const T lo = static_cast<T>(kProbEpsilon), hi = static_cast<T>(1.0 - kProbEpsilon);
    for (std::size_t i = 0; i < t.disc_logits.size(); ++i) {
      const T p = nn::sigmoid(t.disc_logits[i]);
      if (p <= lo || p >= hi) t.domain_clamped[i] = 1;
      t.domain[i] = std::clamp(p, lo, hi);
    }
    return t;
  }

  // ------------------------------------------------------------------------
  // Backward
  // ------------------------------------------------------------------------

  /// Gradients of a scalar loss given its derivatives with respect to the
  /// heatmap activations (N x d x H' x W', may be empty) and to the clamped
  /// domain probabilities (N x 2, may be empty). The discriminator's gradient
  /// into the shared features is multiplied by `disc_feature_scale`
  /// (-1 realises gradient reversal).
  Gradients<T> backward(const Trace& t, const nn::Tensor<T>* d_heat, std::span<const T> d_domain,
                        T disc_feature_scale = T(1)) const {
    Gradients<T> g = zero_gradients();
    const int n = t.batch();
    nn::Tensor<T> d_feat(t.features.n, t.features.c, t.features.h, t.features.w);
    nn::Tensor<T> d_dan_out(t.dan_out.n, t.dan_out.c, t.dan_out.h, t.dan_out.w);
    bool feat_touched = false;

    if (!d_domain.empty()) {
      if (d_domain.size() != static_cast<std::size_t>(n) * 2)
        throw ShapeError("backward: domain gradient must be N x 2");
      const int dh = config.disc_hidden;
      const nn::Tensor<T>& disc_in = config.disc_after_dan ? t.dan_out : t.features;
      nn::Buffer<T> d_logits(d_domain.size());
      for (std::size_t i = 0; i < d_logits.size(); ++i) {
        const T p = t.domain[i];
        d_logits[i] = t.domain_clamped[i] ? T(0) : d_domain[i] * p * (T(1) - p);
      }
      auto d_h = nn::linear_backward<T>(t.disc_h, d_logits, n, dh, 2, span(disc[2]), gspan(g, disc[2]),
                                        gspan(g, disc[3]));
      for (std::size_t i = 0; i < d_h.size(); ++i)
        if (t.disc_hpre[i] < T(0)) d_h[i] *= T(nn::kLeakySlope);
      auto d_pool = nn::linear_backward<T>(t.pool, d_h, n, disc_in.c, dh, span(disc[0]), gspan(g, disc[0]),
                                           gspan(g, disc[1]));
      for (auto& v : d_pool) v *= disc_feature_scale;
      nn::global_avg_pool_backward<T>(d_pool, config.disc_after_dan ? d_dan_out : d_feat);
      feat_touched = true;
    }

    if (d_heat != nullptr) {
      if (!d_heat->same_shape(t.heatmaps)) throw ShapeError("backward: heatmap gradient shape mismatch");
      nn::Tensor<T> d = *d_heat;
      for (std::size_t i = 0; i < d.data.size(); ++i) {
        const T p = t.heatmaps.data[i];
        d.data[i] *= p * (T(1) - p);
      }
      for (int b = static_cast<int>(head.size()) - 1; b >= 0; --b) {
        const Layer& l = head[b];
        if (b + 1 < static_cast<int>(head.size())) d = nn::leaky_relu_backward(t.head_pre[b], std::move(d));
        d = head_is_deconv
                ? nn::deconv_backward<T>(t.head_in[b], d, l.shape, span(l.weight), gspan(g, l.weight),
                                         gspan(g, l.bias), true)
                : nn::conv_backward<T>(t.head_in[b], d, l.shape, span(l.weight), gspan(g, l.weight),
                                       gspan(g, l.bias), true);
      }
      for (std::size_t i = 0; i < d.data.size(); ++i) d_dan_out.data[i] += d.data[i];
      feat_touched = true;
    }

    if (!feat_touched) return g;

    // DAN: out = x + leaky(conv1x1(x))
    if (config.use_dan) {
      for (std::size_t i = 0; i < d_dan_out.data.size(); ++i) d_feat.data[i] += d_dan_out.data[i];
      nn::Tensor<T> d_pre = nn::leaky_relu_backward(t.dan_pre, d_dan_out);
      auto dx = nn::conv_backward<T>(t.features, d_pre, dan.shape, span(dan.weight), gspan(g, dan.weight),
                                     gspan(g, dan.bias), true);
      for (std::size_t i = 0; i < dx.data.size(); ++i) d_feat.data[i] += dx.data[i];
    } else {
      for (std::size_t i = 0; i < d_dan_out.data.size(); ++i) d_feat.data[i] += d_dan_out.data[i];
    }

    nn::Tensor<T> d = std::move(d_feat);
    for (int s = static_cast<int>(stages.size()) - 1; s >= 0; --s) {
      if (config.use_se) d = se_backward(s, t, d, g);
      d = nn::leaky_relu_backward(t.stage_pre[s], std::move(d));
      const Layer& l = stages[s];
      d = nn::conv_backward<T>(t.stage_in[s], d, l.shape, span(l.weight), gspan(g, l.weight), gspan(g, l.bias),
                               s > 0);
    }
    return g;
  }

  std::span<const T> span(int block) const { return blocks[block].value; }
  std::span<T> mutable_span(int block) { return blocks[block].value; }

 private:
  static std::span<T> gspan(Gradients<T>& g, int block) { return g[block]; }

  nn::Tensor<T> se_forward(std::size_t s, const nn::Tensor<T>& x, Trace& t) const {
    const SELayer& e = se[s];
    const int n = x.n;
    auto pool = nn::global_avg_pool(x);
    auto hpre = nn::linear_forward<T>(pool, n, e.channels, e.hidden, span(e.w1), span(e.b1));
    auto h = hpre;
    for (auto& v : h) v = nn::leaky(v);
    auto gate = nn::linear_forward<T>(h, n, e.hidden, e.channels, span(e.w2), span(e.b2));
    for (auto& v : gate) v = nn::sigmoid(v);
    nn::Tensor<T> y = x;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < x.c; ++c) {
        T* p = y.item(i) + c * x.plane();
        const T gv = gate[static_cast<std::size_t>(i) * x.c + c];
        for (std::size_t j = 0; j < x.plane(); ++j) p[j] *= gv;
      }
    t.se_pool.push_back(std::move(pool));
    t.se_hpre.push_back(std::move(hpre));
    t.se_gate.push_back(std::move(gate));
    return y;
  }

  nn::Tensor<T> se_backward(int s, const Trace& t, const nn::Tensor<T>& dy, Gradients<T>& g) const {
    const SELayer& e = se[s];
    const nn::Tensor<T>& x = t.stage_act[s];
    const auto& gate = t.se_gate[s];
    const int n = x.n;
    nn::Tensor<T> dx = dy;
    nn::Buffer<T> d_gate(static_cast<std::size_t>(n) * x.c, T(0));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < x.c; ++c) {
        const std::size_t off = static_cast<std::size_t>(c) * x.plane();
        const T* xp = x.item(i) + off;
        const T* gp = dy.item(i) + off;
        T* dp = dx.item(i) + off;
        const T gv = gate[static_cast<std::size_t>(i) * x.c + c];
        T acc = 0;
        for (std::size_t j = 0; j < x.plane(); ++j) {
          acc += gp[j] * xp[j];
          dp[j] = gp[j] * gv;
        }
        d_gate[static_cast<std::size_t>(i) * x.c + c] = acc * gv * (T(1) - gv);
      }
    nn::Buffer<T> h = t.se_hpre[s];
    for (auto& v : h) v = nn::leaky(v);
    auto d_h = nn::linear_backward<T>(h, d_gate, n, e.hidden, e.channels, span(e.w2), gspan(g, e.w2),
                                      gspan(g, e.b2));
    for (std::size_t i = 0; i < d_h.size(); ++i)
      if (t.se_hpre[s][i] < T(0)) d_h[i] *= T(nn::kLeakySlope);
    auto d_pool = nn::linear_backward<T>(t.se_pool[s], d_h, n, e.channels, e.hidden, span(e.w1),
                                         gspan(g, e.w1), gspan(g, e.b1));
    nn::global_avg_pool_backward<T>(d_pool, dx);
    return dx;
  }
};

/// Splits a flat gradient list into the four parameter groups.
template <class T>
std::array<nn::Buffer<T>, kGroupCount> gradient_groups(const Model<T>& model, const Gradients<T>& grads) {
  std::array<nn::Buffer<T>, kGroupCount> out;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    auto& dst = out[static_cast<int>(model.blocks[i].group)];
    dst.insert(dst.end(), grads[i].begin(), grads[i].end());
  }
  return out;
}

/// Packs instance images into an N x C x H x W tensor.
template <class T>
nn::Tensor<T> to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw ShapeError("to_tensor: empty batch");
  const Image& first = *images[0];
  nn::Tensor<T> t(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = *images[i];
    if (im.height != first.height || im.width != first.width || im.channels != first.channels)
      throw ShapeError("to_tensor: images in a batch must share one size");
    T* dst = t.item(static_cast<int>(i));
    for (int r = 0; r < im.height; ++r)
      for (int c = 0; c < im.width; ++c)
        for (int ch = 0; ch < im.channels; ++ch)
          dst[(static_cast<std::size_t>(ch) * im.height + r) * im.width + c] = static_cast<T>(im.at(r, c, ch));
  }
  return t;
}

/// Heatmap stack for batch item `i` of a forward trace.
template <class T>
HeatmapStack heatmap_stack(const nn::Tensor<T>& heat, int i) {
  const T* p = heat.item(i);
  return HeatmapStack::from_maps(heat.c, heat.h, heat.w, std::vector<double>(p, p + heat.item_size()));
}

/// FNV-1a over the raw parameter bytes; used to compare runs for determinism.
template <class T>
std::uint64_t parameter_checksum(const Model<T>& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& b : m.blocks) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(b.value.data());
    for (std::size_t i = 0; i < b.value.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace cdapose
