#pragma once

// Minimal NCHW tensor primitives with explicit forward/backward passes.
// Everything is templated on the scalar type so the same network runs in
// float for training and in double for finite-difference checks.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cdapose/error.hpp"

namespace cdapose::nn {

// Over-aligned storage keeps Eigen's vectorised loops on a fixed split between
// peeled and packet elements, so float results do not vary with heap layout.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t item_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  T* item(int i) noexcept { return data.data() + i * item_size(); }
  const T* item(int i) const noexcept { return data.data() + i * item_size(); }
  bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// Output extent of a strided convolution window sweep.
inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// Unfolds a CxHxW image into (C*k*k) x (Ho*Wo) columns.
template <class T>
void im2col(const T* img, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* cols) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int ch = 0; ch < C; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(ch) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
}

/// Adjoint of im2col: accumulates columns back into a CxHxW image.
template <class T>
void col2im(const T* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* img) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int ch = 0; ch < C; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = img + (static_cast<std::size_t>(ch) * H + iy) * W;
          const T* src = row + static_cast<std::size_t>(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
}

struct ConvShape {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  std::size_t weight_count() const { return static_cast<std::size_t>(cout) * cin * k * k; }
};

/// Convolution. weight: cout x (cin*k*k), bias: cout.
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvShape& s, std::span<const T> weight,
                       std::span<const T> bias) {
  const int Ho = conv_out(x.h, s.k, s.stride, s.pad), Wo = conv_out(x.w, s.k, s.stride, s.pad);
  Tensor<T> y(x.n, s.cout, Ho, Wo);
  const int K = s.cin * s.k * s.k, P = Ho * Wo;
  Buffer<T> cols(static_cast<std::size_t>(K) * P);
  CMapMat<T> Wm(weight.data(), s.cout, K);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.item(i), s.cin, x.h, x.w, s.k, s.stride, s.pad, Ho, Wo, cols.data());
    MapMat<T> out(y.item(i), s.cout, P);
    out.noalias() = Wm * CMapMat<T>(cols.data(), K, P);
    for (int o = 0; o < s.cout; ++o) out.row(o).array() += bias[o];
  }
  return y;
}

/// Accumulates weight/bias gradients; returns dL/dx when `want_dx`.
template <class T>
Tensor<T> conv_backward(const Tensor<T>& x, const Tensor<T>& dy, const ConvShape& s,
                        std::span<const T> weight, std::span<T> dweight, std::span<T> dbias,
                        bool want_dx) {
  const int Ho = dy.h, Wo = dy.w;
  const int K = s.cin * s.k * s.k, P = Ho * Wo;
  Buffer<T> cols(static_cast<std::size_t>(K) * P), dcols;
  if (want_dx) dcols.resize(cols.size());
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.n, x.c, x.h, x.w);
  CMapMat<T> Wm(weight.data(), s.cout, K);
  MapMat<T> dW(dweight.data(), s.cout, K);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.item(i), s.cin, x.h, x.w, s.k, s.stride, s.pad, Ho, Wo, cols.data());
    CMapMat<T> g(dy.item(i), s.cout, P);
    dW.noalias() += g * CMapMat<T>(cols.data(), K, P).transpose();
    for (int o = 0; o < s.cout; ++o) dbias[o] += g.row(o).sum();
    if (want_dx) {
      MapMat<T>(dcols.data(), K, P).noalias() = Wm.transpose() * g;
      col2im(dcols.data(), s.cin, x.h, x.w, s.k, s.stride, s.pad, Ho, Wo, dx.item(i));
    }
  }
  return dx;
}

/// Transposed convolution (fractionally strided). weight: cin x (cout*k*k).
/// Output extent is (in-1)*stride - 2*pad + k.
template <class T>
Tensor<T> deconv_forward(const Tensor<T>& x, const ConvShape& s, std::span<const T> weight,
                         std::span<const T> bias) {
  const int Ho = (x.h - 1) * s.stride - 2 * s.pad + s.k;
  const int Wo = (x.w - 1) * s.stride - 2 * s.pad + s.k;
  Tensor<T> y(x.n, s.cout, Ho, Wo);
  const int K = s.cout * s.k * s.k, P = x.h * x.w;
  Buffer<T> cols(static_cast<std::size_t>(K) * P);
  CMapMat<T> Wm(weight.data(), s.cin, K);
  for (int i = 0; i < x.n; ++i) {
    MapMat<T>(cols.data(), K, P).noalias() = Wm.transpose() * CMapMat<T>(x.item(i), s.cin, P);
    col2im(cols.data(), s.cout, Ho, Wo, s.k, s.stride, s.pad, x.h, x.w, y.item(i));
    MapMat<T> out(y.item(i), s.cout, static_cast<Eigen::Index>(Ho) * Wo);
    for (int o = 0; o < s.cout; ++o) out.row(o).array() += bias[o];
  }
  return y;
}

template <class T>
Tensor<T> deconv_backward(const Tensor<T>& x, const Tensor<T>& dy, const ConvShape& s,
                          std::span<const T> weight, std::span<T> dweight, std::span<T> dbias,
                          bool want_dx) {
  const int K = s.cout * s.k * s.k, P = x.h * x.w;
  Buffer<T> dcols(static_cast<std::size_t>(K) * P);
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.n, x.c, x.h, x.w);
  CMapMat<T> Wm(weight.data(), s.cin, K);
  MapMat<T> dW(dweight.data(), s.cin, K);
  const Eigen::Index Po = static_cast<Eigen::Index>(dy.h) * dy.w;
  for (int i = 0; i < x.n; ++i) {
    im2col(dy.item(i), s.cout, dy.h, dy.w, s.k, s.stride, s.pad, x.h, x.w, dcols.data());
    CMapMat<T> dc(dcols.data(), K, P);
    dW.noalias() += CMapMat<T>(x.item(i), s.cin, P) * dc.transpose();
    CMapMat<T> g(dy.item(i), s.cout, Po);
    for (int o = 0; o < s.cout; ++o) dbias[o] += g.row(o).sum();
    if (want_dx) MapMat<T>(dx.item(i), s.cin, P).noalias() = Wm * dc;
  }
  return dx;
}

inline constexpr double kLeakySlope = 0.1;

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data)
    if (v < T(0)) v *= T(kLeakySlope);
  return y;
}

/// dL/dx given the pre-activation x.
template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (x.data[i] < T(0)) dy.data[i] *= T(kLeakySlope);
  return dy;
}

template <class T>
T leaky(T v) {
  return v < T(0) ? v * T(kLeakySlope) : v;
}

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

/// Global average pool: (N,C,H,W) -> N x C row-major.
template <class T>
Buffer<T> global_avg_pool(const Tensor<T>& x) {
  Buffer<T> out(static_cast<std::size_t>(x.n) * x.c);
  const T inv = T(1) / static_cast<T>(x.plane());
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.item(i) + ch * x.plane();
      T s = 0;
      for (std::size_t j = 0; j < x.plane(); ++j) s += p[j];
      out[static_cast<std::size_t>(i) * x.c + ch] = s * inv;
    }
  return out;
}

template <class T>
void global_avg_pool_backward(std::span<const T> dpool, Tensor<T>& dx) {
  const T inv = T(1) / static_cast<T>(dx.plane());
  for (int i = 0; i < dx.n; ++i)
    for (int ch = 0; ch < dx.c; ++ch) {
      T* p = dx.item(i) + ch * dx.plane();
      const T g = dpool[static_cast<std::size_t>(i) * dx.c + ch] * inv;
      for (std::size_t j = 0; j < dx.plane(); ++j) p[j] += g;
    }
}

/// Fully connected layer over N rows. weight: out x in.
template <class T>
Buffer<T> linear_forward(std::span<const T> x, int n, int in, int out, std::span<const T> weight,
                              std::span<const T> bias) {
  Buffer<T> y(static_cast<std::size_t>(n) * out);
  MapMat<T> Y(y.data(), n, out);
  Y.noalias() = CMapMat<T>(x.data(), n, in) * CMapMat<T>(weight.data(), out, in).transpose();
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) Y(i, o) += bias[o];
  return y;
}

template <class T>
Buffer<T> linear_backward(std::span<const T> x, std::span<const T> dy, int n, int in, int out,
                               std::span<const T> weight, std::span<T> dweight, std::span<T> dbias) {
  CMapMat<T> G(dy.data(), n, out);
  MapMat<T>(dweight.data(), out, in).noalias() += G.transpose() * CMapMat<T>(x.data(), n, in);
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) dbias[o] += G(i, o);
  Buffer<T> dx(static_cast<std::size_t>(n) * in);
  MapMat<T>(dx.data(), n, in).noalias() = G * CMapMat<T>(weight.data(), out, in);
  return dx;
}

}  // namespace cdapose::nn
