#pragma once

#include <optional>

#include "scl/tensor.hpp"

namespace scl {

enum class Padding { same, valid };
enum class KernelKind { standard, depthwise, pointwise };

// Process-wide execution policy. `deterministic` forces the naive reference
// kernels with their fixed summation order; otherwise blocked paths that may
// reorder reductions are allowed.
struct ExecConfig {
  bool deterministic = false;
};

inline ExecConfig& exec_config() {
  static ExecConfig cfg;
  return cfg;
}

// weights layout: standard {K,K,C_in,C_out}, depthwise {K,K,C}, pointwise {C_in,C_out}
template <typename T>
struct ConvKernel {
  KernelKind kind = KernelKind::standard;
  Tensor<T> weights;
  std::optional<Tensor<T>> bias;
  int stride = 1;
  Padding padding = Padding::same;
};

inline int conv_out_extent(int in, int k, int stride, Padding pad) {
  if (pad == Padding::same) return (in + stride - 1) / stride;
  return (in - k) / stride + 1;
}

// Zero padding before the first input element; the remainder goes after, so
// `same` with even total padding is symmetric and odd totals pad the far side
// one extra (the ceil(in/stride) output-size convention).
inline int pad_before(int in, int k, int stride, Padding pad) {
  if (pad == Padding::valid) return 0;
  int out = conv_out_extent(in, k, stride, pad);
  int total = std::max(0, (out - 1) * stride + k - in);
  return total / 2;
}

template <typename T>
inline void check_conv_input(const Tensor<T>& x, const ConvKernel<T>& k, const char* op) {
  require_rank(x, 3, op);
  require_nonempty(x, op);
  require_nonempty(k.weights, op);
  if (k.stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
  if (k.kind != KernelKind::pointwise) {
    const int kk = k.weights.extent(0);
    if (kk != k.weights.extent(1))
      throw std::invalid_argument(std::string(op) + ": non-square kernel " + shape_str(k.weights.shape));
    if (k.padding == Padding::same && kk % 2 == 0)
      throw std::invalid_argument(std::string(op) + ": `same` padding requires odd kernel size, got " +
                                  std::to_string(kk));
    if (k.padding == Padding::valid && (x.extent(0) < kk || x.extent(1) < kk))
      throw std::invalid_argument(std::string(op) + ": input " + shape_str(x.shape) +
                                  " smaller than kernel " + shape_str(k.weights.shape));
  }
}

// Direct quadruple-loop convolution; the semantic contract every other conv
// path must match. Summation order: ky, kx, c.
template <typename T>
inline Tensor<T> conv2d_naive(const Tensor<T>& x, const ConvKernel<T>& k) {
  check_conv_input(x, k, "conv2d");
  require_rank(k.weights, 4, "conv2d weights");
  const int kk = k.weights.extent(0), cin = k.weights.extent(2), cout = k.weights.extent(3);
  if (x.extent(2) != cin)
    throw std::invalid_argument("conv2d: input channels " + shape_str(x.shape) +
                                " do not match kernel " + shape_str(k.weights.shape));
  if (k.bias && (k.bias->rank() != 1 || k.bias->extent(0) != cout))
    throw std::invalid_argument("conv2d: bias shape " + shape_str(k.bias->shape) +
                                " does not match output channels " + std::to_string(cout));
  const int h = x.extent(0), w = x.extent(1);
  const int oh = conv_out_extent(h, kk, k.stride, k.padding);
  const int ow = conv_out_extent(w, kk, k.stride, k.padding);
  const int py = pad_before(h, kk, k.stride, k.padding);
  const int px = pad_before(w, kk, k.stride, k.padding);
  Tensor<T> out({oh, ow, cout});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int n = 0; n < cout; ++n) {
        T acc = k.bias ? (*k.bias)[n] : T(0);
        for (int ky = 0; ky < kk; ++ky) {
          const int iy = oy * k.stride + ky - py;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kk; ++kx) {
            const int ix = ox * k.stride + kx - px;
            if (ix < 0 || ix >= w) continue;
            for (int c = 0; c < cin; ++c) acc += x.at(iy, ix, c) * k.weights.at(ky, kx, c, n);
          }
        }
        out.at(oy, ox, n) = acc;
      }
  return out;
}

// Blocked path: im2col rows with a 4-way split accumulation over the patch
// axis, so the reduction order differs from the naive contract.
template <typename T>
inline Tensor<T> conv2d_blocked(const Tensor<T>& x, const ConvKernel<T>& k) {
  check_conv_input(x, k, "conv2d");
  require_rank(k.weights, 4, "conv2d weights");
  const int kk = k.weights.extent(0), cin = k.weights.extent(2), cout = k.weights.extent(3);
  if (x.extent(2) != cin)
    throw std::invalid_argument("conv2d: input channels " + shape_str(x.shape) +
                                " do not match kernel " + shape_str(k.weights.shape));
  const int h = x.extent(0), w = x.extent(1);
  const int oh = conv_out_extent(h, kk, k.stride, k.padding);
  const int ow = conv_out_extent(w, kk, k.stride, k.padding);
  const int py = pad_before(h, kk, k.stride, k.padding);
  const int px = pad_before(w, kk, k.stride, k.padding);
  const int patch = kk * kk * cin;
  std::vector<T> col(static_cast<size_t>(patch));
  Tensor<T> out({oh, ow, cout});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      std::fill(col.begin(), col.end(), T(0));
      for (int ky = 0; ky < kk; ++ky) {
        const int iy = oy * k.stride + ky - py;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kk; ++kx) {
          const int ix = ox * k.stride + kx - px;
          if (ix < 0 || ix >= w) continue;
          const T* src = &x.at(iy, ix, 0);
          T* dst = &col[static_cast<size_t>((ky * kk + kx) * cin)];
          for (int c = 0; c < cin; ++c) dst[c] = src[c];
        }
      }
      for (int n = 0; n < cout; ++n) {
        T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
        int p = 0;
        for (; p + 4 <= patch; p += 4) {
          a0 += col[p + 0] * k.weights[static_cast<std::int64_t>(p + 0) * cout + n];
          a1 += col[p + 1] * k.weights[static_cast<std::int64_t>(p + 1) * cout + n];
          a2 += col[p + 2] * k.weights[static_cast<std::int64_t>(p + 2) * cout + n];
          a3 += col[p + 3] * k.weights[static_cast<std::int64_t>(p + 3) * cout + n];
        }
        T acc = (a0 + a1) + (a2 + a3);
        for (; p < patch; ++p) acc += col[p] * k.weights[static_cast<std::int64_t>(p) * cout + n];
        if (k.bias) acc += (*k.bias)[n];
        out.at(oy, ox, n) = acc;
      }
    }
  return out;
}

template <typename T>
inline Tensor<T> conv2d(const Tensor<T>& x, const ConvKernel<T>& k) {
  return exec_config().deterministic ? conv2d_naive(x, k) : conv2d_blocked(x, k);
}

template <typename T>
inline Tensor<T> depthwise_conv2d(const Tensor<T>& x, const ConvKernel<T>& k) {
  check_conv_input(x, k, "depthwise_conv2d");
  require_rank(k.weights, 3, "depthwise_conv2d weights");
  const int kk = k.weights.extent(0), ch = k.weights.extent(2);
  if (x.extent(2) != ch)
    throw std::invalid_argument("depthwise_conv2d: input channels " + shape_str(x.shape) +
                                " do not match kernel " + shape_str(k.weights.shape));
  if (k.bias && (k.bias->rank() != 1 || k.bias->extent(0) != ch))
    throw std::invalid_argument("depthwise_conv2d: bias shape " + shape_str(k.bias->shape) +
                                " does not match channels " + std::to_string(ch));
  const int h = x.extent(0), w = x.extent(1);
  const int oh = conv_out_extent(h, kk, k.stride, k.padding);
  const int ow = conv_out_extent(w, kk, k.stride, k.padding);
  const int py = pad_before(h, kk, k.stride, k.padding);
  const int px = pad_before(w, kk, k.stride, k.padding);
  Tensor<T> out({oh, ow, ch});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      T* dst = &out.at(oy, ox, 0);
      if (k.bias)
        for (int c = 0; c < ch; ++c) dst[c] = (*k.bias)[c];
      for (int ky = 0; ky < kk; ++ky) {
        const int iy = oy * k.stride + ky - py;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kk; ++kx) {
          const int ix = ox * k.stride + kx - px;
          if (ix < 0 || ix >= w) continue;
          const T* src = &x.at(iy, ix, 0);
          const T* wv = &k.weights.at(ky, kx, 0);
          for (int c = 0; c < ch; ++c) dst[c] += src[c] * wv[c];
        }
      }
    }
  return out;
}

template <typename T>
inline Tensor<T> pointwise_naive(const Tensor<T>& x, const ConvKernel<T>& k) {
  const int cin = k.weights.extent(0), cout = k.weights.extent(1);
  const int h = x.extent(0), w = x.extent(1);
  Tensor<T> out({h, w, cout});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int n = 0; n < cout; ++n) {
        T acc = k.bias ? (*k.bias)[n] : T(0);
        for (int c = 0; c < cin; ++c) acc += x.at(y, xx, c) * k.weights.at2(c, n);
        out.at(y, xx, n) = acc;
      }
  return out;
}

template <typename T>
inline Tensor<T> pointwise_blocked(const Tensor<T>& x, const ConvKernel<T>& k) {
  const int cin = k.weights.extent(0), cout = k.weights.extent(1);
  const std::int64_t pixels = static_cast<std::int64_t>(x.extent(0)) * x.extent(1);
  Tensor<T> out({x.extent(0), x.extent(1), cout});
  const T* w = k.weights.data.data();
  for (std::int64_t p = 0; p < pixels; ++p) {
    const T* src = &x.data[static_cast<size_t>(p * cin)];
    T* dst = &out.data[static_cast<size_t>(p * cout)];
    if (k.bias)
      for (int n = 0; n < cout; ++n) dst[n] = (*k.bias)[n];
    else
      for (int n = 0; n < cout; ++n) dst[n] = T(0);
    for (int c = 0; c < cin; ++c) {
      const T v = src[c];
      const T* wr = w + static_cast<std::int64_t>(c) * cout;
      for (int n = 0; n < cout; ++n) dst[n] += v * wr[n];
    }
  }
  return out;
}

template <typename T>
inline Tensor<T> pointwise_conv2d(const Tensor<T>& x, const ConvKernel<T>& k) {
  require_rank(x, 3, "pointwise_conv2d");
  require_nonempty(x, "pointwise_conv2d");
  require_rank(k.weights, 2, "pointwise_conv2d weights");
  if (x.extent(2) != k.weights.extent(0))
    throw std::invalid_argument("pointwise_conv2d: input channels " + shape_str(x.shape) +
                                " do not match kernel " + shape_str(k.weights.shape));
  if (k.bias && (k.bias->rank() != 1 || k.bias->extent(0) != k.weights.extent(1)))
    throw std::invalid_argument("pointwise_conv2d: bias shape " + shape_str(k.bias->shape) +
                                " does not match output channels " +
                                std::to_string(k.weights.extent(1)));
  // pointwise accumulates over c in the same order on both paths; the blocked
  // path only changes the loop nesting, so results coincide with naive order
  // when the compiler preserves FP semantics (no fast-math in this project).
  return exec_config().deterministic ? pointwise_naive(x, k) : pointwise_blocked(x, k);
}

// Rank-decomposed dense kernel: K_full[i,j,c,n] = dw[i,j,c] * pw[c,n].
template <typename T>
inline Tensor<T> expand_separable(const Tensor<T>& dw, const Tensor<T>& pw) {
  require_rank(dw, 3, "expand_separable depthwise");
  require_rank(pw, 2, "expand_separable pointwise");
  if (dw.extent(2) != pw.extent(0))
    throw std::invalid_argument("expand_separable: channel mismatch " + shape_str(dw.shape) + " vs " +
                                shape_str(pw.shape));
  const int kk = dw.extent(0), cin = dw.extent(2), cout = pw.extent(1);
  Tensor<T> full({kk, kk, cin, cout});
  for (int ky = 0; ky < kk; ++ky)
    for (int kx = 0; kx < kk; ++kx)
      for (int c = 0; c < cin; ++c)
        for (int n = 0; n < cout; ++n) full.at(ky, kx, c, n) = dw.at(ky, kx, c) * pw.at2(c, n);
  return full;
}

// Depthwise then pointwise. The depthwise stage must not carry a bias; the
// single bias of the composite sits on the pointwise stage.
template <typename T>
inline Tensor<T> separable_conv2d(const Tensor<T>& x, const ConvKernel<T>& dw,
                                  const ConvKernel<T>& pw) {
  if (dw.bias)
    throw std::invalid_argument("separable_conv2d: depthwise stage must not carry a bias");
  return pointwise_conv2d(depthwise_conv2d(x, dw), pw);
}

// Floor semantics: trailing rows/cols that do not fill a window are dropped.
template <typename T>
inline Tensor<T> maxpool2d(const Tensor<T>& x, int window = 2) {
  require_rank(x, 3, "maxpool2d");
  require_nonempty(x, "maxpool2d");
  if (window < 1) throw std::invalid_argument("maxpool2d: window must be >= 1");
  const int h = x.extent(0), w = x.extent(1), ch = x.extent(2);
  const int oh = h / window, ow = w / window;
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("maxpool2d: input " + shape_str(x.shape) + " smaller than window " +
                                std::to_string(window));
  Tensor<T> out({oh, ow, ch});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int c = 0; c < ch; ++c) {
        T m = x.at(oy * window, ox * window, c);
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx)
            m = std::max(m, x.at(oy * window + dy, ox * window + dx, c));
        out.at(oy, ox, c) = m;
      }
  return out;
}

enum class Act { sigmoid, tanh, leaky_relu, relu6 };

template <typename T>
inline T act_scalar(Act kind, T v, T slope = T(0.1)) {
  switch (kind) {
    case Act::sigmoid:
      return T(1) / (T(1) + std::exp(-v));
    case Act::tanh:
      return std::tanh(v);
    case Act::leaky_relu:
      return v > T(0) ? v : slope * v;
    case Act::relu6:
      return std::min(std::max(v, T(0)), T(6));
  }
  return v;
}

template <typename T>
inline Tensor<T> activation(Act kind, const Tensor<T>& x, T slope = T(0.1)) {
  Tensor<T> out = x;
  for (auto& v : out.data) v = act_scalar(kind, v, slope);
  return out;
}

// Per-channel affine normalization with stored statistics (inference form).
template <typename T>
inline Tensor<T> batchnorm_infer(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var,
                                 const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-3)) {
  require_nonempty(x, "batchnorm_infer");
  const int ch = x.extent(x.rank() - 1);
  for (const auto* p : {&mean, &var, &gamma, &beta})
    if (p->rank() != 1 || p->extent(0) != ch)
      throw std::invalid_argument("batchnorm_infer: stat shape " + shape_str(p->shape) +
                                  " does not match channels " + std::to_string(ch));
  std::vector<T> scale(static_cast<size_t>(ch)), shift(static_cast<size_t>(ch));
  for (int c = 0; c < ch; ++c) {
    scale[static_cast<size_t>(c)] = gamma[c] / std::sqrt(var[c] + eps);
    shift[static_cast<size_t>(c)] = beta[c] - mean[c] * scale[static_cast<size_t>(c)];
  }
  Tensor<T> out = x;
  const std::int64_t rows = x.size() / ch;
  for (std::int64_t r = 0; r < rows; ++r) {
    T* v = &out.data[static_cast<size_t>(r * ch)];
    for (int c = 0; c < ch; ++c) v[c] = v[c] * scale[static_cast<size_t>(c)] + shift[static_cast<size_t>(c)];
  }
  return out;
}

}  // namespace scl
