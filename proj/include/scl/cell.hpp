#pragma once

#include <array>
#include <string>

#include "scl/autodiff.hpp"
#include "scl/kernels.hpp"
#include "scl/tensor.hpp"

namespace scl {

enum class CellKind { separable, dense };

inline const std::array<const char*, 4>& gate_names() {
  static const std::array<const char*, 4> names{"i", "f", "c", "o"};
  return names;
}

// One gate of the separable cell: depthwise+pointwise pair per path, one
// shared bias added after the two paths are summed. The pointwise stages
// carry no bias of their own.
template <typename T>
struct SepGate {
  Tensor<T> dw_x, pw_x, dw_h, pw_h, bias;
};

// One gate of the dense reference cell: full convolution per path.
template <typename T>
struct DenseGate {
  Tensor<T> w_x, w_h, bias;
};

template <typename T>
struct CellParams {
  CellKind kind = CellKind::separable;
  int k = 3;
  int cx = 0;
  int ch = 0;
  std::array<SepGate<T>, 4> sep;      // populated when kind == separable
  std::array<DenseGate<T>, 4> dense;  // populated when kind == dense
};

template <typename T>
struct CellState {
  Tensor<T> h, c;
};

template <typename T>
inline CellState<T> zero_state(int height, int width, int ch) {
  return CellState<T>{Tensor<T>({height, width, ch}), Tensor<T>({height, width, ch})};
}

// Per-gate closed-form parameter counts (bias included).
inline std::int64_t sep_gate_param_count(int k, int cx, int ch) {
  return static_cast<std::int64_t>(k) * k * cx + static_cast<std::int64_t>(cx) * ch +
         static_cast<std::int64_t>(k) * k * ch + static_cast<std::int64_t>(ch) * ch + ch;
}

inline std::int64_t dense_gate_param_count(int k, int cx, int ch) {
  return static_cast<std::int64_t>(k) * k * cx * ch + static_cast<std::int64_t>(k) * k * ch * ch +
         ch;
}

inline std::int64_t cell_param_count(CellKind kind, int k, int cx, int ch) {
  return 4 * (kind == CellKind::separable ? sep_gate_param_count(k, cx, ch)
                                          : dense_gate_param_count(k, cx, ch));
}

// Xavier/Glorot uniform: limit = sqrt(6 / (fan_in + fan_out)).
template <typename T>
inline void xavier_fill(Tensor<T>& t, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
inline Tensor<T> xavier_conv(const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  std::int64_t fan_in, fan_out;
  if (shape.size() == 4) {  // standard conv {K,K,Cin,Cout}
    fan_in = static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
    fan_out = static_cast<std::int64_t>(shape[0]) * shape[1] * shape[3];
  } else if (shape.size() == 3) {  // depthwise {K,K,C}: each channel sees K*K taps
    fan_in = static_cast<std::int64_t>(shape[0]) * shape[1];
    fan_out = fan_in;
  } else {  // pointwise / dense {in,out}
    fan_in = shape[0];
    fan_out = shape[1];
  }
  xavier_fill(t, fan_in, fan_out, rng);
  return t;
}

template <typename T>
inline CellParams<T> make_cell(CellKind kind, int k, int cx, int ch, Rng& rng) {
  if (k < 1 || k % 2 == 0)
    throw std::invalid_argument("make_cell: kernel size must be odd and >= 1, got " +
                                std::to_string(k));
  CellParams<T> p;
  p.kind = kind;
  p.k = k;
  p.cx = cx;
  p.ch = ch;
  for (int g = 0; g < 4; ++g) {
    if (kind == CellKind::separable) {
      p.sep[g].dw_x = xavier_conv<T>({k, k, cx}, rng);
      p.sep[g].pw_x = xavier_conv<T>({cx, ch}, rng);
      p.sep[g].dw_h = xavier_conv<T>({k, k, ch}, rng);
      p.sep[g].pw_h = xavier_conv<T>({ch, ch}, rng);
      p.sep[g].bias = Tensor<T>({ch});
    } else {
      p.dense[g].w_x = xavier_conv<T>({k, k, cx, ch}, rng);
      p.dense[g].w_h = xavier_conv<T>({k, k, ch, ch}, rng);
      p.dense[g].bias = Tensor<T>({ch});
    }
  }
  return p;
}

// Visits every parameter tensor with its canonical name:
// <prefix>.<gate>.{dw_x,pw_x,dw_h,pw_h,bias} or <prefix>.<gate>.{w_x,w_h,bias}.
template <typename T, typename Fn>
inline void for_each_cell_param(CellParams<T>& p, const std::string& prefix, Fn&& fn) {
  for (int g = 0; g < 4; ++g) {
    const std::string base = prefix + "." + gate_names()[static_cast<size_t>(g)] + ".";
    if (p.kind == CellKind::separable) {
      fn(base + "dw_x", p.sep[g].dw_x);
      fn(base + "pw_x", p.sep[g].pw_x);
      fn(base + "dw_h", p.sep[g].dw_h);
      fn(base + "pw_h", p.sep[g].pw_h);
      fn(base + "bias", p.sep[g].bias);
    } else {
      fn(base + "w_x", p.dense[g].w_x);
      fn(base + "w_h", p.dense[g].w_h);
      fn(base + "bias", p.dense[g].bias);
    }
  }
}

namespace detail {

template <typename T>
inline void check_cell_input(const Tensor<T>& x, const CellState<T>& state,
                             const CellParams<T>& p) {
  require_rank(x, 3, "cell step");
  if (x.extent(2) != p.cx)
    throw std::invalid_argument("cell step: expected " + std::to_string(p.cx) +
                                " input channels, got " + std::to_string(x.extent(2)));
  if (state.h.extent(2) != p.ch)
    throw std::invalid_argument("cell step: expected " + std::to_string(p.ch) +
                                " state channels, got " + std::to_string(state.h.extent(2)));
  if (state.h.extent(0) != x.extent(0) || state.h.extent(1) != x.extent(1) ||
      !state.h.same_shape(state.c))
    throw std::invalid_argument("cell step: state " + shape_str(state.h.shape) +
                                " does not match input " + shape_str(x.shape));
}

// z_g = path(x) + path(h) + b_g for one gate, untraced.
template <typename T>
inline Tensor<T> gate_preact(const Tensor<T>& x, const Tensor<T>& h, const CellParams<T>& p,
                             int g) {
  Tensor<T> zx, zh;
  if (p.kind == CellKind::separable) {
    const SepGate<T>& gate = p.sep[static_cast<size_t>(g)];
    zx = separable_conv2d(x, ConvKernel<T>{KernelKind::depthwise, gate.dw_x, std::nullopt, 1,
                                           Padding::same},
                          ConvKernel<T>{KernelKind::pointwise, gate.pw_x, std::nullopt, 1,
                                        Padding::same});
    zh = separable_conv2d(h, ConvKernel<T>{KernelKind::depthwise, gate.dw_h, std::nullopt, 1,
                                           Padding::same},
                          ConvKernel<T>{KernelKind::pointwise, gate.pw_h, std::nullopt, 1,
                                        Padding::same});
  } else {
    const DenseGate<T>& gate = p.dense[static_cast<size_t>(g)];
    zx = conv2d(x, ConvKernel<T>{KernelKind::standard, gate.w_x, std::nullopt, 1, Padding::same});
    zh = conv2d(h, ConvKernel<T>{KernelKind::standard, gate.w_h, std::nullopt, 1, Padding::same});
  }
  Tensor<T> z = scl::add(zx, zh);
  const Tensor<T>& bias =
      p.kind == CellKind::separable ? p.sep[static_cast<size_t>(g)].bias
                                    : p.dense[static_cast<size_t>(g)].bias;
  const int ch = z.extent(2);
  const std::int64_t rows = z.size() / ch;
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < ch; ++c) z[r * ch + c] += bias[c];
  return z;
}

}  // namespace detail

// One recurrence step:
//   i = σ(z_i), f = σ(z_f), c̃ = tanh(z_c), o = σ(z_o)
//   c_t = f ⊗ c_{t−1} + i ⊗ c̃
//   h_t = o ⊗ tanh(c_t)
template <typename T>
inline CellState<T> cell_step(const Tensor<T>& x, const CellState<T>& state,
                              const CellParams<T>& p) {
  detail::check_cell_input(x, state, p);
  const Tensor<T> i = activation(Act::sigmoid, detail::gate_preact(x, state.h, p, 0));
  const Tensor<T> f = activation(Act::sigmoid, detail::gate_preact(x, state.h, p, 1));
  const Tensor<T> cand = activation(Act::tanh, detail::gate_preact(x, state.h, p, 2));
  const Tensor<T> o = activation(Act::sigmoid, detail::gate_preact(x, state.h, p, 3));
  CellState<T> next;
  next.c = scl::add(hadamard(f, state.c), hadamard(i, cand));
  next.h = hadamard(o, activation(Act::tanh, next.c));
  return next;
}

template <typename T>
inline CellState<T> sepconvlstm_step(const Tensor<T>& x, const CellState<T>& state,
                                     const CellParams<T>& p) {
  if (p.kind != CellKind::separable)
    throw std::invalid_argument("sepconvlstm_step: params are not the separable variant");
  return cell_step(x, state, p);
}

template <typename T>
inline CellState<T> convlstm_step(const Tensor<T>& x, const CellState<T>& state,
                                  const CellParams<T>& p) {
  if (p.kind != CellKind::dense)
    throw std::invalid_argument("convlstm_step: params are not the dense variant");
  return cell_step(x, state, p);
}

// Folds the cell over a {T,H,W,Cx} sequence and returns only the final hidden
// state (the downstream network consumes h_T alone).
template <typename T>
inline Tensor<T> unroll_last(const Tensor<T>& xs, const CellParams<T>& p,
                             const CellState<T>* init = nullptr) {
  require_rank(xs, 4, "unroll_last");
  require_nonempty(xs, "unroll_last");
  const int steps = xs.extent(0), h = xs.extent(1), w = xs.extent(2), cx = xs.extent(3);
  const std::int64_t stride = static_cast<std::int64_t>(h) * w * cx;
  CellState<T> state = init ? *init : zero_state<T>(h, w, p.ch);
  Tensor<T> frame({h, w, cx});
  for (int t = 0; t < steps; ++t) {
    std::copy_n(xs.data.begin() + t * stride, stride, frame.data.begin());
    state = cell_step(frame, state, p);
  }
  return state.h;
}

// ---- traced (autodiff) versions -------------------------------------------

// Tape node ids for one cell's parameters, bound as leaves.
struct TracedCell {
  CellKind kind = CellKind::separable;
  int k = 3, cx = 0, ch = 0;
  struct Gate {
    int dw_x = -1, pw_x = -1, dw_h = -1, pw_h = -1, bias = -1;  // separable
    int w_x = -1, w_h = -1;                                     // dense
  };
  std::array<Gate, 4> gates;
};

template <typename T>
inline TracedCell bind_cell(Tape<T>& tape, const CellParams<T>& p, const std::string& prefix) {
  TracedCell tc;
  tc.kind = p.kind;
  tc.k = p.k;
  tc.cx = p.cx;
  tc.ch = p.ch;
  for (int g = 0; g < 4; ++g) {
    const std::string base = prefix + "." + gate_names()[static_cast<size_t>(g)] + ".";
    if (p.kind == CellKind::separable) {
      tc.gates[g].dw_x = tape.leaf(p.sep[g].dw_x, base + "dw_x");
      tc.gates[g].pw_x = tape.leaf(p.sep[g].pw_x, base + "pw_x");
      tc.gates[g].dw_h = tape.leaf(p.sep[g].dw_h, base + "dw_h");
      tc.gates[g].pw_h = tape.leaf(p.sep[g].pw_h, base + "pw_h");
      tc.gates[g].bias = tape.leaf(p.sep[g].bias, base + "bias");
    } else {
      tc.gates[g].w_x = tape.leaf(p.dense[g].w_x, base + "w_x");
      tc.gates[g].w_h = tape.leaf(p.dense[g].w_h, base + "w_h");
      tc.gates[g].bias = tape.leaf(p.dense[g].bias, base + "bias");
    }
  }
  return tc;
}

namespace detail {

template <typename T>
inline int traced_gate_preact(Tape<T>& tape, int x_id, int h_id, const TracedCell& tc, int g) {
  int zx, zh;
  if (tc.kind == CellKind::separable) {
    const int mx = ad::conv(tape, x_id, tc.gates[g].dw_x, -1, KernelKind::depthwise, 1,
                            Padding::same);
    zx = ad::conv(tape, mx, tc.gates[g].pw_x, -1, KernelKind::pointwise, 1, Padding::same);
    const int mh = ad::conv(tape, h_id, tc.gates[g].dw_h, -1, KernelKind::depthwise, 1,
                            Padding::same);
    zh = ad::conv(tape, mh, tc.gates[g].pw_h, -1, KernelKind::pointwise, 1, Padding::same);
  } else {
    zx = ad::conv(tape, x_id, tc.gates[g].w_x, -1, KernelKind::standard, 1, Padding::same);
    zh = ad::conv(tape, h_id, tc.gates[g].w_h, -1, KernelKind::standard, 1, Padding::same);
  }
  return ad::add_bias(tape, ad::add(tape, zx, zh), tc.gates[g].bias);
}

}  // namespace detail

// Returns (h_id, c_id) of the next state.
template <typename T>
inline std::pair<int, int> traced_cell_step(Tape<T>& tape, int x_id, int h_id, int c_id,
                                            const TracedCell& tc) {
  const int i = ad::activation(tape, detail::traced_gate_preact(tape, x_id, h_id, tc, 0),
                               Act::sigmoid);
  const int f = ad::activation(tape, detail::traced_gate_preact(tape, x_id, h_id, tc, 1),
                               Act::sigmoid);
  const int cand = ad::activation(tape, detail::traced_gate_preact(tape, x_id, h_id, tc, 2),
                                  Act::tanh);
  const int o = ad::activation(tape, detail::traced_gate_preact(tape, x_id, h_id, tc, 3),
                               Act::sigmoid);
  const int c_next = ad::add(tape, ad::hadamard(tape, f, c_id), ad::hadamard(tape, i, cand));
  const int h_next = ad::hadamard(tape, o, ad::activation(tape, c_next, Act::tanh));
  return {h_next, c_next};
}

// Traced unroll over a rank-4 sequence node; returns the node of h_T.
template <typename T>
inline int traced_unroll_last(Tape<T>& tape, int xs_id, const TracedCell& tc) {
  const Tensor<T>& xs = tape.value(xs_id);
  require_rank(xs, 4, "traced_unroll_last");
  const int steps = xs.extent(0);
  int h = tape.constant(Tensor<T>({xs.extent(1), xs.extent(2), tc.ch}), "h0");
  int c = tape.constant(Tensor<T>({xs.extent(1), xs.extent(2), tc.ch}), "c0");
  for (int t = 0; t < steps; ++t) {
    const int x_t = ad::slice_time(tape, xs_id, t);
    std::tie(h, c) = traced_cell_step(tape, x_t, h, c, tc);
  }
  return h;
}

}  // namespace scl
