#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>

#include "scl/kernels.hpp"
#include "scl/tensor.hpp"

namespace scl {

// Gradients keyed by parameter name, shapes matching the parameters exactly.
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// Reverse-mode tape. Nodes are appended in execution order, so the node list
// is already a topological order of the DAG; backward() walks it once in
// reverse. Leaves are differentiable inputs (parameters), constants are
// stop-gradient inputs, opaque nodes reject gradient flow by throwing.
template <typename T>
class Tape {
 public:
  enum class NodeKind { leaf, constant, op, opaque };
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  int leaf(Tensor<T> value, std::string name = {}) {
    return push_node(std::move(value), nullptr, NodeKind::leaf, std::move(name));
  }

  int constant(Tensor<T> value, std::string name = {}) {
    return push_node(std::move(value), nullptr, NodeKind::constant, std::move(name));
  }

  int op(Tensor<T> value, BackwardFn backward, std::string label = {}) {
    return push_node(std::move(value), std::move(backward), NodeKind::op, std::move(label));
  }

  int opaque(Tensor<T> value, std::string label) {
    return push_node(std::move(value), nullptr, NodeKind::opaque, std::move(label));
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const std::string& label(int id) const { return nodes_[static_cast<size_t>(id)].label; }
  bool is_leaf(int id) const { return nodes_[static_cast<size_t>(id)].kind == NodeKind::leaf; }
  int size() const { return static_cast<int>(nodes_.size()); }

  void accumulate(int id, const Tensor<T>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.kind == NodeKind::constant) return;
    if (!n.value.same_shape(g))
      throw std::invalid_argument("tape: gradient shape " + shape_str(g.shape) +
                                  " does not match value shape " + shape_str(n.value.shape));
    if (has_grad_[static_cast<size_t>(id)]) {
      Tensor<T>& acc = grads_[static_cast<size_t>(id)];
      for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    } else {
      grads_[static_cast<size_t>(id)] = g;
      has_grad_[static_cast<size_t>(id)] = 1;
    }
  }

  // nullptr when no gradient reached the node
  const Tensor<T>* grad(int id) const {
    return has_grad_[static_cast<size_t>(id)] ? &grads_[static_cast<size_t>(id)] : nullptr;
  }

  void backward(int output_id, Tensor<T> seed) {
    const Tensor<T>& out = value(output_id);
    if (!out.same_shape(seed))
      throw std::invalid_argument("backward: seed gradient shape " + shape_str(seed.shape) +
                                  " does not match output shape " + shape_str(out.shape));
    accumulate(output_id, seed);
    for (int id = output_id; id >= 0; --id) {
      if (!has_grad_[static_cast<size_t>(id)]) continue;
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.kind == NodeKind::op) {
        n.backward(*this, grads_[static_cast<size_t>(id)]);
      } else if (n.kind == NodeKind::opaque) {
        throw std::runtime_error("backward: op '" + n.label + "' is not differentiable");
      }
    }
  }

  void clear_grads() {
    std::fill(has_grad_.begin(), has_grad_.end(), 0);
    for (auto& g : grads_) g = Tensor<T>();
  }

 private:
  struct Node {
    Tensor<T> value;
    BackwardFn backward;
    NodeKind kind;
    std::string label;
  };

  int push_node(Tensor<T> value, BackwardFn backward, NodeKind kind, std::string label) {
    nodes_.push_back(Node{std::move(value), std::move(backward), kind, std::move(label)});
    grads_.emplace_back();
    has_grad_.push_back(0);
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<char> has_grad_;
};

namespace ad {

namespace detail {

// Applies a rank-3 kernel over either a single {H,W,C} map or every slice of
// a {T,H,W,C} sequence.
template <typename T, typename Fn>
Tensor<T> map_slices(const Tensor<T>& x, Fn&& fn) {
  if (x.rank() == 3) return fn(x);
  require_rank(x, 4, "map_slices");
  const int tt = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::int64_t stride = static_cast<std::int64_t>(h) * w * c;
  Tensor<T> slice({h, w, c});
  Tensor<T> out;
  for (int t = 0; t < tt; ++t) {
    std::copy_n(x.data.begin() + t * stride, stride, slice.data.begin());
    Tensor<T> r = fn(slice);
    if (t == 0) out = Tensor<T>({tt, r.extent(0), r.extent(1), r.extent(2)});
    std::copy_n(r.data.begin(), r.size(), out.data.begin() + t * r.size());
  }
  return out;
}

template <typename T>
Tensor<T> time_slice(const Tensor<T>& x, int t) {
  require_rank(x, 4, "time_slice");
  const int h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::int64_t stride = static_cast<std::int64_t>(h) * w * c;
  Tensor<T> out({h, w, c});
  std::copy_n(x.data.begin() + t * stride, stride, out.data.begin());
  return out;
}

// Mirrors the forward loops of conv2d_naive, scattering the upstream gradient
// into input, weight, and bias gradients. Any of gx/gw/gb may be null.
template <typename T>
void conv2d_backward_slice(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride,
                           Padding pad, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int kk = w.extent(0), cin = w.extent(2), cout = w.extent(3);
  const int h = x.extent(0), wd = x.extent(1);
  const int oh = gout.extent(0), ow = gout.extent(1);
  const int py = pad_before(h, kk, stride, pad);
  const int px = pad_before(wd, kk, stride, pad);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int n = 0; n < cout; ++n) {
        const T g = gout.at(oy, ox, n);
        if (g == T(0)) continue;
        if (gb) (*gb)[n] += g;
        for (int ky = 0; ky < kk; ++ky) {
          const int iy = oy * stride + ky - py;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kk; ++kx) {
            const int ix = ox * stride + kx - px;
            if (ix < 0 || ix >= wd) continue;
            for (int c = 0; c < cin; ++c) {
              if (gx) gx->at(iy, ix, c) += g * w.at(ky, kx, c, n);
              if (gw) gw->at(ky, kx, c, n) += g * x.at(iy, ix, c);
            }
          }
        }
      }
}

template <typename T>
void depthwise_backward_slice(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout,
                              int stride, Padding pad, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int kk = w.extent(0), ch = w.extent(2);
  const int h = x.extent(0), wd = x.extent(1);
  const int oh = gout.extent(0), ow = gout.extent(1);
  const int py = pad_before(h, kk, stride, pad);
  const int px = pad_before(wd, kk, stride, pad);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      const T* g = &gout.at(oy, ox, 0);
      if (gb)
        for (int c = 0; c < ch; ++c) (*gb)[c] += g[c];
      for (int ky = 0; ky < kk; ++ky) {
        const int iy = oy * stride + ky - py;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kk; ++kx) {
          const int ix = ox * stride + kx - px;
          if (ix < 0 || ix >= wd) continue;
          for (int c = 0; c < ch; ++c) {
            if (gx) gx->at(iy, ix, c) += g[c] * w.at(ky, kx, c);
            if (gw) gw->at(ky, kx, c) += g[c] * x.at(iy, ix, c);
          }
        }
      }
    }
}

template <typename T>
void pointwise_backward_slice(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout,
                              Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int cin = w.extent(0), cout = w.extent(1);
  const std::int64_t pixels = static_cast<std::int64_t>(x.extent(0)) * x.extent(1);
  for (std::int64_t p = 0; p < pixels; ++p) {
    const T* xv = &x.data[static_cast<size_t>(p * cin)];
    const T* g = &gout.data[static_cast<size_t>(p * cout)];
    if (gb)
      for (int n = 0; n < cout; ++n) (*gb)[n] += g[n];
    for (int c = 0; c < cin; ++c) {
      const T* wr = &w.data[static_cast<size_t>(static_cast<std::int64_t>(c) * cout)];
      T acc = 0;
      for (int n = 0; n < cout; ++n) acc += g[n] * wr[n];
      if (gx) gx->data[static_cast<size_t>(p * cin + c)] += acc;
      if (gw) {
        T* gwr = &gw->data[static_cast<size_t>(static_cast<std::int64_t>(c) * cout)];
        const T xc = xv[c];
        for (int n = 0; n < cout; ++n) gwr[n] += xc * g[n];
      }
    }
  }
}

}  // namespace detail

// Convolution over a {H,W,C} map or a {T,H,W,C} sequence (applied per slice,
// weights shared across slices). bias_id < 0 means no bias.
template <typename T>
int conv(Tape<T>& tape, int x_id, int w_id, int bias_id, KernelKind kind, int stride = 1,
         Padding pad = Padding::same) {
  const Tensor<T>& x = tape.value(x_id);
  const Tensor<T>& w = tape.value(w_id);
  ConvKernel<T> k{kind, w,
                  bias_id >= 0 ? std::optional<Tensor<T>>(tape.value(bias_id)) : std::nullopt, stride,
                  pad};
  Tensor<T> out = detail::map_slices(x, [&](const Tensor<T>& s) {
    switch (kind) {
      case KernelKind::standard:
        return conv2d(s, k);
      case KernelKind::depthwise:
        return depthwise_conv2d(s, k);
      case KernelKind::pointwise:
        return pointwise_conv2d(s, k);
    }
    throw std::invalid_argument("conv: unknown kind");
  });
  auto backward = [x_id, w_id, bias_id, kind, stride, pad](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x_id);
    const Tensor<T>& wv = t.value(w_id);
    Tensor<T> gx(xv.shape);
    Tensor<T> gw(wv.shape);
    Tensor<T> gb = bias_id >= 0 ? Tensor<T>(t.value(bias_id).shape) : Tensor<T>();
    const bool seq = xv.rank() == 4;
    const int steps = seq ? xv.extent(0) : 1;
    for (int s = 0; s < steps; ++s) {
      Tensor<T> xs = seq ? detail::time_slice(xv, s) : xv;
      Tensor<T> gs = seq ? detail::time_slice(g, s) : g;
      Tensor<T> gxs(xs.shape);
      switch (kind) {
        case KernelKind::standard:
          detail::conv2d_backward_slice(xs, wv, gs, stride, pad, &gxs, &gw,
                                        bias_id >= 0 ? &gb : nullptr);
          break;
        case KernelKind::depthwise:
          detail::depthwise_backward_slice(xs, wv, gs, stride, pad, &gxs, &gw,
                                           bias_id >= 0 ? &gb : nullptr);
          break;
        case KernelKind::pointwise:
          detail::pointwise_backward_slice(xs, wv, gs, &gxs, &gw, bias_id >= 0 ? &gb : nullptr);
          break;
      }
      if (seq) {
        std::copy_n(gxs.data.begin(), gxs.size(), gx.data.begin() + s * gxs.size());
      } else {
        gx = std::move(gxs);
      }
    }
    t.accumulate(x_id, gx);
    t.accumulate(w_id, gw);
    if (bias_id >= 0) t.accumulate(bias_id, gb);
  };
  return tape.op(std::move(out), backward, "conv");
}

// Broadcast per-channel bias add over a map or sequence.
template <typename T>
int add_bias(Tape<T>& tape, int x_id, int b_id) {
  const Tensor<T>& x = tape.value(x_id);
  const Tensor<T>& b = tape.value(b_id);
  const int ch = x.extent(x.rank() - 1);
  if (b.rank() != 1 || b.extent(0) != ch)
    throw std::invalid_argument("add_bias: bias " + shape_str(b.shape) + " vs channels " +
                                std::to_string(ch));
  Tensor<T> out = x;
  const std::int64_t rows = x.size() / ch;
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < ch; ++c) out[r * ch + c] += b[c];
  auto backward = [x_id, b_id, ch](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x_id, g);
    Tensor<T> gb({ch});
    const std::int64_t rows = g.size() / ch;
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < ch; ++c) gb[c] += g[r * ch + c];
    t.accumulate(b_id, gb);
  };
  return tape.op(std::move(out), backward, "add_bias");
}

template <typename T>
int activation(Tape<T>& tape, int x_id, Act kind, T slope = T(0.1)) {
  const Tensor<T>& x = tape.value(x_id);
  Tensor<T> out = scl::activation(kind, x, slope);
  // saved output reused for sigmoid/tanh derivatives
  Tensor<T> saved = out;
  auto backward = [x_id, kind, slope, saved](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x_id);
    Tensor<T> gx(xv.shape);
    for (std::int64_t i = 0; i < gx.size(); ++i) {
      T d;
      switch (kind) {
        case Act::sigmoid:
          d = saved[i] * (T(1) - saved[i]);
          break;
        case Act::tanh:
          d = T(1) - saved[i] * saved[i];
          break;
        case Act::leaky_relu:
          // the kink at exactly 0 takes the negative-side slope
          d = xv[i] > T(0) ? T(1) : slope;
          break;
        case Act::relu6:
          d = (xv[i] > T(0) && xv[i] < T(6)) ? T(1) : T(0);
          break;
        default:
          d = T(1);
      }
      gx[i] = g[i] * d;
    }
    t.accumulate(x_id, gx);
  };
  return tape.op(std::move(out), backward, "activation");
}

template <typename T>
int add(Tape<T>& tape, int a_id, int b_id) {
  Tensor<T> out = scl::add(tape.value(a_id), tape.value(b_id));
  auto backward = [a_id, b_id](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a_id, g);
    t.accumulate(b_id, g);
  };
  return tape.op(std::move(out), backward, "add");
}

template <typename T>
int sub(Tape<T>& tape, int a_id, int b_id) {
  Tensor<T> out = scl::sub(tape.value(a_id), tape.value(b_id));
  auto backward = [a_id, b_id](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a_id, g);
    Tensor<T> neg = g;
    for (auto& v : neg.data) v = -v;
    t.accumulate(b_id, neg);
  };
  return tape.op(std::move(out), backward, "sub");
}

template <typename T>
int hadamard(Tape<T>& tape, int a_id, int b_id) {
  Tensor<T> out = scl::hadamard(tape.value(a_id), tape.value(b_id));
  auto backward = [a_id, b_id](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a_id, scl::hadamard(g, t.value(b_id)));
    t.accumulate(b_id, scl::hadamard(g, t.value(a_id)));
  };
  return tape.op(std::move(out), backward, "hadamard");
}

// d|x|/dx at exactly 0 is taken as 0
template <typename T>
int abs(Tape<T>& tape, int x_id) {
  Tensor<T> out = abs_of(tape.value(x_id));
  auto backward = [x_id](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x_id);
    Tensor<T> gx(xv.shape);
    for (std::int64_t i = 0; i < gx.size(); ++i)
      gx[i] = xv[i] > T(0) ? g[i] : (xv[i] < T(0) ? -g[i] : T(0));
    t.accumulate(x_id, gx);
  };
  return tape.op(std::move(out), backward, "abs");
}

template <typename T>
int concat_channels(Tape<T>& tape, int a_id, int b_id) {
  const Tensor<T>& a = tape.value(a_id);
  const Tensor<T>& b = tape.value(b_id);
  Tensor<T> out = scl::concat_channels(a, b);
  const int ca = a.extent(2), cb = b.extent(2);
  auto backward = [a_id, b_id, ca, cb](Tape<T>& t, const Tensor<T>& g) {
    const int h = g.extent(0), w = g.extent(1);
    Tensor<T> ga({h, w, std::max(ca, 1)});
    Tensor<T> gb({h, w, std::max(cb, 1)});
    if (ca > 0)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < ca; ++c) ga.at(y, x, c) = g.at(y, x, c);
    if (cb > 0)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < cb; ++c) gb.at(y, x, c) = g.at(y, x, ca + c);
    if (ca > 0) t.accumulate(a_id, ga);
    if (cb > 0) t.accumulate(b_id, gb);
  };
  return tape.op(std::move(out), backward, "concat_channels");
}

// Gradient routes to the first maximal element in window scan order.
template <typename T>
int maxpool2d(Tape<T>& tape, int x_id, int window = 2) {
  const Tensor<T>& x = tape.value(x_id);
  require_rank(x, 3, "maxpool2d");
  const int h = x.extent(0), w = x.extent(1), ch = x.extent(2);
  const int oh = h / window, ow = w / window;
  Tensor<T> out({oh, ow, ch});
  std::vector<std::int32_t> argmax(static_cast<size_t>(out.size()));
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int c = 0; c < ch; ++c) {
        T best = x.at(oy * window, ox * window, c);
        int best_y = oy * window, best_x = ox * window;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const T v = x.at(oy * window + dy, ox * window + dx, c);
            if (v > best) {
              best = v;
              best_y = oy * window + dy;
              best_x = ox * window + dx;
            }
          }
        out.at(oy, ox, c) = best;
        argmax[static_cast<size_t>((oy * ow + ox) * ch + c)] =
            static_cast<std::int32_t>((best_y * w + best_x) * ch + c);
      }
  auto backward = [x_id, argmax](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x_id).shape);
    for (std::int64_t i = 0; i < g.size(); ++i) gx[argmax[static_cast<size_t>(i)]] += g[i];
    t.accumulate(x_id, gx);
  };
  return tape.op(std::move(out), backward, "maxpool2d");
}

// Inference-mode batchnorm: stored statistics are constants, gradients flow
// to the input and to gamma/beta.
template <typename T>
int batchnorm_infer(Tape<T>& tape, int x_id, int gamma_id, int beta_id, Tensor<T> mean, Tensor<T> var,
                    T eps) {
  const Tensor<T>& x = tape.value(x_id);
  Tensor<T> out = scl::batchnorm_infer(x, mean, var, tape.value(gamma_id), tape.value(beta_id), eps);
  auto backward = [x_id, gamma_id, beta_id, mean, var, eps](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x_id);
    const Tensor<T>& gamma = t.value(gamma_id);
    const int ch = xv.extent(xv.rank() - 1);
    const std::int64_t rows = xv.size() / ch;
    Tensor<T> gx(xv.shape), ggamma({ch}), gbeta({ch});
    std::vector<T> inv_std(static_cast<size_t>(ch));
    for (int c = 0; c < ch; ++c) inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(var[c] + eps);
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < ch; ++c) {
        const std::int64_t i = r * ch + c;
        const T xhat = (xv[i] - mean[c]) * inv_std[static_cast<size_t>(c)];
        gbeta[c] += g[i];
        ggamma[c] += g[i] * xhat;
        gx[i] = g[i] * gamma[c] * inv_std[static_cast<size_t>(c)];
      }
    t.accumulate(x_id, gx);
    t.accumulate(gamma_id, ggamma);
    t.accumulate(beta_id, gbeta);
  };
  return tape.op(std::move(out), backward, "batchnorm_infer");
}

// Training-mode batchnorm: statistics computed over every axis but the last
// (biased variance). Optionally reports the batch statistics so the caller
// can maintain running averages outside the taped computation.
template <typename T>
int batchnorm_train(Tape<T>& tape, int x_id, int gamma_id, int beta_id, T eps,
                    Tensor<T>* batch_mean_out = nullptr, Tensor<T>* batch_var_out = nullptr) {
  const Tensor<T>& x = tape.value(x_id);
  const int ch = x.extent(x.rank() - 1);
  const std::int64_t rows = x.size() / ch;
  Tensor<T> mean({ch}), var({ch});
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < ch; ++c) mean[c] += x[r * ch + c];
  for (int c = 0; c < ch; ++c) mean[c] /= static_cast<T>(rows);
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < ch; ++c) {
      const T d = x[r * ch + c] - mean[c];
      var[c] += d * d;
    }
  for (int c = 0; c < ch; ++c) var[c] /= static_cast<T>(rows);
  if (batch_mean_out) *batch_mean_out = mean;
  if (batch_var_out) *batch_var_out = var;
  Tensor<T> out = scl::batchnorm_infer(x, mean, var, tape.value(gamma_id), tape.value(beta_id), eps);
  auto backward = [x_id, gamma_id, beta_id, mean, var, eps](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x_id);
    const Tensor<T>& gamma = t.value(gamma_id);
    const int ch = xv.extent(xv.rank() - 1);
    const std::int64_t rows = xv.size() / ch;
    std::vector<T> inv_std(static_cast<size_t>(ch));
    for (int c = 0; c < ch; ++c) inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(var[c] + eps);
    Tensor<T> ggamma({ch}), gbeta({ch});
    std::vector<T> mean_g(static_cast<size_t>(ch)), mean_gx(static_cast<size_t>(ch));
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < ch; ++c) {
        const std::int64_t i = r * ch + c;
        const T xhat = (xv[i] - mean[c]) * inv_std[static_cast<size_t>(c)];
        gbeta[c] += g[i];
        ggamma[c] += g[i] * xhat;
        mean_g[static_cast<size_t>(c)] += g[i];
        mean_gx[static_cast<size_t>(c)] += g[i] * xhat;
      }
    for (int c = 0; c < ch; ++c) {
      mean_g[static_cast<size_t>(c)] /= static_cast<T>(rows);
      mean_gx[static_cast<size_t>(c)] /= static_cast<T>(rows);
    }
    Tensor<T> gx(xv.shape);
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < ch; ++c) {
        const std::int64_t i = r * ch + c;
        const T xhat = (xv[i] - mean[c]) * inv_std[static_cast<size_t>(c)];
        gx[i] = gamma[c] * inv_std[static_cast<size_t>(c)] *
                (g[i] - mean_g[static_cast<size_t>(c)] - xhat * mean_gx[static_cast<size_t>(c)]);
      }
    t.accumulate(x_id, gx);
    t.accumulate(gamma_id, ggamma);
    t.accumulate(beta_id, gbeta);
  };
  return tape.op(std::move(out), backward, "batchnorm_train");
}

template <typename T>
int slice_time(Tape<T>& tape, int x_id, int t) {
  const Tensor<T>& x = tape.value(x_id);
  require_rank(x, 4, "slice_time");
  if (t < 0 || t >= x.extent(0))
    throw std::invalid_argument("slice_time: index " + std::to_string(t) + " out of range for " +
                                shape_str(x.shape));
  Tensor<T> out = detail::time_slice(x, t);
  auto backward = [x_id, t](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx(tp.value(x_id).shape);
    std::copy_n(g.data.begin(), g.size(), gx.data.begin() + static_cast<std::int64_t>(t) * g.size());
    tp.accumulate(x_id, gx);
  };
  return tape.op(std::move(out), backward, "slice_time");
}

// Joins rank-4 sequences end to end along the time axis.
template <typename T>
int concat_time(Tape<T>& tape, const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("concat_time: needs at least one sequence");
  require_rank(tape.value(ids[0]), 4, "concat_time");
  const Shape first = tape.value(ids[0]).shape;
  int total = 0;
  for (int id : ids) {
    const Tensor<T>& x = tape.value(id);
    require_rank(x, 4, "concat_time");
    if (x.extent(1) != first[1] || x.extent(2) != first[2] || x.extent(3) != first[3])
      throw std::invalid_argument("concat_time: mismatched step shapes " + shape_str(x.shape) +
                                  " vs " + shape_str(first));
    total += x.extent(0);
  }
  Tensor<T> out({total, first[1], first[2], first[3]});
  std::int64_t at = 0;
  for (int id : ids) {
    const Tensor<T>& x = tape.value(id);
    std::copy_n(x.data.begin(), x.size(), out.data.begin() + at);
    at += x.size();
  }
  auto backward = [ids](Tape<T>& t, const Tensor<T>& g) {
    std::int64_t from = 0;
    for (int id : ids) {
      Tensor<T> gx(t.value(id).shape);
      std::copy_n(g.data.begin() + from, gx.size(), gx.data.begin());
      from += gx.size();
      t.accumulate(id, gx);
    }
  };
  return tape.op(std::move(out), backward, "concat_time");
}

// Extracts time steps [begin, begin+count) from a rank-4 sequence.
template <typename T>
int slice_time_range(Tape<T>& tape, int x_id, int begin, int count) {
  const Tensor<T>& x = tape.value(x_id);
  require_rank(x, 4, "slice_time_range");
  if (begin < 0 || count < 1 || begin + count > x.extent(0))
    throw std::invalid_argument("slice_time_range: steps [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                shape_str(x.shape));
  Tensor<T> out({count, x.extent(1), x.extent(2), x.extent(3)});
  const std::int64_t step = out.size() / count;
  std::copy_n(x.data.begin() + static_cast<std::int64_t>(begin) * step, out.size(),
              out.data.begin());
  auto backward = [x_id, begin, step](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx(tp.value(x_id).shape);
    std::copy_n(g.data.begin(), g.size(),
                gx.data.begin() + static_cast<std::int64_t>(begin) * step);
    tp.accumulate(x_id, gx);
  };
  return tape.op(std::move(out), backward, "slice_time_range");
}

template <typename T>
int flatten(Tape<T>& tape, int x_id) {
  const Tensor<T>& x = tape.value(x_id);
  Tensor<T> out({static_cast<int>(x.size())}, x.data);
  auto backward = [x_id](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x_id).shape, g.data);
    t.accumulate(x_id, gx);
  };
  return tape.op(std::move(out), backward, "flatten");
}

// y = W^T x + b with W stored {in,out}
template <typename T>
int dense(Tape<T>& tape, int x_id, int w_id, int b_id) {
  const Tensor<T>& x = tape.value(x_id);
  const Tensor<T>& w = tape.value(w_id);
  require_rank(x, 1, "dense");
  require_rank(w, 2, "dense weights");
  const int in = w.extent(0), outn = w.extent(1);
  if (x.extent(0) != in)
    throw std::invalid_argument("dense: input " + shape_str(x.shape) + " vs weights " +
                                shape_str(w.shape));
  Tensor<T> out({outn});
  if (b_id >= 0) out = tape.value(b_id);
  for (int i = 0; i < in; ++i) {
    const T v = x[i];
    for (int o = 0; o < outn; ++o) out[o] += v * w.at2(i, o);
  }
  auto backward = [x_id, w_id, b_id, in, outn](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x_id);
    const Tensor<T>& wv = t.value(w_id);
    Tensor<T> gx({in}), gw({in, outn});
    for (int i = 0; i < in; ++i) {
      T acc = 0;
      for (int o = 0; o < outn; ++o) {
        acc += g[o] * wv.at2(i, o);
        gw.at2(i, o) = xv[i] * g[o];
      }
      gx[i] = acc;
    }
    t.accumulate(x_id, gx);
    t.accumulate(w_id, gw);
    if (b_id >= 0) t.accumulate(b_id, g);
  };
  return tape.op(std::move(out), backward, "dense");
}

template <typename T>
int sum(Tape<T>& tape, int x_id) {
  const Tensor<T>& x = tape.value(x_id);
  T total = 0;
  for (const T& v : x.data) total += v;
  auto backward = [x_id](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x_id).shape, g[0]);
    t.accumulate(x_id, gx);
  };
  return tape.op(Tensor<T>::scalar(total), backward, "sum");
}

// sum(weights ⊙ x): random-projection loss used by gradient checks
template <typename T>
int weighted_sum(Tape<T>& tape, int x_id, Tensor<T> weights) {
  const Tensor<T>& x = tape.value(x_id);
  require_same_shape(x, weights, "weighted_sum");
  T total = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  auto backward = [x_id, weights](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = weights;
    for (auto& v : gx.data) v *= g[0];
    t.accumulate(x_id, gx);
  };
  return tape.op(Tensor<T>::scalar(total), backward, "weighted_sum");
}

template <typename T>
int scale(Tape<T>& tape, int x_id, T s) {
  Tensor<T> out = scaled(tape.value(x_id), s);
  auto backward = [x_id, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x_id, scaled(g, s)); };
  return tape.op(std::move(out), backward, "scale");
}

// y = s*x + b with scalar constants (input normalization maps).
template <typename T>
int affine(Tape<T>& tape, int x_id, T s, T b) {
  Tensor<T> out = tape.value(x_id);
  for (auto& v : out.data) v = s * v + b;
  auto backward = [x_id, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x_id, scaled(g, s)); };
  return tape.op(std::move(out), backward, "affine");
}

// Numerically stable binary cross-entropy on a scalar logit:
// loss = max(z,0) - z*y + log(1 + exp(-|z|)); dloss/dz = sigmoid(z) - y.
template <typename T>
int bce_with_logits(Tape<T>& tape, int logit_id, T target) {
  const Tensor<T>& z = tape.value(logit_id);
  require_rank(z, 1, "bce_with_logits");
  if (z.extent(0) != 1)
    throw std::invalid_argument("bce_with_logits: expected scalar logit, got " + shape_str(z.shape));
  const T zv = z[0];
  const T loss = std::max(zv, T(0)) - zv * target + std::log1p(std::exp(-std::abs(zv)));
  auto backward = [logit_id, target](Tape<T>& t, const Tensor<T>& g) {
    const T zv = t.value(logit_id)[0];
    const T p = T(1) / (T(1) + std::exp(-zv));
    t.accumulate(logit_id, Tensor<T>::scalar(g[0] * (p - target)));
  };
  return tape.op(Tensor<T>::scalar(loss), backward, "bce_with_logits");
}

}  // namespace ad
}  // namespace scl
