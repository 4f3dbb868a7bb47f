#pragma once

#include <map>
#include <string>
#include <vector>

#include "scl/autodiff.hpp"
#include "scl/cell.hpp"
#include "scl/kernels.hpp"
#include "scl/tensor.hpp"

namespace scl {

// MobileNetV2-family channel rounding: scale by the width multiplier, round
// to the nearest multiple of `divisor`, never drop below it, and never lose
// more than 10% of the unrounded width.
inline int make_divisible(double v, int divisor = 8) {
  int out = std::max(divisor, static_cast<int>(v + divisor / 2.0) / divisor * divisor);
  if (static_cast<double>(out) < 0.9 * v) out += divisor;
  return out;
}

enum class BackboneKind { mobilenet_truncated, tiny };

struct BackboneSpec {
  BackboneKind kind = BackboneKind::tiny;
  double alpha = 0.35;
  int input_size = 64;
  std::vector<int> tiny_channels = {8, 16, 24, 32};  // one separable block per entry, stride 2
};

// One inverted-residual group of the base MobileNetV2 table:
// expansion factor, base output channels, block count, stride of first block.
struct MobilenetGroup {
  int expansion;
  int base_channels;
  int repeats;
  int stride;
};

// Base table kept through the truncation point. The published truncation
// drops everything after the first 160-base-channel block (with the 320- and
// 1280-channel tail), which is the only cut that lands on 7x7x56 at α=0.35.
inline const std::vector<MobilenetGroup>& mobilenet_groups() {
  static const std::vector<MobilenetGroup> groups{
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 1, 2},
  };
  return groups;
}

template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta, mean, var;
  T eps = T(1e-3);
  T momentum = T(0.9);  // running = momentum*running + (1-momentum)*batch

  static BatchNorm identity(int ch) {
    BatchNorm bn;
    bn.gamma = Tensor<T>({ch}, T(1));
    bn.beta = Tensor<T>({ch});
    bn.mean = Tensor<T>({ch});
    bn.var = Tensor<T>({ch}, T(1));
    return bn;
  }
};

// Convolution (bias-free) + batchnorm + optional relu6.
template <typename T>
struct ConvBn {
  KernelKind kind = KernelKind::standard;
  Tensor<T> weight;
  int stride = 1;
  BatchNorm<T> bn;
  bool relu = true;
};

template <typename T>
struct InvertedResidual {
  bool has_expand = true;  // t=1 blocks skip the expansion stage
  ConvBn<T> expand;        // pointwise, relu6
  ConvBn<T> depthwise;     // 3x3, relu6
  ConvBn<T> project;       // pointwise, linear
  bool residual = false;   // stride 1 and in == out
};

// Tiny desk-scale block: depthwise stride-2 + pointwise + BN + relu6.
template <typename T>
struct TinyBlock {
  Tensor<T> dw, pw;
  BatchNorm<T> bn;
};

template <typename T>
struct Backbone {
  BackboneSpec spec;
  ConvBn<T> stem;                         // mobilenet only
  std::vector<InvertedResidual<T>> blocks;  // mobilenet only
  std::vector<TinyBlock<T>> tiny;           // tiny only
  int out_channels = 0;
  int out_size = 0;
  // input normalization y = in_scale*x + in_shift applied before the stem
  T in_scale = T(1);
  T in_shift = T(0);
};

template <typename T>
inline Backbone<T> build_backbone(const BackboneSpec& spec, Rng& rng) {
  Backbone<T> b;
  b.spec = spec;
  if (spec.kind == BackboneKind::mobilenet_truncated) {
    // pixels arrive in [0,1]; the pretrained family expects [-1,1]
    b.in_scale = T(2);
    b.in_shift = T(-1);
    int ch = make_divisible(32 * spec.alpha);
    int size = conv_out_extent(spec.input_size, 3, 2, Padding::same);
    b.stem = ConvBn<T>{KernelKind::standard, xavier_conv<T>({3, 3, 3, ch}, rng), 2,
                       BatchNorm<T>::identity(ch), true};
    for (const MobilenetGroup& g : mobilenet_groups()) {
      const int out_ch = make_divisible(g.base_channels * spec.alpha);
      for (int r = 0; r < g.repeats; ++r) {
        const int stride = r == 0 ? g.stride : 1;
        const int expanded = ch * g.expansion;
        InvertedResidual<T> blk;
        blk.has_expand = g.expansion != 1;
        if (blk.has_expand)
          blk.expand = ConvBn<T>{KernelKind::pointwise, xavier_conv<T>({ch, expanded}, rng), 1,
                                 BatchNorm<T>::identity(expanded), true};
        blk.depthwise = ConvBn<T>{KernelKind::depthwise, xavier_conv<T>({3, 3, expanded}, rng),
                                  stride, BatchNorm<T>::identity(expanded), true};
        blk.project = ConvBn<T>{KernelKind::pointwise, xavier_conv<T>({expanded, out_ch}, rng), 1,
                                BatchNorm<T>::identity(out_ch), false};
        blk.residual = stride == 1 && ch == out_ch;
        b.blocks.push_back(std::move(blk));
        ch = out_ch;
        size = conv_out_extent(size, 3, stride, Padding::same);
      }
    }
    b.out_channels = ch;
    b.out_size = size;
  } else {
    int ch = 3;
    int size = spec.input_size;
    for (int out_ch : spec.tiny_channels) {
      TinyBlock<T> blk;
      blk.dw = xavier_conv<T>({3, 3, ch}, rng);
      blk.pw = xavier_conv<T>({ch, out_ch}, rng);
      blk.bn = BatchNorm<T>::identity(out_ch);
      b.tiny.push_back(std::move(blk));
      ch = out_ch;
      size = conv_out_extent(size, 3, 2, Padding::same);
    }
    b.out_channels = ch;
    b.out_size = size;
    if (size < 2)
      throw std::invalid_argument("build_backbone: tiny output " + std::to_string(size) +
                                  "x" + std::to_string(size) +
                                  " too small for the pooling stage; use a larger input size");
  }
  return b;
}

// Visits every tensor with its canonical name. `trainable` is false for the
// batchnorm running statistics, which are state rather than parameters.
template <typename T, typename Fn>
inline void for_each_convbn(ConvBn<T>& l, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".conv.weight", l.weight, true);
  fn(prefix + ".bn.gamma", l.bn.gamma, true);
  fn(prefix + ".bn.beta", l.bn.beta, true);
  fn(prefix + ".bn.mean", l.bn.mean, false);
  fn(prefix + ".bn.var", l.bn.var, false);
}

template <typename T, typename Fn>
inline void for_each_backbone_tensor(Backbone<T>& b, const std::string& prefix, Fn&& fn) {
  if (b.spec.kind == BackboneKind::mobilenet_truncated) {
    for_each_convbn(b.stem, prefix + ".stem", fn);
    for (size_t i = 0; i < b.blocks.size(); ++i) {
      const std::string base = prefix + ".block" + std::to_string(i);
      if (b.blocks[i].has_expand) for_each_convbn(b.blocks[i].expand, base + ".expand", fn);
      for_each_convbn(b.blocks[i].depthwise, base + ".depthwise", fn);
      for_each_convbn(b.blocks[i].project, base + ".project", fn);
    }
  } else {
    for (size_t i = 0; i < b.tiny.size(); ++i) {
      const std::string base = prefix + ".block" + std::to_string(i);
      fn(base + ".dw.weight", b.tiny[i].dw, true);
      fn(base + ".pw.weight", b.tiny[i].pw, true);
      fn(base + ".bn.gamma", b.tiny[i].bn.gamma, true);
      fn(base + ".bn.beta", b.tiny[i].bn.beta, true);
      fn(base + ".bn.mean", b.tiny[i].bn.mean, false);
      fn(base + ".bn.var", b.tiny[i].bn.var, false);
    }
  }
}

// ---- untraced forward (inference batchnorm) --------------------------------

template <typename T>
inline Tensor<T> conv_bn_forward(const ConvBn<T>& l, const Tensor<T>& x) {
  ConvKernel<T> k{l.kind, l.weight, std::nullopt, l.stride, Padding::same};
  Tensor<T> y;
  switch (l.kind) {
    case KernelKind::standard:
      y = conv2d(x, k);
      break;
    case KernelKind::depthwise:
      y = depthwise_conv2d(x, k);
      break;
    case KernelKind::pointwise:
      y = pointwise_conv2d(x, k);
      break;
  }
  y = batchnorm_infer(y, l.bn.mean, l.bn.var, l.bn.gamma, l.bn.beta, l.bn.eps);
  if (l.relu) y = activation(Act::relu6, y);
  return y;
}

// Single-frame forward; stateless, batchnorm uses stored statistics.
template <typename T>
inline Tensor<T> backbone_forward(const Backbone<T>& b, const Tensor<T>& frame) {
  require_rank(frame, 3, "backbone_forward");
  if (frame.extent(0) != b.spec.input_size || frame.extent(1) != b.spec.input_size ||
      frame.extent(2) != 3)
    throw std::invalid_argument("backbone_forward: expected " + std::to_string(b.spec.input_size) +
                                "x" + std::to_string(b.spec.input_size) + "x3 input, got " +
                                shape_str(frame.shape));
  Tensor<T> x = frame;
  if (b.in_scale != T(1) || b.in_shift != T(0))
    for (auto& v : x.data) v = b.in_scale * v + b.in_shift;
  if (b.spec.kind == BackboneKind::mobilenet_truncated) {
    x = conv_bn_forward(b.stem, x);
    for (const auto& blk : b.blocks) {
      Tensor<T> y = x;
      if (blk.has_expand) y = conv_bn_forward(blk.expand, y);
      y = conv_bn_forward(blk.depthwise, y);
      y = conv_bn_forward(blk.project, y);
      x = blk.residual ? scl::add(x, y) : std::move(y);
    }
  } else {
    for (const auto& blk : b.tiny) {
      x = depthwise_conv2d(x, ConvKernel<T>{KernelKind::depthwise, blk.dw, std::nullopt, 2,
                                            Padding::same});
      x = pointwise_conv2d(x, ConvKernel<T>{KernelKind::pointwise, blk.pw, std::nullopt, 1,
                                            Padding::same});
      x = batchnorm_infer(x, blk.bn.mean, blk.bn.var, blk.bn.gamma, blk.bn.beta, blk.bn.eps);
      x = activation(Act::relu6, x);
    }
  }
  return x;
}

// ---- traced forward ---------------------------------------------------------

struct TracedConvBn {
  int weight = -1, gamma = -1, beta = -1;
};

struct TracedInvertedResidual {
  bool has_expand = true;
  TracedConvBn expand, depthwise, project;
  bool residual = false;
};

struct TracedTinyBlock {
  int dw = -1, pw = -1, gamma = -1, beta = -1;
};

template <typename T>
struct TracedBackbone {
  Backbone<T>* src = nullptr;
  TracedConvBn stem;
  std::vector<TracedInvertedResidual> blocks;
  std::vector<TracedTinyBlock> tiny;
};

template <typename T>
inline TracedConvBn bind_convbn(Tape<T>& tape, ConvBn<T>& l, const std::string& prefix) {
  return TracedConvBn{tape.leaf(l.weight, prefix + ".conv.weight"),
                      tape.leaf(l.bn.gamma, prefix + ".bn.gamma"),
                      tape.leaf(l.bn.beta, prefix + ".bn.beta")};
}

template <typename T>
inline TracedBackbone<T> bind_backbone(Tape<T>& tape, Backbone<T>& b, const std::string& prefix) {
  TracedBackbone<T> tb;
  tb.src = &b;
  if (b.spec.kind == BackboneKind::mobilenet_truncated) {
    tb.stem = bind_convbn(tape, b.stem, prefix + ".stem");
    for (size_t i = 0; i < b.blocks.size(); ++i) {
      const std::string base = prefix + ".block" + std::to_string(i);
      TracedInvertedResidual tblk;
      tblk.has_expand = b.blocks[i].has_expand;
      if (tblk.has_expand) tblk.expand = bind_convbn(tape, b.blocks[i].expand, base + ".expand");
      tblk.depthwise = bind_convbn(tape, b.blocks[i].depthwise, base + ".depthwise");
      tblk.project = bind_convbn(tape, b.blocks[i].project, base + ".project");
      tblk.residual = b.blocks[i].residual;
      tb.blocks.push_back(tblk);
    }
  } else {
    for (size_t i = 0; i < b.tiny.size(); ++i) {
      const std::string base = prefix + ".block" + std::to_string(i);
      tb.tiny.push_back(TracedTinyBlock{tape.leaf(b.tiny[i].dw, base + ".dw.weight"),
                                        tape.leaf(b.tiny[i].pw, base + ".pw.weight"),
                                        tape.leaf(b.tiny[i].bn.gamma, base + ".bn.gamma"),
                                        tape.leaf(b.tiny[i].bn.beta, base + ".bn.beta")});
    }
  }
  return tb;
}

// Deferred running-statistics update captured during a traced training
// forward; the optimizer applies these after the step, outside the tape.
template <typename T>
struct BnUpdate {
  BatchNorm<T>* bn;
  Tensor<T> mean, var;
};

template <typename T>
inline void apply_bn_updates(const std::vector<BnUpdate<T>>& updates) {
  for (const auto& u : updates) {
    for (std::int64_t i = 0; i < u.bn->mean.size(); ++i) {
      u.bn->mean[i] = u.bn->momentum * u.bn->mean[i] + (T(1) - u.bn->momentum) * u.mean[i];
      u.bn->var[i] = u.bn->momentum * u.bn->var[i] + (T(1) - u.bn->momentum) * u.var[i];
    }
  }
}

namespace detail {

template <typename T>
inline int traced_conv_bn(Tape<T>& tape, const TracedConvBn& tl, ConvBn<T>& l, int x_id,
                          bool train, std::vector<BnUpdate<T>>* updates) {
  int y = ad::conv(tape, x_id, tl.weight, -1, l.kind, l.stride, Padding::same);
  if (train) {
    Tensor<T> bm, bv;
    y = ad::batchnorm_train(tape, y, tl.gamma, tl.beta, l.bn.eps, &bm, &bv);
    if (updates) updates->push_back(BnUpdate<T>{&l.bn, std::move(bm), std::move(bv)});
  } else {
    y = ad::batchnorm_infer(tape, y, tl.gamma, tl.beta, l.bn.mean, l.bn.var, l.bn.eps);
  }
  if (l.relu) y = ad::activation(tape, y, Act::relu6);
  return y;
}

}  // namespace detail

// Forward over a map or sequence node. In train mode batchnorm uses batch
// statistics (per clip, per stream) and reports them via `updates`.
template <typename T>
inline int traced_backbone_forward(Tape<T>& tape, const TracedBackbone<T>& tb, int xs_id,
                                   bool train, std::vector<BnUpdate<T>>* updates = nullptr) {
  Backbone<T>& b = *tb.src;
  int x = xs_id;
  if (b.in_scale != T(1) || b.in_shift != T(0))
    x = ad::affine(tape, x, b.in_scale, b.in_shift);
  if (b.spec.kind == BackboneKind::mobilenet_truncated) {
    x = detail::traced_conv_bn(tape, tb.stem, b.stem, x, train, updates);
    for (size_t i = 0; i < tb.blocks.size(); ++i) {
      int y = x;
      if (tb.blocks[i].has_expand)
        y = detail::traced_conv_bn(tape, tb.blocks[i].expand, b.blocks[i].expand, y, train,
                                   updates);
      y = detail::traced_conv_bn(tape, tb.blocks[i].depthwise, b.blocks[i].depthwise, y, train,
                                 updates);
      y = detail::traced_conv_bn(tape, tb.blocks[i].project, b.blocks[i].project, y, train,
                                 updates);
      x = tb.blocks[i].residual ? ad::add(tape, x, y) : y;
    }
  } else {
    for (size_t i = 0; i < tb.tiny.size(); ++i) {
      TinyBlock<T>& blk = b.tiny[i];
      x = ad::conv(tape, x, tb.tiny[i].dw, -1, KernelKind::depthwise, 2, Padding::same);
      x = ad::conv(tape, x, tb.tiny[i].pw, -1, KernelKind::pointwise, 1, Padding::same);
      if (train) {
        Tensor<T> bm, bv;
        x = ad::batchnorm_train(tape, x, tb.tiny[i].gamma, tb.tiny[i].beta, blk.bn.eps, &bm, &bv);
        if (updates) updates->push_back(BnUpdate<T>{&blk.bn, std::move(bm), std::move(bv)});
      } else {
        x = ad::batchnorm_infer(tape, x, tb.tiny[i].gamma, tb.tiny[i].beta, blk.bn.mean,
                                blk.bn.var, blk.bn.eps);
      }
      x = ad::activation(tape, x, Act::relu6);
    }
  }
  return x;
}

// ---- weight stores and import ------------------------------------------------

template <typename T>
struct WeightStore {
  std::vector<std::pair<std::string, Tensor<T>>> entries;  // insertion-ordered
  std::string provenance = "random-init";

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }

  void add(const std::string& name, const Tensor<T>& t) {
    if (find(name))
      throw std::invalid_argument("weight store: duplicate name '" + name + "'");
    entries.emplace_back(name, t);
  }
};

struct ImportReport {
  std::vector<std::string> matched;
  std::vector<std::string> unused;  // store entries no parameter asked for
};

// Replaces every named parameter from the store. All missing or mis-shaped
// entries are collected and reported in one error.
template <typename T>
inline ImportReport import_weights(std::vector<std::pair<std::string, Tensor<T>*>> params,
                                   const WeightStore<T>& store) {
  ImportReport report;
  std::vector<std::string> problems;
  std::map<std::string, bool> used;
  for (const auto& [name, _] : store.entries) used[name] = false;
  for (auto& [name, tensor] : params) {
    const Tensor<T>* src = store.find(name);
    if (!src) {
      problems.push_back("missing: " + name + " " + shape_str(tensor->shape));
      continue;
    }
    used[name] = true;
    if (src->shape != tensor->shape) {
      problems.push_back("shape mismatch: " + name + " expected " + shape_str(tensor->shape) +
                         ", store has " + shape_str(src->shape));
      continue;
    }
    *tensor = *src;
    report.matched.push_back(name);
  }
  if (!problems.empty()) {
    std::string msg = "import_weights: " + std::to_string(problems.size()) + " problem(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::runtime_error(msg);
  }
  for (const auto& [name, was_used] : used)
    if (!was_used) report.unused.push_back(name);
  return report;
}

}  // namespace scl
