#pragma once

#include <map>
#include <string>
#include <vector>

#include "scl/backbone.hpp"
#include "scl/cell.hpp"
#include "scl/preproc.hpp"

namespace scl {

enum class Fusion { M, C, A };
enum class Streams { both, frames_only, diff_only };

inline const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::M:
      return "M";
    case Fusion::C:
      return "C";
    case Fusion::A:
      return "A";
  }
  return "?";
}

inline const char* streams_name(Streams s) {
  switch (s) {
    case Streams::both:
      return "both";
    case Streams::frames_only:
      return "frames_only";
    case Streams::diff_only:
      return "diff_only";
  }
  return "?";
}

struct ModelConfig {
  BackboneSpec backbone;
  int lstm_filters = 64;
  CellKind lstm_kind = CellKind::separable;
  Fusion fusion = Fusion::M;
  Streams streams = Streams::both;
  std::vector<int> head = {64, 16, 1};
  double leaky_slope = 0.1;
  PreprocConfig preproc;

  // Reference full-scale configuration: truncated MobileNetV2(α=0.35) on
  // 224² crops of 32 uniformly sampled frames.
  static ModelConfig reference() {
    ModelConfig c;
    c.backbone.kind = BackboneKind::mobilenet_truncated;
    c.backbone.alpha = 0.35;
    c.backbone.input_size = 224;
    c.preproc = PreprocConfig{32, 320, 224, false};
    return c;
  }

  // Desk-scale configuration used by the synthetic-data learning checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.backbone.kind = BackboneKind::tiny;
    c.backbone.input_size = 64;
    c.backbone.tiny_channels = {8, 16, 24, 32};
    c.lstm_filters = 16;
    c.preproc = PreprocConfig{16, 64, 64, false};
    return c;
  }
};

inline void validate_config(const ModelConfig& cfg) {
  if (cfg.head.empty() || cfg.head.back() != 1)
    throw std::invalid_argument("model config: head must be a dense-width list ending in 1");
  for (int w : cfg.head)
    if (w < 1) throw std::invalid_argument("model config: head widths must be >= 1");
  if (cfg.lstm_filters < 1)
    throw std::invalid_argument("model config: lstm_filters must be >= 1");
  if (cfg.preproc.crop_to != cfg.backbone.input_size)
    throw std::invalid_argument("model config: crop size " + std::to_string(cfg.preproc.crop_to) +
                                " must match backbone input size " +
                                std::to_string(cfg.backbone.input_size));
  if (cfg.preproc.sample_count < 2)
    throw std::invalid_argument("model config: sample_count must be >= 2");
}

// Combine the two stream features (Eqs. 4-6):
//   M: leaky_relu(F_frames) ⊗ sigmoid(F_diff)   (gated multiplication)
//   C: channel concatenation
//   A: elementwise addition
template <typename T>
inline Tensor<T> fuse(const Tensor<T>& f_frames, const Tensor<T>& f_diff, Fusion kind,
                      T slope = T(0.1)) {
  if (kind == Fusion::C) {
    if (f_frames.extent(0) != f_diff.extent(0) || f_frames.extent(1) != f_diff.extent(1))
      throw std::invalid_argument("fuse: spatial dims differ, " + shape_str(f_frames.shape) +
                                  " vs " + shape_str(f_diff.shape));
    return concat_channels(f_frames, f_diff);
  }
  if (!f_frames.same_shape(f_diff))
    throw std::invalid_argument(std::string("fuse: ") + fusion_name(kind) +
                                " needs matching shapes, got " + shape_str(f_frames.shape) +
                                " vs " + shape_str(f_diff.shape));
  if (kind == Fusion::A) return scl::add(f_frames, f_diff);
  return hadamard(activation(Act::leaky_relu, f_frames, slope),
                  activation(Act::sigmoid, f_diff));
}

template <typename T>
struct Model {
  ModelConfig cfg;
  Backbone<T> backbone_frames, backbone_diff;
  CellParams<T> cell_frames, cell_diff;
  std::vector<Tensor<T>> head_w;  // {in,out} per layer
  std::vector<Tensor<T>> head_b;

  bool has_frames_stream() const { return cfg.streams != Streams::diff_only; }
  bool has_diff_stream() const { return cfg.streams != Streams::frames_only; }

  // spatial side of the per-stream feature map after the pooling stage
  int pooled_size() const {
    return (has_frames_stream() ? backbone_frames.out_size : backbone_diff.out_size) / 2;
  }

  int fused_channels() const {
    if (cfg.streams != Streams::both) return cfg.lstm_filters;
    return cfg.fusion == Fusion::C ? 2 * cfg.lstm_filters : cfg.lstm_filters;
  }

  int flatten_size() const { return pooled_size() * pooled_size() * fused_channels(); }
};

template <typename T>
inline Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Model<T> m;
  m.cfg = cfg;
  Rng rng(seed);
  if (m.has_frames_stream()) {
    m.backbone_frames = build_backbone<T>(cfg.backbone, rng);
    m.cell_frames = make_cell<T>(cfg.lstm_kind, 3, m.backbone_frames.out_channels,
                                 cfg.lstm_filters, rng);
  }
  if (m.has_diff_stream()) {
    m.backbone_diff = build_backbone<T>(cfg.backbone, rng);
    m.cell_diff = make_cell<T>(cfg.lstm_kind, 3, m.backbone_diff.out_channels, cfg.lstm_filters,
                               rng);
  }
  int in = m.flatten_size();
  for (int width : cfg.head) {
    Tensor<T> w({in, width});
    xavier_fill(w, in, width, rng);
    m.head_w.push_back(std::move(w));
    m.head_b.push_back(Tensor<T>({width}));
    in = width;
  }
  return m;
}

// Visits every tensor with its canonical name; `trainable` false only for
// batchnorm running statistics.
template <typename T, typename Fn>
inline void for_each_model_tensor(Model<T>& m, Fn&& fn) {
  if (m.has_frames_stream()) {
    for_each_backbone_tensor(m.backbone_frames, "backbone.frames", fn);
    for_each_cell_param(m.cell_frames, "cell.frames",
                        [&](const std::string& name, Tensor<T>& t) { fn(name, t, true); });
  }
  if (m.has_diff_stream()) {
    for_each_backbone_tensor(m.backbone_diff, "backbone.diff", fn);
    for_each_cell_param(m.cell_diff, "cell.diff",
                        [&](const std::string& name, Tensor<T>& t) { fn(name, t, true); });
  }
  for (size_t i = 0; i < m.head_w.size(); ++i) {
    const std::string base = "head.dense" + std::to_string(i);
    fn(base + ".weight", m.head_w[i], true);
    fn(base + ".bias", m.head_b[i], true);
  }
}

namespace detail {

// y = W^T x + b, accumulation order fixed (i outer, o inner) to match the
// traced dense op bit for bit.
template <typename T>
inline Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int in = w.extent(0), out = w.extent(1);
  if (x.extent(0) != in)
    throw std::invalid_argument("dense: input " + shape_str(x.shape) + " vs weights " +
                                shape_str(w.shape));
  Tensor<T> y = b;
  for (int i = 0; i < in; ++i) {
    const T v = x[i];
    for (int o = 0; o < out; ++o) y[o] += v * w.at2(i, o);
  }
  return y;
}

template <typename T>
inline void check_stream_input(const Model<T>& m, const Tensor<T>& xs, int want_steps,
                               const char* which) {
  require_rank(xs, 4, "model_forward");
  if (xs.extent(0) != want_steps)
    throw std::invalid_argument(std::string("model_forward: ") + which + " stream expects " +
                                std::to_string(want_steps) + " time steps, got " +
                                std::to_string(xs.extent(0)));
  const int side = m.cfg.backbone.input_size;
  if (xs.extent(1) != side || xs.extent(2) != side || xs.extent(3) != 3)
    throw std::invalid_argument(std::string("model_forward: ") + which + " stream expects " +
                                std::to_string(side) + "x" + std::to_string(side) + "x3 frames, got " +
                                shape_str(xs.shape));
}

// backbone per frame -> recurrence -> final hidden state -> maxpool(2,2)
template <typename T>
inline Tensor<T> stream_features(const Backbone<T>& backbone, const CellParams<T>& cell,
                                 const Tensor<T>& xs) {
  const int steps = xs.extent(0);
  const std::int64_t stride =
      static_cast<std::int64_t>(xs.extent(1)) * xs.extent(2) * xs.extent(3);
  Tensor<T> frame({xs.extent(1), xs.extent(2), xs.extent(3)});
  CellState<T> state = zero_state<T>(backbone.out_size, backbone.out_size, cell.ch);
  for (int t = 0; t < steps; ++t) {
    std::copy_n(xs.data.begin() + t * stride, stride, frame.data.begin());
    state = cell_step(backbone_forward(backbone, frame), state, cell);
  }
  return maxpool2d(state.h, 2);
}

}  // namespace detail

// Full inference forward; returns the violence probability. Inputs must obey
// the preprocessing contract: frames {n, side, side, 3} and diffs one step
// shorter.
template <typename T>
inline T model_forward(const Model<T>& m, const Tensor<T>& bsf, const Tensor<T>& fd) {
  Tensor<T> fused;
  if (m.cfg.streams == Streams::both) {
    detail::check_stream_input(m, bsf, m.cfg.preproc.sample_count, "frames");
    detail::check_stream_input(m, fd, m.cfg.preproc.sample_count - 1, "diff");
    Tensor<T> f_frames = detail::stream_features(m.backbone_frames, m.cell_frames, bsf);
    Tensor<T> f_diff = detail::stream_features(m.backbone_diff, m.cell_diff, fd);
    fused = fuse(f_frames, f_diff, m.cfg.fusion, static_cast<T>(m.cfg.leaky_slope));
  } else if (m.cfg.streams == Streams::frames_only) {
    detail::check_stream_input(m, bsf, m.cfg.preproc.sample_count, "frames");
    fused = detail::stream_features(m.backbone_frames, m.cell_frames, bsf);
  } else {
    detail::check_stream_input(m, fd, m.cfg.preproc.sample_count - 1, "diff");
    fused = detail::stream_features(m.backbone_diff, m.cell_diff, fd);
  }
  Tensor<T> x({static_cast<int>(fused.size())}, fused.data);
  for (size_t i = 0; i < m.head_w.size(); ++i) {
    x = detail::dense_forward(x, m.head_w[i], m.head_b[i]);
    if (i + 1 < m.head_w.size()) x = activation(Act::leaky_relu, x, static_cast<T>(m.cfg.leaky_slope));
  }
  return act_scalar(Act::sigmoid, x[0]);
}

// ---- traced forward for training -------------------------------------------

template <typename T>
struct TracedModel {
  std::map<std::string, int> param_ids;  // leaf id per trainable parameter
  std::vector<BnUpdate<T>> bn_updates;   // batch statistics captured in train mode
  int logit = -1;                        // scalar pre-sigmoid output node
};

// A whole mini-batch traced on one tape. Each stream's backbone runs once on
// the clips joined along the time axis, so train-mode batchnorm statistics
// are computed over the entire batch (per stream); the recurrence and head
// then run per clip on slices of the shared feature sequence.
template <typename T>
struct TracedBatch {
  std::map<std::string, int> param_ids;  // leaf id per trainable parameter
  std::vector<BnUpdate<T>> bn_updates;   // one entry per batchnorm layer per batch
  std::vector<int> logits;               // scalar pre-sigmoid node per clip
};

template <typename T>
inline TracedBatch<T> traced_batch_forward(Tape<T>& tape, Model<T>& m,
                                           const std::vector<const Tensor<T>*>& bsf,
                                           const std::vector<const Tensor<T>*>& fd, bool train) {
  if (bsf.empty() || bsf.size() != fd.size())
    throw std::invalid_argument("traced_batch_forward: stream lists must be nonempty and equal");
  const int batch = static_cast<int>(bsf.size());
  TracedBatch<T> out;

  // Returns one pooled feature node per clip.
  auto stream_features = [&](Backbone<T>& backbone, CellParams<T>& cell,
                             const std::vector<const Tensor<T>*>& xs, int steps,
                             const std::string& stream) {
    TracedBackbone<T> tb = bind_backbone(tape, backbone, "backbone." + stream);
    TracedCell tc = bind_cell(tape, cell, "cell." + stream);
    std::vector<int> xs_ids;
    xs_ids.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      detail::check_stream_input(m, *xs[static_cast<size_t>(b)], steps, stream.c_str());
      xs_ids.push_back(tape.constant(*xs[static_cast<size_t>(b)],
                                     stream + "_input" + std::to_string(b)));
    }
    const int joined = batch == 1 ? xs_ids[0] : ad::concat_time(tape, xs_ids);
    const int feats =
        traced_backbone_forward(tape, tb, joined, train, train ? &out.bn_updates : nullptr);
    std::vector<int> pooled;
    pooled.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const int f = batch == 1 ? feats : ad::slice_time_range(tape, feats, b * steps, steps);
      const int h = traced_unroll_last<T>(tape, f, tc);
      pooled.push_back(ad::maxpool2d(tape, h, 2));
    }
    return pooled;
  };

  std::vector<int> fused(static_cast<size_t>(batch), -1);
  if (m.cfg.streams == Streams::both) {
    const auto pf = stream_features(m.backbone_frames, m.cell_frames, bsf,
                                    m.cfg.preproc.sample_count, "frames");
    const auto pd = stream_features(m.backbone_diff, m.cell_diff, fd,
                                    m.cfg.preproc.sample_count - 1, "diff");
    for (int b = 0; b < batch; ++b) {
      const size_t i = static_cast<size_t>(b);
      switch (m.cfg.fusion) {
        case Fusion::M:
          fused[i] = ad::hadamard(
              tape,
              ad::activation(tape, pf[i], Act::leaky_relu, static_cast<T>(m.cfg.leaky_slope)),
              ad::activation(tape, pd[i], Act::sigmoid));
          break;
        case Fusion::C:
          fused[i] = ad::concat_channels(tape, pf[i], pd[i]);
          break;
        case Fusion::A:
          fused[i] = ad::add(tape, pf[i], pd[i]);
          break;
      }
    }
  } else if (m.cfg.streams == Streams::frames_only) {
    fused = stream_features(m.backbone_frames, m.cell_frames, bsf, m.cfg.preproc.sample_count,
                            "frames");
  } else {
    fused = stream_features(m.backbone_diff, m.cell_diff, fd, m.cfg.preproc.sample_count - 1,
                            "diff");
  }

  std::vector<int> head_w_ids, head_b_ids;
  for (size_t i = 0; i < m.head_w.size(); ++i) {
    const std::string base = "head.dense" + std::to_string(i);
    head_w_ids.push_back(tape.leaf(m.head_w[i], base + ".weight"));
    head_b_ids.push_back(tape.leaf(m.head_b[i], base + ".bias"));
  }
  for (int b = 0; b < batch; ++b) {
    int x = ad::flatten(tape, fused[static_cast<size_t>(b)]);
    for (size_t i = 0; i < m.head_w.size(); ++i) {
      x = ad::dense(tape, x, head_w_ids[i], head_b_ids[i]);
      if (i + 1 < m.head_w.size())
        x = ad::activation(tape, x, Act::leaky_relu, static_cast<T>(m.cfg.leaky_slope));
    }
    out.logits.push_back(x);
  }

  for (int id = 0; id < tape.size(); ++id)
    if (tape.is_leaf(id) && !tape.label(id).empty()) out.param_ids[tape.label(id)] = id;
  return out;
}

// Binds all trainable parameters as leaves and traces one clip's forward up
// to the logit. In train mode, batchnorm uses the clip's own statistics and
// their running updates are collected for the caller to apply.
template <typename T>
inline TracedModel<T> traced_model_forward(Tape<T>& tape, Model<T>& m, const Tensor<T>& bsf,
                                           const Tensor<T>& fd, bool train) {
  TracedBatch<T> batch =
      traced_batch_forward<T>(tape, m, std::vector<const Tensor<T>*>{&bsf},
                              std::vector<const Tensor<T>*>{&fd}, train);
  TracedModel<T> tm;
  tm.param_ids = std::move(batch.param_ids);
  tm.bn_updates = std::move(batch.bn_updates);
  tm.logit = batch.logits[0];
  return tm;
}

// ---- prediction --------------------------------------------------------------

template <typename T>
struct Prediction {
  bool violent = false;
  T p = T(0);
};

// Label rule: violent iff p >= 0.5 (ties resolve to violent).
template <typename T>
inline Prediction<T> predict_from_probability(T p) {
  return Prediction<T>{p >= T(0.5), p};
}

template <typename T>
inline Prediction<T> predict(const Model<T>& m, const Clip& clip) {
  StreamPair streams = prepare_streams(clip, m.cfg.preproc, PrepMode::eval);
  Tensor<T> bsf = streams.frames.template cast<T>();
  Tensor<T> fd = streams.diffs.template cast<T>();
  return predict_from_probability(model_forward(m, bsf, fd));
}

}  // namespace scl
