#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "scl/model.hpp"

namespace scl {

// ---- losses and schedule -----------------------------------------------------

// Binary cross entropy on a probability; routed through the logit so extreme
// probabilities stay finite.
template <typename T>
inline T bce_loss(T p, T y) {
  const T tiny = std::numeric_limits<T>::min();
  const T pc = std::clamp(p, tiny, T(1) - std::numeric_limits<T>::epsilon());
  const T z = std::log(pc) - std::log1p(-pc);
  return std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

struct TrainConfig {
  ModelConfig model;
  int epochs = 30;
  int batch_size = 4;
  double base_lr = 4e-4;
  double lr_floor = 5e-5;
  int lr_halve_every = 5;  // epochs between halvings
  std::uint64_t seed = 0;
  bool augment_enabled = true;
  AugmentSpec augment;            // ranges; per-clip seeds are derived in fit
  int early_stop_patience = 0;    // 0 disables
  double stop_at_train_acc = -1;  // negative disables
  bool deterministic = false;
};

// Halve every `lr_halve_every` epochs, never below the floor.
inline double lr_at_epoch(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
  if (cfg.lr_halve_every < 1) throw std::invalid_argument("lr_at_epoch: halving period must be >= 1");
  const double lr = cfg.base_lr * std::pow(0.5, epoch / cfg.lr_halve_every);
  return std::max(lr, cfg.lr_floor);
}

// ---- optimizer -----------------------------------------------------------------

// Adam state with a running maximum of the raw second moment. The maximum is
// kept on the uncorrected accumulator so it is monotone by construction; the
// bias corrections ride on the step size instead.
template <typename T>
struct OptState {
  struct Slot {
    Tensor<T> m, v, vhat;
  };
  std::map<std::string, Slot> slots;
  long step = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-7);
};

template <typename T>
inline void amsgrad_step(OptState<T>& st,
                         const std::vector<std::pair<std::string, Tensor<T>*>>& params,
                         const GradMap<T>& grads, T lr) {
  ++st.step;
  const T b1t = std::pow(st.beta1, static_cast<T>(st.step));
  const T b2t = std::pow(st.beta2, static_cast<T>(st.step));
  const T step_size = lr * std::sqrt(T(1) - b2t) / (T(1) - b1t);
  for (const auto& [name, tensor] : params) {
    auto gi = grads.find(name);
    if (gi == grads.end()) continue;  // no gradient reached this parameter
    const Tensor<T>& g = gi->second;
    if (!g.same_shape(*tensor))
      throw std::invalid_argument("amsgrad_step: gradient shape " + shape_str(g.shape) +
                                  " does not match parameter " + name + " " +
                                  shape_str(tensor->shape));
    auto it = st.slots.find(name);
    if (it == st.slots.end()) {
      typename OptState<T>::Slot fresh{Tensor<T>(tensor->shape), Tensor<T>(tensor->shape),
                                       Tensor<T>(tensor->shape)};
      it = st.slots.emplace(name, std::move(fresh)).first;
    }
    auto& slot = it->second;
    for (std::int64_t i = 0; i < g.size(); ++i) {
      slot.m[i] = st.beta1 * slot.m[i] + (T(1) - st.beta1) * g[i];
      slot.v[i] = st.beta2 * slot.v[i] + (T(1) - st.beta2) * g[i] * g[i];
      slot.vhat[i] = std::max(slot.vhat[i], slot.v[i]);
      (*tensor)[i] -= step_size * slot.m[i] / (std::sqrt(slot.vhat[i]) + st.eps);
    }
  }
}

// ---- datasets ------------------------------------------------------------------

struct LabeledClip {
  Clip clip;
  int label = 0;  // 1 = violent
  std::string name;
};

struct Dataset {
  std::vector<LabeledClip> items;
};

// ---- evaluation ------------------------------------------------------------------

struct EvalResult {
  long total = 0;
  long correct = 0;
  double accuracy = 0.0;
  std::vector<double> probabilities;
  std::vector<int> predicted;
};

template <typename T>
inline EvalResult evaluate(const Model<T>& m, const Dataset& data) {
  if (data.items.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult r;
  for (const auto& item : data.items) {
    Prediction<T> pred = predict(m, item.clip);
    const int label = pred.violent ? 1 : 0;
    r.probabilities.push_back(static_cast<double>(pred.p));
    r.predicted.push_back(label);
    if (label == item.label) ++r.correct;
    ++r.total;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

// ---- training loop -----------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
  double seconds = 0.0;

  std::string to_line() const {
    char buf[192];
    if (val_acc)
      std::snprintf(buf, sizeof(buf),
                    "epoch=%d lr=%.6g loss=%.6f train_acc=%.4f val_acc=%.4f time_s=%.3f", epoch,
                    lr, mean_loss, train_acc, *val_acc, seconds);
    else
      std::snprintf(buf, sizeof(buf), "epoch=%d lr=%.6g loss=%.6f train_acc=%.4f time_s=%.3f",
                    epoch, lr, mean_loss, train_acc, seconds);
    return buf;
  }
};

struct FitResult {
  std::vector<EpochLog> log;
  bool stopped_early = false;
};

namespace detail {

template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> to_model_input(const StreamPair& sp) {
  return {sp.frames.template cast<T>(), sp.diffs.template cast<T>()};
}

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)],
              idx[static_cast<size_t>(rng.integer(static_cast<std::uint64_t>(i) + 1))]);
}

}  // namespace detail

// One optimization run. Each mini-batch is traced on a single tape so that
// train-mode batchnorm statistics cover the whole batch; the step uses the
// gradient of the mean per-clip loss, and running statistics are updated once
// per batch (momentum 0.9). Augmentation draws fresh geometry per clip per
// epoch; with augmentation off the preprocessed streams are computed once and
// reused. Early stopping watches validation accuracy when a validation set is
// given, otherwise mean training loss.
template <typename T>
inline FitResult fit(Model<T>& m, const Dataset& train_data, const Dataset* val_data,
                     const TrainConfig& cfg, std::ostream* log_stream = nullptr) {
  if (train_data.items.empty()) throw std::invalid_argument("fit: empty training set");
  for (const auto& item : train_data.items)
    if (item.label != 0 && item.label != 1)
      throw std::invalid_argument("fit: label for '" + item.name + "' must be 0 or 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("fit: batch_size must be >= 1");
  exec_config().deterministic = cfg.deterministic;

  std::vector<std::pair<std::string, Tensor<T>*>> params;
  for_each_model_tensor(m, [&](const std::string& n, Tensor<T>& t, bool trainable) {
    if (trainable) params.emplace_back(n, &t);
  });

  OptState<T> opt;
  FitResult result;
  const int n = static_cast<int>(train_data.items.size());
  std::vector<std::optional<StreamPair>> cache(static_cast<size_t>(n));

  auto streams_for = [&](int idx, int epoch) -> StreamPair {
    const Clip& clip = train_data.items[static_cast<size_t>(idx)].clip;
    if (!cfg.augment_enabled) {
      auto& slot = cache[static_cast<size_t>(idx)];
      if (!slot) slot = prepare_streams(clip, cfg.model.preproc, PrepMode::eval);
      return *slot;
    }
    AugmentSpec spec = cfg.augment;
    spec.seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(idx));
    return prepare_streams(clip, cfg.model.preproc, PrepMode::train, spec);
  };

  double best_metric = -std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(epoch, cfg);

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch), 0x9e3779b97f4a7c15ULL));
    detail::shuffle_indices(order, shuffle_rng);

    double loss_sum = 0.0;
    long correct = 0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int batch = std::min(cfg.batch_size, n - start);
      std::vector<std::pair<Tensor<T>, Tensor<T>>> inputs;
      std::vector<int> labels;
      inputs.reserve(static_cast<size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        const int idx = order[static_cast<size_t>(start + b)];
        inputs.push_back(detail::to_model_input<T>(streams_for(idx, epoch)));
        labels.push_back(train_data.items[static_cast<size_t>(idx)].label);
      }
      std::vector<const Tensor<T>*> bsf_ptrs, fd_ptrs;
      for (auto& [bsf, fd] : inputs) {
        bsf_ptrs.push_back(&bsf);
        fd_ptrs.push_back(&fd);
      }

      Tape<T> tape;
      TracedBatch<T> tb = traced_batch_forward(tape, m, bsf_ptrs, fd_ptrs, true);
      int loss_id = -1;
      for (int b = 0; b < batch; ++b) {
        const int l = ad::bce_with_logits(tape, tb.logits[static_cast<size_t>(b)],
                                          static_cast<T>(labels[static_cast<size_t>(b)]));
        loss_sum += static_cast<double>(tape.value(l)[0]);
        const T p =
            act_scalar(Act::sigmoid, tape.value(tb.logits[static_cast<size_t>(b)])[0]);
        if ((p >= T(0.5) ? 1 : 0) == labels[static_cast<size_t>(b)]) ++correct;
        loss_id = b == 0 ? l : ad::add(tape, loss_id, l);
      }
      loss_id = ad::scale(tape, loss_id, T(1) / static_cast<T>(batch));

      tape.backward(loss_id, Tensor<T>::scalar(T(1)));
      GradMap<T> grads;
      for (const auto& [name, id] : tb.param_ids) {
        const Tensor<T>* g = tape.grad(id);
        if (g) grads.emplace(name, *g);
      }
      amsgrad_step(opt, params, grads, static_cast<T>(lr));
      apply_bn_updates(tb.bn_updates);
    }

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.mean_loss = loss_sum / n;
    el.train_acc = static_cast<double>(correct) / n;
    if (val_data) el.val_acc = evaluate(m, *val_data).accuracy;
    el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log_stream) *log_stream << el.to_line() << "\n" << std::flush;
    result.log.push_back(el);

    if (cfg.stop_at_train_acc >= 0 && el.train_acc >= cfg.stop_at_train_acc) {
      result.stopped_early = true;
      break;
    }
    if (cfg.early_stop_patience > 0) {
      const double metric = el.val_acc ? *el.val_acc : -el.mean_loss;
      if (metric > best_metric) {
        best_metric = metric;
        epochs_since_best = 0;
      } else if (++epochs_since_best >= cfg.early_stop_patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  return result;
}

// ---- synthetic motion dataset ---------------------------------------------------

struct SynthClipMeta {
  std::string name;
  int label = 0;
  int blob_count = 0;
  bool moving = false;
  double mean_step_px = 0.0;  // average per-frame blob displacement
};

struct SynthDataset {
  Dataset data;
  std::vector<SynthClipMeta> meta;
};

namespace detail {

struct SynthBlob {
  double y, x, r;
  std::array<double, 3> color;
  double dir;  // radians, used by the drifting class
};

inline void paint_blob(Tensor<float>& frame, const SynthBlob& b) {
  const int h = frame.extent(0), w = frame.extent(1);
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y - b.r)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(b.y + b.r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x - b.r)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(b.x + b.r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d2 = (y - b.y) * (y - b.y) + (x - b.x) * (x - b.x);
      const double wgt = 1.0 - d2 / (b.r * b.r);
      if (wgt <= 0) continue;
      for (int c = 0; c < 3; ++c) {
        float& px = frame.at(y, x, c);
        px = std::min(1.0f, px + static_cast<float>(wgt * b.color[static_cast<size_t>(c)]));
      }
    }
}

inline double reflect_into(double v, double lo, double hi) {
  while (v < lo || v > hi) {
    if (v < lo) v = 2 * lo - v;
    if (v > hi) v = 2 * hi - v;
  }
  return v;
}

}  // namespace detail

// Synthetic motion corpus: both classes share blob appearance and a small
// global brightness flicker; they differ only in motion statistics. The
// violent proxy moves fast with a freshly sampled direction every frame, the
// nonviolent class drifts slowly along a fixed direction or stands still.
inline SynthDataset make_synth(int n_clips, int frames, int side, std::uint64_t seed) {
  if (n_clips < 1) throw std::invalid_argument("make_synth: need at least one clip");
  if (frames < 2) throw std::invalid_argument("make_synth: need at least two frames");
  if (side < 16) throw std::invalid_argument("make_synth: side must be >= 16");

  SynthDataset out;
  double sum_fd[2] = {0, 0};
  std::int64_t cnt_fd[2] = {0, 0};
  // motion and blob sizes scale with the frame so the class separation in
  // mean |frame difference| holds at any resolution
  const double unit = side / 32.0;

  for (int i = 0; i < n_clips; ++i) {
    const int label = i % 2;  // even index nonviolent, odd violent
    Rng rng(Rng::mix(seed, 17, static_cast<std::uint64_t>(i)));

    const int nb = 2 + static_cast<int>(rng.integer(2));  // 2..3 blobs for both classes
    const double base = rng.uniform(0.2, 0.5);
    const bool moving = label == 1 ? true : rng.uniform() < 0.7;
    const double drift_speed =
        label == 1 ? 0.0 : (moving ? rng.uniform(0.1 * unit, 0.4 * unit) : 0.0);

    std::vector<detail::SynthBlob> blobs;
    for (int b = 0; b < nb; ++b) {
      detail::SynthBlob blob;
      blob.r = rng.uniform(3.0 * unit, 6.0 * unit);
      blob.y = rng.uniform(blob.r, side - 1 - blob.r);
      blob.x = rng.uniform(blob.r, side - 1 - blob.r);
      for (auto& c : blob.color) c = rng.uniform(0.5, 1.0);
      blob.dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      blobs.push_back(blob);
    }

    Clip clip;
    clip.frames = Tensor<float>({frames, side, side, 3});
    clip.source = (label == 1 ? "synth_violent_" : "synth_nonviolent_") + std::to_string(i);
    double step_sum = 0.0;
    long step_cnt = 0;

    for (int t = 0; t < frames; ++t) {
      const double flicker = rng.uniform(-0.002, 0.002);
      Tensor<float> frame({side, side, 3},
                          static_cast<float>(std::clamp(base + flicker, 0.0, 1.0)));
      for (const auto& b : blobs) detail::paint_blob(frame, b);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          for (int c = 0; c < 3; ++c)
            clip.frames.at(t, y, x, c) = frame.at(y, x, c);

      if (t + 1 == frames) break;
      for (auto& b : blobs) {
        double speed, dir;
        if (label == 1) {  // erratic: new direction and speed every frame
          speed = rng.uniform(4.0 * unit, 8.0 * unit);
          dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        } else {
          speed = drift_speed;
          dir = b.dir;
        }
        b.y = detail::reflect_into(b.y + speed * std::sin(dir), b.r, side - 1 - b.r);
        b.x = detail::reflect_into(b.x + speed * std::cos(dir), b.r, side - 1 - b.r);
        step_sum += speed;
        ++step_cnt;
      }
    }

    Tensor<float> fd = frame_difference(clip);
    for (const auto& v : fd.data) sum_fd[label] += std::abs(static_cast<double>(v));
    cnt_fd[label] += fd.size();

    SynthClipMeta meta;
    meta.name = clip.source;
    meta.label = label;
    meta.blob_count = nb;
    meta.moving = moving;
    meta.mean_step_px = step_cnt > 0 ? step_sum / step_cnt : 0.0;
    out.meta.push_back(meta);
    out.data.items.push_back(LabeledClip{std::move(clip), label, meta.name});
  }

  // generator self-check: the motion statistics must actually separate the
  // classes, otherwise downstream learning checks would be meaningless
  if (cnt_fd[0] > 0 && cnt_fd[1] > 0) {
    const double mean_nv = sum_fd[0] / cnt_fd[0];
    const double mean_v = sum_fd[1] / cnt_fd[1];
    if (!(mean_v >= 5.0 * mean_nv))
      throw std::logic_error("make_synth: class separation too weak, violent mean |diff| " +
                             std::to_string(mean_v) + " vs nonviolent " + std::to_string(mean_nv));
  }
  return out;
}

}  // namespace scl
