#pragma once

#include <cmath>
#include <string>

#include "scl/tensor.hpp"

namespace scl {

// A decoded video clip: frames {T,H,W,3} with pixel values in [0,1].
struct Clip {
  Tensor<float> frames;
  std::string source;
  double fps = 0.0;
};

inline void validate_clip(const Clip& clip, const char* op, int min_frames = 2) {
  require_rank(clip.frames, 4, op);
  require_nonempty(clip.frames, op);
  if (clip.frames.extent(3) != 3)
    throw std::invalid_argument(std::string(op) + ": expected 3 channels, got " +
                                shape_str(clip.frames.shape));
  if (clip.frames.extent(0) < min_frames)
    throw std::invalid_argument(std::string(op) + ": clip needs at least " +
                                std::to_string(min_frames) + " frames, got " +
                                std::to_string(clip.frames.extent(0)));
}

// One augmentation parameter draw per clip; every frame of the clip gets the
// same transformation.
struct AugmentSpec {
  float brightness_min = -0.2f;
  float brightness_max = 0.2f;
  float crop_scale_min = 0.6f;
  float crop_scale_max = 1.0f;
  float flip_prob = 0.5f;
  float blur_sigma_min = 0.0f;
  float blur_sigma_max = 1.0f;
  std::uint64_t seed = 0;

  static AugmentSpec none() {
    AugmentSpec s;
    s.brightness_min = s.brightness_max = 0.0f;
    s.crop_scale_min = s.crop_scale_max = 1.0f;
    s.flip_prob = 0.0f;
    s.blur_sigma_min = s.blur_sigma_max = 0.0f;
    return s;
  }
};

// Picks n frames at indices floor(i*T/n). Short clips are rejected unless
// frame duplication is explicitly allowed (the same formula then repeats
// frames).
inline Clip uniform_sample(const Clip& clip, int n = 32, bool allow_duplication = false) {
  validate_clip(clip, "uniform_sample");
  if (n < 1) throw std::invalid_argument("uniform_sample: count must be >= 1");
  const int t = clip.frames.extent(0);
  if (t < n && !allow_duplication)
    throw std::invalid_argument("uniform_sample: clip has " + std::to_string(t) +
                                " frames but " + std::to_string(n) +
                                " were requested; rerun with frame duplication enabled to sample "
                                "short clips");
  const int h = clip.frames.extent(1), w = clip.frames.extent(2), c = clip.frames.extent(3);
  const std::int64_t stride = static_cast<std::int64_t>(h) * w * c;
  Clip out{Tensor<float>({n, h, w, c}), clip.source, clip.fps};
  for (int i = 0; i < n; ++i) {
    const int src = static_cast<int>(static_cast<std::int64_t>(i) * t / n);
    std::copy_n(clip.frames.data.begin() + src * stride, stride, out.frames.data.begin() + i * stride);
  }
  return out;
}

// Bilinear resample of one {H,W,C} image using half-pixel-center sampling:
// src = (dst + 0.5) * in/out - 0.5, clamped to the valid range, so a
// same-size resize is an exact identity.
template <typename T>
inline Tensor<T> resize_bilinear_frame(const Tensor<T>& frame, int oh, int ow) {
  require_rank(frame, 3, "resize_bilinear");
  require_nonempty(frame, "resize_bilinear");
  if (oh < 1 || ow < 1) throw std::invalid_argument("resize_bilinear: output size must be >= 1");
  const int h = frame.extent(0), w = frame.extent(1), c = frame.extent(2);
  Tensor<T> out({oh, ow, c});
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (int oy = 0; oy < oh; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < ow; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1.0 - wx) * frame.at(y0, x0, ch) + wx * frame.at(y0, x1, ch);
        const double bot = (1.0 - wx) * frame.at(y1, x0, ch) + wx * frame.at(y1, x1, ch);
        out.at(oy, ox, ch) = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

inline Clip resize_bilinear(const Clip& clip, int oh, int ow) {
  validate_clip(clip, "resize_bilinear");
  const int t = clip.frames.extent(0), c = clip.frames.extent(3);
  Clip out{Tensor<float>({t, oh, ow, c}), clip.source, clip.fps};
  const std::int64_t in_stride =
      static_cast<std::int64_t>(clip.frames.extent(1)) * clip.frames.extent(2) * c;
  const std::int64_t out_stride = static_cast<std::int64_t>(oh) * ow * c;
  Tensor<float> frame({clip.frames.extent(1), clip.frames.extent(2), c});
  for (int i = 0; i < t; ++i) {
    std::copy_n(clip.frames.data.begin() + i * in_stride, in_stride, frame.data.begin());
    Tensor<float> r = resize_bilinear_frame(frame, oh, ow);
    std::copy_n(r.data.begin(), out_stride, out.frames.data.begin() + i * out_stride);
  }
  return out;
}

// fd_i = frame_{i+1} - frame_i: signed motion signal with T-1 steps. Summed
// over time it telescopes to frame_{T-1} - frame_0.
inline Tensor<float> frame_difference(const Clip& clip) {
  validate_clip(clip, "frame_difference");
  const int t = clip.frames.extent(0), h = clip.frames.extent(1), w = clip.frames.extent(2),
            c = clip.frames.extent(3);
  const std::int64_t stride = static_cast<std::int64_t>(h) * w * c;
  Tensor<float> out({t - 1, h, w, c});
  for (int i = 0; i + 1 < t; ++i)
    for (std::int64_t j = 0; j < stride; ++j)
      out.data[static_cast<size_t>(i * stride + j)] =
          clip.frames[(i + 1) * stride + j] - clip.frames[i * stride + j];
  return out;
}

// bsf_i = |frame_i - mean over frames|: emphasizes moving content against a
// static background. Output stays in [0,1].
inline Clip background_suppress(const Clip& clip) {
  validate_clip(clip, "background_suppress");
  const int t = clip.frames.extent(0);
  const std::int64_t stride = clip.frames.size() / t;
  std::vector<double> avg(static_cast<size_t>(stride), 0.0);
  for (int i = 0; i < t; ++i)
    for (std::int64_t j = 0; j < stride; ++j) avg[static_cast<size_t>(j)] += clip.frames[i * stride + j];
  for (auto& v : avg) v /= t;
  Clip out{Tensor<float>(clip.frames.shape), clip.source, clip.fps};
  for (int i = 0; i < t; ++i)
    for (std::int64_t j = 0; j < stride; ++j)
      out.frames[i * stride + j] = static_cast<float>(
          std::abs(clip.frames[i * stride + j] - avg[static_cast<size_t>(j)]));
  return out;
}

namespace detail {

inline void clamp_unit(Tensor<float>& t) {
  for (auto& v : t.data) v = std::min(std::max(v, 0.0f), 1.0f);
}

// Separable truncated Gaussian, radius ceil(3*sigma), replicate edges.
inline Tensor<float> gaussian_blur_frame(const Tensor<float>& frame, double sigma) {
  if (sigma <= 0.0) return frame;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-(static_cast<double>(k) * k) / (2.0 * sigma * sigma));
    kernel[static_cast<size_t>(k + radius)] = v;
    norm += v;
  }
  for (auto& v : kernel) v /= norm;
  const int h = frame.extent(0), w = frame.extent(1), c = frame.extent(2);
  Tensor<float> horiz({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::min(std::max(x + k, 0), w - 1);
          acc += kernel[static_cast<size_t>(k + radius)] * frame.at(y, xx, ch);
        }
        horiz.at(y, x, ch) = static_cast<float>(acc);
      }
  Tensor<float> out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::min(std::max(y + k, 0), h - 1);
          acc += kernel[static_cast<size_t>(k + radius)] * horiz.at(yy, x, ch);
        }
        out.at(y, x, ch) = static_cast<float>(acc);
      }
  return out;
}

inline Tensor<float> hflip_frame(const Tensor<float>& frame) {
  const int h = frame.extent(0), w = frame.extent(1), c = frame.extent(2);
  Tensor<float> out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = frame.at(y, w - 1 - x, ch);
  return out;
}

template <typename Fn>
inline Clip map_frames(const Clip& clip, Fn&& fn) {
  const int t = clip.frames.extent(0);
  const std::int64_t stride = clip.frames.size() / t;
  Clip out{Tensor<float>(), clip.source, clip.fps};
  Tensor<float> frame({clip.frames.extent(1), clip.frames.extent(2), clip.frames.extent(3)});
  for (int i = 0; i < t; ++i) {
    std::copy_n(clip.frames.data.begin() + i * stride, stride, frame.data.begin());
    Tensor<float> r = fn(frame);
    if (i == 0) out.frames = Tensor<float>({t, r.extent(0), r.extent(1), r.extent(2)});
    std::copy_n(r.data.begin(), r.size(), out.frames.data.begin() + i * r.size());
  }
  return out;
}

}  // namespace detail

// Photometric + flip augmentation. Draw order from `rng` is fixed:
// brightness delta, blur sigma, flip decision. The caller owns the generator
// so a surrounding pipeline can continue drawing (e.g. crop geometry) from
// the same per-clip stream.
inline Clip augment(const Clip& clip, const AugmentSpec& spec, Rng& rng) {
  validate_clip(clip, "augment");
  const float delta = static_cast<float>(rng.uniform(spec.brightness_min, spec.brightness_max));
  const double sigma = rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max);
  const bool flip = rng.bernoulli(spec.flip_prob);
  Clip out = clip;
  if (delta != 0.0f) {
    for (auto& v : out.frames.data) v += delta;
    detail::clamp_unit(out.frames);
  }
  if (sigma > 0.0)
    out = detail::map_frames(out, [&](const Tensor<float>& f) {
      return detail::gaussian_blur_frame(f, sigma);
    });
  if (flip) out = detail::map_frames(out, detail::hflip_frame);
  detail::clamp_unit(out.frames);
  return out;
}

inline Clip augment(const Clip& clip, const AugmentSpec& spec) {
  Rng rng(spec.seed);
  return augment(clip, spec, rng);
}

// Square crop of side round(scale * min(H,W)) at offset (oy, ox), then
// bilinear resize to out_side.
inline Clip crop_resize(const Clip& clip, double scale, int oy, int ox, int out_side) {
  validate_clip(clip, "crop_resize");
  const int h = clip.frames.extent(1), w = clip.frames.extent(2), c = clip.frames.extent(3);
  const int side = std::max(1, static_cast<int>(std::lround(scale * std::min(h, w))));
  if (oy < 0 || ox < 0 || oy + side > h || ox + side > w)
    throw std::invalid_argument("crop_resize: window " + std::to_string(side) + "@(" +
                                std::to_string(oy) + "," + std::to_string(ox) +
                                ") exceeds frame " + shape_str(clip.frames.shape));
  const int t = clip.frames.extent(0);
  Clip cropped{Tensor<float>({t, side, side, c}), clip.source, clip.fps};
  for (int i = 0; i < t; ++i)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        for (int ch = 0; ch < c; ++ch)
          cropped.frames.at(i, y, x, ch) = clip.frames.at(i, oy + y, ox + x, ch);
  if (side == out_side) return cropped;
  return resize_bilinear(cropped, out_side, out_side);
}

enum class PrepMode { train, eval };

struct PreprocConfig {
  int sample_count = 32;
  int resize_to = 320;
  int crop_to = 224;
  bool allow_short = false;
};

// The two model inputs derived from one clip.
struct StreamPair {
  Tensor<float> frames;  // background-suppressed, {n, crop, crop, 3}
  Tensor<float> diffs;   // signed frame differences, {n-1, crop, crop, 3}
};

// Full pipeline: uniform_sample -> resize -> (train: augment + random crop;
// eval: center crop at scale 1) -> background suppression / frame
// differencing. Both streams share the same geometry draw, and differences
// are taken after cropping so the streams stay spatially aligned.
inline StreamPair prepare_streams(const Clip& clip, const PreprocConfig& cfg, PrepMode mode,
                                  const AugmentSpec& aug = AugmentSpec::none()) {
  Clip sampled = uniform_sample(clip, cfg.sample_count, cfg.allow_short);
  Clip sized = resize_bilinear(sampled, cfg.resize_to, cfg.resize_to);
  Clip framed;
  if (mode == PrepMode::train) {
    Rng rng(aug.seed);
    Clip augmented = augment(sized, aug, rng);
    const double scale = rng.uniform(aug.crop_scale_min, aug.crop_scale_max);
    const int side =
        std::max(1, static_cast<int>(std::lround(scale * cfg.resize_to)));
    const int max_off = cfg.resize_to - side;
    const int oy = max_off > 0 ? rng.integer(max_off + 1) : 0;
    const int ox = max_off > 0 ? rng.integer(max_off + 1) : 0;
    framed = crop_resize(augmented, scale, oy, ox, cfg.crop_to);
  } else {
    framed = crop_resize(sized, 1.0, 0, 0, cfg.crop_to);
  }
  StreamPair out;
  out.frames = background_suppress(framed).frames;
  out.diffs = frame_difference(framed);
  return out;
}

}  // namespace scl
