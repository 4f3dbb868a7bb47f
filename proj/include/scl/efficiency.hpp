#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "scl/model.hpp"

namespace scl {

// FLOP accounting conventions. MAC-based layers (convolutions, dense layers,
// batchnorm folded to one multiply-add per element) scale with the chosen
// convention; elementwise adds, multiplies, comparisons, and nonlinearities
// always count one operation per element.
enum class FlopConvention { mac1, mac2 };

inline const char* convention_name(FlopConvention c) {
  return c == FlopConvention::mac1 ? "mac1" : "mac2";
}

struct CostRow {
  std::string name;
  long long params = 0;
  long long flops = 0;
};

struct EfficiencyReport {
  FlopConvention convention = FlopConvention::mac2;
  std::vector<CostRow> rows;

  long long total_params() const {
    long long t = 0;
    for (const auto& r : rows) t += r.params;
    return t;
  }
  long long total_flops() const {
    long long t = 0;
    for (const auto& r : rows) t += r.flops;
    return t;
  }

  std::string to_text() const {
    std::string s;
    char line[160];
    std::snprintf(line, sizeof(line), "%-48s %14s %18s\n", "layer", "params", "flops");
    s += line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof(line), "%-48s %14lld %18lld\n", r.name.c_str(), r.params,
                    r.flops);
      s += line;
    }
    std::snprintf(line, sizeof(line), "%-48s %14lld %18lld\n", "total", total_params(),
                  total_flops());
    s += line;
    std::snprintf(line, sizeof(line), "convention: %s (%s); elementwise ops count 1\n",
                  convention_name(convention),
                  convention == FlopConvention::mac2 ? "1 MAC = 2 FLOPs" : "1 MAC = 1 FLOP");
    s += line;
    return s;
  }
};

// analytic MAC counts; h and w are the OUTPUT spatial extents
inline long long standard_conv_macs(int h, int w, int k, int cin, int cout) {
  return 1LL * h * w * k * k * cin * cout;
}
inline long long depthwise_conv_macs(int h, int w, int k, int c) {
  return 1LL * h * w * k * k * c;
}
inline long long pointwise_conv_macs(int h, int w, int cin, int cout) {
  return 1LL * h * w * cin * cout;
}
inline long long separable_conv_macs(int h, int w, int k, int cin, int cout) {
  return depthwise_conv_macs(h, w, k, cin) + pointwise_conv_macs(h, w, cin, cout);
}

template <typename T>
inline long long count_params(Model<T>& m) {
  long long total = 0;
  for_each_model_tensor(m, [&](const std::string&, Tensor<T>& t, bool) { total += t.size(); });
  return total;
}

namespace detail {

struct CostBuilder {
  EfficiencyReport* rep;
  long long scale;  // MAC multiplier for the convention

  void row(const std::string& name, long long params, long long flops) {
    rep->rows.push_back(CostRow{name, params, flops});
  }
  void mac_row(const std::string& name, long long params, long long macs) {
    row(name, params, macs * scale);
  }
};

template <typename T>
inline void backbone_cost(CostBuilder& cb, const Backbone<T>& b, const std::string& prefix,
                          long long steps) {
  int size = b.spec.input_size;
  if (b.in_scale != T(1) || b.in_shift != T(0))
    cb.mac_row(prefix + ".input_norm", 0, steps * 1LL * size * size * 3);

  auto bn_rows = [&](const std::string& name, int s, int ch, bool relu) {
    cb.mac_row(name + ".bn", 4LL * ch, steps * 1LL * s * s * ch);
    if (relu) cb.row(name + ".relu6", 0, steps * 1LL * s * s * ch);
  };

  if (b.spec.kind == BackboneKind::mobilenet_truncated) {
    const int stem_out = conv_out_extent(size, 3, b.stem.stride, Padding::same);
    const int stem_ch = b.stem.weight.extent(3);
    cb.mac_row(prefix + ".stem.conv", b.stem.weight.size(),
               steps * standard_conv_macs(stem_out, stem_out, 3, 3, stem_ch));
    bn_rows(prefix + ".stem", stem_out, stem_ch, true);
    size = stem_out;

    for (size_t i = 0; i < b.blocks.size(); ++i) {
      const auto& blk = b.blocks[i];
      const std::string base = prefix + ".block" + std::to_string(i);
      if (blk.has_expand) {
        const int cin = blk.expand.weight.extent(0);
        const int mid = blk.expand.weight.extent(1);
        cb.mac_row(base + ".expand.conv", blk.expand.weight.size(),
                   steps * pointwise_conv_macs(size, size, cin, mid));
        bn_rows(base + ".expand", size, mid, true);
      }
      const int mid = blk.depthwise.weight.extent(2);
      const int dw_out = conv_out_extent(size, 3, blk.depthwise.stride, Padding::same);
      cb.mac_row(base + ".depthwise.conv", blk.depthwise.weight.size(),
                 steps * depthwise_conv_macs(dw_out, dw_out, 3, mid));
      bn_rows(base + ".depthwise", dw_out, mid, true);
      size = dw_out;

      const int cout = blk.project.weight.extent(1);
      cb.mac_row(base + ".project.conv", blk.project.weight.size(),
                 steps * pointwise_conv_macs(size, size, mid, cout));
      bn_rows(base + ".project", size, cout, false);  // linear bottleneck
      if (blk.residual) cb.row(base + ".residual_add", 0, steps * 1LL * size * size * cout);
    }
  } else {
    for (size_t i = 0; i < b.tiny.size(); ++i) {
      const auto& blk = b.tiny[i];
      const std::string base = prefix + ".block" + std::to_string(i);
      const int cin = blk.dw.extent(2);
      const int cout = blk.pw.extent(1);
      const int out = conv_out_extent(size, 3, 2, Padding::same);
      cb.mac_row(base + ".dw", blk.dw.size(), steps * depthwise_conv_macs(out, out, 3, cin));
      cb.mac_row(base + ".pw", blk.pw.size(), steps * pointwise_conv_macs(out, out, cin, cout));
      bn_rows(base, out, cout, true);
      size = out;
    }
  }
}

template <typename T>
inline void cell_cost(CostBuilder& cb, const CellParams<T>& cell, const std::string& prefix,
                      int side, long long steps) {
  const long long hw = 1LL * side * side;
  const long long map = hw * cell.ch;
  for (int g = 0; g < 4; ++g) {
    const std::string base = prefix + "." + gate_names()[static_cast<size_t>(g)];
    if (cell.kind == CellKind::separable) {
      const auto& sg = cell.sep[static_cast<size_t>(g)];
      cb.mac_row(base + ".dw_x", sg.dw_x.size(),
                 steps * depthwise_conv_macs(side, side, cell.k, cell.cx));
      cb.mac_row(base + ".pw_x", sg.pw_x.size(),
                 steps * pointwise_conv_macs(side, side, cell.cx, cell.ch));
      cb.mac_row(base + ".dw_h", sg.dw_h.size(),
                 steps * depthwise_conv_macs(side, side, cell.k, cell.ch));
      cb.mac_row(base + ".pw_h", sg.pw_h.size(),
                 steps * pointwise_conv_macs(side, side, cell.ch, cell.ch));
      cb.row(base + ".bias", sg.bias.size(), steps * 2 * map);  // path sum + bias add
    } else {
      const auto& dg = cell.dense[static_cast<size_t>(g)];
      cb.mac_row(base + ".w_x", dg.w_x.size(),
                 steps * standard_conv_macs(side, side, cell.k, cell.cx, cell.ch));
      cb.mac_row(base + ".w_h", dg.w_h.size(),
                 steps * standard_conv_macs(side, side, cell.k, cell.ch, cell.ch));
      cb.row(base + ".bias", dg.bias.size(), steps * 2 * map);
    }
    cb.row(base + ".act", 0, steps * map);  // sigmoid or tanh per element
  }
  cb.row(prefix + ".state_c", 0, steps * 3 * map);  // f*c + i*candidate
  cb.row(prefix + ".state_h", 0, steps * 2 * map);  // tanh(c) * o
}

}  // namespace detail

// Whole-clip inference cost built from the instantiated model: parameters come
// from the stored tensors, operation counts from the layer dimensions and the
// configured temporal lengths.
template <typename T>
inline EfficiencyReport efficiency_report(Model<T>& m, FlopConvention cv = FlopConvention::mac2) {
  EfficiencyReport rep;
  rep.convention = cv;
  detail::CostBuilder cb{&rep, cv == FlopConvention::mac2 ? 2 : 1};

  const long long frame_steps = m.cfg.preproc.sample_count;
  const long long diff_steps = frame_steps - 1;
  const int feat = m.has_frames_stream() ? m.backbone_frames.out_size : m.backbone_diff.out_size;

  if (m.has_frames_stream()) {
    detail::backbone_cost(cb, m.backbone_frames, "backbone.frames", frame_steps);
    detail::cell_cost(cb, m.cell_frames, "cell.frames", feat, frame_steps);
  }
  if (m.has_diff_stream()) {
    detail::backbone_cost(cb, m.backbone_diff, "backbone.diff", diff_steps);
    detail::cell_cost(cb, m.cell_diff, "cell.diff", feat, diff_steps);
  }

  const int pooled = m.pooled_size();
  const long long pool_out = 1LL * pooled * pooled * m.cfg.lstm_filters;
  const long long streams = m.cfg.streams == Streams::both ? 2 : 1;
  cb.row("maxpool", 0, streams * pool_out * 3);  // 3 comparisons per 2x2 window

  if (m.cfg.streams == Streams::both) {
    switch (m.cfg.fusion) {
      case Fusion::M:
        cb.row("fusion.leaky_relu", 0, pool_out);
        cb.row("fusion.sigmoid", 0, pool_out);
        cb.row("fusion.multiply", 0, pool_out);
        break;
      case Fusion::C:
        cb.row("fusion.concat", 0, 0);  // data movement only
        break;
      case Fusion::A:
        cb.row("fusion.add", 0, pool_out);
        break;
    }
  }

  for (size_t i = 0; i < m.head_w.size(); ++i) {
    const std::string base = "head.dense" + std::to_string(i);
    const int in = m.head_w[i].extent(0), out = m.head_w[i].extent(1);
    cb.mac_row(base + ".mac", m.head_w[i].size(), 1LL * in * out);
    cb.row(base + ".bias", m.head_b[i].size(), out);
    if (i + 1 < m.head_w.size()) cb.row(base + ".leaky_relu", 0, out);
  }
  cb.row("output.sigmoid", 0, 1);
  return rep;
}

}  // namespace scl
