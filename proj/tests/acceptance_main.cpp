// End-to-end property suite. Each section prints one [PASS]/[FAIL] line with
// a short evidence string; the exit code is nonzero if any section fails.
//
// Covered properties:
//   1. analytic gradients of every op and the full two-stream model
//   2. separable convolution == rank-decomposed standard convolution
//   3. cell recurrence == scalar-loop oracle; delta kernels == 1x1 dense cell
//   4. parameter totals vs reference targets; kind-invariant fusion delta;
//      closed-form tallies exact
//   5. two-stream/one-stream FLOP ratio and separable/standard cost ratio
//   6. preprocessing invariants (zero streams, telescoping, shapes)
//   7. learning-rate schedule values
//   8. synthetic-motion learning and the motion-vs-appearance ordering
//   9. bitwise determinism and lossless round-trips

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "scl/efficiency.hpp"
#include "scl/gradcheck.hpp"
#include "scl/io.hpp"
#include "scl/train.hpp"

using scl::CellKind;
using scl::CellParams;
using scl::CellState;
using scl::Clip;
using scl::ModelConfig;
using scl::Rng;
using scl::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

template <typename T>
Tensor<T> random_tensor(const scl::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// ---- 1. gradient correctness ------------------------------------------------------

Outcome check_gradients() {
  const double tol = 1e-4;
  const double t0 = now_s();
  double worst = 0.0;
  int n = 0;
  bool ok = true;

  for (const auto& rep : scl::checks::core_op_checks(7, tol)) {
    ok = ok && rep.pass();
    worst = std::max(worst, rep.max_rel_err());
    ++n;
    if (!rep.pass()) std::fputs(rep.to_text().c_str(), stdout);
  }

  // full two-stream model: 3 sampled frames at 16x16, 8 LSTM filters
  using T = double;
  ModelConfig cfg;
  cfg.backbone.kind = scl::BackboneKind::tiny;
  cfg.backbone.input_size = 16;
  cfg.backbone.tiny_channels = {4, 8};
  cfg.lstm_filters = 8;
  cfg.head = {4, 1};
  cfg.preproc = scl::PreprocConfig{3, 16, 16, false};
  scl::Model<T> m = scl::build_model<T>(cfg, 8);

  Rng rng(9);
  Tensor<T> bsf = random_tensor<T>({3, 16, 16, 3}, rng, 0.05, 0.95);
  Tensor<T> fd = random_tensor<T>({2, 16, 16, 3}, rng, 0.05, 0.95);
  const T target = T(1);

  std::vector<std::pair<std::string, Tensor<T>*>> params;
  scl::for_each_model_tensor(m, [&](const std::string& name, Tensor<T>& t, bool trainable) {
    if (trainable) params.emplace_back(name, &t);
  });

  auto loss_value = [&]() {
    scl::Tape<T> tape;
    scl::TracedModel<T> tm = scl::traced_model_forward(tape, m, bsf, fd, true);
    return tape.value(scl::ad::bce_with_logits(tape, tm.logit, target))[0];
  };
  scl::Tape<T> tape;
  scl::TracedModel<T> tm = scl::traced_model_forward(tape, m, bsf, fd, true);
  tape.backward(scl::ad::bce_with_logits(tape, tm.logit, target), Tensor<T>::scalar(T(1)));
  scl::GradMap<T> analytic;
  for (const auto& [name, tensor] : params) {
    const Tensor<T>* g = tape.grad(tm.param_ids.at(name));
    analytic[name] = g ? *g : Tensor<T>(tensor->shape);
  }
  scl::GradCheckReport full = scl::gradcheck<T>(
      "full_model", params, loss_value, [&] { return analytic; }, tol);
  if (!full.pass()) std::fputs(full.to_text().c_str(), stdout);
  ok = ok && full.pass();
  worst = std::max(worst, full.max_rel_err());
  ++n;

  const double dt = now_s() - t0;
  ok = ok && dt < 300.0;
  return {ok, fmt("%d checks, max rel err %.3e (tol 1e-4), %.1f s (limit 300)", n, worst, dt)};
}

// ---- 2. separable == rank-decomposed standard conv ----------------------------------

Outcome check_separable_equivalence() {
  const double t0 = now_s();
  Rng rng(17);
  float worst = 0.0f;
  const int cases = 120;
  for (int i = 0; i < cases; ++i) {
    const int cin = 1 + static_cast<int>(rng.integer(5));
    const int cout = 1 + static_cast<int>(rng.integer(6));
    const int h = 3 + static_cast<int>(rng.integer(6));
    const int w = 3 + static_cast<int>(rng.integer(6));
    const int k = 1 + 2 * static_cast<int>(rng.integer(3));  // 1, 3, or 5

    Tensor<float> x = random_tensor<float>({h, w, cin}, rng);
    Tensor<float> dw = random_tensor<float>({k, k, cin}, rng);
    Tensor<float> pw = random_tensor<float>({cin, cout}, rng);
    Tensor<float> b = random_tensor<float>({cout}, rng);

    auto got = scl::separable_conv2d(
        x, scl::ConvKernel<float>{scl::KernelKind::depthwise, dw, std::nullopt, 1,
                                  scl::Padding::same},
        scl::ConvKernel<float>{scl::KernelKind::pointwise, pw, b, 1, scl::Padding::same});
    auto want = scl::conv2d(x, scl::ConvKernel<float>{scl::KernelKind::standard,
                                                      scl::expand_separable(dw, pw), b, 1,
                                                      scl::Padding::same});
    worst = std::max(worst, scl::max_abs_diff(got, want));
  }
  const double dt = now_s() - t0;
  const bool ok = worst < 1e-5f && dt < 60.0;
  return {ok, fmt("%d randomized cases, max abs err %.3e (tol 1e-5), %.2f s (limit 60)", cases,
                  static_cast<double>(worst), dt)};
}

// ---- 3. cell oracle ------------------------------------------------------------------

double padded(const Tensor<double>& t, int y, int x, int c) {
  if (y < 0 || y >= t.extent(0) || x < 0 || x >= t.extent(1)) return 0.0;
  return t.at(y, x, c);
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double sep_path(const Tensor<double>& in, const Tensor<double>& dw, const Tensor<double>& pw,
                int y, int x, int n, int k) {
  const int off = (k - 1) / 2;
  double acc = 0.0;
  for (int c = 0; c < in.extent(2); ++c) {
    double d = 0.0;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx)
        d += dw.at(ky, kx, c) * padded(in, y + ky - off, x + kx - off, c);
    acc += pw.at2(c, n) * d;
  }
  return acc;
}

double dense_path(const Tensor<double>& in, const Tensor<double>& w, int y, int x, int n, int k) {
  const int off = (k - 1) / 2;
  double acc = 0.0;
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int c = 0; c < in.extent(2); ++c)
        acc += w.at(ky, kx, c, n) * padded(in, y + ky - off, x + kx - off, c);
  return acc;
}

CellState<double> oracle_step(const Tensor<double>& x, const CellState<double>& s,
                              const CellParams<double>& p) {
  const int h = x.extent(0), w = x.extent(1);
  auto preact = [&](int g, int y, int xx, int n) {
    if (p.kind == CellKind::separable) {
      const auto& gate = p.sep[static_cast<size_t>(g)];
      return sep_path(x, gate.dw_x, gate.pw_x, y, xx, n, p.k) +
             sep_path(s.h, gate.dw_h, gate.pw_h, y, xx, n, p.k) + gate.bias[n];
    }
    const auto& gate = p.dense[static_cast<size_t>(g)];
    return dense_path(x, gate.w_x, y, xx, n, p.k) + dense_path(s.h, gate.w_h, y, xx, n, p.k) +
           gate.bias[n];
  };
  CellState<double> next = scl::zero_state<double>(h, w, p.ch);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int n = 0; n < p.ch; ++n) {
        const double i = logistic(preact(0, y, xx, n));
        const double f = logistic(preact(1, y, xx, n));
        const double cand = std::tanh(preact(2, y, xx, n));
        const double o = logistic(preact(3, y, xx, n));
        const double c = f * s.c.at(y, xx, n) + i * cand;
        next.c.at(y, xx, n) = c;
        next.h.at(y, xx, n) = o * std::tanh(c);
      }
  return next;
}

Outcome check_cell_oracle() {
  Rng rng(23);
  double worst = 0.0;
  int cases = 0;
  for (CellKind kind : {CellKind::separable, CellKind::dense}) {
    for (int i = 0; i < 4; ++i) {
      const int cx = 1 + static_cast<int>(rng.integer(3));
      const int ch = 1 + static_cast<int>(rng.integer(4));
      const int h = 3 + static_cast<int>(rng.integer(3));
      const int w = 3 + static_cast<int>(rng.integer(3));
      auto p = scl::make_cell<double>(kind, 3, cx, ch, rng);
      for (int g = 0; g < 4; ++g) {
        auto& bias = kind == CellKind::separable ? p.sep[g].bias : p.dense[g].bias;
        for (auto& v : bias.data) v = rng.uniform(-0.5, 0.5);
      }
      Tensor<double> x = random_tensor<double>({h, w, cx}, rng);
      CellState<double> s{random_tensor<double>({h, w, ch}, rng),
                          random_tensor<double>({h, w, ch}, rng)};
      auto got = scl::cell_step(x, s, p);
      auto want = oracle_step(x, s, p);
      worst = std::max({worst, static_cast<double>(scl::max_abs_diff(got.h, want.h)),
                        static_cast<double>(scl::max_abs_diff(got.c, want.c))});
      ++cases;
    }
  }

  // centered-delta depthwise kernels turn every separable gate into a pure
  // pointwise map: the step must equal a dense cell with 1x1 kernels, bitwise
  const bool saved = scl::exec_config().deterministic;
  scl::exec_config().deterministic = true;
  const int cx = 2, ch = 3;
  auto sep = scl::make_cell<double>(CellKind::separable, 3, cx, ch, rng);
  auto dense = scl::make_cell<double>(CellKind::dense, 1, cx, ch, rng);
  for (int g = 0; g < 4; ++g) {
    sep.sep[g].dw_x = Tensor<double>({3, 3, cx});
    sep.sep[g].dw_h = Tensor<double>({3, 3, ch});
    for (int c = 0; c < cx; ++c) sep.sep[g].dw_x.at(1, 1, c) = 1.0;
    for (int c = 0; c < ch; ++c) sep.sep[g].dw_h.at(1, 1, c) = 1.0;
    for (int c = 0; c < cx; ++c)
      for (int n = 0; n < ch; ++n) dense.dense[g].w_x.at(0, 0, c, n) = sep.sep[g].pw_x.at2(c, n);
    for (int c = 0; c < ch; ++c)
      for (int n = 0; n < ch; ++n) dense.dense[g].w_h.at(0, 0, c, n) = sep.sep[g].pw_h.at2(c, n);
    for (int n = 0; n < ch; ++n) {
      sep.sep[g].bias[n] = 0.1 * (g + 1) * (n + 1);
      dense.dense[g].bias[n] = sep.sep[g].bias[n];
    }
  }
  Tensor<double> x = random_tensor<double>({4, 4, cx}, rng);
  CellState<double> s{random_tensor<double>({4, 4, ch}, rng),
                      random_tensor<double>({4, 4, ch}, rng)};
  auto from_sep = scl::sepconvlstm_step(x, s, sep);
  auto from_dense = scl::convlstm_step(x, s, dense);
  scl::exec_config().deterministic = saved;
  const bool delta_ok = from_sep.h == from_dense.h && from_sep.c == from_dense.c;

  const bool ok = worst < 1e-10 && delta_ok;
  return {ok, fmt("%d oracle cases, max abs err %.3e (tol 1e-10); delta-kernel reduction %s",
                  cases, worst, delta_ok ? "bitwise equal" : "MISMATCH")};
}

// ---- 4. parameter counts --------------------------------------------------------------

struct ParamCase {
  const char* name;
  scl::Streams streams;
  scl::Fusion fusion;
  CellKind kind;
  long long target;
};

Outcome check_param_counts() {
  const std::vector<ParamCase> cases = {
      {"one-stream separable", scl::Streams::diff_only, scl::Fusion::M, CellKind::separable,
       185521},
      {"two-stream C separable", scl::Streams::both, scl::Fusion::C, CellKind::separable, 371009},
      {"two-stream M separable", scl::Streams::both, scl::Fusion::M, CellKind::separable, 333057},
      {"two-stream M dense", scl::Streams::both, scl::Fusion::M, CellKind::dense, 815937},
      {"two-stream C dense", scl::Streams::both, scl::Fusion::C, CellKind::dense, 853889},
  };

  bool ok = true;
  std::string detail;
  double worst_dev = 0.0;
  long long delta_sep = 0, delta_dense = 0;
  for (const auto& pc : cases) {
    ModelConfig cfg = ModelConfig::reference();
    cfg.streams = pc.streams;
    cfg.fusion = pc.fusion;
    cfg.lstm_kind = pc.kind;
    scl::Model<float> m = scl::build_model<float>(cfg, 1);
    const long long built = scl::count_params(m);
    const double dev = std::abs(static_cast<double>(built - pc.target)) /
                       static_cast<double>(pc.target);
    worst_dev = std::max(worst_dev, dev);
    if (dev > 0.10) {
      ok = false;
      detail += fmt(" %s=%lld off by %.1f%%;", pc.name, built, 100.0 * dev);
    }

    // closed-form tallies, zero tolerance: the cell tensors must sum to the
    // closed form, and the per-layer report must account for every tensor
    const int n_streams = pc.streams == scl::Streams::both ? 2 : 1;
    const int cx = m.has_diff_stream() ? m.backbone_diff.out_channels
                                       : m.backbone_frames.out_channels;
    long long cell_built = 0;
    scl::for_each_model_tensor(m, [&](const std::string& name, Tensor<float>& t, bool) {
      if (name.rfind("cell.", 0) == 0) cell_built += t.size();
    });
    const long long cell_form =
        n_streams * scl::cell_param_count(pc.kind, 3, cx, cfg.lstm_filters);
    if (cell_built != cell_form) {
      ok = false;
      detail += fmt(" %s cell tensors %lld != closed form %lld;", pc.name, cell_built, cell_form);
    }
    const long long report_total =
        scl::efficiency_report(m, scl::FlopConvention::mac2).total_params();
    if (report_total != built) {
      ok = false;
      detail += fmt(" %s report total %lld != model %lld;", pc.name, report_total, built);
    }

    if (pc.fusion == scl::Fusion::C && pc.streams == scl::Streams::both) {
      (pc.kind == CellKind::separable ? delta_sep : delta_dense) += built;
    }
    if (pc.fusion == scl::Fusion::M && pc.streams == scl::Streams::both) {
      (pc.kind == CellKind::separable ? delta_sep : delta_dense) -= built;
    }
  }
  if (delta_sep != delta_dense) {
    ok = false;
    detail += fmt(" C-minus-M delta differs across kinds: %lld vs %lld;", delta_sep, delta_dense);
  }
  if (ok)
    detail = fmt("5 models within %.1f%% of targets (limit 10%%); C-minus-M delta %lld for both "
                 "cell kinds; closed-form tallies exact",
                 100.0 * worst_dev, delta_sep);
  return {ok, detail};
}

// ---- 5. efficiency ratios ---------------------------------------------------------------

Outcome check_flop_ratios() {
  ModelConfig two = ModelConfig::reference();
  two.fusion = scl::Fusion::C;
  ModelConfig one = ModelConfig::reference();
  one.streams = scl::Streams::diff_only;

  scl::Model<float> m_two = scl::build_model<float>(two, 1);
  scl::Model<float> m_one = scl::build_model<float>(one, 1);
  const double f_two =
      static_cast<double>(scl::efficiency_report(m_two, scl::FlopConvention::mac2).total_flops());
  const double f_one =
      static_cast<double>(scl::efficiency_report(m_one, scl::FlopConvention::mac2).total_flops());
  const double ratio = f_two / f_one;
  const bool ratio_ok = std::abs(ratio - 2.0) <= 0.05 * 2.0;

  // separable vs standard conv cost at K=3, N=64 input/output channels
  const double want = 1.0 / 64.0 + 1.0 / 9.0;
  double worst = 0.0;
  for (int side : {7, 14, 56, 224}) {
    const double sep =
        static_cast<double>(scl::separable_conv_macs(side, side, 3, 64, 64));
    const double std_ =
        static_cast<double>(scl::standard_conv_macs(side, side, 3, 64, 64));
    worst = std::max(worst, std::abs(sep / std_ - want) / want);
  }
  const bool cost_ok = worst <= 0.01;

  return {ratio_ok && cost_ok,
          fmt("two-stream/one-stream FLOPs %.4f (want 2.00 +-5%%); separable/standard cost off "
              "by %.2e (limit 1%%)",
              ratio, worst)};
}

// ---- 6. preprocessing invariants -----------------------------------------------------------

Outcome check_preproc_invariants() {
  // a clip with no motion: every pixel constant across 40 frames
  Clip still;
  still.frames = Tensor<float>({40, 240, 320, 3});
  Rng rng(31);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 320; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = static_cast<float>(rng.uniform(0.1, 0.9));
        for (int t = 0; t < 40; ++t) still.frames.at(t, y, x, c) = v;
      }

  const scl::PreprocConfig ref{32, 320, 224, false};
  scl::StreamPair sp = scl::prepare_streams(still, ref, scl::PrepMode::eval);

  float max_bsf = 0.0f, max_fd = 0.0f;
  for (auto v : sp.frames.data) max_bsf = std::max(max_bsf, std::abs(v));
  for (auto v : sp.diffs.data) max_fd = std::max(max_fd, std::abs(v));
  const bool zero_ok = max_bsf == 0.0f && max_fd == 0.0f;

  const bool shape_ok = sp.frames.shape == scl::Shape{32, 224, 224, 3} &&
                        sp.diffs.shape == scl::Shape{31, 224, 224, 3};

  // telescoping: differences of a moving clip sum to last - first
  Clip moving;
  moving.frames = random_tensor<float>({9, 12, 10, 3}, rng, 0.0, 1.0);
  Tensor<float> fd = scl::frame_difference(moving);
  const bool steps_ok = fd.extent(0) == 8;
  float tel_err = 0.0f;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 10; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int t = 0; t < 8; ++t) acc += fd.at(t, y, x, c);
        const float want = moving.frames.at(8, y, x, c) - moving.frames.at(0, y, x, c);
        tel_err = std::max(tel_err, std::abs(acc - want));
      }
  const bool tel_ok = tel_err < 1e-5f;

  const bool ok = zero_ok && shape_ok && steps_ok && tel_ok;
  return {ok, fmt("static clip max |bsf|=%.1e |fd|=%.1e; shapes %s; %d diff steps telescope "
                  "to last-first within %.1e",
                  static_cast<double>(max_bsf), static_cast<double>(max_fd),
                  shape_ok ? "32x224x224x3 / 31x224x224x3" : "WRONG", fd.extent(0),
                  static_cast<double>(tel_err))};
}

// ---- 7. learning-rate schedule ----------------------------------------------------------------

Outcome check_lr_schedule() {
  scl::TrainConfig cfg;  // base 4e-4, halve every 5, floor 5e-5
  const std::vector<std::pair<int, double>> want = {
      {0, 4e-4}, {4, 4e-4}, {5, 2e-4}, {9, 2e-4},  {10, 1e-4},
      {14, 1e-4}, {15, 5e-5}, {19, 5e-5}, {20, 5e-5}, {100, 5e-5},
  };
  for (const auto& [epoch, lr] : want)
    if (scl::lr_at_epoch(epoch, cfg) != lr)
      return {false, fmt("epoch %d gave %.6g, wanted %.6g", epoch, scl::lr_at_epoch(epoch, cfg),
                         lr)};
  return {true, "4e-4 / 2e-4 / 1e-4 / 5e-5 at epochs 0/5/10/15, exact, floored thereafter"};
}

// ---- 8. synthetic-motion learning --------------------------------------------------------------

Outcome check_learning() {
  const double t0 = now_s();
  scl::SynthDataset train = scl::make_synth(64, 16, 64, 21);
  scl::SynthDataset held = scl::make_synth(32, 16, 64, 1021);

  scl::TrainConfig cfg;
  cfg.model = ModelConfig::tiny();
  cfg.epochs = 200;
  cfg.seed = 5;
  cfg.augment_enabled = false;
  cfg.deterministic = true;
  cfg.stop_at_train_acc = 0.95;

  scl::Model<float> m = scl::build_model<float>(cfg.model, cfg.seed);
  scl::FitResult fr = scl::fit(m, train.data, nullptr, cfg);
  const double train_acc = fr.log.empty() ? 0.0 : fr.log.back().train_acc;
  const int epochs_used = static_cast<int>(fr.log.size());
  const bool learn_ok = train_acc >= 0.95 && epochs_used <= 200;

  // one-stream comparison: the motion stream must generalize better than the
  // appearance stream on held-out clips
  auto one_stream_acc = [&](scl::Streams s) {
    scl::TrainConfig c1 = cfg;
    c1.model.streams = s;
    c1.epochs = 15;
    c1.stop_at_train_acc = -1;
    scl::Model<float> m1 = scl::build_model<float>(c1.model, c1.seed);
    scl::fit(m1, train.data, nullptr, c1);
    return scl::evaluate(m1, held.data).accuracy;
  };
  const double diff_acc = one_stream_acc(scl::Streams::diff_only);
  const double frames_acc = one_stream_acc(scl::Streams::frames_only);
  const bool order_ok = diff_acc > frames_acc;

  const double dt = now_s() - t0;
  const bool ok = learn_ok && order_ok && dt < 600.0;
  return {ok, fmt("two-stream train acc %.4f in %d epochs (want >=0.95 within 200); held-out "
                  "diff-only %.4f > frames-only %.4f; %.0f s (limit 600)",
                  train_acc, epochs_used, diff_acc, frames_acc, dt)};
}

// ---- 9. determinism and round-trips -------------------------------------------------------------

Outcome check_determinism() {
  scl::SynthDataset data = scl::make_synth(8, 16, 64, 3);
  scl::TrainConfig cfg;
  cfg.model = ModelConfig::tiny();
  cfg.epochs = 2;
  cfg.seed = 11;
  cfg.augment_enabled = false;
  cfg.deterministic = true;

  auto run = [&]() {
    scl::Model<float> m = scl::build_model<float>(cfg.model, cfg.seed);
    scl::fit(m, data.data, nullptr, cfg);
    return scl::serialize_weights(scl::export_weights(m));
  };
  const std::string bytes_a = run();
  const std::string bytes_b = run();
  const bool train_ok = bytes_a == bytes_b;

  const std::string again =
      scl::serialize_weights(scl::deserialize_weights(bytes_a, "<memory>"));
  const bool sclw_ok = again == bytes_a;

  Rng rng(37);
  Tensor<float> clip = random_tensor<float>({4, 16, 16, 3}, rng, 0.0, 1.0);
  const std::string cbytes = scl::serialize_clip(clip);
  Tensor<float> back = scl::deserialize_clip(cbytes, "<memory>");
  const bool clip_ok = back == clip && scl::serialize_clip(back) == cbytes;

  const bool ok = train_ok && sclw_ok && clip_ok;
  return {ok, fmt("repeated deterministic training %s (%zu bytes); weight container "
                  "round-trip %s; clip container round-trip %s",
                  train_ok ? "bitwise identical" : "DIFFERS", bytes_a.size(),
                  sclw_ok ? "lossless" : "LOSSY", clip_ok ? "lossless" : "LOSSY")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> sections = {
      {"gradient correctness (all ops + full two-stream model)", check_gradients},
      {"separable conv equals rank-decomposed standard conv", check_separable_equivalence},
      {"cell recurrence matches scalar-loop oracle", check_cell_oracle},
      {"parameter counts match reference totals", check_param_counts},
      {"FLOP ratios (two-stream x2, separable 1/64 + 1/9)", check_flop_ratios},
      {"preprocessing invariants (zeros, telescoping, shapes)", check_preproc_invariants},
      {"learning-rate schedule", check_lr_schedule},
      {"synthetic-motion learning and stream ordering", check_learning},
      {"bitwise determinism and lossless round-trips", check_determinism},
  };

  int failures = 0;
  for (const auto& [name, fn] : sections) {
    Outcome r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, fmt("exception: %s", e.what())};
    }
    std::printf("[%s] %s — %s\n", r.pass ? "PASS" : "FAIL", name, r.detail.c_str());
    std::fflush(stdout);
    if (!r.pass) ++failures;
  }
  if (failures) std::printf("%d of %zu sections failed\n", failures, sections.size());
  return failures == 0 ? 0 : 1;
}
