#include <catch2/catch.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scl/gradcheck.hpp"
#include "scl/model.hpp"

using namespace scl;

namespace {

// ---- independent parameter arithmetic ---------------------------------------
// Everything below is computed from layer dimensions alone, never by walking
// the built model, so the walk and the arithmetic check each other.

struct BlockDims {
  int in, out, stride, expansion;
};

// channel progression of the truncated feature extractor at width 0.35
const std::vector<BlockDims> kTruncatedBlocks = {
    {16, 8, 1, 1},  {8, 8, 2, 6},   {8, 8, 1, 6},   {8, 16, 2, 6},  {16, 16, 1, 6},
    {16, 16, 1, 6}, {16, 24, 2, 6}, {24, 24, 1, 6}, {24, 24, 1, 6}, {24, 24, 1, 6},
    {24, 32, 1, 6}, {32, 32, 1, 6}, {32, 32, 1, 6}, {32, 56, 2, 6}};

long bn_params(int ch) { return 4L * ch; }  // gamma, beta, running mean, running var

long truncated_backbone_params() {
  long total = 3L * 3 * 3 * 16 + bn_params(16);  // stem
  for (const auto& b : kTruncatedBlocks) {
    const int mid = b.in * b.expansion;
    if (b.expansion != 1) total += 1L * b.in * mid + bn_params(mid);  // expand 1x1
    total += 3L * 3 * mid + bn_params(mid);                          // depthwise 3x3
    total += 1L * mid * b.out + bn_params(b.out);                    // project 1x1
  }
  return total;
}

long separable_cell_params(int cx, int ch) {
  return 4L * (9L * cx + 1L * cx * ch + 9L * ch + 1L * ch * ch + ch);
}

long dense_cell_params(int cx, int ch) { return 4L * (9L * cx * ch + 9L * ch * ch + ch); }

long head_params(int flat, const std::vector<int>& widths) {
  long total = 0;
  int in = flat;
  for (int w : widths) {
    total += 1L * in * w + w;
    in = w;
  }
  return total;
}

long expected_model_params(const ModelConfig& cfg) {
  const long backbone = truncated_backbone_params();
  const long cell = cfg.lstm_kind == CellKind::separable
                        ? separable_cell_params(56, cfg.lstm_filters)
                        : dense_cell_params(56, cfg.lstm_filters);
  const int streams = cfg.streams == Streams::both ? 2 : 1;
  const int fused_ch = (cfg.streams == Streams::both && cfg.fusion == Fusion::C)
                           ? 2 * cfg.lstm_filters
                           : cfg.lstm_filters;
  const int flat = 3 * 3 * fused_ch;  // 7x7 map pooled to 3x3
  return streams * (backbone + cell) + head_params(flat, cfg.head);
}

long count_model_params(Model<float>& m) {
  long total = 0;
  for_each_model_tensor(m, [&](const std::string&, Tensor<float>& t, bool) { total += t.size(); });
  return total;
}

ModelConfig reference_variant(Streams s, Fusion f, CellKind k) {
  ModelConfig cfg = ModelConfig::reference();
  cfg.streams = s;
  cfg.fusion = f;
  cfg.lstm_kind = k;
  return cfg;
}

// small two-block configuration used for forward/gradient tests
ModelConfig small_config(int side, int sample_count) {
  ModelConfig cfg;
  cfg.backbone.kind = BackboneKind::tiny;
  cfg.backbone.input_size = side;
  cfg.backbone.tiny_channels = {4, 8};
  cfg.lstm_filters = 8;
  cfg.head = {4, 1};
  cfg.preproc = PreprocConfig{sample_count, side, side, false};
  return cfg;
}

template <typename T>
Tensor<T> random_clip_tensor(int t, int side, Rng& rng) {
  Tensor<T> x({t, side, side, 3});
  for (auto& v : x.data) v = static_cast<T>(rng.uniform(0.05, 0.95));
  return x;
}

}  // namespace

TEST_CASE("config validation rejects malformed setups", "[model]") {
  ModelConfig cfg = ModelConfig::tiny();
  REQUIRE_NOTHROW(validate_config(cfg));

  ModelConfig bad_head = cfg;
  bad_head.head = {64, 16};
  REQUIRE_THROWS_WITH(validate_config(bad_head), Catch::Contains("ending in 1"));

  ModelConfig bad_crop = cfg;
  bad_crop.preproc.crop_to = 32;
  REQUIRE_THROWS_WITH(validate_config(bad_crop), Catch::Contains("crop size 32"));

  ModelConfig bad_filters = cfg;
  bad_filters.lstm_filters = 0;
  REQUIRE_THROWS_WITH(validate_config(bad_filters), Catch::Contains("lstm_filters"));
}

TEST_CASE("fusion modes compute the documented combinations", "[model]") {
  Tensor<double> a({2, 2, 2});
  Tensor<double> b({2, 2, 2});
  Rng rng(3);
  for (auto& v : a.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : b.data) v = rng.uniform(-1.0, 1.0);

  SECTION("multiplicative gate") {
    Tensor<double> got = fuse(a, b, Fusion::M, 0.1);
    for (std::int64_t i = 0; i < got.size(); ++i) {
      const double lhs = a[i] > 0 ? a[i] : 0.1 * a[i];
      const double rhs = 1.0 / (1.0 + std::exp(-b[i]));
      REQUIRE(got[i] == Approx(lhs * rhs).epsilon(1e-12));
    }
    Tensor<double> zero({2, 2, 2});
    Tensor<double> gated = fuse(zero, b, Fusion::M, 0.1);
    for (std::int64_t i = 0; i < gated.size(); ++i) REQUIRE(gated[i] == 0.0);
  }

  SECTION("concatenation stacks channels") {
    Tensor<double> got = fuse(a, b, Fusion::C);
    REQUIRE(got.shape == Shape{2, 2, 4});
    REQUIRE(got.at(1, 0, 0) == a.at(1, 0, 0));
    REQUIRE(got.at(1, 0, 2) == b.at(1, 0, 0));
  }

  SECTION("addition with a zero operand is the identity") {
    Tensor<double> zero({2, 2, 2});
    REQUIRE(fuse(a, zero, Fusion::A) == a);
  }

  SECTION("shape mismatches are rejected") {
    Tensor<double> other({2, 3, 2});
    REQUIRE_THROWS_WITH(fuse(a, other, Fusion::M), Catch::Contains("matching shapes"));
    REQUIRE_THROWS_WITH(fuse(a, other, Fusion::C), Catch::Contains("spatial dims"));
  }
}

TEST_CASE("parameter totals hit the published sizes within 10 percent", "[model]") {
  struct Row {
    ModelConfig cfg;
    long target;
  };
  const std::vector<Row> rows = {
      {reference_variant(Streams::frames_only, Fusion::M, CellKind::separable), 185521},
      {reference_variant(Streams::both, Fusion::C, CellKind::separable), 371009},
      {reference_variant(Streams::both, Fusion::M, CellKind::separable), 333057},
      {reference_variant(Streams::both, Fusion::M, CellKind::dense), 815937},
      {reference_variant(Streams::both, Fusion::C, CellKind::dense), 853889},
  };
  for (const auto& row : rows) {
    Model<float> m = build_model<float>(row.cfg, 1);
    const long built = count_model_params(m);
    INFO("streams=" << streams_name(row.cfg.streams) << " fusion=" << fusion_name(row.cfg.fusion)
                    << " kind=" << (row.cfg.lstm_kind == CellKind::separable ? "sep" : "dense")
                    << " built=" << built << " target=" << row.target);
    REQUIRE(built == expected_model_params(row.cfg));  // arithmetic matches the walk exactly
    REQUIRE(std::llabs(built - row.target) <= row.target / 10);
  }
}

TEST_CASE("concat minus multiply parameter delta is the extra head fan-in", "[model]") {
  auto count = [](Fusion f, CellKind k) {
    Model<float> m = build_model<float>(reference_variant(Streams::both, f, k), 1);
    return count_model_params(m);
  };
  const long sep_delta = count(Fusion::C, CellKind::separable) - count(Fusion::M, CellKind::separable);
  const long dense_delta = count(Fusion::C, CellKind::dense) - count(Fusion::M, CellKind::dense);
  REQUIRE(sep_delta == dense_delta);           // fusion choice is orthogonal to the cell kind
  REQUIRE(sep_delta == 3L * 3 * 64 * 64);      // extra flattened inputs times first head width
}

TEST_CASE("dense minus separable cell delta matches the closed forms", "[model]") {
  auto count = [](CellKind k) {
    Model<float> m = build_model<float>(reference_variant(Streams::both, Fusion::M, k), 1);
    return count_model_params(m);
  };
  REQUIRE(count(CellKind::dense) - count(CellKind::separable) ==
          2 * (dense_cell_params(56, 64) - separable_cell_params(56, 64)));
}

TEST_CASE("same seed rebuilds identical weights, different seed does not", "[model]") {
  const ModelConfig cfg = small_config(16, 3);
  Model<float> a = build_model<float>(cfg, 42);
  Model<float> b = build_model<float>(cfg, 42);
  Model<float> c = build_model<float>(cfg, 43);

  std::map<std::string, Tensor<float>*> ta, tb, tc;
  for_each_model_tensor(a, [&](const std::string& n, Tensor<float>& t, bool) { ta[n] = &t; });
  for_each_model_tensor(b, [&](const std::string& n, Tensor<float>& t, bool) { tb[n] = &t; });
  for_each_model_tensor(c, [&](const std::string& n, Tensor<float>& t, bool) { tc[n] = &t; });
  REQUIRE(ta.size() == tb.size());

  bool any_diff_seed43 = false;
  for (const auto& [name, t] : ta) {
    REQUIRE(*t == *tb.at(name));
    if (!(*t == *tc.at(name))) any_diff_seed43 = true;
  }
  REQUIRE(any_diff_seed43);
}

TEST_CASE("parameter names cover both streams and the head", "[model]") {
  Model<float> m = build_model<float>(small_config(16, 3), 5);
  std::set<std::string> names;
  for_each_model_tensor(m, [&](const std::string& n, Tensor<float>&, bool) {
    REQUIRE(names.insert(n).second);  // no duplicates
  });
  REQUIRE(names.count("backbone.frames.block0.dw.weight") == 1);
  REQUIRE(names.count("backbone.diff.block1.bn.mean") == 1);
  REQUIRE(names.count("cell.frames.i.dw_x") == 1);
  REQUIRE(names.count("cell.diff.o.bias") == 1);
  REQUIRE(names.count("head.dense0.weight") == 1);
  REQUIRE(names.count("head.dense1.bias") == 1);
}

TEST_CASE("zeroed head gives probability one half on any input", "[model]") {
  Model<float> m = build_model<float>(small_config(16, 3), 9);
  for (auto& w : m.head_w) w.fill(0.0f);
  for (auto& b : m.head_b) b.fill(0.0f);
  Rng rng(17);
  Tensor<float> bsf = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd = random_clip_tensor<float>(2, 16, rng);
  REQUIRE(model_forward(m, bsf, fd) == 0.5f);
}

TEST_CASE("temporal and spatial input validation", "[model]") {
  Model<float> m = build_model<float>(small_config(16, 3), 9);
  Rng rng(17);
  Tensor<float> bsf = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd = random_clip_tensor<float>(2, 16, rng);
  Tensor<float> bad_t = random_clip_tensor<float>(4, 16, rng);
  Tensor<float> bad_side = random_clip_tensor<float>(3, 8, rng);
  REQUIRE_THROWS_WITH(model_forward(m, bad_t, fd), Catch::Contains("expects 3 time steps"));
  REQUIRE_THROWS_WITH(model_forward(m, bsf, bad_t), Catch::Contains("expects 2 time steps"));
  REQUIRE_THROWS_WITH(model_forward(m, bad_side, fd), Catch::Contains("16x16x3"));
}

TEST_CASE("forward equals an explicitly composed pipeline", "[model]") {
  const ModelConfig cfg = small_config(16, 3);
  Model<float> m = build_model<float>(cfg, 21);
  Rng rng(4);
  Tensor<float> bsf = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd = random_clip_tensor<float>(2, 16, rng);

  auto stream = [&](const Backbone<float>& bb, const CellParams<float>& cell,
                    const Tensor<float>& xs) {
    CellState<float> st = zero_state<float>(bb.out_size, bb.out_size, cell.ch);
    for (int t = 0; t < xs.extent(0); ++t) {
      Tensor<float> frame({xs.extent(1), xs.extent(2), xs.extent(3)});
      for (int y = 0; y < xs.extent(1); ++y)
        for (int x = 0; x < xs.extent(2); ++x)
          for (int c = 0; c < 3; ++c) frame.at(y, x, c) = xs.at(t, y, x, c);
      st = cell_step(backbone_forward(bb, frame), st, cell);
    }
    return maxpool2d(st.h, 2);
  };
  Tensor<float> fused = fuse(stream(m.backbone_frames, m.cell_frames, bsf),
                             stream(m.backbone_diff, m.cell_diff, fd), Fusion::M, 0.1f);
  Tensor<float> x({static_cast<int>(fused.size())}, fused.data);
  for (size_t i = 0; i < m.head_w.size(); ++i) {
    Tensor<float> y = m.head_b[i];
    for (int a = 0; a < m.head_w[i].extent(0); ++a)
      for (int o = 0; o < m.head_w[i].extent(1); ++o) y[o] += x[a] * m.head_w[i].at2(a, o);
    x = i + 1 < m.head_w.size() ? activation(Act::leaky_relu, y, 0.1f) : y;
  }
  const float manual = act_scalar(Act::sigmoid, x[0]);
  REQUIRE(model_forward(m, bsf, fd) == manual);
}

TEST_CASE("single stream variants use only their own input", "[model]") {
  ModelConfig cfg = small_config(16, 3);
  Rng rng(8);
  Tensor<float> bsf = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd = random_clip_tensor<float>(2, 16, rng);

  cfg.streams = Streams::frames_only;
  Model<float> mf = build_model<float>(cfg, 2);
  const float pf = model_forward(mf, bsf, Tensor<float>{});
  REQUIRE(pf > 0.0f);
  REQUIRE(pf < 1.0f);

  cfg.streams = Streams::diff_only;
  Model<float> md = build_model<float>(cfg, 2);
  const float pd = model_forward(md, Tensor<float>{}, fd);
  REQUIRE(pd > 0.0f);
  REQUIRE(pd < 1.0f);
}

TEST_CASE("traced eval forward matches the untraced forward exactly", "[model]") {
  for (Fusion f : {Fusion::M, Fusion::C, Fusion::A}) {
    ModelConfig cfg = small_config(16, 3);
    cfg.fusion = f;
    Model<float> m = build_model<float>(cfg, 33);
    Rng rng(6);
    Tensor<float> bsf = random_clip_tensor<float>(3, 16, rng);
    Tensor<float> fd = random_clip_tensor<float>(2, 16, rng);

    Tape<float> tape;
    TracedModel<float> tm = traced_model_forward(tape, m, bsf, fd, false);
    REQUIRE(tm.bn_updates.empty());
    const float traced_p = act_scalar(Act::sigmoid, tape.value(tm.logit)[0]);
    REQUIRE(traced_p == model_forward(m, bsf, fd));
  }
}

TEST_CASE("traced train forward collects one batchnorm update per layer", "[model]") {
  ModelConfig cfg = small_config(16, 3);
  Model<float> m = build_model<float>(cfg, 33);
  Rng rng(6);
  Tensor<float> bsf = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd = random_clip_tensor<float>(2, 16, rng);
  Tape<float> tape;
  TracedModel<float> tm = traced_model_forward(tape, m, bsf, fd, true);
  REQUIRE(tm.bn_updates.size() == 4);  // two tiny blocks per stream
  REQUIRE(tm.param_ids.count("head.dense0.weight") == 1);
  REQUIRE(tm.param_ids.count("cell.frames.f.pw_h") == 1);
  REQUIRE(tm.param_ids.count("backbone.diff.block1.bn.gamma") == 1);
}

TEST_CASE("predict thresholds at one half with ties labeled violent", "[model]") {
  REQUIRE(predict_from_probability(0.5).violent);
  REQUIRE(predict_from_probability(0.7).violent);
  REQUIRE_FALSE(predict_from_probability(0.49999).violent);
}

TEST_CASE("predict runs the eval preprocessing pipeline", "[model]") {
  ModelConfig cfg = small_config(16, 3);
  Model<float> m = build_model<float>(cfg, 12);
  Clip clip;
  clip.frames = Tensor<float>({6, 16, 16, 3});
  Rng rng(5);
  for (auto& v : clip.frames.data) v = static_cast<float>(rng.uniform(0.0, 1.0));

  Prediction<float> got = predict(m, clip);
  StreamPair streams = prepare_streams(clip, cfg.preproc, PrepMode::eval);
  const float want = model_forward(m, streams.frames, streams.diffs);
  REQUIRE(got.p == want);
  REQUIRE(got.violent == (want >= 0.5f));
}

TEST_CASE("full model gradient check on a small two stream setup", "[model][slow]") {
  const ModelConfig cfg = small_config(16, 3);
  Model<double> m = build_model<double>(cfg, 77);
  Rng rng(91);
  Tensor<double> bsf = random_clip_tensor<double>(3, 16, rng);
  Tensor<double> fd = random_clip_tensor<double>(2, 16, rng);
  const double target = 1.0;

  std::vector<std::pair<std::string, Tensor<double>*>> params;
  for_each_model_tensor(m, [&](const std::string& n, Tensor<double>& t, bool trainable) {
    if (trainable) params.emplace_back(n, &t);
  });

  auto loss_value = [&]() {
    Tape<double> tape;
    TracedModel<double> tm = traced_model_forward(tape, m, bsf, fd, true);
    const int loss = ad::bce_with_logits(tape, tm.logit, target);
    return tape.value(loss)[0];
  };

  Tape<double> tape;
  TracedModel<double> tm = traced_model_forward(tape, m, bsf, fd, true);
  const int loss = ad::bce_with_logits(tape, tm.logit, target);
  tape.backward(loss, Tensor<double>::scalar(1.0));
  GradMap<double> analytic;
  for (const auto& [name, tensor] : params) {
    const Tensor<double>* g = tape.grad(tm.param_ids.at(name));
    analytic[name] = g ? *g : Tensor<double>(tensor->shape);
  }

  GradCheckReport report = gradcheck<double>("two-stream model", params, loss_value,
                                             [&] { return analytic; }, 1e-4);
  INFO(report.to_text());
  REQUIRE(report.pass());
}

TEST_CASE("batched eval forward equals per-clip traces exactly", "[model]") {
  const ModelConfig cfg = small_config(16, 4);
  Model<float> m = build_model<float>(cfg, 21);
  Rng rng(8);
  std::vector<Tensor<float>> bsf, fd;
  for (int b = 0; b < 3; ++b) {
    bsf.push_back(random_clip_tensor<float>(4, 16, rng));
    fd.push_back(random_clip_tensor<float>(3, 16, rng));
  }
  std::vector<const Tensor<float>*> bp{&bsf[0], &bsf[1], &bsf[2]};
  std::vector<const Tensor<float>*> fp{&fd[0], &fd[1], &fd[2]};

  Tape<float> tape;
  TracedBatch<float> tb = traced_batch_forward(tape, m, bp, fp, false);
  REQUIRE(tb.logits.size() == 3);
  REQUIRE(tb.bn_updates.empty());

  for (int b = 0; b < 3; ++b) {
    Tape<float> single;
    TracedModel<float> tm = traced_model_forward(single, m, bsf[(size_t)b], fd[(size_t)b], false);
    REQUIRE(tape.value(tb.logits[(size_t)b])[0] == single.value(tm.logit)[0]);
  }
}

TEST_CASE("train-mode batch statistics couple the clips in a batch", "[model]") {
  const ModelConfig cfg = small_config(16, 3);
  Model<float> m = build_model<float>(cfg, 33);
  Rng rng(9);
  Tensor<float> bsf_a = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd_a = random_clip_tensor<float>(2, 16, rng);
  Tensor<float> bsf_b = random_clip_tensor<float>(3, 16, rng);
  Tensor<float> fd_b = random_clip_tensor<float>(2, 16, rng);

  Tape<float> lone;
  TracedModel<float> tm = traced_model_forward(lone, m, bsf_a, fd_a, true);

  // duplicating one clip leaves its statistics unchanged (up to summation
  // rounding over the doubled row count), so the logit matches
  Tape<float> dup;
  TracedBatch<float> same =
      traced_batch_forward(dup, m, {&bsf_a, &bsf_a}, {&fd_a, &fd_a}, true);
  REQUIRE(dup.value(same.logits[0])[0] ==
          Approx(lone.value(tm.logit)[0]).epsilon(1e-5).margin(1e-6));
  REQUIRE(dup.value(same.logits[1])[0] == dup.value(same.logits[0])[0]);
  // shared backbone: still one update per batchnorm layer per stream
  REQUIRE(same.bn_updates.size() == tm.bn_updates.size());

  // a different clip in the batch shifts the shared statistics and the logit
  Tape<float> mixed;
  TracedBatch<float> other =
      traced_batch_forward(mixed, m, {&bsf_a, &bsf_b}, {&fd_a, &fd_b}, true);
  REQUIRE(mixed.value(other.logits[0])[0] != lone.value(tm.logit)[0]);
}

TEST_CASE("batched gradient check with coupled statistics", "[model][slow]") {
  const ModelConfig cfg = small_config(16, 3);
  Model<double> m = build_model<double>(cfg, 78);
  Rng rng(92);
  std::vector<Tensor<double>> bsf, fd;
  for (int b = 0; b < 2; ++b) {
    bsf.push_back(random_clip_tensor<double>(3, 16, rng));
    fd.push_back(random_clip_tensor<double>(2, 16, rng));
  }
  const std::vector<double> targets{1.0, 0.0};

  std::vector<std::pair<std::string, Tensor<double>*>> params;
  for_each_model_tensor(m, [&](const std::string& n, Tensor<double>& t, bool trainable) {
    if (trainable) params.emplace_back(n, &t);
  });

  auto trace_loss = [&](Tape<double>& tape, TracedBatch<double>* out) {
    TracedBatch<double> tb =
        traced_batch_forward(tape, m, {&bsf[0], &bsf[1]}, {&fd[0], &fd[1]}, true);
    int loss = -1;
    for (int b = 0; b < 2; ++b) {
      const int l = ad::bce_with_logits(tape, tb.logits[(size_t)b], targets[(size_t)b]);
      loss = b == 0 ? l : ad::add(tape, loss, l);
    }
    loss = ad::scale(tape, loss, 0.5);
    if (out) *out = std::move(tb);
    return loss;
  };

  auto loss_value = [&]() {
    Tape<double> tape;
    return tape.value(trace_loss(tape, nullptr))[0];
  };

  Tape<double> tape;
  TracedBatch<double> tb;
  const int loss = trace_loss(tape, &tb);
  tape.backward(loss, Tensor<double>::scalar(1.0));
  GradMap<double> analytic;
  for (const auto& [name, tensor] : params) {
    const Tensor<double>* g = tape.grad(tb.param_ids.at(name));
    analytic[name] = g ? *g : Tensor<double>(tensor->shape);
  }

  GradCheckReport report = gradcheck<double>("batched model", params, loss_value,
                                             [&] { return analytic; }, 1e-4);
  INFO(report.to_text());
  REQUIRE(report.pass());
}
