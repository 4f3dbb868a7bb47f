// sclstm: command-line front end for the two-stream separable-ConvLSTM
// toolkit — gradient checking, cost reporting, synthetic data generation,
// clip preprocessing, training, evaluation, and single-clip prediction.
//
// Every failure exits nonzero after printing exactly one line of the form
//   error: <category>: <message>
// with category one of: usage, io, format, shape, config, internal.
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scl/efficiency.hpp"
#include "scl/gradcheck.hpp"
#include "scl/io.hpp"
#include "scl/model.hpp"
#include "scl/train.hpp"

namespace {

constexpr const char* kToolVersion = "1.0.0";

scl::ModelConfig load_model_config(const std::string& path) {
  if (path.empty()) return scl::ModelConfig::reference();
  return scl::model_config_from_json(scl::parse_json_file(path));
}

// --- gradcheck ------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, bool full_model) {
  const double tol = 1e-4;
  bool all_pass = true;
  double worst = 0.0;
  int n_checks = 0;

  for (const auto& report : scl::checks::core_op_checks(seed, tol)) {
    std::fputs(report.to_text().c_str(), stdout);
    all_pass = all_pass && report.pass();
    worst = std::max(worst, report.max_rel_err());
    ++n_checks;
  }

  if (full_model) {
    using T = double;
    scl::ModelConfig cfg;
    cfg.backbone.kind = scl::BackboneKind::tiny;
    cfg.backbone.input_size = 16;
    cfg.backbone.tiny_channels = {4, 8};
    cfg.lstm_filters = 8;
    cfg.head = {4, 1};
    cfg.preproc = scl::PreprocConfig{3, 16, 16, false};
    scl::Model<T> m = scl::build_model<T>(cfg, seed + 1);

    scl::Rng rng(seed + 2);
    scl::Tensor<T> bsf({3, 16, 16, 3});
    scl::Tensor<T> fd({2, 16, 16, 3});
    for (auto& v : bsf.data) v = rng.uniform(0.05, 0.95);
    for (auto& v : fd.data) v = rng.uniform(0.05, 0.95);
    const T target = T(1);

    std::vector<std::pair<std::string, scl::Tensor<T>*>> params;
    scl::for_each_model_tensor(m, [&](const std::string& n, scl::Tensor<T>& t, bool trainable) {
      if (trainable) params.emplace_back(n, &t);
    });

    auto loss_value = [&]() {
      scl::Tape<T> tape;
      scl::TracedModel<T> tm = scl::traced_model_forward(tape, m, bsf, fd, true);
      const int loss = scl::ad::bce_with_logits(tape, tm.logit, target);
      return tape.value(loss)[0];
    };

    scl::Tape<T> tape;
    scl::TracedModel<T> tm = scl::traced_model_forward(tape, m, bsf, fd, true);
    const int loss = scl::ad::bce_with_logits(tape, tm.logit, target);
    tape.backward(loss, scl::Tensor<T>::scalar(T(1)));
    scl::GradMap<T> analytic;
    for (const auto& [name, tensor] : params) {
      const scl::Tensor<T>* g = tape.grad(tm.param_ids.at(name));
      analytic[name] = g ? *g : scl::Tensor<T>(tensor->shape);
    }

    scl::GradCheckReport report = scl::gradcheck<T>(
        "full_model", params, loss_value, [&] { return analytic; }, tol);
    std::fputs(report.to_text().c_str(), stdout);
    all_pass = all_pass && report.pass();
    worst = std::max(worst, report.max_rel_err());
    ++n_checks;
  }

  std::printf("gradcheck: %d checks, max rel err %.3e, tolerance %.0e: %s\n", n_checks, worst, tol,
              all_pass ? "PASS" : "FAIL");
  return all_pass ? 0 : 1;
}

// --- params ---------------------------------------------------------------

int run_params(const std::string& config_path, bool with_flops, const std::string& convention) {
  const scl::ModelConfig cfg = load_model_config(config_path);
  scl::Model<float> m = scl::build_model<float>(cfg, 0);
  const scl::FlopConvention cv =
      convention == "mac1" ? scl::FlopConvention::mac1 : scl::FlopConvention::mac2;
  scl::EfficiencyReport rep = scl::efficiency_report(m, cv);

  std::printf("model: fusion=%s streams=%s cell=%s lstm_filters=%d\n",
              scl::fusion_name(cfg.fusion), scl::streams_name(cfg.streams),
              cfg.lstm_kind == scl::CellKind::separable ? "separable" : "dense", cfg.lstm_filters);
  if (with_flops) {
    std::fputs(rep.to_text().c_str(), stdout);
  } else {
    std::printf("%-48s %14s\n", "layer", "params");
    for (const auto& r : rep.rows)
      std::printf("%-48s %14lld\n", r.name.c_str(), r.params);
    std::printf("%-48s %14lld\n", "total", rep.total_params());
  }
  return 0;
}

// --- synth ----------------------------------------------------------------

int run_synth(const std::string& out_dir, int n, int frames, int side, std::uint64_t seed) {
  scl::SynthDataset ds = scl::make_synth(n, frames, side, seed);
  scl::write_synth_dataset(out_dir, ds);
  int violent = 0;
  for (const auto& item : ds.data.items) violent += item.label;
  std::printf("synth: wrote %zu clips (%d violent-proxy, %d nonviolent-proxy) of %dx%dx%d to %s\n",
              ds.data.items.size(), violent, (int)ds.data.items.size() - violent, frames, side,
              side, out_dir.c_str());
  return 0;
}

// --- preprocess -----------------------------------------------------------

int run_preprocess(const std::string& in_path, const std::string& out_path, const std::string& mode,
                   const std::string& config_path) {
  const scl::ModelConfig cfg = load_model_config(config_path);
  const scl::Clip clip = scl::load_clip(in_path);
  const scl::StreamPair streams =
      scl::prepare_streams(clip, cfg.preproc, scl::PrepMode::eval);

  scl::Tensor<float> out;
  if (mode == "bsf") {
    out = streams.frames;
  } else {  // diff: map signed values from [-1, 1] into the [0, 1] storage range
    out = streams.diffs;
    for (auto& v : out.data) v = 0.5f * (v + 1.0f);
  }
  scl::write_clip(out_path, out);
  std::printf("preprocess: %s -> %s (%s, %dx%dx%dx%d%s)\n", in_path.c_str(), out_path.c_str(),
              mode.c_str(), out.extent(0), out.extent(1), out.extent(2), out.extent(3),
              mode == "diff" ? ", stored as (d+1)/2" : "");
  return 0;
}

// --- train ----------------------------------------------------------------

int run_train(const std::string& data_root, const std::string& config_path, int epochs,
              std::uint64_t seed, const std::string& out_weights, bool deterministic) {
  scl::TrainConfig cfg;
  if (config_path.empty())
    cfg.model = scl::ModelConfig::reference();
  else
    cfg = scl::train_config_from_json(scl::parse_json_file(config_path));
  if (epochs >= 0) cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.deterministic = deterministic;

  scl::Dataset data = scl::load_dataset(data_root);
  std::printf("train: %zu clips from %s, %d epochs, seed %llu%s\n", data.items.size(),
              data_root.c_str(), cfg.epochs, (unsigned long long)seed,
              deterministic ? ", deterministic" : "");

  scl::Model<float> m = scl::build_model<float>(cfg.model, seed);
  scl::FitResult result = scl::fit(m, data, nullptr, cfg, &std::cout);

  scl::write_weights(out_weights, scl::export_weights(m));
  std::printf("train: wrote weights to %s (%lld parameters)%s\n", out_weights.c_str(),
              scl::count_params(m), result.stopped_early ? ", stopped early" : "");
  return 0;
}

// --- eval -----------------------------------------------------------------

template <typename LoadedModel>
void load_weights_into(LoadedModel& m, const std::string& weights_path) {
  const scl::WeightStore<float> store = scl::read_weights(weights_path);
  const scl::ImportReport rep = scl::import_into_model(m, store);
  if (!rep.unused.empty()) {
    std::fprintf(stderr, "note: %zu tensors in %s did not match any model parameter\n",
                 rep.unused.size(), weights_path.c_str());
  }
}

int run_eval(const std::string& data_root, const std::string& weights_path,
             const std::string& config_path) {
  const scl::ModelConfig cfg = load_model_config(config_path);
  scl::Model<float> m = scl::build_model<float>(cfg, 0);
  load_weights_into(m, weights_path);

  scl::Dataset data = scl::load_dataset(data_root);
  scl::EvalResult r = scl::evaluate(m, data);
  std::printf("eval: accuracy %.4f (%ld/%ld) on %s\n", r.accuracy, r.correct, r.total,
              data_root.c_str());
  return 0;
}

// --- predict ----------------------------------------------------------------

int run_predict(const std::string& clip_path, const std::string& weights_path,
                const std::string& config_path) {
  const scl::ModelConfig cfg = load_model_config(config_path);
  scl::Model<float> m = scl::build_model<float>(cfg, 0);
  load_weights_into(m, weights_path);

  const scl::Clip clip = scl::load_clip(clip_path);
  const scl::Prediction<float> pred = scl::predict(m, clip);
  std::printf("predict: label=%s p=%.6f clip=%s\n", pred.violent ? "violent" : "nonviolent",
              (double)pred.p, clip_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sclstm: two-stream separable convolutional LSTM toolkit"};
  app.require_subcommand(0, 1);

  bool show_version = false;
  app.add_flag("--version", show_version, "print tool and file format versions");

  // gradcheck
  auto* cmd_grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  bool full_model = false;
  std::uint64_t grad_seed = 7;
  cmd_grad->add_flag("--full-model", full_model, "also check the full two-stream model end to end");
  cmd_grad->add_option("--seed", grad_seed, "random seed for check cases");

  // params
  auto* cmd_params = app.add_subcommand("params", "report per-layer parameter (and flop) counts");
  std::string params_config;
  bool with_flops = false;
  std::string convention = "mac2";
  cmd_params->add_option("--config", params_config, "model config JSON (defaults to the reference)");
  cmd_params->add_flag("--flops", with_flops, "include whole-clip flop counts");
  cmd_params->add_option("--convention", convention, "flop convention")
      ->check(CLI::IsMember({"mac1", "mac2"}));

  // synth
  auto* cmd_synth = app.add_subcommand("synth", "generate the synthetic motion dataset");
  std::string synth_out;
  int synth_n = 0, synth_frames = 16, synth_side = 64;
  std::uint64_t synth_seed = 0;
  cmd_synth->add_option("--out", synth_out, "output dataset directory")->required();
  cmd_synth->add_option("--n", synth_n, "number of clips")->required();
  cmd_synth->add_option("--frames", synth_frames, "frames per clip");
  cmd_synth->add_option("--side", synth_side, "square frame side in pixels");
  cmd_synth->add_option("--seed", synth_seed, "generator seed");

  // preprocess
  auto* cmd_pre = app.add_subcommand("preprocess", "convert a clip into one stored input stream");
  std::string pre_in, pre_out, pre_mode, pre_config;
  cmd_pre->add_option("--in", pre_in, "clip directory or .clp1 file")->required();
  cmd_pre->add_option("--out", pre_out, "output .clp1 file")->required();
  cmd_pre->add_option("--mode", pre_mode, "stream to store")
      ->required()
      ->check(CLI::IsMember({"bsf", "diff"}));
  cmd_pre->add_option("--config", pre_config, "model config JSON (defaults to the reference)");

  // train
  auto* cmd_train = app.add_subcommand("train", "train a model and write its weights");
  std::string train_data, train_config, out_weights;
  int train_epochs = -1;
  std::uint64_t train_seed = 0;
  bool deterministic = false;
  cmd_train->add_option("--data", train_data, "dataset root with violent/ and nonviolent/")->required();
  cmd_train->add_option("--config", train_config, "model+train config JSON (defaults to the reference)");
  cmd_train->add_option("--epochs", train_epochs, "epoch count (overrides the config)");
  cmd_train->add_option("--seed", train_seed, "training seed");
  cmd_train->add_option("--out-weights", out_weights, "output weights file")->required();
  cmd_train->add_flag("--deterministic", deterministic, "bitwise-reproducible kernels and ordering");

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "measure accuracy on a labeled dataset");
  std::string eval_data, eval_weights, eval_config;
  cmd_eval->add_option("--data", eval_data, "dataset root with violent/ and nonviolent/")->required();
  cmd_eval->add_option("--weights", eval_weights, "weights file")->required();
  cmd_eval->add_option("--config", eval_config, "model config JSON (defaults to the reference)");

  // predict
  auto* cmd_pred = app.add_subcommand("predict", "classify a single clip");
  std::string pred_clip, pred_weights, pred_config;
  cmd_pred->add_option("--clip", pred_clip, "clip directory or .clp1 file")->required();
  cmd_pred->add_option("--weights", pred_weights, "weights file")->required();
  cmd_pred->add_option("--config", pred_config, "model config JSON (defaults to the reference)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    std::fputs(app.help().c_str(), stderr);
    return 2;
  }

  try {
    if (show_version) {
      std::printf("sclstm %s\n", kToolVersion);
      std::printf("weights format: SCLW version %u\n", scl::kWeightFormatVersion);
      std::printf("clip format: CLP1 version %u\n", scl::kClipFormatVersion);
      return 0;
    }
    if (*cmd_grad) return run_gradcheck(grad_seed, full_model);
    if (*cmd_params) return run_params(params_config, with_flops, convention);
    if (*cmd_synth) return run_synth(synth_out, synth_n, synth_frames, synth_side, synth_seed);
    if (*cmd_pre) return run_preprocess(pre_in, pre_out, pre_mode, pre_config);
    if (*cmd_train)
      return run_train(train_data, train_config, train_epochs, train_seed, out_weights,
                       deterministic);
    if (*cmd_eval) return run_eval(eval_data, eval_weights, eval_config);
    if (*cmd_pred) return run_predict(pred_clip, pred_weights, pred_config);
  } catch (const scl::ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 1;
  } catch (const scl::FormatError& e) {
    std::fprintf(stderr, "error: format: %s\n", e.what());
    return 1;
  } catch (const scl::IoError& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: shape: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }

  std::fprintf(stderr, "error: usage: a subcommand is required\n");
  std::fputs(app.help().c_str(), stderr);
  return 2;
}
