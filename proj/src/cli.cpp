// Copyright (c) 2026 The bvd authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bvd/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bvd/datagen.hpp"
#include "bvd/losses.hpp"
#include "bvd/metrics.hpp"
#include "bvd/model.hpp"
#include "bvd/pipeline.hpp"
#include "bvd/png_io.hpp"
#include "bvd/rng.hpp"
#include "bvd/tensor.hpp"

namespace fs = std::filesystem;

namespace bvd::cli {
namespace {

/// BVD_SEED, when set, must be a plain decimal unsigned integer.
std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("BVD_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  const std::string text(s);
  const bool digits = std::all_of(text.begin(), text.end(), [](unsigned char c) {
    return std::isdigit(c) != 0;
  });
  if (!digits) throw std::runtime_error("BVD_SEED is not an unsigned integer: " + text);
  return std::stoull(text);
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---- gen-data ----

struct GenDataArgs {
  std::string out;
  int clips = 4;
  uint64_t seed = 0;
  datagen::GenConfig cfg;
};

int run_gen_data(const GenDataArgs& a, std::ostream& out) {
  GenDataArgs args = a;
  if (const auto s = env_seed()) {
    args.seed = *s;
    out << "seed overridden by BVD_SEED: " << args.seed << "\n";
  }
  const datagen::CorpusManifest manifest =
      datagen::write_corpus(args.clips, args.out, args.seed, args.cfg);
  out << "wrote " << manifest.entries.size() << " clips under " << manifest.root
      << " (seed " << manifest.seed << ")\n";
  out << "manifest: " << (fs::path(manifest.root) / "manifest.txt").string() << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string config_file;
  std::string scale = "desk";
  // Optional overrides; presence tracked via the CLI11 option counts.
  std::string ablation;
  int64_t steps = 0;
  int64_t epochs = 0;
  int batch = 0;
  double lr = 0.0;
  uint64_t seed = 0;
  int recurrence_steps = 0;
  int64_t checkpoint_every = 0;
  bool augment = false;
  std::string temporal_target;
  std::string resume;
  int base_channels = 0;
  uint64_t init_seed = 0;
};

struct TrainFlagCounts {
  CLI::Option* ablation = nullptr;
  CLI::Option* steps = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* batch = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* recurrence_steps = nullptr;
  CLI::Option* checkpoint_every = nullptr;
  CLI::Option* augment = nullptr;
  CLI::Option* temporal_target = nullptr;
  CLI::Option* resume = nullptr;
  CLI::Option* base_channels = nullptr;
  CLI::Option* init_seed = nullptr;
};

int run_train(const TrainArgs& a, const TrainFlagCounts& given, std::ostream& out) {
  model::ModelConfig mc = a.scale == "paper" ? model::ModelConfig::paper_scale()
                                             : model::ModelConfig::desk_scale();
  pipeline::TrainConfig tc;
  loss::LossWeights lw;

  std::map<std::string, std::string> file_keys;
  if (!a.config_file.empty()) file_keys = pipeline::read_config_file(a.config_file);

  // The ablation preset applies first; individual keys refine it.
  std::string ablation = tc.ablation;
  if (const auto it = file_keys.find("ablation"); it != file_keys.end())
    ablation = it->second;
  if (given.ablation->count() > 0) ablation = a.ablation;
  pipeline::apply_ablation(ablation, mc, lw);
  tc.ablation = ablation;

  for (const auto& [key, value] : file_keys)
    if (key != "ablation") pipeline::apply_config_key(key, value, mc, tc, lw);

  if (given.steps->count() > 0) tc.max_steps = a.steps;
  if (given.epochs->count() > 0) tc.epochs = a.epochs;
  if (given.batch->count() > 0) tc.batch_size = a.batch;
  if (given.lr->count() > 0) tc.learning_rate = a.lr;
  if (given.seed->count() > 0) tc.seed = a.seed;
  if (given.recurrence_steps->count() > 0) tc.recurrence_steps = a.recurrence_steps;
  if (given.checkpoint_every->count() > 0) tc.checkpoint_every = a.checkpoint_every;
  if (given.augment->count() > 0) tc.augment = a.augment;
  if (given.temporal_target->count() > 0) tc.temporal_target = a.temporal_target;
  if (given.resume->count() > 0) tc.resume_from = a.resume;
  if (given.base_channels->count() > 0) mc.base_channels = a.base_channels;
  if (given.init_seed->count() > 0) mc.init_seed = a.init_seed;

  if (const auto s = env_seed()) {
    tc.seed = *s;
    out << "seed overridden by BVD_SEED: " << tc.seed << "\n";
  }

  out << "model: " << pipeline::ablation_summary(mc, lw) << "\n";
  out << "seed: " << tc.seed << "\n";
  model::BvdNet net = model::BvdNet::build(mc);
  out << "parameters: " << net.count_parameters() << "\n";

  const datagen::CorpusManifest manifest = datagen::read_manifest(a.corpus);
  const pipeline::TrainReport report = pipeline::train(net, manifest, tc, lw, a.out);

  char loss_line[160];
  std::snprintf(loss_line, sizeof(loss_line),
                "final loss: total=%.6g l1=%.6g grad_l1=%.6g ssim_term=%.6g temporal=%.6g",
                report.last.total, report.last.l1, report.last.grad_l1,
                report.last.ssim_term, report.last.temporal);
  out << "trained " << report.steps << " steps\n"
      << loss_line << "\n"
      << "checkpoint: " << report.checkpoint_path << "\n"
      << "loss log: " << report.loss_log_path << "\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string corpus;
  std::string ckpt;
  std::string report;
  double threshold = 0.01;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  const pipeline::Checkpoint ck = pipeline::load_checkpoint(a.ckpt);
  const datagen::CorpusManifest manifest = datagen::read_manifest(a.corpus);
  pipeline::InferenceConfig icfg;
  icfg.copy_threshold = a.threshold;
  const metrics::EvalReport rep = metrics::evaluate(ck.net, manifest, icfg, ck.step);

  out << "clips: " << rep.per_clip.size() << "  frames: " << rep.meta.frame_count
      << "  checkpoint step: " << rep.meta.checkpoint_step << "\n";
  out << "MSE     PSNR     DSSIM\n";
  out << fixed4(rep.aggregate.mse) << "  " << fixed4(rep.aggregate.psnr_db) << "  "
      << fixed4(rep.aggregate.dssim) << "\n";
  out << "temporal error: " << fixed4(rep.aggregate.temporal_error)
      << "  pooled PSNR: " << fixed4(rep.aggregate.psnr_pooled_db) << " dB\n";

  if (!a.report.empty()) {
    if (const fs::path parent = fs::path(a.report).parent_path(); !parent.empty())
      fs::create_directories(parent);
    std::ofstream f(a.report, std::ios::out | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write report: " + a.report);
    f << rep.to_json();
    out << "report: " << a.report << "\n";
  }
  return 0;
}

// ---- decaption ----

struct DecaptionArgs {
  std::string in;
  std::string out_dir;
  std::string ckpt;
  double threshold = 0.01;
  bool debug_features = false;
};

int run_decaption(const DecaptionArgs& a, std::ostream& out) {
  std::vector<fs::path> frames;
  for (const auto& entry : fs::directory_iterator(a.in))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      frames.push_back(entry.path());
  if (frames.empty()) throw std::runtime_error("no PNG frames in " + a.in);
  std::sort(frames.begin(), frames.end(),
            [](const fs::path& x, const fs::path& y) { return x.filename() < y.filename(); });

  Tensor clip;
  for (size_t t = 0; t < frames.size(); ++t) {
    const Tensor img = pngio::read_image(frames[t].string());
    if (img.dim(2) != 3)
      throw std::runtime_error("frame " + frames[t].filename().string() +
                               " is grayscale; RGB frames required");
    if (t == 0) {
      clip = Tensor({static_cast<int>(frames.size()), img.dim(0), img.dim(1), 3});
    } else if (img.dim(0) != clip.dim(1) || img.dim(1) != clip.dim(2)) {
      throw std::runtime_error("frame " + frames[t].filename().string() +
                               " size differs from the first frame");
    }
    std::copy(img.data(), img.data() + img.numel(),
              clip.data() + static_cast<int64_t>(t) * img.numel());
  }

  model::BvdNet net = model::BvdNet::identity(model::ModelConfig::desk_scale());
  if (!a.ckpt.empty()) {
    net = pipeline::load_checkpoint(a.ckpt).net;
  } else {
    out << "no checkpoint given: using the identity model (output = input)\n";
  }

  pipeline::InferenceConfig icfg;
  icfg.copy_threshold = a.threshold;
  icfg.emit_debug_features = a.debug_features;
  icfg.output_root = a.out_dir;
  const Tensor restored = pipeline::infer_clip(net, clip, icfg);

  fs::create_directories(a.out_dir);
  const int64_t frame_elems = restored.numel() / restored.dim(0);
  Tensor frame({restored.dim(1), restored.dim(2), restored.dim(3)});
  for (size_t t = 0; t < frames.size(); ++t) {
    std::copy(restored.data() + static_cast<int64_t>(t) * frame_elems,
              restored.data() + static_cast<int64_t>(t + 1) * frame_elems, frame.data());
    pngio::write_rgb8((fs::path(a.out_dir) / frames[t].filename()).string(), frame);
  }
  out << "wrote " << frames.size() << " frames to " << a.out_dir << "\n";
  return 0;
}

// ---- bench ----

struct BenchArgs {
  std::string scale = "both";
  int frames = 6;
  int height = 128;
  int width = 128;
};

void bench_one(const std::string& label, const model::ModelConfig& mc, const BenchArgs& a,
               std::ostream& out) {
  const model::BvdNet net = model::BvdNet::build(mc);
  Tensor clip({a.frames, a.height, a.width, 3});
  Rng rng(42);
  for (int64_t i = 0; i < clip.numel(); ++i) clip[i] = rng.uniform();

  const pipeline::InferenceConfig icfg;
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor restored = pipeline::infer_clip(net, clip, icfg);
  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();

  char line[176];
  std::snprintf(line, sizeof(line), "%s: %dx%d, %d frames, %.3f s, %.2f fps (%lld params)",
                label.c_str(), a.height, a.width, a.frames, secs,
                static_cast<double>(a.frames) / secs,
                static_cast<long long>(net.count_parameters()));
  out << line << "\n";
  (void)restored;
}

int run_bench(const BenchArgs& a, std::ostream& out) {
  if (a.scale == "desk" || a.scale == "both")
    bench_one("desk_scale", model::ModelConfig::desk_scale(), a, out);
  if (a.scale == "paper" || a.scale == "both")
    bench_one("paper_scale", model::ModelConfig::paper_scale(), a, out);
  out << "reference GPU figure: 62.5 fps at 128x128\n";
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"blind video decaptioning: data synthesis, training, evaluation, inference"};
  app.name("bvd");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a synthetic clip corpus");
  gen_cmd->add_option("--out", gen.out, "corpus root directory")->required();
  gen_cmd->add_option("--clips", gen.clips, "number of clips");
  gen_cmd->add_option("--seed", gen.seed, "corpus seed");
  gen_cmd->add_option("--frames", gen.cfg.length, "frames per clip");
  gen_cmd->add_option("--height", gen.cfg.height, "frame height");
  gen_cmd->add_option("--width", gen.cfg.width, "frame width");
  gen_cmd->add_option("--min-sprites", gen.cfg.min_sprites, "minimum sprites per clip");
  gen_cmd->add_option("--max-sprites", gen.cfg.max_sprites, "maximum sprites per clip");
  gen_cmd->add_option("--max-pan", gen.cfg.max_pan, "background speed bound, px/frame");
  gen_cmd->add_option("--max-sprite-speed", gen.cfg.max_sprite_speed,
                      "sprite speed bound, px/frame");
  gen_cmd->add_option("--min-segments", gen.cfg.min_segments, "minimum caption segments");
  gen_cmd->add_option("--max-segments", gen.cfg.max_segments, "maximum caption segments");
  gen_cmd->add_option("--min-caption-alpha", gen.cfg.min_caption_alpha,
                      "minimum caption opacity");
  gen_cmd->add_option("--min-font-scale", gen.cfg.min_font_scale, "minimum glyph scale");
  gen_cmd->add_option("--max-font-scale", gen.cfg.max_font_scale, "maximum glyph scale");

  TrainArgs tr;
  TrainFlagCounts trc;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a corpus");
  train_cmd->add_option("--corpus", tr.corpus, "corpus root directory")->required();
  train_cmd->add_option("--out", tr.out, "run output directory")->required();
  train_cmd->add_option("--config", tr.config_file, "key=value config file");
  train_cmd->add_option("--scale", tr.scale, "base architecture scale")
      ->check(CLI::IsMember({"desk", "paper"}));
  trc.ablation = train_cmd->add_option("--ablation", tr.ablation,
                                       "experiment row preset (exp1..exp6)");
  trc.steps = train_cmd->add_option("--steps", tr.steps, "optimizer step cap (0 = none)");
  trc.epochs = train_cmd->add_option("--epochs", tr.epochs, "epoch cap (0 = none)");
  trc.batch = train_cmd->add_option("--batch", tr.batch, "sequences per optimizer step");
  trc.lr = train_cmd->add_option("--lr", tr.lr, "learning rate");
  trc.seed = train_cmd->add_option("--seed", tr.seed, "training seed");
  trc.recurrence_steps = train_cmd->add_option("--recurrence-steps", tr.recurrence_steps,
                                               "unrolled steps per sequence");
  trc.checkpoint_every = train_cmd->add_option("--checkpoint-every", tr.checkpoint_every,
                                               "periodic checkpoint interval in steps");
  trc.augment = train_cmd->add_flag("--augment", tr.augment,
                                    "flip and color-jitter training windows");
  trc.temporal_target = train_cmd->add_option("--temporal-target", tr.temporal_target,
                                              "warp source for the temporal term")
                            ->check(CLI::IsMember({"ground_truth", "previous_output"}));
  trc.resume = train_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
  trc.base_channels = train_cmd->add_option("--base-channels", tr.base_channels,
                                            "channel width multiplier");
  trc.init_seed = train_cmd->add_option("--init-seed", tr.init_seed,
                                        "weight initialization seed");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  eval_cmd->add_option("--corpus", ev.corpus, "corpus root directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--report", ev.report, "write the full JSON report here");
  eval_cmd->add_option("--threshold", ev.threshold, "copy-back threshold");

  DecaptionArgs dec;
  CLI::App* dec_cmd = app.add_subcommand("decaption", "restore a directory of PNG frames");
  dec_cmd->add_option("--in", dec.in, "input frame directory")->required();
  dec_cmd->add_option("--out", dec.out_dir, "output frame directory")->required();
  dec_cmd->add_option("--ckpt", dec.ckpt, "checkpoint file (identity model when absent)");
  dec_cmd->add_option("--threshold", dec.threshold, "copy-back threshold");
  dec_cmd->add_flag("--debug-features", dec.debug_features,
                    "also write residual magnitude images");

  BenchArgs be;
  CLI::App* bench_cmd = app.add_subcommand("bench", "report inference frames/sec");
  bench_cmd->add_option("--scale", be.scale, "which configs to time")
      ->check(CLI::IsMember({"desk", "paper", "both"}));
  bench_cmd->add_option("--frames", be.frames, "clip length")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--height", be.height, "frame height");
  bench_cmd->add_option("--width", be.width, "frame width");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen, out);
    if (train_cmd->parsed()) return run_train(tr, trc, out);
    if (eval_cmd->parsed()) return run_eval(ev, out);
    if (dec_cmd->parsed()) return run_decaption(dec, out);
    if (bench_cmd->parsed()) return run_bench(be, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace bvd::cli
