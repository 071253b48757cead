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

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

#include "bvd/datagen.hpp"
#include "bvd/losses.hpp"
#include "bvd/metrics.hpp"
#include "bvd/model.hpp"
#include "bvd/pipeline.hpp"
#include "bvd/rng.hpp"

using bvd::Rng;
using bvd::Tensor;
namespace datagen = bvd::datagen;
namespace loss = bvd::loss;
namespace metrics = bvd::metrics;
namespace model = bvd::model;
namespace pipeline = bvd::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct Setup {
  model::ModelConfig mc;
  loss::LossWeights lw;
};

Setup make_setup(const std::string& ablation, int base_channels) {
  Setup s;
  s.mc = model::ModelConfig::desk_scale();
  s.mc.base_channels = base_channels;
  s.mc.init_seed = 7;
  pipeline::apply_ablation(ablation, s.mc, s.lw);
  return s;
}

datagen::GenConfig tiny_config(int length) {
  datagen::GenConfig cfg;
  cfg.length = length;
  cfg.height = 32;
  cfg.width = 32;
  cfg.max_font_scale = 1;
  return cfg;
}

void zero_head(model::BvdNet& net) {
  for (auto& p : net.parameters())
    if (p.name.rfind("dec.head.", 0) == 0) p.var->value.fill(0.0);
}

Tensor random_clip(int L, int H, int W, uint64_t seed) {
  Tensor t({L, H, W, 3});
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

// Parsed loss-log rows: step plus the five loss columns.
struct LogRow {
  int64_t step = 0;
  double l1 = 0, grad_l1 = 0, ssim_term = 0, temporal = 0, total = 0;
};

std::vector<LogRow> read_log(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "step,l1,grad_l1,ssim_term,temporal,total");
  std::vector<LogRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogRow r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    REQUIRE((ss >> r.step >> r.l1 >> r.grad_l1 >> r.ssim_term >> r.temporal >> r.total));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("train and inference configs validate their ranges") {
  pipeline::TrainConfig tc;
  CHECK_NOTHROW(tc.validate());

  pipeline::TrainConfig bad = tc;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.recurrence_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.epochs = 0;
  bad.max_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.adam_beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.temporal_target = "next_frame";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.ablation = "exp7";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.checkpoint_every = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  pipeline::InferenceConfig ic;
  CHECK_NOTHROW(ic.validate());
  ic.copy_threshold = 1.0;
  CHECK_THROWS_AS(ic.validate(), std::invalid_argument);
  ic.copy_threshold = -0.1;
  CHECK_THROWS_AS(ic.validate(), std::invalid_argument);
  ic.copy_threshold = 0.0;
  CHECK_NOTHROW(ic.validate());
}

TEST_CASE("ablation rows select variant, recurrence, and loss terms") {
  struct Expect {
    const char* name;
    model::Variant variant;
    bool rec, grad, ssim, temporal;
  };
  const Expect table[] = {
      {"exp1", model::Variant::enc3d_dec3d, false, false, false, false},
      {"exp2", model::Variant::enc2d_dec2d, false, false, false, false},
      {"exp3", model::Variant::hybrid_3d2d, false, false, false, false},
      {"exp4", model::Variant::hybrid_3d2d, false, true, false, false},
      {"exp5", model::Variant::hybrid_3d2d, false, true, true, false},
      {"exp6", model::Variant::hybrid_3d2d, true, true, true, true},
  };
  for (const auto& e : table) {
    CAPTURE(e.name);
    model::ModelConfig mc;
    loss::LossWeights lw;
    pipeline::apply_ablation(e.name, mc, lw);
    CHECK(mc.variant == e.variant);
    CHECK(mc.use_recurrence_stream == e.rec);
    CHECK(lw.use_l1);
    CHECK(lw.use_grad_l1 == e.grad);
    CHECK(lw.use_ssim == e.ssim);
    CHECK(lw.use_temporal == e.temporal);
  }

  model::ModelConfig mc;
  loss::LossWeights lw;
  CHECK_THROWS_AS(pipeline::apply_ablation("exp7", mc, lw), std::invalid_argument);
  mc.variant = model::Variant::enc3d_dec3d;
  pipeline::apply_ablation("", mc, lw);  // empty name leaves settings alone
  CHECK(mc.variant == model::Variant::enc3d_dec3d);

  model::ModelConfig m5;
  loss::LossWeights l5;
  pipeline::apply_ablation("exp5", m5, l5);
  const std::string s5 = pipeline::ablation_summary(m5, l5);
  CHECK(s5.find("losses=l1+grad_l1+ssim") != std::string::npos);
  CHECK(s5.find("recurrence=off") != std::string::npos);

  model::ModelConfig m6;
  loss::LossWeights l6;
  pipeline::apply_ablation("exp6", m6, l6);
  const std::string s6 = pipeline::ablation_summary(m6, l6);
  CHECK(s6.find("losses=l1+grad_l1+ssim+temporal") != std::string::npos);
  CHECK(s6.find("recurrence=on") != std::string::npos);
}

TEST_CASE("copy_back keeps input pixels below the threshold") {
  const int H = 4, W = 4, C = 3;
  Tensor in({H, W, C});
  Rng rng(11);
  for (int64_t i = 0; i < in.numel(); ++i) in[i] = rng.uniform();

  // Identical prediction: the input comes back bit-for-bit.
  Tensor same = pipeline::copy_back(in, in, 0.01);
  for (int64_t i = 0; i < in.numel(); ++i) CHECK(same[i] == in[i]);

  // Large uniform difference: the prediction survives everywhere.
  Tensor far = in;
  for (int64_t i = 0; i < far.numel(); ++i) far[i] = far[i] < 0.5 ? far[i] + 0.5 : far[i] - 0.5;
  Tensor far_out = pipeline::copy_back(in, far, 0.01);
  for (int64_t i = 0; i < in.numel(); ++i) CHECK(far_out[i] == far[i]);

  // A difference of exactly the threshold keeps the prediction (strict <).
  Tensor in0({1, 1, 3});
  Tensor pred0({1, 1, 3});
  pred0[0] = 0.01;
  Tensor at = pipeline::copy_back(in0, pred0, 0.01);
  CHECK(at[0] == 0.01);
  pred0[0] = 0.0099;
  Tensor below = pipeline::copy_back(in0, pred0, 0.01);
  CHECK(below[0] == 0.0);

  // The rule is max-over-channels: one loud channel keeps the whole pixel.
  Tensor inp({1, 1, 3});
  Tensor prd({1, 1, 3});
  prd[0] = 0.5;
  prd[1] = 0.001;
  prd[2] = 0.0;
  Tensor px = pipeline::copy_back(inp, prd, 0.01);
  CHECK(px[0] == 0.5);
  CHECK(px[1] == 0.001);

  // Idempotence.
  Tensor pred({H, W, C});
  for (int64_t i = 0; i < pred.numel(); ++i) pred[i] = rng.uniform();
  Tensor once = pipeline::copy_back(in, pred, 0.05);
  Tensor twice = pipeline::copy_back(in, once, 0.05);
  for (int64_t i = 0; i < once.numel(); ++i) CHECK(twice[i] == once[i]);

  CHECK_THROWS_AS(pipeline::copy_back(in, in0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(pipeline::copy_back(Tensor({2, 2}), Tensor({2, 2}), 0.01),
                  std::invalid_argument);
}

TEST_CASE("zero-residual model restores the input bit-exactly") {
  const Setup s = make_setup("exp6", 4);
  model::BvdNet net = model::BvdNet::build(s.mc);
  zero_head(net);

  const datagen::ClipPair clip = datagen::generate_clip(21, tiny_config(9));
  TempDir tmp("bvd_pipeline_identity");
  pipeline::InferenceConfig icfg;
  icfg.emit_debug_features = true;
  icfg.output_root = (tmp.path / "debug").string();

  const Tensor restored = pipeline::infer_clip(net, clip.corrupted, icfg);
  REQUIRE(restored.shape() == clip.corrupted.shape());
  for (int64_t i = 0; i < restored.numel(); ++i) CHECK(restored[i] == clip.corrupted[i]);

  int pngs = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "debug"))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 9);
}

TEST_CASE("inference rejects bad frame geometry with the required padding") {
  const Setup s = make_setup("exp5", 2);
  const model::BvdNet net = model::BvdNet::build(s.mc);
  pipeline::InferenceConfig icfg;

  CHECK_THROWS_WITH_AS(pipeline::infer_clip(net, Tensor({3, 30, 32, 3}), icfg),
                       doctest::Contains("pad to 32x32"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(pipeline::infer_clip(net, Tensor({3, 32, 33, 3}), icfg),
                       doctest::Contains("pad to 32x36"), std::invalid_argument);
  CHECK_THROWS_AS(pipeline::infer_clip(net, Tensor({3, 32, 32, 1}), icfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(pipeline::infer_clip(net, Tensor({0, 32, 32, 3}), icfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(pipeline::infer_clip(net, Tensor({32, 32, 3}), icfg),
                  std::invalid_argument);
}

TEST_CASE("inference is causal within the sliding-window view range") {
  const Setup s = make_setup("exp6", 2);
  const model::BvdNet net = model::BvdNet::build(s.mc);
  pipeline::InferenceConfig icfg;
  icfg.copy_threshold = 0.0;  // raw predictions, no copy-back masking

  const int L = 10;
  const Tensor clip = random_clip(L, 32, 32, 33);
  const Tensor out1 = pipeline::infer_clip(net, clip, icfg);

  // Perturb the last frame; frames whose view range ends before it must be
  // bit-identical (view range: t + N * stride = t + 6).
  Tensor clip2 = clip;
  const int64_t frame_n = clip.numel() / L;
  for (int64_t i = 0; i < frame_n; ++i) clip2[(L - 1) * frame_n + i] = 0.9;
  const Tensor out2 = pipeline::infer_clip(net, clip2, icfg);

  for (int t = 0; t < 3; ++t)
    for (int64_t i = 0; i < frame_n; ++i) CHECK(out1[t * frame_n + i] == out2[t * frame_n + i]);
  bool last_differs = false;
  for (int64_t i = 0; i < frame_n && !last_differs; ++i)
    last_differs = out1[(L - 1) * frame_n + i] != out2[(L - 1) * frame_n + i];
  CHECK(last_differs);
}

TEST_CASE("checkpoints round-trip weights, moments, and step bit-exactly") {
  const Setup s = make_setup("exp6", 2);
  model::BvdNet net1 = model::BvdNet::build(s.mc);
  TempDir tmp("bvd_pipeline_ckpt");

  // Nudge the weights away from init so loading is observable, and store
  // nonzero Adam moments.
  pipeline::AdamState adam = pipeline::AdamState::init(net1);
  adam.t = 9;
  for (auto& m : adam.m)
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = 0.25 + 1e-3 * static_cast<double>(i % 7);
  for (auto& v : adam.v)
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = 0.5 + 1e-4 * static_cast<double>(i % 5);
  Rng rng(55);
  for (auto& p : net1.parameters())
    for (int64_t i = 0; i < p.var->value.numel(); ++i)
      p.var->value[i] += 0.01 * (rng.uniform() - 0.5);

  const std::string path = (tmp.path / "ck.bvck").string();
  pipeline::save_checkpoint(net1, &adam, 9, path);
  CHECK(!fs::exists(path + ".tmp"));

  const Tensor source = random_clip(5, 32, 32, 77);
  model::WindowBatch wb;
  wb.source_frames = source;
  wb.prev_output = Tensor({32, 32, 3}, 0.5);
  wb.center_frame = Tensor({32, 32, 3}, 0.5);
  const model::ResidualOutput ref = net1.forward(wb);

  model::BvdNet net2 = model::BvdNet::build(s.mc);
  pipeline::AdamState adam2 = pipeline::AdamState::init(net2);
  const int64_t step = pipeline::load_checkpoint_into(path, net2, &adam2);
  CHECK(step == 9);
  CHECK(adam2.t == 9);
  for (size_t i = 0; i < adam.m.size(); ++i)
    for (int64_t j = 0; j < adam.m[i].numel(); ++j) {
      CHECK(adam2.m[i][j] == adam.m[i][j]);
      CHECK(adam2.v[i][j] == adam.v[i][j]);
    }
  const model::ResidualOutput got = net2.forward(wb);
  for (int64_t i = 0; i < ref.residual.numel(); ++i)
    CHECK(got.residual[i] == ref.residual[i]);

  // Standalone load rebuilds the model from the stored config.
  const pipeline::Checkpoint ck = pipeline::load_checkpoint(path);
  CHECK(ck.step == 9);
  CHECK(ck.has_adam);
  CHECK(ck.net.config().hash() == s.mc.hash());
  const model::ResidualOutput got2 = ck.net.forward(wb);
  for (int64_t i = 0; i < ref.residual.numel(); ++i)
    CHECK(got2.residual[i] == ref.residual[i]);
}

TEST_CASE("checkpoint loading rejects mismatched configs and corrupt archives") {
  const Setup s = make_setup("exp5", 2);
  model::BvdNet net = model::BvdNet::build(s.mc);
  TempDir tmp("bvd_pipeline_ckpt_bad");
  const std::string path = (tmp.path / "ck.bvck").string();
  pipeline::save_checkpoint(net, nullptr, 4, path);

  // A model built with a different config must refuse the archive.
  Setup other = make_setup("exp5", 3);
  model::BvdNet net_other = model::BvdNet::build(other.mc);
  CHECK_THROWS_AS(pipeline::load_checkpoint_into(path, net_other, nullptr),
                  std::runtime_error);

  // Editing the embedded config text breaks the stored hash.
  std::string bytes = read_bytes(path);
  const size_t pos = bytes.find("base_channels=2");
  REQUIRE(pos != std::string::npos);
  std::string edited = bytes;
  edited[pos + std::string("base_channels=").size()] = '3';
  const std::string edited_path = (tmp.path / "edited.bvck").string();
  write_bytes(edited_path, edited);
  CHECK_THROWS_AS(pipeline::load_checkpoint(edited_path), std::runtime_error);

  // Truncation and bad magic are reported as corruption.
  const std::string trunc_path = (tmp.path / "trunc.bvck").string();
  write_bytes(trunc_path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(pipeline::load_checkpoint(trunc_path), std::runtime_error);

  std::string magic = bytes;
  magic[0] = 'X';
  const std::string magic_path = (tmp.path / "magic.bvck").string();
  write_bytes(magic_path, magic);
  CHECK_THROWS_AS(pipeline::load_checkpoint(magic_path), std::runtime_error);

  CHECK_THROWS_AS(pipeline::load_checkpoint((tmp.path / "missing.bvck").string()),
                  std::runtime_error);
}

TEST_CASE("first training step with a zeroed head logs the baseline loss") {
  const Setup s = make_setup("exp5", 4);
  model::BvdNet net = model::BvdNet::build(s.mc);
  zero_head(net);

  std::vector<datagen::ClipPair> clips{datagen::generate_clip(31, tiny_config(2))};
  TempDir tmp("bvd_pipeline_baseline");

  pipeline::TrainConfig tc;
  tc.ablation = "exp5";
  tc.batch_size = 2;  // both samples of the two-frame clip in one step
  tc.max_steps = 1;
  tc.seed = 3;

  const pipeline::TrainReport report = pipeline::train(net, clips, tc, s.lw, tmp.path.string());
  CHECK(report.steps == 1);

  // With a zero head the prediction is the corrupted center frame, so the
  // first step must log exactly the do-nothing loss of its batch.
  datagen::SamplerConfig scfg;
  double l1 = 0, grad = 0, ssim_term = 0;
  for (int t = 0; t < 2; ++t) {
    const model::WindowBatch wb = datagen::sample_window(clips[0], t, scfg);
    l1 += loss::l1_loss(wb.center_frame, wb.target_frame) / 2;
    grad += loss::gradient_l1_loss(wb.center_frame, wb.target_frame) / 2;
    ssim_term += loss::ssim_loss(wb.center_frame, wb.target_frame, s.lw) / 2;
  }
  const auto rows = read_log(tmp.path / "loss_log.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].step == 1);
  CHECK(rows[0].l1 == doctest::Approx(l1).epsilon(1e-12));
  CHECK(rows[0].grad_l1 == doctest::Approx(grad).epsilon(1e-12));
  CHECK(rows[0].ssim_term == doctest::Approx(ssim_term).epsilon(1e-12));
  CHECK(rows[0].temporal == 0.0);
  CHECK(rows[0].total ==
        doctest::Approx(s.lw.lambda_R * (l1 + grad + ssim_term)).epsilon(1e-12));
}

TEST_CASE("training overfits a small corpus") {
  const Setup s = make_setup("exp5", 4);
  model::BvdNet net = model::BvdNet::build(s.mc);

  std::vector<datagen::ClipPair> clips;
  for (uint64_t i = 0; i < 4; ++i)
    clips.push_back(datagen::generate_clip(100 + i, tiny_config(6)));
  TempDir tmp("bvd_pipeline_overfit");

  pipeline::TrainConfig tc;
  tc.ablation = "exp5";
  tc.batch_size = 4;
  tc.max_steps = 500;
  tc.seed = 1;

  const pipeline::TrainReport report = pipeline::train(net, clips, tc, s.lw, tmp.path.string());
  CHECK(report.steps == 500);
  const auto rows = read_log(tmp.path / "loss_log.csv");
  REQUIRE(rows.size() == 500);

  // Per-step totals are not comparable: each batch draws different windows.
  // Every epoch revisits the same sample multiset, so epoch means are.
  // 4 clips x 6 windows each / batch 4 = 6 steps per epoch.
  const size_t epoch_len = 6;
  auto epoch_mean = [&](size_t first_row) {
    double sum = 0.0;
    for (size_t i = 0; i < epoch_len; ++i) sum += rows[first_row + i].total;
    return sum / static_cast<double>(epoch_len);
  };
  const size_t last_epoch = (rows.size() / epoch_len - 1) * epoch_len;
  CHECK(epoch_mean(last_epoch) < 0.97 * epoch_mean(0));
  // Already by step 200 the epoch mean sits strictly below the first epoch.
  const size_t epoch_at_200 = (200 / epoch_len - 1) * epoch_len;
  CHECK(epoch_mean(epoch_at_200) < epoch_mean(0));

  // The trained model beats the do-nothing baseline on its training corpus.
  pipeline::InferenceConfig icfg;
  const model::BvdNet baseline = model::BvdNet::identity(s.mc);
  const metrics::EvalReport base = metrics::evaluate(baseline, clips, icfg);
  const metrics::EvalReport trained = metrics::evaluate(net, clips, icfg, report.steps);
  CHECK(trained.aggregate.mse < 0.95 * base.aggregate.mse);
}

TEST_CASE("ablation exp3 logs no temporal term while exp6 does") {
  std::vector<datagen::ClipPair> clips{datagen::generate_clip(41, tiny_config(8))};

  {
    const Setup s = make_setup("exp3", 2);
    model::BvdNet net = model::BvdNet::build(s.mc);
    TempDir tmp("bvd_pipeline_exp3");
    pipeline::TrainConfig tc;
    tc.ablation = "exp3";
    tc.batch_size = 1;
    tc.max_steps = 5;
    const pipeline::TrainReport report =
        pipeline::train(net, clips, tc, s.lw, tmp.path.string());
    CHECK(report.steps == 5);
    const auto rows = read_log(tmp.path / "loss_log.csv");
    REQUIRE(rows.size() == 5);
    for (const auto& r : rows) {
      CHECK(r.temporal == 0.0);
      CHECK(r.ssim_term == 0.0);
      CHECK(r.grad_l1 == 0.0);
      CHECK(r.l1 > 0.0);
      CHECK(r.total == r.l1);
    }
  }

  {
    const Setup s = make_setup("exp6", 2);
    model::BvdNet net = model::BvdNet::build(s.mc);
    TempDir tmp("bvd_pipeline_exp6");
    pipeline::TrainConfig tc;
    tc.ablation = "exp6";
    tc.batch_size = 1;
    tc.max_steps = 2;
    const pipeline::TrainReport report =
        pipeline::train(net, clips, tc, s.lw, tmp.path.string());
    CHECK(report.steps == 2);
    const auto rows = read_log(tmp.path / "loss_log.csv");
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) CHECK(r.temporal > 0.0);
  }

  {
    // Warping the previous unrolled output instead of the clean frame.
    const Setup s = make_setup("exp6", 2);
    model::BvdNet net = model::BvdNet::build(s.mc);
    TempDir tmp("bvd_pipeline_exp6_prev");
    pipeline::TrainConfig tc;
    tc.ablation = "exp6";
    tc.batch_size = 1;
    tc.max_steps = 2;
    tc.temporal_target = "previous_output";
    const pipeline::TrainReport report =
        pipeline::train(net, clips, tc, s.lw, tmp.path.string());
    const auto rows = read_log(tmp.path / "loss_log.csv");
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) CHECK(r.temporal > 0.0);
    CHECK(report.steps == 2);
  }
}

TEST_CASE("training aborts when the loss turns non-finite") {
  const Setup s = make_setup("exp3", 2);
  model::BvdNet net = model::BvdNet::build(s.mc);
  // Poison one head weight; the NaN reaches the prediction (clamping keeps
  // NaN) and the first logged loss, which the divergence guard rejects.
  for (auto& p : net.parameters())
    if (p.name.rfind("dec.head.", 0) == 0)
      p.var->value[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<datagen::ClipPair> clips{datagen::generate_clip(51, tiny_config(2))};
  TempDir tmp("bvd_pipeline_diverge");

  pipeline::TrainConfig tc;
  tc.ablation = "exp3";
  tc.batch_size = 1;
  tc.max_steps = 3;

  CHECK_THROWS_WITH_AS(pipeline::train(net, clips, tc, s.lw, tmp.path.string()),
                       doctest::Contains("diverged"), std::runtime_error);
}

TEST_CASE("resumed training matches an uninterrupted run byte for byte") {
  const Setup s = make_setup("exp6", 2);
  std::vector<datagen::ClipPair> clips{datagen::generate_clip(61, tiny_config(8))};

  pipeline::TrainConfig tc;
  tc.ablation = "exp6";
  tc.batch_size = 1;
  tc.seed = 5;
  tc.augment = true;

  TempDir dir_a("bvd_pipeline_resume_a");
  model::BvdNet net_a = model::BvdNet::build(s.mc);
  tc.max_steps = 5;
  const pipeline::TrainReport rep_a = pipeline::train(net_a, clips, tc, s.lw, dir_a.path.string());
  CHECK(rep_a.steps == 5);

  TempDir dir_b("bvd_pipeline_resume_b");
  model::BvdNet net_b = model::BvdNet::build(s.mc);
  tc.max_steps = 3;
  pipeline::train(net_b, clips, tc, s.lw, dir_b.path.string());

  model::BvdNet net_b2 = model::BvdNet::build(s.mc);
  tc.max_steps = 5;
  tc.resume_from = (dir_b.path / "checkpoint_final.bvck").string();
  const pipeline::TrainReport rep_b =
      pipeline::train(net_b2, clips, tc, s.lw, dir_b.path.string());
  CHECK(rep_b.steps == 5);

  CHECK(read_bytes(dir_a.path / "loss_log.csv") == read_bytes(dir_b.path / "loss_log.csv"));
  CHECK(read_bytes(dir_a.path / "checkpoint_final.bvck") ==
        read_bytes(dir_b.path / "checkpoint_final.bvck"));

  // Resuming a finished run performs zero steps and leaves the log alone.
  const std::string log_before = read_bytes(dir_b.path / "loss_log.csv");
  model::BvdNet net_b3 = model::BvdNet::build(s.mc);
  tc.resume_from = (dir_b.path / "checkpoint_final.bvck").string();
  const pipeline::TrainReport rep_zero =
      pipeline::train(net_b3, clips, tc, s.lw, dir_b.path.string());
  CHECK(rep_zero.steps == 5);
  CHECK(read_bytes(dir_b.path / "loss_log.csv") == log_before);
}

TEST_CASE("config files parse comments, route keys, and reject junk") {
  TempDir tmp("bvd_pipeline_cfg");
  const fs::path cfg_path = tmp.path / "run.cfg";
  {
    std::ofstream out(cfg_path);
    out << "# experiment settings\n"
        << "learning_rate = 0.005   # flags may override\n"
        << "base_channels=12\n"
        << "\n"
        << "ablation=exp4\n"
        << "lambda_t = 3.5\n"
        << "variant=enc2d_dec2d\n"
        << "bottleneck_dilations = 1,2\n"
        << "augment=true\n";
  }
  const auto kv = pipeline::read_config_file(cfg_path.string());
  CHECK(kv.size() == 7);
  CHECK(kv.at("learning_rate") == "0.005");
  CHECK(kv.at("ablation") == "exp4");

  model::ModelConfig mc = model::ModelConfig::desk_scale();
  pipeline::TrainConfig tc;
  loss::LossWeights lw;
  for (const auto& [k, v] : kv) pipeline::apply_config_key(k, v, mc, tc, lw);
  CHECK(tc.learning_rate == 0.005);
  CHECK(mc.base_channels == 12);
  CHECK(tc.ablation == "exp4");
  CHECK(lw.lambda_T == 3.5);
  CHECK(mc.variant == model::Variant::enc2d_dec2d);
  const std::vector<int> expect_dil{1, 2};
  CHECK(mc.bottleneck_dilations == expect_dil);
  CHECK(tc.augment);

  CHECK_THROWS_AS(pipeline::apply_config_key("unknown_key", "1", mc, tc, lw),
                  std::invalid_argument);
  CHECK_THROWS_AS(pipeline::apply_config_key("learning_rate", "fast", mc, tc, lw),
                  std::invalid_argument);
  CHECK_THROWS_AS(pipeline::apply_config_key("augment", "maybe", mc, tc, lw),
                  std::invalid_argument);

  const fs::path bad_path = tmp.path / "bad.cfg";
  {
    std::ofstream out(bad_path);
    out << "no equals sign here\n";
  }
  CHECK_THROWS_AS(pipeline::read_config_file(bad_path.string()), std::invalid_argument);
  CHECK_THROWS_AS(pipeline::read_config_file((tmp.path / "missing.cfg").string()),
                  std::runtime_error);
}
