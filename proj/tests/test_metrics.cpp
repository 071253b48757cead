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

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

#include "bvd/datagen.hpp"
#include "bvd/flowwarp.hpp"
#include "bvd/losses.hpp"
#include "bvd/metrics.hpp"
#include "bvd/model.hpp"
#include "bvd/pipeline.hpp"
#include "bvd/rng.hpp"

#include "json.hpp"

using bvd::Rng;
using bvd::Tensor;
namespace datagen = bvd::datagen;
namespace flow = bvd::flow;
namespace metrics = bvd::metrics;
namespace model = bvd::model;
namespace pipeline = bvd::pipeline;

namespace {

Tensor random_frames(int L, int H, int W, int C, uint64_t seed) {
  Tensor t({L, H, W, C});
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

datagen::GenConfig tiny_config(int length) {
  datagen::GenConfig cfg;
  cfg.length = length;
  cfg.height = 32;
  cfg.width = 32;
  cfg.max_font_scale = 1;
  return cfg;
}

}  // namespace

TEST_CASE("mse hand cases") {
  Tensor a({2, 4, 4, 3});
  Tensor b = a;
  CHECK(metrics::mse(a, b) == 0.0);

  b.fill(0.1);
  CHECK(metrics::mse(a, b) == doctest::Approx(0.01).epsilon(1e-12));

  // Checkerboard against its inverse: every element differs by exactly 1.
  Tensor c({1, 4, 4, 1}), d({1, 4, 4, 1});
  for (int64_t i = 0; i < c.numel(); ++i) {
    c[i] = static_cast<double>(i % 2);
    d[i] = static_cast<double>(1 - i % 2);
  }
  CHECK(metrics::mse(c, d) == 1.0);

  CHECK_THROWS_AS(metrics::mse(a, c), std::invalid_argument);
}

TEST_CASE("psnr maps per-frame mse through -10 log10 with a 100 dB cap") {
  // Uniform shifts give per-frame MSE of 0.01 and 0.001.
  Tensor a({1, 8, 8, 3});
  Tensor b = a;
  b.fill(0.1);
  CHECK(metrics::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

  Tensor c({1, 8, 8, 3});
  Tensor d = c;
  d.fill(std::sqrt(0.001));
  CHECK(metrics::psnr(c, d) == doctest::Approx(30.0).epsilon(1e-9));

  CHECK(metrics::psnr(a, a) == 100.0);

  // Per-frame averaging: one identical frame, one at MSE 0.01.
  Tensor e({2, 8, 8, 3});
  Tensor f = e;
  for (int64_t i = 0; i < 8 * 8 * 3; ++i) f[i] = 0.1;
  CHECK(metrics::psnr(e, f) == doctest::Approx((100.0 + 20.0) / 2).epsilon(1e-12));

  // Pooled PSNR works on the pooled MSE instead of the per-frame mean.
  CHECK(metrics::psnr_pooled(e, f) == doctest::Approx(-10.0 * std::log10(0.005)).epsilon(1e-12));
  CHECK(metrics::psnr_pooled(a, a) == 100.0);

  // Frames in [0, 1] can never exceed MSE 1, so PSNR stays nonnegative.
  Tensor g({1, 4, 4, 1}), h({1, 4, 4, 1});
  for (int64_t i = 0; i < g.numel(); ++i) {
    g[i] = static_cast<double>(i % 2);
    h[i] = static_cast<double>(1 - i % 2);
  }
  CHECK(metrics::psnr(g, h) == 0.0);
}

TEST_CASE("dssim transfers the ssim oracle through (1 - ssim) / 2") {
  Tensor a = random_frames(2, 12, 12, 3, 101);
  CHECK(metrics::dssim(a, a) == 0.0);

  Tensor b = random_frames(2, 12, 12, 3, 202);
  CHECK(metrics::dssim(a, b) == doctest::Approx(metrics::dssim(b, a)).epsilon(1e-9));

  // Same code path as the loss module: per-frame equality is exact.
  const bvd::loss::LossWeights w;
  long double expect = 0.0L;
  for (int t = 0; t < 2; ++t) {
    Tensor fa({12, 12, 3}), fb({12, 12, 3});
    for (int64_t i = 0; i < fa.numel(); ++i) {
      fa[i] = a[t * fa.numel() + i];
      fb[i] = b[t * fb.numel() + i];
    }
    expect += (1.0 - bvd::loss::ssim(fa, fb, w)) / 2.0;
  }
  CHECK(metrics::dssim(a, b) == static_cast<double>(expect / 2));

  CHECK(metrics::dssim(a, b) >= 0.0);
  CHECK(metrics::dssim(a, b) <= 1.0);

  Tensor small({1, 3, 3, 1});
  CHECK_THROWS_AS(metrics::dssim(small, small), std::invalid_argument);
}

TEST_CASE("temporal error measures masked warped color distance") {
  const int H = 6, W = 6;
  const Tensor zero_flow({H, W, 2});
  const Tensor ones_mask({H, W}, 1.0);
  const Tensor zero_mask({H, W});

  // A repeated frame under zero flow has no flicker.
  Tensor still({3, H, W, 3}, 0.42);
  std::vector<Tensor> flows{zero_flow, zero_flow};
  std::vector<Tensor> masks{ones_mask, ones_mask};
  CHECK(metrics::temporal_error(still, flows, masks) == 0.0);

  // 0.3 difference in exactly one channel: Euclidean distance is 0.3.
  Tensor pair({2, H, W, 3});
  for (int64_t p = 0; p < H * W; ++p) pair[(H * W + p) * 3 + 1] = 0.3;
  CHECK(metrics::temporal_error(pair, {zero_flow}, {ones_mask}) ==
        doctest::Approx(0.3).epsilon(1e-12));

  // An all-zero mask contributes 0 regardless of the images.
  CHECK(metrics::temporal_error(pair, {zero_flow}, {zero_mask}) == 0.0);

  Tensor one_frame({1, H, W, 3});
  CHECK_THROWS_AS(metrics::temporal_error(one_frame, {}, {}), std::invalid_argument);
  const std::vector<Tensor> two_flows{zero_flow, zero_flow};
  const std::vector<Tensor> one_mask{ones_mask};
  CHECK_THROWS_AS(metrics::temporal_error(pair, two_flows, one_mask), std::invalid_argument);
  CHECK_THROWS_AS(metrics::temporal_error(pair, {}, {}), std::invalid_argument);
}

TEST_CASE("clean generated clips have tiny temporal error under their own flows") {
  const datagen::ClipPair clip = datagen::generate_clip(77, tiny_config(6));
  std::vector<Tensor> flows, masks;
  for (const auto& pr : clip.flows) {
    flows.push_back(pr.second);
    masks.push_back(flow::occlusion_mask(pr.second, pr.first));
  }
  CHECK(metrics::temporal_error(clip.clean, flows, masks) < 0.02);
}

TEST_CASE("identity-model evaluation equals the do-nothing baseline") {
  std::vector<datagen::ClipPair> clips;
  clips.push_back(datagen::generate_clip(5, tiny_config(6)));
  clips.push_back(datagen::generate_clip(6, tiny_config(5)));

  model::ModelConfig mc = model::ModelConfig::desk_scale();
  const model::BvdNet net = model::BvdNet::identity(mc);
  pipeline::InferenceConfig icfg;

  const metrics::EvalReport report = metrics::evaluate(net, clips, icfg, 17);

  REQUIRE(report.per_clip.size() == 2);
  for (size_t i = 0; i < clips.size(); ++i) {
    const auto& s = report.per_clip[i];
    CHECK(s.clip_id == static_cast<int>(i));
    // Zero residual + copy-back keeps every input pixel bit-for-bit, so the
    // scores are exactly those of the corrupted clip itself.
    CHECK(s.mse == metrics::mse(clips[i].corrupted, clips[i].clean));
    CHECK(s.psnr_db == metrics::psnr(clips[i].corrupted, clips[i].clean));
    CHECK(s.dssim == metrics::dssim(clips[i].corrupted, clips[i].clean));
    CHECK(s.mse > 0.0);
  }

  // Aggregate is the arithmetic mean of the per-clip entries.
  double sum_mse = 0.0, sum_psnr = 0.0, sum_dssim = 0.0, sum_temp = 0.0;
  for (const auto& s : report.per_clip) {
    sum_mse += s.mse;
    sum_psnr += s.psnr_db;
    sum_dssim += s.dssim;
    sum_temp += s.temporal_error;
  }
  const auto k = static_cast<double>(report.per_clip.size());
  CHECK(report.aggregate.mse == sum_mse / k);
  CHECK(report.aggregate.psnr_db == sum_psnr / k);
  CHECK(report.aggregate.dssim == sum_dssim / k);
  CHECK(report.aggregate.temporal_error == sum_temp / k);

  CHECK(report.meta.checkpoint_step == 17);
  CHECK(report.meta.frame_count == 11);
  CHECK(report.meta.param_count == 0);
  CHECK(report.meta.config_hash == mc.hash());
}

TEST_CASE("evaluation reports are deterministic, valid JSON") {
  std::vector<datagen::ClipPair> clips{datagen::generate_clip(9, tiny_config(5))};
  const model::BvdNet net = model::BvdNet::identity(model::ModelConfig::desk_scale());
  pipeline::InferenceConfig icfg;

  const metrics::EvalReport a = metrics::evaluate(net, clips, icfg, 3);
  const metrics::EvalReport b = metrics::evaluate(net, clips, icfg, 3);
  CHECK(a.to_json() == b.to_json());

  const nlohmann::json j = nlohmann::json::parse(a.to_json());
  CHECK(j.at("aggregate").at("mse").get<double>() == a.aggregate.mse);
  CHECK(j.at("aggregate").at("psnr_pooled_db").get<double>() == a.aggregate.psnr_pooled_db);
  CHECK(j.at("meta").at("checkpoint_step").get<int64_t>() == 3);
  CHECK(j.at("meta").at("frame_count").get<int64_t>() == 5);
  CHECK(j.at("meta").at("config_hash").get<std::string>().size() == 16);
  REQUIRE(j.at("per_clip").size() == 1);
  CHECK(j.at("per_clip")[0].at("temporal_error").get<double>() ==
        a.per_clip[0].temporal_error);
}
