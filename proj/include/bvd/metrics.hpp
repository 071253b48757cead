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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bvd/datagen.hpp"
#include "bvd/model.hpp"
#include "bvd/pipeline.hpp"
#include "bvd/tensor.hpp"

namespace bvd::metrics {

/// Frames below this MSE count as identical and contribute the PSNR cap.
constexpr double kPsnrMseFloor = 1e-10;
constexpr double kPsnrCapDb = 100.0;

/// Mean squared elementwise difference over everything passed in.
double mse(const Tensor& pred, const Tensor& target);

/// Per-frame PSNR (peak 1.0) averaged over [L, H, W, C] frames; a frame with
/// MSE below kPsnrMseFloor contributes kPsnrCapDb.
double psnr(const Tensor& pred, const Tensor& target);

/// PSNR of the MSE pooled over all frames, same cap rule.
double psnr_pooled(const Tensor& pred, const Tensor& target);

/// Per-frame (1 - ssim) / 2 averaged over frames; window settings from the
/// loss module defaults.
double dssim(const Tensor& pred, const Tensor& target);

/// Flicker measure: mean over consecutive pairs of the masked mean per-pixel
/// Euclidean color distance between frame t and warp(frame t-1, flows[t-1]).
/// flows[t-1] maps frame t coordinates into frame t-1 (backward flow); an
/// all-zero mask contributes 0 for its pair. Requires at least two frames.
double temporal_error(const Tensor& frames, const std::vector<Tensor>& flows,
                      const std::vector<Tensor>& masks);

struct ClipScore {
  int clip_id = 0;
  double mse = 0.0;
  double psnr_db = 0.0;
  double dssim = 0.0;
  double temporal_error = 0.0;
};

struct EvalReport {
  std::vector<ClipScore> per_clip;
  struct {
    double mse = 0.0;
    double psnr_db = 0.0;
    double psnr_pooled_db = 0.0;  // PSNR of the MSE pooled over every frame
    double dssim = 0.0;
    double temporal_error = 0.0;
  } aggregate;  // arithmetic means of per_clip (pooled PSNR aside)
  struct {
    uint64_t config_hash = 0;
    int64_t checkpoint_step = 0;
    int64_t frame_count = 0;
    int64_t param_count = 0;
  } meta;

  /// Single JSON document, keys sorted, hash as a hex string.
  std::string to_json() const;
};

/// Restores every corpus clip with pipeline::infer_clip and scores it against
/// the stored clean frames; temporal error uses the stored backward flows and
/// their round-trip occlusion masks. Deterministic; clips scored in manifest
/// order (ascending clip_id).
EvalReport evaluate(const model::BvdNet& net, const datagen::CorpusManifest& corpus,
                    const pipeline::InferenceConfig& cfg, int64_t checkpoint_step = 0);

/// Same scoring for preloaded clips; ids index the vector.
EvalReport evaluate(const model::BvdNet& net,
                    const std::vector<datagen::ClipPair>& clips,
                    const pipeline::InferenceConfig& cfg, int64_t checkpoint_step = 0);

}  // namespace bvd::metrics
