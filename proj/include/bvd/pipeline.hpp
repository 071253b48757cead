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
#include <map>
#include <string>
#include <vector>

#include "bvd/datagen.hpp"
#include "bvd/losses.hpp"
#include "bvd/model.hpp"
#include "bvd/tensor.hpp"

namespace bvd::pipeline {

/// Training settings. Defaults are the desk-scale recipe: batch 4 for 2000
/// steps at a constant learning rate (the paper-scale recipe is batch 128
/// for 200 epochs on the full corpus).
struct TrainConfig {
  int64_t epochs = 0;     // full passes over the sample set; 0 = unbounded
  int64_t max_steps = 2000;  // optimizer updates; 0 = bounded by epochs only
  int batch_size = 4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int recurrence_steps = 5;  // unrolled time steps per sample
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // steps between periodic saves; 0 = final only
  // Table-style experiment row: exp1..exp6 rewrite the model variant and the
  // enabled loss terms (see apply_ablation); empty keeps explicit settings.
  std::string ablation = "exp6";
  bool augment = false;  // horizontal flip + color jitter per sequence
  // Temporal-term warp source: the previous clean frame, or the previous
  // unrolled prediction (detached). The latter needs the recurrence stream.
  std::string temporal_target = "ground_truth";  // or "previous_output"
  std::string resume_from;  // checkpoint path; empty = fresh run

  void validate() const;
};

/// Inference settings. copy_threshold is the post-processing rule that
/// restores input pixels where the prediction moved less than the threshold.
struct InferenceConfig {
  double copy_threshold = 0.01;  // in [0, 1)
  bool emit_debug_features = false;
  std::string output_root;  // destination for debug dumps; may be empty

  void validate() const;
};

/// Rewrites the model variant and enabled loss terms for one experiment row:
///   exp1 3D encoder-decoder, L1            exp4 hybrid, L1 + gradient
///   exp2 2D encoder-decoder, L1            exp5 hybrid, full reconstruction
///   exp3 hybrid 3D-2D, L1                  exp6 exp5 + recurrence + temporal
/// Only exp6 enables the recurrence stream and the temporal term.
void apply_ablation(const std::string& name, model::ModelConfig& mc,
                    loss::LossWeights& lw);

/// One-line human-readable echo of the effective setup, e.g.
/// "variant=enc2d_dec2d recurrence=off losses=l1".
std::string ablation_summary(const model::ModelConfig& mc, const loss::LossWeights& lw);

/// Adam moment buffers, one pair per model parameter in registration order.
struct AdamState {
  int64_t t = 0;  // completed updates (bias-correction exponent)
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(const model::BvdNet& net);
  /// Applies one update from the accumulated gradients, then zeroes them.
  void step(model::BvdNet& net, const TrainConfig& cfg);
};

struct TrainReport {
  int64_t steps = 0;  // total optimizer updates after the run
  loss::LossBreakdown last;
  std::string checkpoint_path;  // final checkpoint
  std::string loss_log_path;
};

/// Trains net on the clips: samples (clip, start) pairs in seeded shuffled
/// epochs, unrolls consecutive time steps feeding each prediction into the
/// next step's prev_output (detached), sums the reconstruction terms per step
/// and the temporal term between steps, and applies one Adam update per batch
/// of unrolled sequences. Writes loss_log.csv and checkpoints under out_dir.
/// Aborts with std::runtime_error when the total loss turns non-finite.
/// Deterministic given cfg.seed on a single compute thread.
TrainReport train(model::BvdNet& net, const std::vector<datagen::ClipPair>& clips,
                  const TrainConfig& cfg, const loss::LossWeights& weights,
                  const std::string& out_dir);

/// Corpus-manifest form; loads every clip through datagen::load_clip first.
TrainReport train(model::BvdNet& net, const datagen::CorpusManifest& corpus,
                  const TrainConfig& cfg, const loss::LossWeights& weights,
                  const std::string& out_dir);

/// Per pixel, keeps the input value wherever the prediction differs by less
/// than threshold in every channel (max over channels, strict inequality);
/// elsewhere keeps the prediction. Idempotent for a fixed input frame.
Tensor copy_back(const Tensor& input_frame, const Tensor& prediction, double threshold);

/// Auto-regressive sliding-window restoration of a [L, H, W, C] clip: frame t
/// sees the reflected source window and the previous restored frame (frame 0
/// bootstraps from the input itself), then copy-back. Output length equals
/// input length. Height/width must divide the model's downsampling factor;
/// violations report the required padding.
Tensor infer_clip(const model::BvdNet& net, const Tensor& corrupted,
                  const InferenceConfig& cfg);

// ---- checkpoints ----

/// Binary archive: model config text + hash, step, parameter tensors by name,
/// optional Adam moments. Writes are atomic (temp file + rename).
void save_checkpoint(const model::BvdNet& net, const AdamState* adam, int64_t step,
                     const std::string& path);

/// Restores weights (and moments, when stored) into an existing net whose
/// config hash must match the archive. Returns the stored step.
int64_t load_checkpoint_into(const std::string& path, model::BvdNet& net,
                             AdamState* adam);

struct Checkpoint {
  model::BvdNet net;
  AdamState adam;
  bool has_adam = false;
  int64_t step = 0;
};

/// Rebuilds the model from the stored config, then restores state. Rejects
/// corrupt archives and archives whose stored hash disagrees with their
/// config text (an edited config).
Checkpoint load_checkpoint(const std::string& path);

// ---- configuration files ----

/// Flat key=value lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Routes one key to the owning config; throws on unknown keys or bad values.
void apply_config_key(const std::string& key, const std::string& value,
                      model::ModelConfig& mc, TrainConfig& tc, loss::LossWeights& lw);

}  // namespace bvd::pipeline
