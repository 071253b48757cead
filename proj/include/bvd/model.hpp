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

#include "bvd/autodiff.hpp"
#include "bvd/rng.hpp"
#include "bvd/tensor.hpp"

namespace bvd::model {

enum class Variant { hybrid_3d2d, enc3d_dec3d, enc2d_dec2d };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

/// Architecture hyperparameters. The network predicts a per-pixel residual
/// added to the corrupted center frame; see BvdNet for the layer schedule.
struct ModelConfig {
  int temporal_radius = 2;  // N; the input window holds T = 2N+1 frames
  int sampling_stride = 3;
  int base_channels = 16;
  int encoder_depth = 2;  // stride-2 levels; this schedule supports exactly 2
  std::vector<int> bottleneck_dilations = {2, 4, 8, 16};
  bool use_recurrence_stream = true;
  Variant variant = Variant::hybrid_3d2d;
  int io_channels = 3;
  uint64_t init_seed = 0;

  int window_length() const { return 2 * temporal_radius + 1; }
  int downsampling_factor() const { return 1 << encoder_depth; }

  void validate() const;
  std::string serialize() const;  // flat key=value lines, fixed key order
  static ModelConfig deserialize(const std::string& text);
  uint64_t hash() const;  // FNV-1a over serialize()

  static ModelConfig desk_scale();
  static ModelConfig paper_scale();
};

/// One training/inference unit: the sampled source window, the recurrence
/// input, the window's center frame, and (during training) the clean target.
struct WindowBatch {
  Tensor source_frames;  // [T, H, W, C], values in [0, 1]
  Tensor prev_output;    // [H, W, C]
  Tensor center_frame;   // [H, W, C]; equals source_frames[N]
  Tensor target_frame;   // [H, W, C]; empty at inference
};

struct ResidualOutput {
  Tensor residual;    // [H, W, C]
  Tensor prediction;  // clamp(center + residual, 0, 1)
};

struct Parameter {
  std::string name;
  ad::Var var;  // grad-requiring leaf
};

/// Graph-form forward result for training.
struct ForwardGraph {
  ad::Var residual;    // [H, W, C]
  ad::Var prediction;  // [H, W, C], clamped
};

/// The decaptioning network. hybrid_3d2d: a 3D aggregation stream over the
/// source window (temporal extent shrinking to 1), an optional 2D recurrence
/// stream over the previous output fused by summation at the deepest level,
/// a dilated 2D bottleneck, and a 2D decoder whose skip inputs come from the
/// 3D stream through temporal-pooling 3D convolutions. enc3d_dec3d keeps T
/// through encoder and decoder and pools it in the head; enc2d_dec2d sees
/// only the center frame.
class BvdNet {
 public:
  static BvdNet build(const ModelConfig& cfg);
  /// Zero-parameter baseline: residual identically 0, prediction = center.
  static BvdNet identity(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  bool is_identity() const { return identity_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  int64_t count_parameters() const;

  /// Builds the differentiable graph; source/prev enter as constants, so
  /// gradients flow to the weights only.
  ForwardGraph forward_graph(const Tensor& source_frames, const Tensor& prev_output) const;

  /// Tape-free forward for inference.
  ResidualOutput forward(const WindowBatch& batch) const;

  static int64_t conv_parameter_count(int cout, int cin, int kt, int kh, int kw,
                                      bool bias);

 private:
  struct Conv {
    std::string name;
    ad::Var w;
    ad::Var b;
    ad::ConvGeom geom;
    bool is3d = false;
  };

  BvdNet() = default;
  Conv make_conv3d(const std::string& name, int cout, int cin, int kt, int kh, int kw,
                   const ad::ConvGeom& g, Rng& rng);
  Conv make_conv2d(const std::string& name, int cout, int cin, int kh, int kw,
                   const ad::ConvGeom& g, Rng& rng);
  void check_input(const Tensor& source, const Tensor& prev) const;

  ModelConfig cfg_;
  bool identity_ = false;
  std::vector<Conv> agg_;    // 3D stream (or the 2D encoder for enc2d_dec2d)
  std::vector<Conv> rec_;    // 2D recurrence stream
  std::vector<Conv> bott_;   // dilated bottleneck
  std::vector<Conv> skips_;  // temporal-pooling skip convolutions
  std::vector<Conv> dec_;    // decoder
  std::vector<Parameter> params_;
};

}  // namespace bvd::model
