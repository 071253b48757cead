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

#include "bvd/autodiff.hpp"
#include "bvd/tensor.hpp"

namespace bvd::loss {

/// Weights and settings for the training objective
/// total = lambda_R * (l1 + grad_l1 + (1 - ssim)) + lambda_T * temporal,
/// restricted to the enabled terms. All reductions are means, so the
/// weights are resolution-independent.
struct LossWeights {
  double lambda_R = 1.0;
  double lambda_T = 2.0;
  int ssim_window = 5;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  // Enabled-term set.
  bool use_l1 = true;
  bool use_grad_l1 = true;
  bool use_ssim = true;
  bool use_temporal = true;

  void validate() const;
};

struct LossBreakdown {
  double l1 = 0.0;
  double grad_l1 = 0.0;
  double ssim_term = 0.0;  // 1 - ssim
  double temporal = 0.0;
  double total = 0.0;
};

// Graph-building forms over [H, W, C] images; each returns a scalar Var.
ad::Var l1_term(const ad::Var& pred, const ad::Var& target);
ad::Var gradient_l1_term(const ad::Var& pred, const ad::Var& target);
ad::Var ssim_index(const ad::Var& pred, const ad::Var& target, const LossWeights& w);
ad::Var ssim_term(const ad::Var& pred, const ad::Var& target, const LossWeights& w);
/// Masked mean of |pred_t - warped_prev| over mask-valid pixels; the mask is
/// [H, W] binary and applies to all channels. An all-zero mask yields 0.
ad::Var temporal_term(const ad::Var& pred_t, const ad::Var& warped_prev,
                      const Tensor& mask);

// Scalar conveniences; same code paths evaluated on constant graphs.
double l1_loss(const Tensor& pred, const Tensor& target);
double gradient_l1_loss(const Tensor& pred, const Tensor& target);
double ssim(const Tensor& pred, const Tensor& target, const LossWeights& w = {});
double ssim_loss(const Tensor& pred, const Tensor& target, const LossWeights& w = {});
/// Warps prev by flow (backward bilinear warp), then the masked mean.
double temporal_loss(const Tensor& pred_t, const Tensor& prev, const Tensor& flow,
                     const Tensor& mask);

/// Fills a LossBreakdown from the enabled terms. prev/flow/mask may be null
/// when the temporal term is disabled; enabling it without them is an error.
LossBreakdown total_loss(const Tensor& pred, const Tensor& target,
                         const Tensor* prev, const Tensor* flow, const Tensor* mask,
                         const LossWeights& w);

}  // namespace bvd::loss
