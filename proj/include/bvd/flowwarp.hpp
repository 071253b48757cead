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

#include <string>
#include <utility>
#include <vector>

#include "bvd/autodiff.hpp"
#include "bvd/tensor.hpp"

namespace bvd::flow {

/// Flow fields are [H, W, 2] tensors of per-pixel displacements (dx, dy) in
/// pixels. A field attached to frame t stores, at each pixel, the offset to
/// the matching sample location in the other frame of its pair.
void require_flow(const Tensor& flow, int height, int width, const char* where);

/// Backward warp: out(p) = image(p + flow(p)) with bilinear interpolation.
/// Sample coordinates are clamped to the image border. Zero flow reproduces
/// the input bit-exactly.
Tensor warp(const Tensor& image, const Tensor& flow);

/// Same warp, differentiable with respect to the image (flow held constant).
ad::Var warp(const ad::Var& image, const Tensor& flow);

/// Forward-backward consistency mask, computed in forward_flow's frame:
/// for each pixel p, let q = p + forward_flow(p). The mask is 0 when q falls
/// outside the frame, else 1 iff |forward_flow(p) + backward_flow(q)| < tol
/// (Euclidean, backward_flow sampled bilinearly at q).
Tensor occlusion_mask(const Tensor& forward_flow, const Tensor& backward_flow,
                      double tol = 1.0);

/// Parametric motion of one consecutive frame pair in a layered scene:
/// each layer translates rigidly; top_layer_* give the visible layer index
/// per pixel in each frame.
struct SceneMotion {
  int height = 0;
  int width = 0;
  std::vector<std::pair<double, double>> layer_velocity;  // (vx, vy) per layer
  Tensor top_layer_prev;  // [H, W] layer ids visible in frame t-1
  Tensor top_layer_cur;   // [H, W] layer ids visible in frame t
};

/// Exact flows for the parametric motion: returns (forward, backward) where
/// forward lives in frame t-1 (displacement +v of its visible layer) and
/// backward lives in frame t (displacement -v). Occluded/revealed regions
/// are left to the round-trip mask to reject.
std::pair<Tensor, Tensor> synthetic_flow(const SceneMotion& motion);

/// Coarse dense flow by multi-scale block matching: 3 scales, 8x8 blocks,
/// +-4 px search per scale, ties broken toward the zero displacement, block
/// grid bilinearly upsampled to a dense field. Returns flow such that
/// frame_a(p) ~ frame_b(p + flow(p)).
Tensor estimate_flow(const Tensor& frame_a, const Tensor& frame_b);

/// Binary flow file: magic "BVFL", uint32 H, uint32 W, little endian, then
/// H*W*2 float32 (dx, dy) row-major.
void write_flow(const std::string& path, const Tensor& flow);
Tensor read_flow(const std::string& path);

}  // namespace bvd::flow
