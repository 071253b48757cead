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

#include <functional>
#include <memory>
#include <vector>

#include "bvd/tensor.hpp"

namespace bvd::ad {

class Node;
using Var = std::shared_ptr<Node>;

/// One value in a reverse-mode computation graph. Ops that receive only
/// constant inputs record no parents, so inference graphs free their
/// intermediates as soon as the enclosing Var goes out of scope.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated lazily by ensure_grad()
  bool requires_grad = false;
  int64_t order = 0;  // creation sequence; backward runs in descending order
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
  }
};

Var constant(Tensor v);
Var leaf(Tensor v);  // trainable: requires_grad = true
Var detach(const Var& v);

/// Builds an op node; drops the tape when no parent needs gradients.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// While alive, ops record no tape even over grad-requiring inputs. Used by
/// inference so intermediates free eagerly. Single compute thread assumed.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Reverse pass from a scalar (numel == 1) root.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs(const Var& a);                     // subgradient 0 at kinks
Var leaky_relu(const Var& a, double slope);
Var clamp01(const Var& a);                 // gradient passes on [0, 1]

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(const Var& a, const Var& b);  // [Ca,...] + [Cb,...] on dim 0
Var chw_from_image(const Var& img);               // [H,W,C] -> [C,H,W]
Var image_from_chw(const Var& chw);               // [C,H,W] -> [H,W,C]

// ---- convolution ----
struct ConvGeom {
  int kt = 1, kh = 3, kw = 3;
  int st = 1, sy = 1, sx = 1;
  int pt = 0, py = 1, px = 1;
  int dt = 1, dy = 1, dx = 1;
};

/// x: [Cin, T, H, W], w: [Cout, Cin, kt, kh, kw], b: [Cout] (empty Var for none).
Var conv3d(const Var& x, const Var& w, const Var& b, const ConvGeom& g);
/// x: [Cin, H, W], w: [Cout, Cin, kh, kw]; same kernel as conv3d with unit depth.
Var conv2d(const Var& x, const Var& w, const Var& b, const ConvGeom& g);

std::vector<int> conv3d_out_shape(const std::vector<int>& xshape,
                                  const std::vector<int>& wshape, const ConvGeom& g);

// ---- spatial ----
Var upsample2_nearest(const Var& x);  // [C,H,W] -> [C,2H,2W]; [C,T,H,W] -> [C,T,2H,2W]

// ---- image-domain ops ([H, W, C]) ----
Var box_filter_valid(const Var& img, int k);  // k x k uniform mean, valid windows
Var hdiff(const Var& img);                    // forward difference along width
Var vdiff(const Var& img);                    // forward difference along height

inline const Tensor& val(const Var& v) { return v->value; }
inline double scalar(const Var& v) { return v->value[0]; }

}  // namespace bvd::ad
