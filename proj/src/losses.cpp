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

#include "bvd/losses.hpp"

#include <stdexcept>

#include "bvd/flowwarp.hpp"

namespace bvd::loss {

void LossWeights::validate() const {
  if (lambda_R < 0.0 || lambda_T < 0.0)
    throw std::invalid_argument("LossWeights: lambda_R, lambda_T must be >= 0");
  if (ssim_window < 3 || ssim_window % 2 == 0)
    throw std::invalid_argument("LossWeights: ssim_window must be odd and >= 3");
  if (ssim_c1 <= 0.0 || ssim_c2 <= 0.0)
    throw std::invalid_argument("LossWeights: c1, c2 must be > 0");
}

ad::Var l1_term(const ad::Var& pred, const ad::Var& target) {
  require_same_shape(pred->value, target->value, "l1_term");
  return ad::mean_all(ad::abs(ad::sub(pred, target)));
}

ad::Var gradient_l1_term(const ad::Var& pred, const ad::Var& target) {
  require_same_shape(pred->value, target->value, "gradient_l1_term");
  const auto& s = pred->value.shape();
  if (s.size() != 3 || s[0] < 2 || s[1] < 2)
    throw std::invalid_argument("gradient_l1_term: images must be [H, W, C], at least 2x2");
  ad::Var d = ad::sub(pred, target);
  return ad::add(ad::mean_all(ad::abs(ad::hdiff(d))),
                 ad::mean_all(ad::abs(ad::vdiff(d))));
}

ad::Var ssim_index(const ad::Var& pred, const ad::Var& target, const LossWeights& w) {
  w.validate();
  require_same_shape(pred->value, target->value, "ssim");
  const auto& s = pred->value.shape();
  if (s.size() != 3 || s[0] < w.ssim_window || s[1] < w.ssim_window)
    throw std::invalid_argument("ssim: image smaller than window");

  // Uniform-window local statistics (population form).
  ad::Var mu_p = ad::box_filter_valid(pred, w.ssim_window);
  ad::Var mu_t = ad::box_filter_valid(target, w.ssim_window);
  ad::Var mu_pp = ad::box_filter_valid(ad::mul(pred, pred), w.ssim_window);
  ad::Var mu_tt = ad::box_filter_valid(ad::mul(target, target), w.ssim_window);
  ad::Var mu_pt = ad::box_filter_valid(ad::mul(pred, target), w.ssim_window);
  ad::Var var_p = ad::sub(mu_pp, ad::mul(mu_p, mu_p));
  ad::Var var_t = ad::sub(mu_tt, ad::mul(mu_t, mu_t));
  ad::Var cov = ad::sub(mu_pt, ad::mul(mu_p, mu_t));

  ad::Var num = ad::mul(ad::add_scalar(ad::scale(ad::mul(mu_p, mu_t), 2.0), w.ssim_c1),
                        ad::add_scalar(ad::scale(cov, 2.0), w.ssim_c2));
  ad::Var den = ad::mul(
      ad::add_scalar(ad::add(ad::mul(mu_p, mu_p), ad::mul(mu_t, mu_t)), w.ssim_c1),
      ad::add_scalar(ad::add(var_p, var_t), w.ssim_c2));
  return ad::mean_all(ad::divide(num, den));
}

ad::Var ssim_term(const ad::Var& pred, const ad::Var& target, const LossWeights& w) {
  return ad::add_scalar(ad::scale(ssim_index(pred, target, w), -1.0), 1.0);
}

ad::Var temporal_term(const ad::Var& pred_t, const ad::Var& warped_prev,
                      const Tensor& mask) {
  require_same_shape(pred_t->value, warped_prev->value, "temporal_term");
  const auto& s = pred_t->value.shape();
  if (s.size() != 3) throw std::invalid_argument("temporal_term: images must be [H, W, C]");
  int H = s[0], W = s[1], C = s[2];
  if (mask.ndim() != 2 || mask.dim(0) != H || mask.dim(1) != W)
    throw std::invalid_argument("temporal_term: mask must be [H, W]");

  long double valid = 0.0L;
  for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) valid += mask[p];
  if (valid == 0.0L) return ad::constant(Tensor({1}, 0.0));

  Tensor mask3({H, W, C});
  for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
    for (int c = 0; c < C; ++c) mask3[p * C + c] = mask[p];
  ad::Var masked = ad::mul(ad::abs(ad::sub(pred_t, warped_prev)), ad::constant(mask3));
  return ad::scale(ad::sum_all(masked), 1.0 / (static_cast<double>(valid) * C));
}

double l1_loss(const Tensor& pred, const Tensor& target) {
  return ad::scalar(l1_term(ad::constant(pred), ad::constant(target)));
}

double gradient_l1_loss(const Tensor& pred, const Tensor& target) {
  return ad::scalar(gradient_l1_term(ad::constant(pred), ad::constant(target)));
}

double ssim(const Tensor& pred, const Tensor& target, const LossWeights& w) {
  return ad::scalar(ssim_index(ad::constant(pred), ad::constant(target), w));
}

double ssim_loss(const Tensor& pred, const Tensor& target, const LossWeights& w) {
  return 1.0 - ssim(pred, target, w);
}

double temporal_loss(const Tensor& pred_t, const Tensor& prev, const Tensor& flow,
                     const Tensor& mask) {
  Tensor warped = flow::warp(prev, flow);
  return ad::scalar(temporal_term(ad::constant(pred_t), ad::constant(warped), mask));
}

LossBreakdown total_loss(const Tensor& pred, const Tensor& target,
                         const Tensor* prev, const Tensor* flow, const Tensor* mask,
                         const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  if (w.use_l1) b.l1 = l1_loss(pred, target);
  if (w.use_grad_l1) b.grad_l1 = gradient_l1_loss(pred, target);
  if (w.use_ssim) b.ssim_term = ssim_loss(pred, target, w);
  if (w.use_temporal) {
    if (!prev || !flow || !mask)
      throw std::invalid_argument("total_loss: temporal term enabled but prev/flow/mask absent");
    b.temporal = temporal_loss(pred, *prev, *flow, *mask);
  }
  b.total = w.lambda_R * (b.l1 + b.grad_l1 + b.ssim_term) + w.lambda_T * b.temporal;
  return b;
}

}  // namespace bvd::loss
