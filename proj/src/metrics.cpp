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

#include "bvd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "bvd/flowwarp.hpp"
#include "bvd/losses.hpp"

#include "json.hpp"

namespace bvd::metrics {

namespace {

double psnr_of_mse(double m) {
  return m < kPsnrMseFloor ? kPsnrCapDb : -10.0 * std::log10(m);
}

double frame_mse(const double* a, const double* b, int64_t n) {
  long double acc = 0.0L;
  for (int64_t i = 0; i < n; ++i) {
    const long double d = a[i] - b[i];
    acc += d * d;
  }
  return static_cast<double>(acc / static_cast<long double>(n));
}

void require_frames(const Tensor& pred, const Tensor& target, const char* where) {
  require_same_shape(pred, target, where);
  if (pred.ndim() != 4)
    throw std::invalid_argument(std::string(where) + ": expected [L, H, W, C] frames");
  if (pred.dim(0) < 1) throw std::invalid_argument(std::string(where) + ": empty sequence");
}

Tensor slice_frame(const Tensor& seq, int t) {
  const int H = seq.dim(1), W = seq.dim(2), C = seq.dim(3);
  Tensor out({H, W, C});
  std::memcpy(out.data(), seq.data() + static_cast<int64_t>(t) * H * W * C,
              static_cast<size_t>(H) * W * C * sizeof(double));
  return out;
}

std::string hash_hex(uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

double mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  if (pred.numel() == 0) throw std::invalid_argument("mse: empty input");
  return frame_mse(pred.data(), target.data(), pred.numel());
}

double psnr(const Tensor& pred, const Tensor& target) {
  require_frames(pred, target, "psnr");
  const int L = pred.dim(0);
  const int64_t n = pred.numel() / L;
  long double acc = 0.0L;
  for (int t = 0; t < L; ++t)
    acc += psnr_of_mse(frame_mse(pred.data() + n * t, target.data() + n * t, n));
  return static_cast<double>(acc / L);
}

double psnr_pooled(const Tensor& pred, const Tensor& target) {
  require_frames(pred, target, "psnr_pooled");
  return psnr_of_mse(mse(pred, target));
}

double dssim(const Tensor& pred, const Tensor& target) {
  require_frames(pred, target, "dssim");
  const loss::LossWeights w;
  const int L = pred.dim(0);
  long double acc = 0.0L;
  for (int t = 0; t < L; ++t)
    acc += (1.0 - loss::ssim(slice_frame(pred, t), slice_frame(target, t), w)) / 2.0;
  return static_cast<double>(acc / L);
}

double temporal_error(const Tensor& frames, const std::vector<Tensor>& flows,
                      const std::vector<Tensor>& masks) {
  if (frames.ndim() != 4)
    throw std::invalid_argument("temporal_error: expected [L, H, W, C] frames");
  const int L = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  if (L < 2) throw std::invalid_argument("temporal_error: need at least two frames");
  if (static_cast<int>(flows.size()) != L - 1 || static_cast<int>(masks.size()) != L - 1)
    throw std::invalid_argument("temporal_error: need one flow and mask per consecutive pair");

  long double acc = 0.0L;
  for (int t = 1; t < L; ++t) {
    flow::require_flow(flows[static_cast<size_t>(t - 1)], H, W, "temporal_error");
    const Tensor& mask = masks[static_cast<size_t>(t - 1)];
    if (mask.ndim() != 2 || mask.dim(0) != H || mask.dim(1) != W)
      throw std::invalid_argument("temporal_error: mask shape mismatch");
    const Tensor warped =
        flow::warp(slice_frame(frames, t - 1), flows[static_cast<size_t>(t - 1)]);
    const Tensor cur = slice_frame(frames, t);
    long double sum = 0.0L;
    int64_t valid = 0;
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
      if (mask[p] == 0.0) continue;
      long double d2 = 0.0L;
      for (int c = 0; c < C; ++c) {
        const long double d = cur[p * C + c] - warped[p * C + c];
        d2 += d * d;
      }
      sum += std::sqrt(static_cast<double>(d2));
      ++valid;
    }
    acc += valid > 0 ? sum / static_cast<long double>(valid) : 0.0L;
  }
  return static_cast<double>(acc / (L - 1));
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["aggregate"] = {{"mse", aggregate.mse},
                    {"psnr_db", aggregate.psnr_db},
                    {"psnr_pooled_db", aggregate.psnr_pooled_db},
                    {"dssim", aggregate.dssim},
                    {"temporal_error", aggregate.temporal_error}};
  j["meta"] = {{"config_hash", hash_hex(meta.config_hash)},
               {"checkpoint_step", meta.checkpoint_step},
               {"frame_count", meta.frame_count},
               {"param_count", meta.param_count}};
  j["per_clip"] = nlohmann::json::array();
  for (const auto& c : per_clip)
    j["per_clip"].push_back({{"clip_id", c.clip_id},
                             {"mse", c.mse},
                             {"psnr_db", c.psnr_db},
                             {"dssim", c.dssim},
                             {"temporal_error", c.temporal_error}});
  return j.dump(2) + "\n";
}

EvalReport evaluate(const model::BvdNet& net,
                    const std::vector<datagen::ClipPair>& clips,
                    const pipeline::InferenceConfig& cfg, int64_t checkpoint_step) {
  if (clips.empty()) throw std::invalid_argument("evaluate: no clips");
  EvalReport report;
  report.meta.config_hash = net.config().hash();
  report.meta.checkpoint_step = checkpoint_step;
  report.meta.param_count = net.count_parameters();

  long double pooled_sq = 0.0L;
  int64_t pooled_n = 0;
  for (size_t ci = 0; ci < clips.size(); ++ci) {
    const datagen::ClipPair& clip = clips[ci];
    const Tensor restored = pipeline::infer_clip(net, clip.corrupted, cfg);
    const int L = restored.dim(0);

    ClipScore score;
    score.clip_id = static_cast<int>(ci);
    score.mse = mse(restored, clip.clean);
    score.psnr_db = psnr(restored, clip.clean);
    score.dssim = dssim(restored, clip.clean);
    if (L >= 2) {
      std::vector<Tensor> flows, masks;
      flows.reserve(clip.flows.size());
      masks.reserve(clip.flows.size());
      for (const auto& pair : clip.flows) {
        flows.push_back(pair.second);
        masks.push_back(flow::occlusion_mask(pair.second, pair.first));
      }
      score.temporal_error = temporal_error(restored, flows, masks);
    }
    report.per_clip.push_back(score);

    const int64_t n = restored.numel();
    const double m = score.mse;
    pooled_sq += static_cast<long double>(m) * n;
    pooled_n += n;
    report.meta.frame_count += L;
  }

  const auto k = static_cast<double>(report.per_clip.size());
  for (const auto& c : report.per_clip) {
    report.aggregate.mse += c.mse;
    report.aggregate.psnr_db += c.psnr_db;
    report.aggregate.dssim += c.dssim;
    report.aggregate.temporal_error += c.temporal_error;
  }
  report.aggregate.mse /= k;
  report.aggregate.psnr_db /= k;
  report.aggregate.dssim /= k;
  report.aggregate.temporal_error /= k;
  report.aggregate.psnr_pooled_db =
      psnr_of_mse(static_cast<double>(pooled_sq / static_cast<long double>(pooled_n)));
  return report;
}

EvalReport evaluate(const model::BvdNet& net, const datagen::CorpusManifest& corpus,
                    const pipeline::InferenceConfig& cfg, int64_t checkpoint_step) {
  std::vector<datagen::ClipPair> clips;
  clips.reserve(corpus.entries.size());
  for (size_t i = 0; i < corpus.entries.size(); ++i)
    clips.push_back(datagen::load_clip(corpus, static_cast<int>(i)));
  return evaluate(net, clips, cfg, checkpoint_step);
}

}  // namespace bvd::metrics
