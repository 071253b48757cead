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

#include "bvd/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "bvd/flowwarp.hpp"
#include "bvd/png_io.hpp"
#include "bvd/rng.hpp"

namespace bvd::pipeline {

namespace fs = std::filesystem;

namespace {

// Stream tags keeping the shuffle, augmentation, and datagen seed spaces
// disjoint under Rng::mix.
constexpr uint64_t kShuffleTag = 0x73687566ULL;
constexpr uint64_t kAugmentTag = 0x6175676dULL;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor slice_frame(const Tensor& seq, int t) {
  const int H = seq.dim(1), W = seq.dim(2), C = seq.dim(3);
  Tensor out({H, W, C});
  std::memcpy(out.data(), seq.data() + static_cast<int64_t>(t) * H * W * C,
              static_cast<size_t>(H) * W * C * sizeof(double));
  return out;
}

void store_frame(Tensor& seq, int t, const Tensor& frame) {
  std::memcpy(seq.data() + frame.numel() * t, frame.data(),
              static_cast<size_t>(frame.numel()) * sizeof(double));
}

Tensor flip_flow(const Tensor& flow) {
  const int H = flow.dim(0), W = flow.dim(1);
  Tensor out({H, W, 2});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      out.at(y, x, 0) = -flow.at(y, W - 1 - x, 0);
      out.at(y, x, 1) = flow.at(y, W - 1 - x, 1);
    }
  return out;
}

Tensor flip_mask(const Tensor& mask) {
  const int H = mask.dim(0), W = mask.dim(1);
  Tensor out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) out.at(y, x) = mask.at(y, W - 1 - x);
  return out;
}

struct SequenceTransform {
  bool flip = false;
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;

  bool is_noop() const {
    return !flip && brightness == 0.0 && contrast == 1.0 && saturation == 1.0;
  }
  void apply_image(Tensor& img) const {
    if (flip) datagen::hflip_image(img);
    datagen::color_jitter(img, brightness, contrast, saturation);
  }
  void apply_video(Tensor& vid) const {
    if (flip) datagen::hflip_video(vid);
    datagen::color_jitter(vid, brightness, contrast, saturation);
  }
};

SequenceTransform draw_transform(Rng& rng, const datagen::SamplerConfig& scfg) {
  SequenceTransform tr;
  tr.flip = scfg.augment_flip && rng.bernoulli(0.5);
  tr.brightness = rng.uniform(-scfg.jitter.brightness, scfg.jitter.brightness);
  tr.contrast = rng.uniform(scfg.jitter.contrast_lo, scfg.jitter.contrast_hi);
  tr.saturation = rng.uniform(scfg.jitter.saturation_lo, scfg.jitter.saturation_hi);
  return tr;
}

std::vector<int> epoch_order(int n, uint64_t seed, int64_t epoch) {
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(Rng::mix(seed, kShuffleTag), static_cast<uint64_t>(epoch)));
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

// ---- checkpoint binary helpers ----

constexpr char kMagic[4] = {'B', 'V', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void put_pod(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof(v));
}

void get_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw std::runtime_error("corrupt checkpoint: unexpected end of file");
}
template <typename T>
T get_pod(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof(v));
  return v;
}
std::string get_string(std::istream& is, uint32_t len) {
  std::string s(len, '\0');
  if (len > 0) get_bytes(is, s.data(), len);
  return s;
}
Tensor get_tensor(std::istream& is) {
  const uint32_t ndim = get_pod<uint32_t>(is);
  if (ndim > 8) throw std::runtime_error("corrupt checkpoint: bad tensor rank");
  std::vector<int> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) {
    shape[i] = get_pod<int32_t>(is);
    if (shape[i] < 0) throw std::runtime_error("corrupt checkpoint: bad dimension");
  }
  Tensor t(shape);
  get_bytes(is, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
  return t;
}
void put_tensor(std::ostream& os, const Tensor& t) {
  put_pod<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_pod<int32_t>(os, t.dim(i));
  put_bytes(os, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
}

struct RawCheckpoint {
  model::ModelConfig cfg;
  int64_t step = 0;
  bool has_adam = false;
  int64_t adam_t = 0;
  std::vector<std::string> names;
  std::vector<Tensor> values;
  std::vector<Tensor> m, v;
};

RawCheckpoint read_raw_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("corrupt checkpoint: bad magic in " + path);
  if (get_pod<uint32_t>(is) != kVersion)
    throw std::runtime_error("corrupt checkpoint: unsupported version in " + path);

  RawCheckpoint raw;
  const uint64_t stored_hash = get_pod<uint64_t>(is);
  raw.step = get_pod<int64_t>(is);
  raw.has_adam = get_pod<uint8_t>(is) != 0;
  raw.adam_t = get_pod<int64_t>(is);
  const uint32_t cfg_len = get_pod<uint32_t>(is);
  raw.cfg = model::ModelConfig::deserialize(get_string(is, cfg_len));
  if (raw.cfg.hash() != stored_hash)
    throw std::runtime_error(
        "checkpoint config mismatch: stored hash disagrees with the config text in " + path);

  const uint32_t n = get_pod<uint32_t>(is);
  raw.names.reserve(n);
  raw.values.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t len = get_pod<uint32_t>(is);
    raw.names.push_back(get_string(is, len));
    raw.values.push_back(get_tensor(is));
  }
  if (raw.has_adam) {
    raw.m.reserve(n);
    raw.v.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      raw.m.push_back(get_tensor(is));
      raw.v.push_back(get_tensor(is));
    }
  }
  return raw;
}

void fill_from_raw(const RawCheckpoint& raw, model::BvdNet& net, AdamState* adam) {
  if (raw.cfg.hash() != net.config().hash())
    throw std::runtime_error("checkpoint config mismatch: archive was written for a different model config");
  auto& params = net.parameters();
  if (raw.names.size() != params.size())
    throw std::runtime_error("corrupt checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (raw.names[i] != params[i].name)
      throw std::runtime_error("corrupt checkpoint: parameter name mismatch at " + raw.names[i]);
    if (!raw.values[i].same_shape(params[i].var->value))
      throw std::runtime_error("corrupt checkpoint: parameter shape mismatch at " + raw.names[i]);
    params[i].var->value = raw.values[i];
  }
  if (adam != nullptr) {
    *adam = AdamState::init(net);
    if (raw.has_adam) {
      adam->t = raw.adam_t;
      for (size_t i = 0; i < params.size(); ++i) {
        if (!raw.m[i].same_shape(params[i].var->value) ||
            !raw.v[i].same_shape(params[i].var->value))
          throw std::runtime_error("corrupt checkpoint: moment shape mismatch at " + raw.names[i]);
        adam->m[i] = raw.m[i];
        adam->v[i] = raw.v[i];
      }
    }
  }
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: expected boolean 0/1, got '" + v + "'");
}
int64_t parse_i64(const std::string& v) {
  size_t pos = 0;
  const int64_t x = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("config: bad integer '" + v + "'");
  return x;
}
uint64_t parse_u64(const std::string& v) {
  size_t pos = 0;
  const uint64_t x = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("config: bad integer '" + v + "'");
  return x;
}
double parse_f64(const std::string& v) {
  size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("config: bad number '" + v + "'");
  return x;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0 || max_steps < 0)
    throw std::invalid_argument("TrainConfig: epochs and max_steps must be >= 0");
  if (epochs == 0 && max_steps == 0)
    throw std::invalid_argument("TrainConfig: either epochs or max_steps must bound the run");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw std::invalid_argument("TrainConfig: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be > 0");
  if (recurrence_steps < 1)
    throw std::invalid_argument("TrainConfig: recurrence_steps must be >= 1");
  if (checkpoint_every < 0)
    throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
  if (temporal_target != "ground_truth" && temporal_target != "previous_output")
    throw std::invalid_argument("TrainConfig: temporal_target must be ground_truth or previous_output");
  if (!ablation.empty()) {
    model::ModelConfig mc;
    loss::LossWeights lw;
    apply_ablation(ablation, mc, lw);  // throws on unknown names
  }
}

void InferenceConfig::validate() const {
  if (copy_threshold < 0.0 || copy_threshold >= 1.0)
    throw std::invalid_argument("InferenceConfig: copy_threshold must lie in [0, 1)");
}

void apply_ablation(const std::string& name, model::ModelConfig& mc,
                    loss::LossWeights& lw) {
  if (name.empty()) return;
  lw.use_l1 = true;
  lw.use_grad_l1 = false;
  lw.use_ssim = false;
  lw.use_temporal = false;
  mc.use_recurrence_stream = false;
  if (name == "exp1") {
    mc.variant = model::Variant::enc3d_dec3d;
  } else if (name == "exp2") {
    mc.variant = model::Variant::enc2d_dec2d;
  } else if (name == "exp3") {
    mc.variant = model::Variant::hybrid_3d2d;
  } else if (name == "exp4") {
    mc.variant = model::Variant::hybrid_3d2d;
    lw.use_grad_l1 = true;
  } else if (name == "exp5") {
    mc.variant = model::Variant::hybrid_3d2d;
    lw.use_grad_l1 = true;
    lw.use_ssim = true;
  } else if (name == "exp6") {
    mc.variant = model::Variant::hybrid_3d2d;
    mc.use_recurrence_stream = true;
    lw.use_grad_l1 = true;
    lw.use_ssim = true;
    lw.use_temporal = true;
  } else {
    throw std::invalid_argument("unknown ablation '" + name + "' (expected exp1..exp6)");
  }
}

std::string ablation_summary(const model::ModelConfig& mc, const loss::LossWeights& lw) {
  std::string losses;
  auto append = [&losses](const char* term) {
    if (!losses.empty()) losses += "+";
    losses += term;
  };
  if (lw.use_l1) append("l1");
  if (lw.use_grad_l1) append("grad_l1");
  if (lw.use_ssim) append("ssim");
  if (lw.use_temporal) append("temporal");
  if (losses.empty()) losses = "none";
  return "variant=" + model::variant_name(mc.variant) +
         " recurrence=" + (mc.use_recurrence_stream ? "on" : "off") +
         " losses=" + losses;
}

AdamState AdamState::init(const model::BvdNet& net) {
  AdamState s;
  s.m.reserve(net.parameters().size());
  s.v.reserve(net.parameters().size());
  for (const auto& p : net.parameters()) {
    s.m.push_back(Tensor::zeros(p.var->value.shape()));
    s.v.push_back(Tensor::zeros(p.var->value.shape()));
  }
  return s;
}

void AdamState::step(model::BvdNet& net, const TrainConfig& cfg) {
  auto& params = net.parameters();
  if (m.size() != params.size())
    throw std::invalid_argument("AdamState: state not initialized for this model");
  ++t;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i].var->value;
    Tensor& g = params[i].var->grad;
    const bool has_grad = g.numel() == w.numel();
    double* md = m[i].data();
    double* vd = v[i].data();
    double* wd = w.data();
    const double* gd = has_grad ? g.data() : nullptr;
    for (int64_t n = 0; n < w.numel(); ++n) {
      const double gi = gd != nullptr ? gd[n] : 0.0;
      md[n] = cfg.adam_beta1 * md[n] + (1.0 - cfg.adam_beta1) * gi;
      vd[n] = cfg.adam_beta2 * vd[n] + (1.0 - cfg.adam_beta2) * gi * gi;
      wd[n] -= cfg.learning_rate * (md[n] / c1) / (std::sqrt(vd[n] / c2) + cfg.adam_eps);
    }
    if (has_grad) g.fill(0.0);
  }
}

Tensor copy_back(const Tensor& input_frame, const Tensor& prediction, double threshold) {
  require_same_shape(input_frame, prediction, "copy_back");
  if (input_frame.ndim() != 3)
    throw std::invalid_argument("copy_back: expected [H, W, C] frames");
  const int H = input_frame.dim(0), W = input_frame.dim(1), C = input_frame.dim(2);
  Tensor out = prediction;
  const double* in = input_frame.data();
  double* od = out.data();
  for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
    const int64_t base = p * C;
    double maxd = 0.0;
    for (int c = 0; c < C; ++c)
      maxd = std::max(maxd, std::abs(in[base + c] - od[base + c]));
    if (maxd < threshold)
      for (int c = 0; c < C; ++c) od[base + c] = in[base + c];
  }
  return out;
}

Tensor infer_clip(const model::BvdNet& net, const Tensor& corrupted,
                  const InferenceConfig& cfg) {
  cfg.validate();
  if (corrupted.ndim() != 4)
    throw std::invalid_argument("infer_clip: expected [L, H, W, C] frames");
  const auto& mc = net.config();
  const int L = corrupted.dim(0), H = corrupted.dim(1), W = corrupted.dim(2),
            C = corrupted.dim(3);
  if (L < 1) throw std::invalid_argument("infer_clip: empty clip");
  if (C != mc.io_channels)
    throw std::invalid_argument("infer_clip: expected " + std::to_string(mc.io_channels) +
                                " channels, got " + std::to_string(C));
  const int f = mc.downsampling_factor();
  if (H % f != 0 || W % f != 0) {
    const int ph = (H + f - 1) / f * f, pw = (W + f - 1) / f * f;
    throw std::invalid_argument("infer_clip: frame size " + std::to_string(H) + "x" +
                                std::to_string(W) + " must be divisible by " +
                                std::to_string(f) + "; pad to " + std::to_string(ph) +
                                "x" + std::to_string(pw));
  }

  const int T = mc.window_length();
  const int64_t frame_n = static_cast<int64_t>(H) * W * C;
  Tensor restored({L, H, W, C});
  Tensor prev = slice_frame(corrupted, 0);
  if (cfg.emit_debug_features && !cfg.output_root.empty())
    fs::create_directories(cfg.output_root);
  for (int t = 0; t < L; ++t) {
    const std::vector<int> idx =
        datagen::window_indices(t, L, mc.temporal_radius, mc.sampling_stride);
    Tensor source({T, H, W, C});
    for (int k = 0; k < T; ++k)
      std::memcpy(source.data() + frame_n * k, corrupted.data() + frame_n * idx[k],
                  static_cast<size_t>(frame_n) * sizeof(double));
    model::WindowBatch wb;
    wb.source_frames = std::move(source);
    wb.prev_output = prev;
    wb.center_frame = slice_frame(corrupted, t);
    const model::ResidualOutput out = net.forward(wb);
    Tensor frame = copy_back(wb.center_frame, out.prediction, cfg.copy_threshold);
    store_frame(restored, t, frame);
    if (cfg.emit_debug_features && !cfg.output_root.empty()) {
      Tensor mag({H, W});
      for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
        double m = 0.0;
        for (int c = 0; c < C; ++c) m = std::max(m, std::abs(out.residual[p * C + c]));
        mag[p] = std::min(m, 1.0);
      }
      char name[64];
      std::snprintf(name, sizeof(name), "debug_residual_%05d.png", t);
      pngio::write_gray8((fs::path(cfg.output_root) / name).string(), mag);
    }
    prev = std::move(frame);
  }
  return restored;
}

void save_checkpoint(const model::BvdNet& net, const AdamState* adam, int64_t step,
                     const std::string& path) {
  const std::string cfg_text = net.config().serialize();
  const auto& params = net.parameters();
  if (adam != nullptr && adam->m.size() != params.size())
    throw std::invalid_argument("save_checkpoint: Adam state does not match the model");

  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + tmp);
    put_bytes(os, kMagic, 4);
    put_pod<uint32_t>(os, kVersion);
    put_pod<uint64_t>(os, net.config().hash());
    put_pod<int64_t>(os, step);
    put_pod<uint8_t>(os, adam != nullptr ? 1 : 0);
    put_pod<int64_t>(os, adam != nullptr ? adam->t : 0);
    put_pod<uint32_t>(os, static_cast<uint32_t>(cfg_text.size()));
    put_bytes(os, cfg_text.data(), cfg_text.size());
    put_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
      put_pod<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
      put_bytes(os, p.name.data(), p.name.size());
      put_tensor(os, p.var->value);
    }
    if (adam != nullptr)
      for (size_t i = 0; i < params.size(); ++i) {
        put_tensor(os, adam->m[i]);
        put_tensor(os, adam->v[i]);
      }
    if (!os) throw std::runtime_error("write failed for checkpoint: " + tmp);
  }
  fs::rename(tmp, path);
}

int64_t load_checkpoint_into(const std::string& path, model::BvdNet& net, AdamState* adam) {
  const RawCheckpoint raw = read_raw_checkpoint(path);
  fill_from_raw(raw, net, adam);
  return raw.step;
}

Checkpoint load_checkpoint(const std::string& path) {
  const RawCheckpoint raw = read_raw_checkpoint(path);
  Checkpoint ck{model::BvdNet::build(raw.cfg), AdamState{}, raw.has_adam, raw.step};
  fill_from_raw(raw, ck.net, &ck.adam);
  return ck;
}

namespace {

struct TemporalInputs {
  bool active = false;
  Tensor warped_prev;  // [H, W, C], already in the transformed sample space
  Tensor mask;         // [H, W]
};

// One unrolled training sequence: R consecutive windows of one clip sharing
// a single augmentation transform; feedback across steps is detached.
struct SequenceRunner {
  const datagen::ClipPair* clip = nullptr;
  const std::vector<Tensor>* masks = nullptr;  // per pair t-1, empty when unused
  SequenceTransform tr;
};

}  // namespace

TrainReport train(model::BvdNet& net, const std::vector<datagen::ClipPair>& clips,
                  const TrainConfig& cfg, const loss::LossWeights& weights,
                  const std::string& out_dir) {
  cfg.validate();
  weights.validate();
  if (net.is_identity())
    throw std::invalid_argument("train: the identity baseline has no parameters");
  if (clips.empty()) throw std::invalid_argument("train: no clips");

  const model::ModelConfig& mc = net.config();
  const int R = (mc.use_recurrence_stream || weights.use_temporal)
                    ? cfg.recurrence_steps
                    : 1;
  if (weights.use_temporal && cfg.temporal_target == "previous_output" && R < 2)
    throw std::invalid_argument(
        "train: temporal_target=previous_output needs recurrence_steps >= 2");

  datagen::SamplerConfig scfg;
  scfg.N = mc.temporal_radius;
  scfg.stride = mc.sampling_stride;
  scfg.augment_flip = true;

  // Sample space: every (clip, start) with the full unroll inside the clip.
  std::vector<std::pair<int, int>> samples;
  for (size_t ci = 0; ci < clips.size(); ++ci) {
    const int L = clips[ci].corrupted.dim(0);
    if (L < R)
      throw std::invalid_argument("train: clip " + std::to_string(ci) + " has " +
                                  std::to_string(L) + " frames, need >= " +
                                  std::to_string(R));
    for (int t0 = 0; t0 + R - 1 < L; ++t0)
      samples.emplace_back(static_cast<int>(ci), t0);
  }
  const int S = static_cast<int>(samples.size());
  const int64_t steps_per_epoch = (S + cfg.batch_size - 1) / cfg.batch_size;

  // Occlusion masks for the temporal term, one per consecutive pair.
  std::vector<std::vector<Tensor>> masks(clips.size());
  if (weights.use_temporal)
    for (size_t ci = 0; ci < clips.size(); ++ci) {
      const auto& fl = clips[ci].flows;
      masks[ci].reserve(fl.size());
      for (const auto& pair : fl)
        masks[ci].push_back(flow::occlusion_mask(pair.second, pair.first));
    }

  AdamState adam = AdamState::init(net);
  int64_t step = 0;
  if (!cfg.resume_from.empty()) step = load_checkpoint_into(cfg.resume_from, net, &adam);

  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "loss_log.csv").string();
  std::ofstream log(log_path, cfg.resume_from.empty()
                                  ? (std::ios::out | std::ios::trunc)
                                  : (std::ios::out | std::ios::app));
  if (!log) throw std::runtime_error("cannot write loss log: " + log_path);
  if (cfg.resume_from.empty()) log << "step,l1,grad_l1,ssim_term,temporal,total\n";

  TrainReport report;
  bool hit_step_cap = step >= cfg.max_steps && cfg.max_steps > 0;
  while (!hit_step_cap) {
    const int64_t epoch = step / steps_per_epoch;
    if (cfg.epochs > 0 && epoch >= cfg.epochs) break;
    const std::vector<int> order = epoch_order(S, cfg.seed, epoch);
    for (int64_t b = step % steps_per_epoch; b < steps_per_epoch; ++b) {
      const int64_t lo = b * cfg.batch_size;
      const int64_t hi = std::min<int64_t>(lo + cfg.batch_size, S);
      const int batch_n = static_cast<int>(hi - lo);
      Rng batch_rng(Rng::mix(Rng::mix(cfg.seed, kAugmentTag), static_cast<uint64_t>(step)));

      loss::LossBreakdown bd;
      for (int64_t si = lo; si < hi; ++si) {
        const auto [ci, t0] = samples[static_cast<size_t>(order[static_cast<size_t>(si)])];
        const datagen::ClipPair& clip = clips[static_cast<size_t>(ci)];
        SequenceTransform tr;
        if (cfg.augment) tr = draw_transform(batch_rng, scfg);

        Tensor prev_val;  // detached feedback, transformed space
        ad::Var seq_total;
        for (int k = 0; k < R; ++k) {
          const int t = t0 + k;
          model::WindowBatch wb =
              datagen::sample_window(clip, t, scfg, k == 0 ? nullptr : &prev_val);
          if (!tr.is_noop()) {
            tr.apply_video(wb.source_frames);
            tr.apply_image(wb.center_frame);
            tr.apply_image(wb.target_frame);
            if (k == 0) tr.apply_image(wb.prev_output);
          }

          TemporalInputs ti;
          if (weights.use_temporal && t >= 1 &&
              (cfg.temporal_target == "ground_truth" || k >= 1)) {
            Tensor flow_bwd = clip.flows[static_cast<size_t>(t - 1)].second;
            ti.mask = masks[static_cast<size_t>(ci)][static_cast<size_t>(t - 1)];
            if (tr.flip) {
              flow_bwd = flip_flow(flow_bwd);
              ti.mask = flip_mask(ti.mask);
            }
            Tensor prev_img;
            if (cfg.temporal_target == "ground_truth") {
              prev_img = slice_frame(clip.clean, t - 1);
              if (!tr.is_noop()) tr.apply_image(prev_img);
            } else {
              prev_img = prev_val;
            }
            ti.warped_prev = flow::warp(prev_img, flow_bwd);
            ti.active = true;
          }

          const model::ForwardGraph g = net.forward_graph(wb.source_frames, wb.prev_output);
          const ad::Var target = ad::constant(wb.target_frame);
          ad::Var recon;
          auto add_term = [&recon](const ad::Var& term) {
            recon = recon == nullptr ? term : ad::add(recon, term);
          };
          if (weights.use_l1) {
            const ad::Var term = loss::l1_term(g.prediction, target);
            bd.l1 += ad::scalar(term) / batch_n;
            add_term(term);
          }
          if (weights.use_grad_l1) {
            const ad::Var term = loss::gradient_l1_term(g.prediction, target);
            bd.grad_l1 += ad::scalar(term) / batch_n;
            add_term(term);
          }
          if (weights.use_ssim) {
            const ad::Var term = loss::ssim_term(g.prediction, target, weights);
            bd.ssim_term += ad::scalar(term) / batch_n;
            add_term(term);
          }
          ad::Var step_loss = recon == nullptr ? nullptr : ad::scale(recon, weights.lambda_R);
          if (ti.active) {
            const ad::Var term =
                loss::temporal_term(g.prediction, ad::constant(ti.warped_prev), ti.mask);
            bd.temporal += ad::scalar(term) / batch_n;
            const ad::Var weighted = ad::scale(term, weights.lambda_T);
            step_loss = step_loss == nullptr ? weighted : ad::add(step_loss, weighted);
          }
          if (step_loss != nullptr)
            seq_total = seq_total == nullptr ? step_loss : ad::add(seq_total, step_loss);
          prev_val = g.prediction->value;
        }
        if (seq_total != nullptr) ad::backward(ad::scale(seq_total, 1.0 / batch_n));
      }
      bd.total = weights.lambda_R * (bd.l1 + bd.grad_l1 + bd.ssim_term) +
                 weights.lambda_T * bd.temporal;
      if (!std::isfinite(bd.total))
        throw std::runtime_error("train: loss diverged to a non-finite value at step " +
                                 std::to_string(step + 1));

      adam.step(net, cfg);
      ++step;
      log << step << ',' << fmt_double(bd.l1) << ',' << fmt_double(bd.grad_l1) << ','
          << fmt_double(bd.ssim_term) << ',' << fmt_double(bd.temporal) << ','
          << fmt_double(bd.total) << '\n';
      log.flush();
      report.last = bd;
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_%06" PRId64 ".bvck", step);
        save_checkpoint(net, &adam, step, (fs::path(out_dir) / name).string());
      }
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        hit_step_cap = true;
        break;
      }
    }
  }

  report.steps = step;
  report.loss_log_path = log_path;
  report.checkpoint_path = (fs::path(out_dir) / "checkpoint_final.bvck").string();
  save_checkpoint(net, &adam, step, report.checkpoint_path);
  return report;
}

TrainReport train(model::BvdNet& net, const datagen::CorpusManifest& corpus,
                  const TrainConfig& cfg, const loss::LossWeights& weights,
                  const std::string& out_dir) {
  std::vector<datagen::ClipPair> clips;
  clips.reserve(corpus.entries.size());
  for (size_t i = 0; i < corpus.entries.size(); ++i)
    clips.push_back(datagen::load_clip(corpus, static_cast<int>(i)));
  return train(net, clips, cfg, weights, out_dir);
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config: empty key in '" + line + "'");
    kv[key] = value;
  }
  return kv;
}

void apply_config_key(const std::string& key, const std::string& value,
                      model::ModelConfig& mc, TrainConfig& tc, loss::LossWeights& lw) {
  // Model keys mirror ModelConfig::serialize.
  if (key == "temporal_radius") {
    mc.temporal_radius = static_cast<int>(parse_i64(value));
  } else if (key == "sampling_stride") {
    mc.sampling_stride = static_cast<int>(parse_i64(value));
  } else if (key == "base_channels") {
    mc.base_channels = static_cast<int>(parse_i64(value));
  } else if (key == "encoder_depth") {
    mc.encoder_depth = static_cast<int>(parse_i64(value));
  } else if (key == "bottleneck_dilations") {
    std::vector<int> dil;
    size_t pos = 0;
    while (pos <= value.size()) {
      const size_t comma = value.find(',', pos);
      const std::string item =
          value.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      dil.push_back(static_cast<int>(parse_i64(trim(item))));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    mc.bottleneck_dilations = dil;
  } else if (key == "use_recurrence_stream") {
    mc.use_recurrence_stream = parse_bool(value);
  } else if (key == "variant") {
    mc.variant = model::variant_from_name(value);
  } else if (key == "io_channels") {
    mc.io_channels = static_cast<int>(parse_i64(value));
  } else if (key == "init_seed") {
    mc.init_seed = parse_u64(value);
  } else if (key == "epochs") {
    tc.epochs = parse_i64(value);
  } else if (key == "max_steps") {
    tc.max_steps = parse_i64(value);
  } else if (key == "batch_size") {
    tc.batch_size = static_cast<int>(parse_i64(value));
  } else if (key == "learning_rate") {
    tc.learning_rate = parse_f64(value);
  } else if (key == "adam_beta1") {
    tc.adam_beta1 = parse_f64(value);
  } else if (key == "adam_beta2") {
    tc.adam_beta2 = parse_f64(value);
  } else if (key == "adam_eps") {
    tc.adam_eps = parse_f64(value);
  } else if (key == "recurrence_steps") {
    tc.recurrence_steps = static_cast<int>(parse_i64(value));
  } else if (key == "seed") {
    tc.seed = parse_u64(value);
  } else if (key == "checkpoint_every") {
    tc.checkpoint_every = parse_i64(value);
  } else if (key == "ablation") {
    tc.ablation = value;
  } else if (key == "augment") {
    tc.augment = parse_bool(value);
  } else if (key == "temporal_target") {
    tc.temporal_target = value;
  } else if (key == "resume_from") {
    tc.resume_from = value;
  } else if (key == "lambda_r") {
    lw.lambda_R = parse_f64(value);
  } else if (key == "lambda_t") {
    lw.lambda_T = parse_f64(value);
  } else if (key == "ssim_window") {
    lw.ssim_window = static_cast<int>(parse_i64(value));
  } else if (key == "use_l1") {
    lw.use_l1 = parse_bool(value);
  } else if (key == "use_grad_l1") {
    lw.use_grad_l1 = parse_bool(value);
  } else if (key == "use_ssim") {
    lw.use_ssim = parse_bool(value);
  } else if (key == "use_temporal") {
    lw.use_temporal = parse_bool(value);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

}  // namespace bvd::pipeline
