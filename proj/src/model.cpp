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

#include "bvd/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bvd::model {

namespace {

constexpr double kLeakySlope = 0.2;

// [T, H, W, C] -> [C, T, H, W]
Tensor to_cthw(const Tensor& src) {
  int T = src.dim(0), H = src.dim(1), W = src.dim(2), C = src.dim(3);
  Tensor out({C, T, H, W});
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c)
          out.at(c, t, y, x) = src.at(t, y, x, c);
  return out;
}

// [H, W, C] -> [C, H, W]
Tensor to_chw(const Tensor& img) {
  int H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Tensor out({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) out.at(c, y, x) = img.at(y, x, c);
  return out;
}

Tensor slice_frame(const Tensor& src, int t) {
  int H = src.dim(1), W = src.dim(2), C = src.dim(3);
  Tensor out({H, W, C});
  const double* p = src.data() + static_cast<int64_t>(t) * H * W * C;
  std::copy(p, p + out.numel(), out.data());
  return out;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::hybrid_3d2d: return "hybrid_3d2d";
    case Variant::enc3d_dec3d: return "enc3d_dec3d";
    case Variant::enc2d_dec2d: return "enc2d_dec2d";
  }
  throw std::invalid_argument("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "hybrid_3d2d") return Variant::hybrid_3d2d;
  if (name == "enc3d_dec3d") return Variant::enc3d_dec3d;
  if (name == "enc2d_dec2d") return Variant::enc2d_dec2d;
  throw std::invalid_argument("unknown model variant: " + name);
}

void ModelConfig::validate() const {
  if (temporal_radius < 1) throw std::invalid_argument("ModelConfig: temporal_radius must be >= 1");
  if (sampling_stride < 1) throw std::invalid_argument("ModelConfig: sampling_stride must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
  if (encoder_depth != 2)
    throw std::invalid_argument("ModelConfig: this layer schedule supports encoder_depth == 2 only");
  if (bottleneck_dilations.empty())
    throw std::invalid_argument("ModelConfig: bottleneck_dilations must be non-empty");
  for (int d : bottleneck_dilations)
    if (d < 1) throw std::invalid_argument("ModelConfig: dilations must be positive");
  if (io_channels < 1) throw std::invalid_argument("ModelConfig: io_channels must be >= 1");
  if (use_recurrence_stream && variant != Variant::hybrid_3d2d)
    throw std::invalid_argument("ModelConfig: only hybrid_3d2d supports the recurrence stream");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "base_channels=" << base_channels << "\n";
  os << "bottleneck_dilations=";
  for (size_t i = 0; i < bottleneck_dilations.size(); ++i)
    os << (i ? "," : "") << bottleneck_dilations[i];
  os << "\n";
  os << "encoder_depth=" << encoder_depth << "\n";
  os << "init_seed=" << init_seed << "\n";
  os << "io_channels=" << io_channels << "\n";
  os << "sampling_stride=" << sampling_stride << "\n";
  os << "temporal_radius=" << temporal_radius << "\n";
  os << "use_recurrence_stream=" << (use_recurrence_stream ? 1 : 0) << "\n";
  os << "variant=" << variant_name(variant) << "\n";
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig cfg;
  cfg.bottleneck_dilations.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("ModelConfig: bad line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "base_channels") cfg.base_channels = std::stoi(val);
    else if (key == "bottleneck_dilations") {
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ',')) cfg.bottleneck_dilations.push_back(std::stoi(tok));
    } else if (key == "encoder_depth") cfg.encoder_depth = std::stoi(val);
    else if (key == "init_seed") cfg.init_seed = std::stoull(val);
    else if (key == "io_channels") cfg.io_channels = std::stoi(val);
    else if (key == "sampling_stride") cfg.sampling_stride = std::stoi(val);
    else if (key == "temporal_radius") cfg.temporal_radius = std::stoi(val);
    else if (key == "use_recurrence_stream") cfg.use_recurrence_stream = (val == "1" || val == "true");
    else if (key == "variant") cfg.variant = variant_from_name(val);
    else throw std::invalid_argument("ModelConfig: unknown key '" + key + "'");
  }
  if (cfg.bottleneck_dilations.empty()) cfg.bottleneck_dilations = {2, 4, 8, 16};
  cfg.validate();
  return cfg;
}

uint64_t ModelConfig::hash() const { return fnv1a(serialize()); }

ModelConfig ModelConfig::desk_scale() {
  ModelConfig cfg;
  cfg.base_channels = 16;
  return cfg;
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.base_channels = 75;
  return cfg;
}

int64_t BvdNet::conv_parameter_count(int cout, int cin, int kt, int kh, int kw, bool bias) {
  return static_cast<int64_t>(cout) * cin * kt * kh * kw + (bias ? cout : 0);
}

BvdNet::Conv BvdNet::make_conv3d(const std::string& name, int cout, int cin, int kt,
                                 int kh, int kw, const ad::ConvGeom& g, Rng& rng) {
  Conv c;
  c.name = name;
  c.geom = g;
  c.geom.kt = kt;
  c.geom.kh = kh;
  c.geom.kw = kw;
  c.is3d = true;
  Tensor w({cout, cin, kt, kh, kw});
  double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kt * kh * kw);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  c.w = ad::leaf(std::move(w));
  c.b = ad::leaf(Tensor({cout}, 0.0));
  params_.push_back({name + ".w", c.w});
  params_.push_back({name + ".b", c.b});
  return c;
}

BvdNet::Conv BvdNet::make_conv2d(const std::string& name, int cout, int cin, int kh,
                                 int kw, const ad::ConvGeom& g, Rng& rng) {
  Conv c;
  c.name = name;
  c.geom = g;
  c.geom.kt = 1;
  c.geom.kh = kh;
  c.geom.kw = kw;
  c.is3d = false;
  Tensor w({cout, cin, kh, kw});
  double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kh * kw);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  c.w = ad::leaf(std::move(w));
  c.b = ad::leaf(Tensor({cout}, 0.0));
  params_.push_back({name + ".w", c.w});
  params_.push_back({name + ".b", c.b});
  return c;
}

BvdNet BvdNet::identity(const ModelConfig& cfg) {
  cfg.validate();
  BvdNet net;
  net.cfg_ = cfg;
  net.identity_ = true;
  return net;
}

BvdNet BvdNet::build(const ModelConfig& cfg) {
  cfg.validate();
  BvdNet net;
  net.cfg_ = cfg;
  Rng rng(cfg.init_seed);

  const int B = cfg.base_channels;
  const int C = cfg.io_channels;
  const int T = cfg.window_length();

  ad::ConvGeom same2d;  // 3x3, spatial pad 1
  ad::ConvGeom down2d = same2d;
  down2d.sy = down2d.sx = 2;

  if (cfg.variant == Variant::enc2d_dec2d) {
    // 2D encoder over the center frame only.
    net.agg_.push_back(net.make_conv2d("enc.c0", B, C, 3, 3, same2d, rng));
    net.agg_.push_back(net.make_conv2d("enc.d1", 2 * B, B, 3, 3, down2d, rng));
    net.agg_.push_back(net.make_conv2d("enc.k1", 2 * B, 2 * B, 3, 3, same2d, rng));
    net.agg_.push_back(net.make_conv2d("enc.d2", 4 * B, 2 * B, 3, 3, down2d, rng));
    net.agg_.push_back(net.make_conv2d("enc.tail", 4 * B, 4 * B, 3, 3, same2d, rng));
  } else if (cfg.variant == Variant::enc3d_dec3d) {
    // Temporal-preserving 3D encoder; T stays constant until the head.
    ad::ConvGeom s3 = same2d;
    s3.pt = 1;
    ad::ConvGeom d3 = down2d;
    d3.pt = 1;
    net.agg_.push_back(net.make_conv3d("enc.stem", B, C, 3, 3, 3, s3, rng));
    net.agg_.push_back(net.make_conv3d("enc.d1", 2 * B, B, 3, 3, 3, d3, rng));
    net.agg_.push_back(net.make_conv3d("enc.k1", 2 * B, 2 * B, 3, 3, 3, s3, rng));
    net.agg_.push_back(net.make_conv3d("enc.d2", 4 * B, 2 * B, 3, 3, 3, d3, rng));
    ad::ConvGeom p3 = same2d;  // kt = 1
    net.agg_.push_back(net.make_conv3d("enc.tail", 4 * B, 4 * B, 1, 3, 3, p3, rng));
  } else {
    // 3D aggregation stream: temporal extent T -> max(T-2,1) -> ... -> 1.
    int t = T;
    ad::ConvGeom stem3 = same2d;
    stem3.pt = 1;
    net.agg_.push_back(net.make_conv3d("agg.stem", B, C, 3, 3, 3, stem3, rng));
    ad::ConvGeom d1 = down2d;  // temporal-valid
    net.agg_.push_back(net.make_conv3d("agg.down1", 2 * B, B, std::min(3, t), 3, 3, d1, rng));
    t = t - std::min(3, t) + 1;
    const int t_level1 = t;
    ad::ConvGeom k1 = same2d;
    k1.pt = 1;
    net.agg_.push_back(net.make_conv3d("agg.keep1", 2 * B, 2 * B, 3, 3, 3, k1, rng));
    ad::ConvGeom d2 = down2d;
    net.agg_.push_back(net.make_conv3d("agg.down2", 4 * B, 2 * B, std::min(3, t), 3, 3, d2, rng));
    t = t - std::min(3, t) + 1;
    int extra = 0;
    while (t > 1) {
      // Long windows (N > 2) need additional temporal-valid reducers.
      ad::ConvGeom r3 = same2d;
      net.agg_.push_back(net.make_conv3d("agg.reduce" + std::to_string(extra++), 4 * B,
                                         4 * B, std::min(3, t), 3, 3, r3, rng));
      t = t - std::min(3, t) + 1;
    }
    ad::ConvGeom tail3 = same2d;
    net.agg_.push_back(net.make_conv3d("agg.tail", 4 * B, 4 * B, 1, 3, 3, tail3, rng));

    if (cfg.use_recurrence_stream) {
      net.rec_.push_back(net.make_conv2d("rec.c0", B, C, 3, 3, same2d, rng));
      net.rec_.push_back(net.make_conv2d("rec.d1", 2 * B, B, 3, 3, down2d, rng));
      net.rec_.push_back(net.make_conv2d("rec.k1", 2 * B, 2 * B, 3, 3, same2d, rng));
      net.rec_.push_back(net.make_conv2d("rec.d2", 4 * B, 2 * B, 3, 3, down2d, rng));
      net.rec_.push_back(net.make_conv2d("rec.tail", 4 * B, 4 * B, 3, 3, same2d, rng));
    }

    // Skip features pooled to temporal extent 1 before entering the decoder.
    ad::ConvGeom sk1 = same2d;
    net.skips_.push_back(net.make_conv3d("skip.l1", 2 * B, 2 * B, t_level1, 3, 3, sk1, rng));
    ad::ConvGeom sk0 = same2d;
    net.skips_.push_back(net.make_conv3d("skip.l0", B, B, T, 3, 3, sk0, rng));
  }

  // Bottleneck: dilated 3x3 chain at the deepest resolution. 2D everywhere
  // except the all-3D variant, which carries T through it.
  for (size_t i = 0; i < cfg.bottleneck_dilations.size(); ++i) {
    int d = cfg.bottleneck_dilations[i];
    ad::ConvGeom g;
    g.dy = g.dx = d;
    g.py = g.px = d;
    std::string name = "bott.c" + std::to_string(i);
    if (cfg.variant == Variant::enc3d_dec3d)
      net.bott_.push_back(net.make_conv3d(name, 4 * B, 4 * B, 1, 3, 3, g, rng));
    else
      net.bott_.push_back(net.make_conv2d(name, 4 * B, 4 * B, 3, 3, g, rng));
  }

  if (cfg.variant == Variant::enc3d_dec3d) {
    ad::ConvGeom s3 = same2d;
    s3.pt = 1;
    net.dec_.push_back(net.make_conv3d("dec.b2", 4 * B, 4 * B, 3, 3, 3, s3, rng));
    net.dec_.push_back(net.make_conv3d("dec.c2", 2 * B, 4 * B, 3, 3, 3, s3, rng));
    net.dec_.push_back(net.make_conv3d("dec.b1", 2 * B, 4 * B, 3, 3, 3, s3, rng));
    net.dec_.push_back(net.make_conv3d("dec.c1", B, 2 * B, 3, 3, 3, s3, rng));
    net.dec_.push_back(net.make_conv3d("dec.b0", B, 2 * B, 3, 3, 3, s3, rng));
    net.dec_.push_back(net.make_conv3d("dec.c0", B, B, 3, 3, 3, s3, rng));
    ad::ConvGeom head3 = same2d;  // temporal-valid pooling head
    net.dec_.push_back(net.make_conv3d("dec.head", C, B, T, 3, 3, head3, rng));
  } else {
    net.dec_.push_back(net.make_conv2d("dec.b2", 4 * B, 4 * B, 3, 3, same2d, rng));
    net.dec_.push_back(net.make_conv2d("dec.c2", 2 * B, 4 * B, 3, 3, same2d, rng));
    net.dec_.push_back(net.make_conv2d("dec.b1", 2 * B, 4 * B, 3, 3, same2d, rng));
    net.dec_.push_back(net.make_conv2d("dec.c1", B, 2 * B, 3, 3, same2d, rng));
    net.dec_.push_back(net.make_conv2d("dec.b0", B, 2 * B, 3, 3, same2d, rng));
    net.dec_.push_back(net.make_conv2d("dec.c0", B, B, 3, 3, same2d, rng));
    net.dec_.push_back(net.make_conv2d("dec.head", C, B, 3, 3, same2d, rng));
  }
  return net;
}

int64_t BvdNet::count_parameters() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.var->value.numel();
  return n;
}

void BvdNet::check_input(const Tensor& source, const Tensor& prev) const {
  const auto& ss = source.shape();
  if (ss.size() != 4)
    throw std::invalid_argument("forward: source_frames must be [T, H, W, C], got " +
                                Tensor::shape_str(ss));
  if (ss[0] != cfg_.window_length())
    throw std::invalid_argument("forward: window length " + std::to_string(ss[0]) +
                                " does not match T = " + std::to_string(cfg_.window_length()));
  if (ss[3] != cfg_.io_channels)
    throw std::invalid_argument("forward: channel count mismatch");
  int f = cfg_.downsampling_factor();
  if (ss[1] % f != 0 || ss[2] % f != 0)
    throw std::invalid_argument("forward: H and W must be divisible by " + std::to_string(f) +
                                ", got " + std::to_string(ss[1]) + "x" + std::to_string(ss[2]));
  const auto& ps = prev.shape();
  if (ps.size() != 3 || ps[0] != ss[1] || ps[1] != ss[2] || ps[2] != ss[3])
    throw std::invalid_argument("forward: prev_output shape " + Tensor::shape_str(ps) +
                                " does not match source frames " + Tensor::shape_str(ss));
}

ForwardGraph BvdNet::forward_graph(const Tensor& source_frames, const Tensor& prev_output) const {
  check_input(source_frames, prev_output);
  const int N = cfg_.temporal_radius;
  Tensor center = slice_frame(source_frames, N);

  if (identity_) {
    ad::Var zero = ad::constant(Tensor(center.shape(), 0.0));
    ad::Var pred = ad::clamp01(ad::add(ad::constant(center), zero));
    return {zero, pred};
  }

  auto act = [](const ad::Var& v) { return ad::leaky_relu(v, kLeakySlope); };
  auto run = [&act](const Conv& c, const ad::Var& x, bool linear = false) {
    ad::Var y = c.is3d ? ad::conv3d(x, c.w, c.b, c.geom) : ad::conv2d(x, c.w, c.b, c.geom);
    return linear ? y : act(y);
  };

  ad::Var feat;          // deepest encoder feature entering the bottleneck
  ad::Var skip1, skip0;  // decoder skip inputs

  if (cfg_.variant == Variant::enc2d_dec2d) {
    ad::Var x = ad::constant(to_chw(center));
    ad::Var e0 = run(agg_[0], x);
    ad::Var e1 = run(agg_[1], e0);
    ad::Var e1k = run(agg_[2], e1);
    ad::Var e2 = run(agg_[3], e1k);
    feat = run(agg_[4], e2);
    skip1 = e1k;
    skip0 = e0;
  } else if (cfg_.variant == Variant::enc3d_dec3d) {
    ad::Var x = ad::constant(to_cthw(source_frames));
    ad::Var e0 = run(agg_[0], x);
    ad::Var e1 = run(agg_[1], e0);
    ad::Var e1k = run(agg_[2], e1);
    ad::Var e2 = run(agg_[3], e1k);
    feat = run(agg_[4], e2);
    skip1 = e1k;
    skip0 = e0;
  } else {
    ad::Var x = ad::constant(to_cthw(source_frames));
    ad::Var e0 = run(agg_[0], x);
    ad::Var cur = run(agg_[1], e0);
    ad::Var e1k = run(agg_[2], cur);
    cur = e1k;
    for (size_t i = 3; i < agg_.size(); ++i) cur = run(agg_[i], cur);
    // cur: [4B, 1, H/4, W/4]; drop the unit temporal axis.
    const auto& cs = cur->value.shape();
    feat = ad::reshape(cur, {cs[0], cs[2], cs[3]});

    if (cfg_.use_recurrence_stream) {
      ad::Var r = ad::constant(to_chw(prev_output));
      for (const Conv& c : rec_) r = run(c, r);
      feat = ad::add(feat, r);  // two-stream fusion by elementwise summation
    }

    ad::Var s1 = run(skips_[0], e1k);
    const auto& s1s = s1->value.shape();
    skip1 = ad::reshape(s1, {s1s[0], s1s[2], s1s[3]});
    ad::Var s0 = run(skips_[1], e0);
    const auto& s0s = s0->value.shape();
    skip0 = ad::reshape(s0, {s0s[0], s0s[2], s0s[3]});
  }

  for (const Conv& c : bott_) feat = run(c, feat);

  ad::Var d = run(dec_[0], feat);
  d = ad::upsample2_nearest(d);
  d = run(dec_[1], d);
  d = ad::concat_channels(d, skip1);
  d = run(dec_[2], d);
  d = ad::upsample2_nearest(d);
  d = run(dec_[3], d);
  d = ad::concat_channels(d, skip0);
  d = run(dec_[4], d);
  d = run(dec_[5], d);
  ad::Var res = run(dec_[6], d, /*linear=*/true);

  if (cfg_.variant == Variant::enc3d_dec3d) {
    const auto& rs = res->value.shape();  // [C, 1, H, W] after the pooling head
    res = ad::reshape(res, {rs[0], rs[2], rs[3]});
  }
  ad::Var residual = ad::image_from_chw(res);
  ad::Var prediction = ad::clamp01(ad::add(ad::constant(center), residual));
  return {residual, prediction};
}

ResidualOutput BvdNet::forward(const WindowBatch& batch) const {
  ad::NoGradGuard guard;
  ForwardGraph g = forward_graph(batch.source_frames, batch.prev_output);
  return {g.residual->value, g.prediction->value};
}

}  // namespace bvd::model
