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

#include "bvd/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "bvd/flowwarp.hpp"
#include "bvd/png_io.hpp"

namespace fs = std::filesystem;

namespace bvd::datagen {

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---- 5x7 glyph atlas ----

using GlyphRows = std::array<const char*, 7>;

const std::unordered_map<char, GlyphRows>& atlas() {
  static const std::unordered_map<char, GlyphRows> table = {
      {'A', {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}},
      {'B', {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}},
      {'C', {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}},
      {'D', {"11110", "10001", "10001", "10001", "10001", "10001", "11110"}},
      {'E', {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}},
      {'F', {"11111", "10000", "10000", "11110", "10000", "10000", "10000"}},
      {'G', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
      {'H', {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}},
      {'I', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
      {'J', {"00111", "00010", "00010", "00010", "00010", "10010", "01100"}},
      {'K', {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}},
      {'L', {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}},
      {'M', {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}},
      {'N', {"10001", "11001", "10101", "10011", "10001", "10001", "10001"}},
      {'O', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
      {'P', {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}},
      {'Q', {"01110", "10001", "10001", "10001", "10101", "10010", "01101"}},
      {'R', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
      {'S', {"01111", "10000", "10000", "01110", "00001", "00001", "11110"}},
      {'T', {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}},
      {'U', {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}},
      {'V', {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}},
      {'W', {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}},
      {'X', {"10001", "10001", "01010", "00100", "01010", "10001", "10001"}},
      {'Y', {"10001", "10001", "01010", "00100", "00100", "00100", "00100"}},
      {'Z', {"11111", "00001", "00010", "00100", "01000", "10000", "11111"}},
      {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
      {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
      {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
      {'3', {"11111", "00010", "00100", "00010", "00001", "10001", "01110"}},
      {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
      {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
      {'6', {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},
      {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
      {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
      {'9', {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},
      {' ', {"00000", "00000", "00000", "00000", "00000", "00000", "00000"}},
      {'.', {"00000", "00000", "00000", "00000", "00000", "01100", "01100"}},
      {',', {"00000", "00000", "00000", "00000", "00000", "00100", "01000"}},
      {'-', {"00000", "00000", "00000", "01110", "00000", "00000", "00000"}},
      {'!', {"00100", "00100", "00100", "00100", "00100", "00000", "00100"}},
      {'?', {"01110", "10001", "00001", "00010", "00100", "00000", "00100"}},
      {'\'', {"00100", "00100", "01000", "00000", "00000", "00000", "00000"}},
  };
  return table;
}

const char* const kWords[] = {"HELLO", "WORLD", "VIDEO", "FRAME",  "REMOVE", "THE",
                              "QUICK", "BROWN", "FOX",  "JUMPS",  "OVER",   "LAZY",
                              "DOG",   "DEEP",  "BLIND", "CLEAN", "PIXEL",  "MOTION",
                              "SCENE", "COLOR"};
constexpr int kNumWords = static_cast<int>(sizeof(kWords) / sizeof(kWords[0]));

int caption_units_w(const std::string& text) { return 6 * static_cast<int>(text.size()) - 1; }

int shadow_offset(const CaptionSpec& spec) {
  if (spec.shadow == CaptionSpec::Shadow::none) return 0;
  return std::max(1, static_cast<int>(std::lround(spec.font_scale)));
}

/// Extra pixels the shadow occupies beyond the glyph box (right and bottom).
int shadow_margin(const CaptionSpec& spec) {
  int off = shadow_offset(spec);
  return spec.shadow == CaptionSpec::Shadow::soft ? off + 1 : off;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string frame_name(const char* stem, int index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%05d", stem, index);
  return buf;
}

Tensor slice_frame(const Tensor& clip, int t) {
  int H = clip.dim(1), W = clip.dim(2), C = clip.dim(3);
  Tensor out({H, W, C});
  const double* p = clip.data() + static_cast<int64_t>(t) * out.numel();
  std::copy(p, p + out.numel(), out.data());
  return out;
}

void store_frame(Tensor& clip, int t, const Tensor& frame) {
  double* p = clip.data() + static_cast<int64_t>(t) * frame.numel();
  std::copy(frame.data(), frame.data() + frame.numel(), p);
}

double clamp01d(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

// ---- validation and names ----

void CaptionSpec::validate() const {
  if (text.empty()) throw std::invalid_argument("CaptionSpec: empty text");
  for (char ch : text)
    if (!glyph_supported(ch))
      throw std::invalid_argument(std::string("CaptionSpec: unsupported character '") + ch + "'");
  if (!(font_scale > 0.0)) throw std::invalid_argument("CaptionSpec: font_scale must be > 0");
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("CaptionSpec: alpha must be in (0, 1]");
  if (shadow_alpha < 0.0 || shadow_alpha > 1.0)
    throw std::invalid_argument("CaptionSpec: shadow_alpha must be in [0, 1]");
  if (shadow == Shadow::soft && shadow_alpha >= 1.0)
    throw std::invalid_argument("CaptionSpec: soft shadows must be semi-transparent");
}

std::string shadow_name(CaptionSpec::Shadow s) {
  switch (s) {
    case CaptionSpec::Shadow::none: return "none";
    case CaptionSpec::Shadow::soft: return "soft";
    case CaptionSpec::Shadow::solid: return "solid";
  }
  throw std::invalid_argument("shadow_name: unknown shadow");
}

CaptionSpec::Shadow shadow_from_name(const std::string& name) {
  if (name == "none") return CaptionSpec::Shadow::none;
  if (name == "soft") return CaptionSpec::Shadow::soft;
  if (name == "solid") return CaptionSpec::Shadow::solid;
  throw std::invalid_argument("unknown shadow kind: " + name);
}

void GenConfig::validate() const {
  if (length < 2) throw std::invalid_argument("GenConfig: length must be >= 2");
  if (height < 16 || width < 16)
    throw std::invalid_argument("GenConfig: frames must be at least 16x16");
  if (channels != 3) throw std::invalid_argument("GenConfig: channels must be 3");
  if (min_sprites < 0 || max_sprites < min_sprites)
    throw std::invalid_argument("GenConfig: bad sprite count range");
  if (max_pan < 0.0 || max_sprite_speed < 0.0)
    throw std::invalid_argument("GenConfig: speeds must be non-negative");
  if (min_segments < 1 || max_segments < min_segments)
    throw std::invalid_argument("GenConfig: bad segment count range");
  if (!(min_caption_alpha > 0.0) || min_caption_alpha >= 1.0)
    throw std::invalid_argument("GenConfig: min_caption_alpha must be in (0, 1)");
  if (!(min_font_scale > 0.0) || max_font_scale < min_font_scale)
    throw std::invalid_argument("GenConfig: bad font scale range");
}

// ---- glyph rendering ----

bool glyph_supported(char ch) { return atlas().count(ch) != 0; }

CaptionRaster rasterize_caption(const CaptionSpec& spec, int height, int width) {
  spec.validate();
  double s = spec.font_scale;
  int units_w = caption_units_w(spec.text);
  int box_w = static_cast<int>(std::ceil(units_w * s));
  int box_h = static_cast<int>(std::ceil(7 * s));
  int margin = shadow_margin(spec);
  if (spec.x < 0 || spec.y < 0 || spec.x + box_w + margin > width ||
      spec.y + box_h + margin > height)
    throw std::invalid_argument("caption does not fit inside the frame");

  CaptionRaster r{Tensor({height, width}, 0.0), Tensor({height, width}, 0.0)};
  const auto& table = atlas();
  for (int py = 0; py < box_h; ++py) {
    int v = static_cast<int>(py / s);
    if (v >= 7) continue;
    for (int px = 0; px < box_w; ++px) {
      int u = static_cast<int>(px / s);
      if (u >= units_w) continue;
      int cell = u / 6, cu = u % 6;
      if (cu == 5) continue;  // inter-glyph spacing column
      const GlyphRows& rows = table.at(spec.text[static_cast<size_t>(cell)]);
      if (rows[v][cu] == '1') r.glyph.at(spec.y + py, spec.x + px) = 1.0;
    }
  }

  if (spec.shadow != CaptionSpec::Shadow::none) {
    int off = shadow_offset(spec);
    Tensor base({height, width}, 0.0);
    for (int y = 0; y < height - off; ++y)
      for (int x = 0; x < width - off; ++x)
        if (r.glyph.at(y, x) == 1.0) base.at(y + off, x + off) = 1.0;
    if (spec.shadow == CaptionSpec::Shadow::solid) {
      r.shadow = std::move(base);
    } else {
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int yy = y + dy, xx = x + dx;
              if (yy >= 0 && yy < height && xx >= 0 && xx < width) acc += base.at(yy, xx);
            }
          if (acc > 0.0) r.shadow.at(y, x) = acc / 9.0;
        }
    }
  }
  return r;
}

void composite_caption(Tensor& frame, Tensor& alpha_map, const CaptionSpec& spec) {
  int H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  if (alpha_map.ndim() != 2 || alpha_map.dim(0) != H || alpha_map.dim(1) != W)
    throw std::invalid_argument("composite_caption: alpha map shape mismatch");
  CaptionRaster r = rasterize_caption(spec, H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double sc = r.shadow.at(y, x);
      double gc = r.glyph.at(y, x);
      if (sc == 0.0 && gc == 0.0) continue;
      double a = alpha_map.at(y, x);
      if (sc > 0.0) {
        double as = spec.shadow_alpha * sc;  // shadow color is black
        for (int c = 0; c < C; ++c) frame.at(y, x, c) *= 1.0 - as;
        a = as + (1.0 - as) * a;
      }
      if (gc > 0.0) {
        double ag = spec.alpha * gc;
        for (int c = 0; c < C; ++c)
          frame.at(y, x, c) = (1.0 - ag) * frame.at(y, x, c) + ag * spec.fill_color[c % 3];
        a = ag + (1.0 - ag) * a;
      }
      alpha_map.at(y, x) = a;
    }
}

// ---- clip generation ----

namespace {

struct Sprite {
  bool disk = false;
  double half_w = 0, half_h = 0, radius = 0;
  double cx0 = 0, cy0 = 0;
  double vx = 0, vy = 0;
  std::array<double, 3> color{};
  double amp = 0, fx = 0, fy = 0, phase = 0;

  bool contains(double x, double y, int t) const {
    double dx = x - (cx0 + t * vx), dy = y - (cy0 + t * vy);
    if (disk) return dx * dx + dy * dy <= radius * radius;
    return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
  }
  double shade(int c, double x, double y, int t) const {
    double dx = x - (cx0 + t * vx), dy = y - (cy0 + t * vy);
    return clamp01d(color[static_cast<size_t>(c)] +
                    amp * std::sin(phase + 2.0 * kPi * (fx * dx + fy * dy) + 0.9 * c));
  }
};

struct Background {
  std::array<double, 3> c0{}, c1{};
  double gfreq = 0, gdirx = 0, gdiry = 0, gphase = 0;
  double a1 = 0, f1x = 0, f1y = 0, p1 = 0;
  double a2 = 0, f2x = 0, f2y = 0, p2 = 0;
  double panx = 0, pany = 0;

  double shade(int c, double x, double y, int t) const {
    double u = x - t * panx, v = y - t * pany;
    double s = 0.5 + 0.5 * std::sin(gphase + 2.0 * kPi * gfreq * (gdirx * u + gdiry * v));
    double base = c0[static_cast<size_t>(c)] +
                  (c1[static_cast<size_t>(c)] - c0[static_cast<size_t>(c)]) * s;
    double t1 = a1 * std::sin(p1 + 2.0 * kPi * (f1x * u + f1y * v));
    double t2 = a2 * std::sin(p2 + 2.0 * kPi * (f2x * u + f2y * v) + 0.7 * c);
    return clamp01d(base + t1 + t2);
  }
};

CaptionSpec sample_caption(Rng& rng, const GenConfig& cfg) {
  CaptionSpec spec;
  int k = rng.uniform_int(1, 3);
  std::string text;
  for (int i = 0; i < k; ++i) {
    if (i) text += ' ';
    text += kWords[rng.uniform_int(0, kNumWords - 1)];
  }
  double punct = rng.uniform();
  if (punct < 0.15) text += '.';
  else if (punct < 0.25) text += '!';
  else if (punct < 0.32) text += '?';

  spec.font_scale = rng.uniform(cfg.min_font_scale, cfg.max_font_scale);
  for (int c = 0; c < 3; ++c) spec.fill_color[static_cast<size_t>(c)] = rng.uniform(0.2, 1.0);
  spec.alpha = rng.uniform(cfg.min_caption_alpha, 1.0);
  int sh = rng.uniform_int(0, 2);
  spec.shadow = sh == 0 ? CaptionSpec::Shadow::none
                        : (sh == 1 ? CaptionSpec::Shadow::soft : CaptionSpec::Shadow::solid);
  spec.shadow_alpha = spec.shadow == CaptionSpec::Shadow::none
                          ? 0.0
                          : (spec.shadow == CaptionSpec::Shadow::soft ? rng.uniform(0.3, 0.7)
                                                                      : rng.uniform(0.5, 0.95));

  // Deterministic fitting, no further draws: shrink the scale, then the text.
  spec.text = text;
  auto fits = [&](void) {
    int bw = static_cast<int>(std::ceil(caption_units_w(spec.text) * spec.font_scale));
    int bh = static_cast<int>(std::ceil(7 * spec.font_scale));
    int m = shadow_margin(spec);
    return bw + m <= cfg.width && bh + m <= cfg.height;
  };
  double drawn_scale = spec.font_scale;
  while (!fits() && spec.font_scale * 0.85 >= cfg.min_font_scale) spec.font_scale *= 0.85;
  while (!fits() && spec.text.size() > 1) {
    size_t cut = spec.text.rfind(' ');
    spec.text = cut == std::string::npos ? spec.text.substr(0, spec.text.size() - 1)
                                         : spec.text.substr(0, cut);
    spec.font_scale = drawn_scale;
    while (!fits() && spec.font_scale * 0.85 >= cfg.min_font_scale) spec.font_scale *= 0.85;
  }
  if (!fits()) throw std::invalid_argument("caption larger than frame for this config");

  int box_w = static_cast<int>(std::ceil(caption_units_w(spec.text) * spec.font_scale));
  int box_h = static_cast<int>(std::ceil(7 * spec.font_scale));
  int margin = shadow_margin(spec);
  int x_max = cfg.width - box_w - margin;
  int y_max = cfg.height - box_h - margin;
  int y_lo = std::min(y_max, (2 * cfg.height) / 3);  // captions favor the bottom
  spec.x = rng.uniform_int(0, x_max);
  spec.y = rng.uniform_int(y_lo, y_max);
  return spec;
}

}  // namespace

ClipPair generate_clip(uint64_t seed, const GenConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const int L = cfg.length, H = cfg.height, W = cfg.width, C = cfg.channels;

  Background bg;
  for (int c = 0; c < 3; ++c) bg.c0[static_cast<size_t>(c)] = rng.uniform(0.1, 0.9);
  for (int c = 0; c < 3; ++c) bg.c1[static_cast<size_t>(c)] = rng.uniform(0.1, 0.9);
  bg.gfreq = rng.uniform(0.002, 0.008);
  double theta = rng.uniform(0.0, 2.0 * kPi);
  bg.gdirx = std::cos(theta);
  bg.gdiry = std::sin(theta);
  bg.gphase = rng.uniform(0.0, 2.0 * kPi);
  bg.a1 = rng.uniform(0.02, 0.07);
  bg.f1x = rng.uniform(0.01, 0.05);
  bg.f1y = rng.uniform(0.01, 0.05);
  bg.p1 = rng.uniform(0.0, 2.0 * kPi);
  bg.a2 = rng.uniform(0.02, 0.07);
  bg.f2x = rng.uniform(0.01, 0.05);
  bg.f2y = rng.uniform(0.01, 0.05);
  bg.p2 = rng.uniform(0.0, 2.0 * kPi);
  bg.panx = rng.uniform(-cfg.max_pan, cfg.max_pan);
  bg.pany = rng.uniform(-cfg.max_pan, cfg.max_pan);

  int n_sprites = rng.uniform_int(cfg.min_sprites, cfg.max_sprites);
  double size_lo = 0.06 * std::min(H, W) + 2.0;
  double size_hi = 0.15 * std::min(H, W) + 2.0;
  std::vector<Sprite> sprites(static_cast<size_t>(n_sprites));
  for (Sprite& sp : sprites) {
    sp.disk = rng.bernoulli(0.5);
    if (sp.disk) {
      sp.radius = rng.uniform(size_lo, size_hi);
    } else {
      sp.half_w = rng.uniform(size_lo, size_hi);
      sp.half_h = rng.uniform(size_lo, size_hi);
    }
    sp.cx0 = rng.uniform(0.0, W - 1.0);
    sp.cy0 = rng.uniform(0.0, H - 1.0);
    sp.vx = rng.uniform(-cfg.max_sprite_speed, cfg.max_sprite_speed);
    sp.vy = rng.uniform(-cfg.max_sprite_speed, cfg.max_sprite_speed);
    for (int c = 0; c < 3; ++c) sp.color[static_cast<size_t>(c)] = rng.uniform(0.15, 0.95);
    sp.amp = rng.uniform(0.03, 0.08);
    sp.fx = rng.uniform(0.05, 0.2);
    sp.fy = rng.uniform(0.05, 0.2);
    sp.phase = rng.uniform(0.0, 2.0 * kPi);
  }

  // Caption schedule: segment boundaries, then one spec per captioned segment.
  int n_seg = std::min(rng.uniform_int(cfg.min_segments, cfg.max_segments), L);
  std::vector<int> cuts;
  while (static_cast<int>(cuts.size()) < n_seg - 1) {
    int c = rng.uniform_int(1, L - 1);
    if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.insert(cuts.begin(), 0);
  cuts.push_back(L);

  std::vector<bool> has_caption(static_cast<size_t>(n_seg));
  bool any = false;
  for (int i = 0; i < n_seg; ++i) {
    has_caption[static_cast<size_t>(i)] = rng.bernoulli(0.8);
    any = any || has_caption[static_cast<size_t>(i)];
  }
  if (!any) has_caption[0] = true;

  ClipPair clip;
  clip.seed = seed;
  for (int i = 0; i < n_seg; ++i)
    if (has_caption[static_cast<size_t>(i)])
      clip.schedule.push_back({cuts[static_cast<size_t>(i)], cuts[static_cast<size_t>(i) + 1],
                               sample_caption(rng, cfg)});

  // Rendering consumes no randomness: frames are functions of the parameters.
  clip.clean = Tensor({L, H, W, C});
  clip.alpha = Tensor({L, H, W}, 0.0);
  std::vector<Tensor> layer_ids(static_cast<size_t>(L));
  for (int t = 0; t < L; ++t) {
    Tensor frame({H, W, C});
    Tensor ids({H, W}, 0.0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int top = 0;
        for (int i = 0; i < n_sprites; ++i)
          if (sprites[static_cast<size_t>(i)].contains(x, y, t)) top = i + 1;
        ids.at(y, x) = top;
        for (int c = 0; c < C; ++c)
          frame.at(y, x, c) = top == 0
                                  ? bg.shade(c, x, y, t)
                                  : sprites[static_cast<size_t>(top - 1)].shade(c, x, y, t);
      }
    store_frame(clip.clean, t, frame);
    layer_ids[static_cast<size_t>(t)] = std::move(ids);
  }

  clip.corrupted = clip.clean;
  for (const CaptionSegment& seg : clip.schedule)
    for (int t = seg.start; t < seg.end; ++t) {
      Tensor frame = slice_frame(clip.corrupted, t);
      Tensor amap({H, W}, 0.0);
      composite_caption(frame, amap, seg.spec);
      store_frame(clip.corrupted, t, frame);
      double* ap = clip.alpha.data() + static_cast<int64_t>(t) * H * W;
      std::copy(amap.data(), amap.data() + amap.numel(), ap);
    }

  flow::SceneMotion motion;
  motion.height = H;
  motion.width = W;
  motion.layer_velocity.push_back({bg.panx, bg.pany});
  for (const Sprite& sp : sprites) motion.layer_velocity.push_back({sp.vx, sp.vy});
  for (int t = 1; t < L; ++t) {
    motion.top_layer_prev = layer_ids[static_cast<size_t>(t - 1)];
    motion.top_layer_cur = layer_ids[static_cast<size_t>(t)];
    clip.flows.push_back(flow::synthetic_flow(motion));
  }
  return clip;
}

// ---- windowed sampling ----

int reflect_index(int i, int length) {
  if (length <= 0) throw std::invalid_argument("reflect_index: empty clip");
  if (length == 1) return 0;
  while (i < 0 || i >= length) {
    if (i < 0) i = -i;
    else i = 2 * (length - 1) - i;
  }
  return i;
}

std::vector<int> window_indices(int t, int length, int N, int stride) {
  if (t < 0 || t >= length) throw std::invalid_argument("window_indices: t out of range");
  if (N < 1 || stride < 1) throw std::invalid_argument("window_indices: N and stride must be >= 1");
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(2 * N + 1));
  for (int k = -N; k <= N; ++k) idx.push_back(reflect_index(t + k * stride, length));
  return idx;
}

WindowBatch sample_window(const ClipPair& clip, int t, const SamplerConfig& cfg,
                          const Tensor* prev_output) {
  const int L = clip.corrupted.dim(0), H = clip.corrupted.dim(1), W = clip.corrupted.dim(2),
            C = clip.corrupted.dim(3);
  if (t < 0 || t >= L) throw std::invalid_argument("sample_window: t out of range");
  std::vector<int> idx = window_indices(t, L, cfg.N, cfg.stride);

  WindowBatch b;
  b.source_frames = Tensor({static_cast<int>(idx.size()), H, W, C});
  int64_t frame_n = static_cast<int64_t>(H) * W * C;
  for (size_t k = 0; k < idx.size(); ++k) {
    const double* src = clip.corrupted.data() + static_cast<int64_t>(idx[k]) * frame_n;
    std::copy(src, src + frame_n, b.source_frames.data() + static_cast<int64_t>(k) * frame_n);
  }
  b.center_frame = slice_frame(clip.corrupted, t);
  b.target_frame = slice_frame(clip.clean, t);
  if (prev_output) {
    if (prev_output->shape() != b.center_frame.shape())
      throw std::invalid_argument("sample_window: prev_output shape mismatch");
    b.prev_output = *prev_output;
  } else {
    b.prev_output = slice_frame(clip.corrupted, std::max(t - 1, 0));
  }
  return b;
}

// ---- augmentation ----

void hflip_image(Tensor& img) {
  if (img.ndim() != 3) throw std::invalid_argument("hflip_image: expected [H, W, C]");
  int H = img.dim(0), W = img.dim(1), C = img.dim(2);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W / 2; ++x)
      for (int c = 0; c < C; ++c) std::swap(img.at(y, x, c), img.at(y, W - 1 - x, c));
}

void hflip_video(Tensor& vid) {
  if (vid.ndim() != 4) throw std::invalid_argument("hflip_video: expected [T, H, W, C]");
  int T = vid.dim(0), H = vid.dim(1), W = vid.dim(2), C = vid.dim(3);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W / 2; ++x)
        for (int c = 0; c < C; ++c) std::swap(vid.at(t, y, x, c), vid.at(t, y, W - 1 - x, c));
}

void color_jitter(Tensor& t, double brightness, double contrast, double saturation) {
  if (t.ndim() != 3 && t.ndim() != 4)
    throw std::invalid_argument("color_jitter: expected [H, W, C] or [T, H, W, C]");
  bool do_b = brightness != 0.0, do_c = contrast != 1.0, do_s = saturation != 1.0;
  if (!do_b && !do_c && !do_s) return;  // bit-exact identity
  int C = t.dim(t.ndim() - 1);
  int64_t pixels = t.numel() / C;
  double* p = t.data();
  for (int64_t i = 0; i < pixels; ++i, p += C) {
    if (do_b)
      for (int c = 0; c < C; ++c) p[c] += brightness;
    if (do_c)
      for (int c = 0; c < C; ++c) p[c] = (p[c] - 0.5) * contrast + 0.5;
    if (do_s) {
      double gray = 0.0;
      for (int c = 0; c < C; ++c) gray += p[c];
      gray /= C;
      for (int c = 0; c < C; ++c) p[c] = gray + (p[c] - gray) * saturation;
    }
    for (int c = 0; c < C; ++c) p[c] = clamp01d(p[c]);
  }
}

WindowBatch augment(const WindowBatch& batch, const SamplerConfig& cfg, Rng& rng) {
  bool flip = cfg.augment_flip && rng.bernoulli(0.5);
  double b = rng.uniform(-cfg.jitter.brightness, cfg.jitter.brightness);
  double c = rng.uniform(cfg.jitter.contrast_lo, cfg.jitter.contrast_hi);
  double s = rng.uniform(cfg.jitter.saturation_lo, cfg.jitter.saturation_hi);

  WindowBatch out = batch;
  if (flip) {
    hflip_video(out.source_frames);
    hflip_image(out.prev_output);
    hflip_image(out.center_frame);
    if (!out.target_frame.empty()) hflip_image(out.target_frame);
  }
  color_jitter(out.source_frames, b, c, s);
  color_jitter(out.prev_output, b, c, s);
  color_jitter(out.center_frame, b, c, s);
  if (!out.target_frame.empty()) color_jitter(out.target_frame, b, c, s);
  return out;
}

// ---- corpus I/O ----

Tensor quantize_frames(const Tensor& t) {
  Tensor out(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = pngio::quantize8(t[i]) / 255.0;
  return out;
}

namespace {

std::string serialize_schedule(const std::vector<CaptionSegment>& schedule) {
  std::ostringstream os;
  for (size_t i = 0; i < schedule.size(); ++i) {
    const CaptionSegment& g = schedule[i];
    if (i) os << ';';
    os << g.start << '|' << g.end << '|' << g.spec.text << '|' << fmt_double(g.spec.font_scale)
       << '|' << g.spec.x << '|' << g.spec.y << '|' << fmt_double(g.spec.fill_color[0]) << '|'
       << fmt_double(g.spec.fill_color[1]) << '|' << fmt_double(g.spec.fill_color[2]) << '|'
       << fmt_double(g.spec.alpha) << '|' << shadow_name(g.spec.shadow) << '|'
       << fmt_double(g.spec.shadow_alpha);
  }
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<CaptionSegment> parse_schedule(const std::string& text) {
  std::vector<CaptionSegment> out;
  if (text.empty()) return out;
  for (const std::string& seg : split(text, ';')) {
    std::vector<std::string> f = split(seg, '|');
    if (f.size() != 12) throw std::runtime_error("manifest: bad caption entry '" + seg + "'");
    CaptionSegment g;
    g.start = std::stoi(f[0]);
    g.end = std::stoi(f[1]);
    g.spec.text = f[2];
    g.spec.font_scale = std::stod(f[3]);
    g.spec.x = std::stoi(f[4]);
    g.spec.y = std::stoi(f[5]);
    g.spec.fill_color = {std::stod(f[6]), std::stod(f[7]), std::stod(f[8])};
    g.spec.alpha = std::stod(f[9]);
    g.spec.shadow = shadow_from_name(f[10]);
    g.spec.shadow_alpha = std::stod(f[11]);
    out.push_back(std::move(g));
  }
  return out;
}

std::string manifest_text(const CorpusManifest& m) {
  std::ostringstream os;
  os << "corpus_seed=" << m.seed << "\n";
  os << "n_clips=" << m.entries.size() << "\n";
  const GenConfig& c = m.config;
  os << "length=" << c.length << "\n";
  os << "height=" << c.height << "\n";
  os << "width=" << c.width << "\n";
  os << "channels=" << c.channels << "\n";
  os << "min_sprites=" << c.min_sprites << "\n";
  os << "max_sprites=" << c.max_sprites << "\n";
  os << "max_pan=" << fmt_double(c.max_pan) << "\n";
  os << "max_sprite_speed=" << fmt_double(c.max_sprite_speed) << "\n";
  os << "min_segments=" << c.min_segments << "\n";
  os << "max_segments=" << c.max_segments << "\n";
  os << "min_caption_alpha=" << fmt_double(c.min_caption_alpha) << "\n";
  os << "min_font_scale=" << fmt_double(c.min_font_scale) << "\n";
  os << "max_font_scale=" << fmt_double(c.max_font_scale) << "\n";
  for (const ManifestEntry& e : m.entries) {
    os << e.dir << ".seed=" << e.seed << "\n";
    os << e.dir << ".captions=" << serialize_schedule(e.schedule) << "\n";
  }
  return os.str();
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

CorpusManifest write_corpus(int n_clips, const std::string& root, uint64_t seed,
                            const GenConfig& cfg) {
  if (n_clips < 1) throw std::invalid_argument("write_corpus: n_clips must be >= 1");
  cfg.validate();
  fs::path r(root);
  std::error_code ec;
  fs::create_directories(r, ec);
  if (ec) throw std::runtime_error("cannot create " + root + ": " + ec.message());

  fs::path mpath = r / "manifest.txt";
  if (fs::exists(mpath)) {
    auto kv = read_kv_file(mpath.string());
    auto it = kv.find("corpus_seed");
    if (it == kv.end() || std::stoull(it->second) != seed)
      throw std::runtime_error("corpus at " + root + " exists with a different seed");
  }

  CorpusManifest m;
  m.root = root;
  m.seed = seed;
  m.config = cfg;
  for (int i = 0; i < n_clips; ++i) {
    ManifestEntry e;
    e.clip_id = i;
    e.seed = Rng::mix(seed, static_cast<uint64_t>(i));
    e.dir = frame_name("clip", i);
    ClipPair clip = generate_clip(e.seed, cfg);
    e.schedule = clip.schedule;

    fs::path cdir = r / e.dir;
    for (const char* sub : {"clean", "corrupted", "alpha", "flows"}) {
      fs::create_directories(cdir / sub, ec);
      if (ec) throw std::runtime_error("cannot create clip dirs: " + ec.message());
    }
    for (int t = 0; t < cfg.length; ++t) {
      std::string fname = frame_name("frame", t) + ".png";
      pngio::write_rgb8((cdir / "clean" / fname).string(), slice_frame(clip.clean, t));
      pngio::write_rgb8((cdir / "corrupted" / fname).string(), slice_frame(clip.corrupted, t));
      Tensor amap({cfg.height, cfg.width});
      const double* ap = clip.alpha.data() + static_cast<int64_t>(t) * cfg.height * cfg.width;
      std::copy(ap, ap + amap.numel(), amap.data());
      pngio::write_gray8((cdir / "alpha" / fname).string(), amap);
    }
    for (int t = 1; t < cfg.length; ++t) {
      flow::write_flow((cdir / "flows" / (frame_name("fwd", t) + ".bvfl")).string(),
                       clip.flows[static_cast<size_t>(t - 1)].first);
      flow::write_flow((cdir / "flows" / (frame_name("bwd", t) + ".bvfl")).string(),
                       clip.flows[static_cast<size_t>(t - 1)].second);
    }
    m.entries.push_back(std::move(e));
  }

  std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + mpath.string());
  out << manifest_text(m);
  return m;
}

CorpusManifest read_manifest(const std::string& root) {
  fs::path mpath = fs::path(root) / "manifest.txt";
  auto kv = read_kv_file(mpath.string());
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("manifest missing key " + key);
    return it->second;
  };

  CorpusManifest m;
  m.root = root;
  m.seed = std::stoull(need("corpus_seed"));
  GenConfig& c = m.config;
  c.length = std::stoi(need("length"));
  c.height = std::stoi(need("height"));
  c.width = std::stoi(need("width"));
  c.channels = std::stoi(need("channels"));
  c.min_sprites = std::stoi(need("min_sprites"));
  c.max_sprites = std::stoi(need("max_sprites"));
  c.max_pan = std::stod(need("max_pan"));
  c.max_sprite_speed = std::stod(need("max_sprite_speed"));
  c.min_segments = std::stoi(need("min_segments"));
  c.max_segments = std::stoi(need("max_segments"));
  c.min_caption_alpha = std::stod(need("min_caption_alpha"));
  c.min_font_scale = std::stod(need("min_font_scale"));
  c.max_font_scale = std::stod(need("max_font_scale"));

  int n = std::stoi(need("n_clips"));
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.clip_id = i;
    e.dir = frame_name("clip", i);
    e.seed = std::stoull(need(e.dir + ".seed"));
    e.schedule = parse_schedule(need(e.dir + ".captions"));
    m.entries.push_back(std::move(e));
  }
  return m;
}

ClipPair load_clip(const CorpusManifest& manifest, int index) {
  if (index < 0 || index >= static_cast<int>(manifest.entries.size()))
    throw std::invalid_argument("load_clip: index out of range");
  const ManifestEntry& e = manifest.entries[static_cast<size_t>(index)];
  const GenConfig& c = manifest.config;
  fs::path cdir = fs::path(manifest.root) / e.dir;

  ClipPair clip;
  clip.seed = e.seed;
  clip.schedule = e.schedule;
  clip.clean = Tensor({c.length, c.height, c.width, c.channels});
  clip.corrupted = Tensor({c.length, c.height, c.width, c.channels});
  clip.alpha = Tensor({c.length, c.height, c.width});

  for (int t = 0; t < c.length; ++t) {
    std::string fname = frame_name("frame", t) + ".png";
    Tensor cl = pngio::read_image((cdir / "clean" / fname).string());
    Tensor co = pngio::read_image((cdir / "corrupted" / fname).string());
    Tensor al = pngio::read_image((cdir / "alpha" / fname).string());
    if (cl.dim(0) != c.height || cl.dim(1) != c.width || cl.dim(2) != c.channels)
      throw std::runtime_error("load_clip: unexpected frame shape in " + e.dir);
    store_frame(clip.clean, t, cl);
    store_frame(clip.corrupted, t, co);
    double* ap = clip.alpha.data() + static_cast<int64_t>(t) * c.height * c.width;
    std::copy(al.data(), al.data() + al.numel(), ap);
  }
  for (int t = 1; t < c.length; ++t)
    clip.flows.push_back(
        {flow::read_flow((cdir / "flows" / (frame_name("fwd", t) + ".bvfl")).string()),
         flow::read_flow((cdir / "flows" / (frame_name("bwd", t) + ".bvfl")).string())});
  return clip;
}

}  // namespace bvd::datagen
