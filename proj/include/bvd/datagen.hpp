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

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bvd/model.hpp"
#include "bvd/rng.hpp"
#include "bvd/tensor.hpp"

namespace bvd::datagen {

using model::WindowBatch;

/// One caption overlay: text drawn from a built-in 5x7 glyph atlas, scaled,
/// colored, optionally shadowed, composited with transparency alpha.
struct CaptionSpec {
  std::string text;
  double font_scale = 2.0;
  int x = 0;  // top-left corner of the glyph box, pixels
  int y = 0;
  std::array<double, 3> fill_color = {1.0, 1.0, 1.0};
  double alpha = 1.0;  // in (0, 1]
  enum class Shadow { none, soft, solid } shadow = Shadow::none;
  double shadow_alpha = 0.5;  // soft shadows keep this < 1

  void validate() const;
};

std::string shadow_name(CaptionSpec::Shadow s);
CaptionSpec::Shadow shadow_from_name(const std::string& name);

/// Caption active on frames [start, end).
struct CaptionSegment {
  int start = 0;
  int end = 0;
  CaptionSpec spec;
};

/// Procedural clip parameters. Backgrounds are smooth color fields with a
/// global pan; sprites are textured rectangles and disks with per-sprite
/// velocity; captions switch at schedule boundaries independent of content.
struct GenConfig {
  int length = 48;
  int height = 128;
  int width = 128;
  int channels = 3;
  int min_sprites = 2;
  int max_sprites = 4;
  double max_pan = 1.0;           // background speed bound, px/frame
  double max_sprite_speed = 2.0;  // sprite speed bound, px/frame
  int min_segments = 1;
  int max_segments = 3;
  double min_caption_alpha = 0.4;
  double min_font_scale = 1.0;
  double max_font_scale = 3.0;

  void validate() const;
};

/// A (corrupted, clean) clip with evaluation-only side channels: the exact
/// overlay alpha and the exact scene flows. The model never sees either.
struct ClipPair {
  Tensor clean;      // [L, H, W, C] in [0, 1]
  Tensor corrupted;  // [L, H, W, C]
  Tensor alpha;      // [L, H, W] overlay opacity in [0, 1]
  // flows[t-1] holds the pair for step t: (forward in frame t-1 coords,
  // backward in frame t coords), t = 1..L-1.
  std::vector<std::pair<Tensor, Tensor>> flows;
  uint64_t seed = 0;
  std::vector<CaptionSegment> schedule;
};

struct SamplerConfig {
  int N = 2;       // temporal radius
  int stride = 3;  // frame sampling stride
  bool augment_flip = true;
  struct Jitter {
    double brightness = 0.1;  // additive, drawn from [-brightness, brightness]
    double contrast_lo = 0.9, contrast_hi = 1.1;
    double saturation_lo = 0.9, saturation_hi = 1.1;
  } jitter;
};

// ---- glyph rendering ----

/// True when the atlas has a bitmap for ch (A-Z, 0-9, space, . , - ! ? ').
bool glyph_supported(char ch);

struct CaptionRaster {
  Tensor glyph;   // [H, W] coverage in [0, 1]
  Tensor shadow;  // [H, W] coverage in [0, 1], zero when shadow == none
};

/// Rasterizes spec into full-frame coverage maps. Throws std::invalid_argument
/// when the caption box (including its shadow) exceeds the frame or the text
/// has unsupported characters.
CaptionRaster rasterize_caption(const CaptionSpec& spec, int height, int width);

/// Shadow first, then glyph fill, alpha-over onto frame [H, W, C]; alpha_map
/// [H, W] accumulates total overlay opacity. Pixels with zero coverage are
/// left untouched bit-for-bit.
void composite_caption(Tensor& frame, Tensor& alpha_map, const CaptionSpec& spec);

// ---- clip generation ----

/// Deterministic function of (seed, cfg).
ClipPair generate_clip(uint64_t seed, const GenConfig& cfg);

// ---- windowed sampling ----

/// Mirrors i into [0, L-1]: i < 0 -> -i, i >= L -> 2(L-1)-i, repeated.
int reflect_index(int i, int length);

/// Source indices {t + k*stride, k = -N..N} after reflection.
std::vector<int> window_indices(int t, int length, int N, int stride);

/// Builds the window at frame t: source frames from the corrupted clip,
/// center = corrupted[t], target = clean[t]. prev_output falls back to
/// corrupted[max(t-1, 0)] when no recurrence history is supplied.
WindowBatch sample_window(const ClipPair& clip, int t, const SamplerConfig& cfg,
                          const Tensor* prev_output = nullptr);

// ---- augmentation ----

void hflip_image(Tensor& img);  // [H, W, C]
void hflip_video(Tensor& vid);  // [T, H, W, C]

/// brightness add, then contrast about 0.5, then saturation toward the pixel
/// gray, then clamp to [0, 1]. Identity settings (0, 1, 1) are bit-exact
/// no-ops. Accepts [H, W, C] or [T, H, W, C].
void color_jitter(Tensor& t, double brightness, double contrast, double saturation);

/// With probability 0.5 flips all members together (when cfg.augment_flip);
/// applies one shared jitter draw to source, prev and target so the
/// supervision relation is preserved.
WindowBatch augment(const WindowBatch& batch, const SamplerConfig& cfg, Rng& rng);

// ---- corpus I/O ----

struct ManifestEntry {
  int clip_id = 0;
  uint64_t seed = 0;
  std::string dir;
  std::vector<CaptionSegment> schedule;
};

struct CorpusManifest {
  std::string root;
  uint64_t seed = 0;
  GenConfig config;
  std::vector<ManifestEntry> entries;
};

/// round(clamp01(v)*255)/255 elementwise: the on-disk value grid.
Tensor quantize_frames(const Tensor& t);

/// Writes n_clips deterministic clips under root (clean/, corrupted/, alpha/
/// PNG frames and flows/ files per clip) plus manifest.txt. Re-running with
/// the same seed rewrites byte-identical files; a manifest with a different
/// seed already present is an error.
CorpusManifest write_corpus(int n_clips, const std::string& root, uint64_t seed,
                            const GenConfig& cfg);

CorpusManifest read_manifest(const std::string& root);

/// Reads one clip back from disk; frames carry 8-bit quantization, flows
/// float32 precision. The schedule and seed come from the manifest.
ClipPair load_clip(const CorpusManifest& manifest, int index);

}  // namespace bvd::datagen
