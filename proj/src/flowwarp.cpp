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

#include "bvd/flowwarp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace bvd::flow {

namespace {

// Bilinear sample of a [H, W, C] image at (x, y), coordinates clamped to the
// border. At integer coordinates the result equals the stored value exactly.
inline void sample_bilinear(const double* img, int H, int W, int C, double x,
                            double y, double* out) {
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, W - 1);
  int y1 = std::min(y0 + 1, H - 1);
  double fx = x - x0;
  double fy = y - y0;
  const double* p00 = img + (static_cast<int64_t>(y0) * W + x0) * C;
  const double* p01 = img + (static_cast<int64_t>(y0) * W + x1) * C;
  const double* p10 = img + (static_cast<int64_t>(y1) * W + x0) * C;
  const double* p11 = img + (static_cast<int64_t>(y1) * W + x1) * C;
  double w00 = (1.0 - fy) * (1.0 - fx);
  double w01 = (1.0 - fy) * fx;
  double w10 = fy * (1.0 - fx);
  double w11 = fy * fx;
  for (int c = 0; c < C; ++c)
    out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
}

}  // namespace

void require_flow(const Tensor& flow, int height, int width, const char* where) {
  const auto& s = flow.shape();
  if (s.size() != 3 || s[2] != 2)
    throw std::invalid_argument(std::string(where) + ": flow must be [H, W, 2], got " +
                                Tensor::shape_str(s));
  if (height >= 0 && (s[0] != height || s[1] != width))
    throw std::invalid_argument(std::string(where) + ": flow dims " + Tensor::shape_str(s) +
                                " do not match image " + std::to_string(height) + "x" +
                                std::to_string(width));
  for (int64_t i = 0; i < flow.numel(); ++i)
    if (!std::isfinite(flow[i]))
      throw std::invalid_argument(std::string(where) + ": non-finite flow value");
}

Tensor warp(const Tensor& image, const Tensor& flow) {
  const auto& s = image.shape();
  if (s.size() != 3) throw std::invalid_argument("warp: image must be [H, W, C]");
  int H = s[0], W = s[1], C = s[2];
  require_flow(flow, H, W, "warp");
  Tensor out(s);
  const double* pi = image.data();
  const double* pf = flow.data();
  double* po = out.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int64_t p = static_cast<int64_t>(y) * W + x;
      double dx = pf[p * 2 + 0];
      double dy = pf[p * 2 + 1];
      if (dx == 0.0 && dy == 0.0) {
        // Identity fast path keeps zero-flow warps bit-exact.
        std::memcpy(po + p * C, pi + p * C, sizeof(double) * C);
      } else {
        sample_bilinear(pi, H, W, C, x + dx, y + dy, po + p * C);
      }
    }
  return out;
}

ad::Var warp(const ad::Var& image, const Tensor& flow) {
  const auto& s = image->value.shape();
  if (s.size() != 3) throw std::invalid_argument("warp: image must be [H, W, C]");
  int H = s[0], W = s[1], C = s[2];
  require_flow(flow, H, W, "warp");
  Tensor out = warp(image->value, flow);
  Tensor flow_copy = flow;
  return ad::make_op(std::move(out), {image}, [H, W, C, flow_copy](ad::Node& n) {
    ad::Node& p = *n.parents[0];
    const double* pf = flow_copy.data();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int64_t pix = static_cast<int64_t>(y) * W + x;
        double sx = std::clamp(x + pf[pix * 2 + 0], 0.0, static_cast<double>(W - 1));
        double sy = std::clamp(y + pf[pix * 2 + 1], 0.0, static_cast<double>(H - 1));
        int x0 = static_cast<int>(std::floor(sx));
        int y0 = static_cast<int>(std::floor(sy));
        int x1 = std::min(x0 + 1, W - 1);
        int y1 = std::min(y0 + 1, H - 1);
        double fx = sx - x0;
        double fy = sy - y0;
        double w00 = (1.0 - fy) * (1.0 - fx);
        double w01 = (1.0 - fy) * fx;
        double w10 = fy * (1.0 - fx);
        double w11 = fy * fx;
        for (int c = 0; c < C; ++c) {
          double g = n.grad[pix * C + c];
          p.grad[(static_cast<int64_t>(y0) * W + x0) * C + c] += g * w00;
          p.grad[(static_cast<int64_t>(y0) * W + x1) * C + c] += g * w01;
          p.grad[(static_cast<int64_t>(y1) * W + x0) * C + c] += g * w10;
          p.grad[(static_cast<int64_t>(y1) * W + x1) * C + c] += g * w11;
        }
      }
  });
}

Tensor occlusion_mask(const Tensor& forward_flow, const Tensor& backward_flow,
                      double tol) {
  require_flow(forward_flow, -1, -1, "occlusion_mask");
  int H = forward_flow.dim(0), W = forward_flow.dim(1);
  require_flow(backward_flow, H, W, "occlusion_mask");
  Tensor mask({H, W});
  const double* pf = forward_flow.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int64_t p = static_cast<int64_t>(y) * W + x;
      double fx = pf[p * 2 + 0];
      double fy = pf[p * 2 + 1];
      double qx = x + fx;
      double qy = y + fy;
      if (qx < 0.0 || qx > W - 1 || qy < 0.0 || qy > H - 1) {
        mask[p] = 0.0;
        continue;
      }
      double back[2];
      sample_bilinear(backward_flow.data(), H, W, 2, qx, qy, back);
      double rx = fx + back[0];
      double ry = fy + back[1];
      mask[p] = (std::sqrt(rx * rx + ry * ry) < tol) ? 1.0 : 0.0;
    }
  return mask;
}

std::pair<Tensor, Tensor> synthetic_flow(const SceneMotion& motion) {
  int H = motion.height, W = motion.width;
  if (H <= 0 || W <= 0) throw std::invalid_argument("synthetic_flow: empty scene");
  if (motion.top_layer_prev.numel() != static_cast<int64_t>(H) * W ||
      motion.top_layer_cur.numel() != static_cast<int64_t>(H) * W)
    throw std::invalid_argument("synthetic_flow: layer maps do not match scene dims");
  Tensor fwd({H, W, 2});
  Tensor bwd({H, W, 2});
  int n_layers = static_cast<int>(motion.layer_velocity.size());
  for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
    int lp = static_cast<int>(motion.top_layer_prev[p]);
    int lc = static_cast<int>(motion.top_layer_cur[p]);
    if (lp < 0 || lp >= n_layers || lc < 0 || lc >= n_layers)
      throw std::invalid_argument("synthetic_flow: layer id out of range");
    fwd[p * 2 + 0] = motion.layer_velocity[lp].first;
    fwd[p * 2 + 1] = motion.layer_velocity[lp].second;
    bwd[p * 2 + 0] = -motion.layer_velocity[lc].first;
    bwd[p * 2 + 1] = -motion.layer_velocity[lc].second;
  }
  return {std::move(fwd), std::move(bwd)};
}

namespace {

Tensor to_gray(const Tensor& img) {
  const auto& s = img.shape();
  if (s.size() == 2) return img;
  if (s.size() != 3) throw std::invalid_argument("estimate_flow: image must be [H, W, C]");
  int H = s[0], W = s[1], C = s[2];
  Tensor g({H, W});
  for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += img[p * C + c];
    g[p] = acc / C;
  }
  return g;
}

Tensor downsample2(const Tensor& g) {
  int H = g.dim(0), W = g.dim(1);
  int Hh = H / 2, Wh = W / 2;
  Tensor out({Hh, Wh});
  for (int y = 0; y < Hh; ++y)
    for (int x = 0; x < Wh; ++x)
      out.at(y, x) = 0.25 * (g.at(2 * y, 2 * x) + g.at(2 * y, 2 * x + 1) +
                             g.at(2 * y + 1, 2 * x) + g.at(2 * y + 1, 2 * x + 1));
  return out;
}

inline double sample_clamped(const Tensor& g, int H, int W, int y, int x) {
  return g.at(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1));
}

// Dense field from a per-block grid by bilinear interpolation between block
// centers, clamped beyond the outermost centers.
Tensor densify(const Tensor& grid, int H, int W, int block) {
  int gh = grid.dim(0), gw = grid.dim(1);
  Tensor out({H, W, 2});
  double half = (block - 1) / 2.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double gy = std::clamp((y - half) / block, 0.0, static_cast<double>(gh - 1));
      double gx = std::clamp((x - half) / block, 0.0, static_cast<double>(gw - 1));
      int y0 = static_cast<int>(std::floor(gy));
      int x0 = static_cast<int>(std::floor(gx));
      int y1 = std::min(y0 + 1, gh - 1);
      int x1 = std::min(x0 + 1, gw - 1);
      double fy = gy - y0, fx = gx - x0;
      for (int c = 0; c < 2; ++c) {
        double v = (1 - fy) * ((1 - fx) * grid.at(y0, x0, c) + fx * grid.at(y0, x1, c)) +
                   fy * ((1 - fx) * grid.at(y1, x0, c) + fx * grid.at(y1, x1, c));
        out.at(y, x, c) = v;
      }
    }
  return out;
}

}  // namespace

Tensor estimate_flow(const Tensor& frame_a, const Tensor& frame_b) {
  constexpr int kBlock = 8;
  constexpr int kSearch = 4;
  constexpr int kScales = 3;

  Tensor ga = to_gray(frame_a);
  Tensor gb = to_gray(frame_b);
  require_same_shape(ga, gb, "estimate_flow");
  if (ga.dim(0) < kBlock || ga.dim(1) < kBlock)
    throw std::invalid_argument("estimate_flow: frames smaller than one block");

  std::vector<Tensor> pa{ga}, pb{gb};
  for (int s = 1; s < kScales; ++s) {
    if (pa.back().dim(0) / 2 < kBlock || pa.back().dim(1) / 2 < kBlock) break;
    pa.push_back(downsample2(pa.back()));
    pb.push_back(downsample2(pb.back()));
  }

  Tensor prior;  // dense [H, W, 2] at the current scale
  for (int s = static_cast<int>(pa.size()) - 1; s >= 0; --s) {
    const Tensor& A = pa[s];
    const Tensor& B = pb[s];
    int H = A.dim(0), W = A.dim(1);
    if (prior.empty()) {
      prior = Tensor({H, W, 2});
    } else {
      // Upsample the coarser field: bilinear resize, displacements doubled.
      const Tensor coarse = prior;
      int Hc = coarse.dim(0), Wc = coarse.dim(1);
      prior = Tensor({H, W, 2});
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double cy = std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(Hc - 1));
          double cx = std::clamp((x + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(Wc - 1));
          double v[2];
          sample_bilinear(coarse.data(), Hc, Wc, 2, cx, cy, v);
          prior.at(y, x, 0) = 2.0 * v[0];
          prior.at(y, x, 1) = 2.0 * v[1];
        }
    }

    int gh = (H + kBlock - 1) / kBlock;
    int gw = (W + kBlock - 1) / kBlock;
    Tensor grid({gh, gw, 2});
    for (int by = 0; by < gh; ++by)
      for (int bx = 0; bx < gw; ++bx) {
        int y0 = by * kBlock, x0 = bx * kBlock;
        int y1 = std::min(y0 + kBlock, H), x1 = std::min(x0 + kBlock, W);
        int cy = std::clamp((y0 + y1 - 1) / 2, 0, H - 1);
        int cx = std::clamp((x0 + x1 - 1) / 2, 0, W - 1);
        int px = static_cast<int>(std::lround(prior.at(cy, cx, 0)));
        int py = static_cast<int>(std::lround(prior.at(cy, cx, 1)));

        double best_cost = 0.0;
        double best_norm = 0.0;
        int best_dx = 0, best_dy = 0;
        bool first = true;
        for (int dy = -kSearch; dy <= kSearch; ++dy)
          for (int dx = -kSearch; dx <= kSearch; ++dx) {
            int tx = px + dx, ty = py + dy;
            double cost = 0.0;
            for (int y = y0; y < y1; ++y)
              for (int x = x0; x < x1; ++x)
                cost += std::fabs(A.at(y, x) - sample_clamped(B, H, W, y + ty, x + tx));
            double norm = static_cast<double>(tx) * tx + static_cast<double>(ty) * ty;
            // Ties go to the displacement closest to zero, then to the
            // earliest candidate in scan order, so flat frames stay at rest.
            if (first || cost < best_cost ||
                (cost == best_cost && norm < best_norm)) {
              first = false;
              best_cost = cost;
              best_norm = norm;
              best_dx = tx;
              best_dy = ty;
            }
          }
        grid.at(by, bx, 0) = best_dx;
        grid.at(by, bx, 1) = best_dy;
      }
    prior = densify(grid, H, W, kBlock);
  }
  return prior;
}

void write_flow(const std::string& path, const Tensor& flow) {
  require_flow(flow, -1, -1, "write_flow");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_flow: cannot open " + path);
  uint32_t h = static_cast<uint32_t>(flow.dim(0));
  uint32_t w = static_cast<uint32_t>(flow.dim(1));
  f.write("BVFL", 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  std::vector<float> buf(flow.numel());
  for (int64_t i = 0; i < flow.numel(); ++i) buf[i] = static_cast<float>(flow[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write_flow: write failed for " + path);
}

Tensor read_flow(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_flow: cannot open " + path);
  char magic[4];
  uint32_t h = 0, w = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  if (!f || std::memcmp(magic, "BVFL", 4) != 0)
    throw std::runtime_error("read_flow: bad magic in " + path);
  if (h == 0 || w == 0 || h > 1 << 20 || w > 1 << 20)
    throw std::runtime_error("read_flow: implausible dims in " + path);
  std::vector<float> buf(static_cast<size_t>(h) * w * 2);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("read_flow: truncated file " + path);
  Tensor flow({static_cast<int>(h), static_cast<int>(w), 2});
  for (int64_t i = 0; i < flow.numel(); ++i) flow[i] = buf[i];
  return flow;
}

}  // namespace bvd::flow
