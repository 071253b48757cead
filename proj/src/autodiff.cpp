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

#include "bvd/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace bvd::ad {

namespace {
int64_t g_order_counter = 0;
int g_no_grad_depth = 0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;
using RowMap = Eigen::Map<RowMat>;
using CRowMap = Eigen::Map<const RowMat>;
}  // namespace

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->order = ++g_order_counter;
  return n;
}

Var leaf(Tensor v) {
  auto n = constant(std::move(v));
  n->requires_grad = true;
  return n;
}

Var detach(const Var& v) { return constant(v->value); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->order = ++g_order_counter;
  bool needs = false;
  if (g_no_grad_depth == 0)
    for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Collect the reachable grad-requiring subgraph, then run in reverse
  // creation order (a valid topological order for this tape).
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->order > b->order; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : nodes) {
    if (!n->backward_fn) continue;
    n->ensure_grad();
    for (const auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  const double* pb = b->value.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (int s = 0; s < 2; ++s) {
      Node& p = *n.parents[s];
      if (!p.requires_grad) continue;
      for (int64_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  const double* pb = b->value.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb2 = *n.parents[1];
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      if (pa.requires_grad) pa.grad[i] += n.grad[i];
      if (pb2.requires_grad) pb2.grad[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  const double* pb = b->value.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb2 = *n.parents[1];
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb2.value[i];
      if (pb2.requires_grad) pb2.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

Var divide(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "divide");
  Tensor out = a->value;
  const double* pb = b->value.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] /= pb[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb2 = *n.parents[1];
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      double inv = 1.0 / pb2.value[i];
      if (pa.requires_grad) pa.grad[i] += n.grad[i] * inv;
      if (pb2.requires_grad) pb2.grad[i] -= n.grad[i] * pa.value[i] * inv * inv;
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += s;
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i];
  });
}

Var abs(const Var& a) {
  Tensor out = a->value;
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::fabs(po[i]);
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      double v = p.value[i];
      double sgn = (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      p.grad[i] += n.grad[i] * sgn;
    }
  });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    if (po[i] < 0.0) po[i] *= slope;
  return make_op(std::move(out), {a}, [slope](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      p.grad[i] += n.grad[i] * (p.value[i] >= 0.0 ? 1.0 : slope);
  });
}

Var clamp01(const Var& a) {
  Tensor out = a->value;
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::clamp(po[i], 0.0, 1.0);
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      double v = p.value[i];
      if (v >= 0.0 && v <= 1.0) p.grad[i] += n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
  long double acc = 0.0L;
  const double* pa = a->value.data();
  for (int64_t i = 0; i < a->value.numel(); ++i) acc += pa[i];
  Tensor out({1}, static_cast<double>(acc));
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    double g = n.grad[0];
    for (int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += g;
  });
}

Var mean_all(const Var& a) {
  int64_t cnt = a->value.numel();
  if (cnt == 0) throw std::invalid_argument("mean_all: empty tensor");
  long double acc = 0.0L;
  const double* pa = a->value.data();
  for (int64_t i = 0; i < cnt; ++i) acc += pa[i];
  Tensor out({1}, static_cast<double>(acc / cnt));
  return make_op(std::move(out), {a}, [cnt](Node& n) {
    Node& p = *n.parents[0];
    double g = n.grad[0] / static_cast<double>(cnt);
    for (int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += g;
  });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.grad.numel(); ++i) p.grad[i] += n.grad[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != sb.size() || sa.empty())
    throw std::invalid_argument("concat_channels: rank mismatch");
  for (size_t i = 1; i < sa.size(); ++i)
    if (sa[i] != sb[i]) throw std::invalid_argument("concat_channels: trailing dims differ");
  std::vector<int> so = sa;
  so[0] = sa[0] + sb[0];
  Tensor out(so);
  int64_t na = a->value.numel(), nb = b->value.numel();
  std::copy(a->value.data(), a->value.data() + na, out.data());
  std::copy(b->value.data(), b->value.data() + nb, out.data() + na);
  return make_op(std::move(out), {a, b}, [na, nb](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad)
      for (int64_t i = 0; i < na; ++i) pa.grad[i] += n.grad[i];
    if (pb.requires_grad)
      for (int64_t i = 0; i < nb; ++i) pb.grad[i] += n.grad[na + i];
  });
}

Var chw_from_image(const Var& img) {
  const auto& s = img->value.shape();
  if (s.size() != 3) throw std::invalid_argument("chw_from_image: expected [H,W,C]");
  int H = s[0], W = s[1], C = s[2];
  Tensor out({C, H, W});
  const double* pi = img->value.data();
  double* po = out.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        po[(static_cast<int64_t>(c) * H + y) * W + x] = pi[(static_cast<int64_t>(y) * W + x) * C + c];
  return make_op(std::move(out), {img}, [H, W, C](Node& n) {
    Node& p = *n.parents[0];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c)
          p.grad[(static_cast<int64_t>(y) * W + x) * C + c] +=
              n.grad[(static_cast<int64_t>(c) * H + y) * W + x];
  });
}

Var image_from_chw(const Var& chw) {
  const auto& s = chw->value.shape();
  if (s.size() != 3) throw std::invalid_argument("image_from_chw: expected [C,H,W]");
  int C = s[0], H = s[1], W = s[2];
  Tensor out({H, W, C});
  const double* pi = chw->value.data();
  double* po = out.data();
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        po[(static_cast<int64_t>(y) * W + x) * C + c] = pi[(static_cast<int64_t>(c) * H + y) * W + x];
  return make_op(std::move(out), {chw}, [C, H, W](Node& n) {
    Node& p = *n.parents[0];
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          p.grad[(static_cast<int64_t>(c) * H + y) * W + x] +=
              n.grad[(static_cast<int64_t>(y) * W + x) * C + c];
  });
}

// ---------------------------------------------------------------------------
// convolution: im2col + GEMM, shared by the 2d and 3d entry points
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int cin, t, h, w;
  int cout, kt, kh, kw;
  int to, ho, wo;
  int64_t K, M;  // K = cin*kt*kh*kw, M = to*ho*wo
};

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ws, const ConvGeom& g) {
  if (xs.size() != 4 || ws.size() != 5) throw std::invalid_argument("conv3d: bad ranks");
  ConvDims d;
  d.cin = xs[0];
  d.t = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.kt = ws[2];
  d.kh = ws[3];
  d.kw = ws[4];
  if (ws[1] != d.cin) throw std::invalid_argument("conv3d: channel mismatch");
  auto out_extent = [](int in, int k, int s, int p, int dil) {
    int eff = dil * (k - 1) + 1;
    int num = in + 2 * p - eff;
    if (num < 0 || s < 1) return -1;
    return num / s + 1;
  };
  d.to = out_extent(d.t, d.kt, g.st, g.pt, g.dt);
  d.ho = out_extent(d.h, d.kh, g.sy, g.py, g.dy);
  d.wo = out_extent(d.w, d.kw, g.sx, g.px, g.dx);
  if (d.to <= 0 || d.ho <= 0 || d.wo <= 0)
    throw std::invalid_argument("conv3d: output would be empty for input " +
                                Tensor::shape_str(xs));
  d.K = static_cast<int64_t>(d.cin) * d.kt * d.kh * d.kw;
  d.M = static_cast<int64_t>(d.to) * d.ho * d.wo;
  return d;
}

// col is K x M, column-major: one contiguous patch per output position.
void im2col(const double* x, const ConvDims& d, const ConvGeom& g, double* col) {
  const int64_t planeHW = static_cast<int64_t>(d.h) * d.w;
  const int64_t planeTHW = static_cast<int64_t>(d.t) * planeHW;
  int64_t m = 0;
  for (int to = 0; to < d.to; ++to) {
    const int t0 = to * g.st - g.pt;
    for (int ho = 0; ho < d.ho; ++ho) {
      const int y0 = ho * g.sy - g.py;
      for (int wo = 0; wo < d.wo; ++wo, ++m) {
        const int x0 = wo * g.sx - g.px;
        double* dst = col + m * d.K;
        for (int c = 0; c < d.cin; ++c) {
          const double* xc = x + c * planeTHW;
          for (int kt = 0; kt < d.kt; ++kt) {
            const int tt = t0 + kt * g.dt;
            const bool tin = (tt >= 0 && tt < d.t);
            for (int ky = 0; ky < d.kh; ++ky) {
              const int yy = y0 + ky * g.dy;
              const bool yin = tin && (yy >= 0 && yy < d.h);
              const double* row = yin ? xc + tt * planeHW + static_cast<int64_t>(yy) * d.w : nullptr;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int xx = x0 + kx * g.dx;
                *dst++ = (yin && xx >= 0 && xx < d.w) ? row[xx] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

// Scatter-add of the column gradient back onto the input gradient.
void col2im_add(const double* col, const ConvDims& d, const ConvGeom& g, double* gx) {
  const int64_t planeHW = static_cast<int64_t>(d.h) * d.w;
  const int64_t planeTHW = static_cast<int64_t>(d.t) * planeHW;
  int64_t m = 0;
  for (int to = 0; to < d.to; ++to) {
    const int t0 = to * g.st - g.pt;
    for (int ho = 0; ho < d.ho; ++ho) {
      const int y0 = ho * g.sy - g.py;
      for (int wo = 0; wo < d.wo; ++wo, ++m) {
        const int x0 = wo * g.sx - g.px;
        const double* src = col + m * d.K;
        for (int c = 0; c < d.cin; ++c) {
          double* xc = gx + c * planeTHW;
          for (int kt = 0; kt < d.kt; ++kt) {
            const int tt = t0 + kt * g.dt;
            const bool tin = (tt >= 0 && tt < d.t);
            for (int ky = 0; ky < d.kh; ++ky) {
              const int yy = y0 + ky * g.dy;
              const bool yin = tin && (yy >= 0 && yy < d.h);
              double* row = yin ? xc + tt * planeHW + static_cast<int64_t>(yy) * d.w : nullptr;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int xx = x0 + kx * g.dx;
                if (yin && xx >= 0 && xx < d.w) row[xx] += src[kx];
              }
              src += d.kw;
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::vector<int> conv3d_out_shape(const std::vector<int>& xshape,
                                  const std::vector<int>& wshape, const ConvGeom& g) {
  ConvDims d = conv_dims(xshape, wshape, g);
  return {d.cout, d.to, d.ho, d.wo};
}

Var conv3d(const Var& x, const Var& w, const Var& b, const ConvGeom& g) {
  ConvDims d = conv_dims(x->value.shape(), w->value.shape(), g);
  const bool has_bias = b && b->value.numel() > 0;
  if (has_bias && b->value.numel() != d.cout)
    throw std::invalid_argument("conv3d: bias size mismatch");

  ColMat col(d.K, d.M);
  im2col(x->value.data(), d, g, col.data());

  Tensor out({d.cout, d.to, d.ho, d.wo});
  CRowMap wm(w->value.data(), d.cout, d.K);
  RowMap om(out.data(), d.cout, d.M);
  om.noalias() = wm * col;
  if (has_bias) {
    double* po = out.data();
    for (int c = 0; c < d.cout; ++c) {
      const double bc = b->value[c];
      for (int64_t m = 0; m < d.M; ++m) po[c * d.M + m] += bc;
    }
  }

  std::vector<Var> parents = has_bias ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(std::move(out), std::move(parents), [d, g, has_bias](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    CRowMap gm(n.grad.data(), d.cout, d.M);

    if (pw.requires_grad) {
      ColMat col(d.K, d.M);
      im2col(px.value.data(), d, g, col.data());
      RowMap gw(pw.grad.data(), d.cout, d.K);
      gw.noalias() += gm * col.transpose();
    }
    if (px.requires_grad) {
      CRowMap wm(pw.value.data(), d.cout, d.K);
      ColMat gcol(d.K, d.M);
      gcol.noalias() = wm.transpose() * gm;
      col2im_add(gcol.data(), d, g, px.grad.data());
    }
    if (has_bias && n.parents[2]->requires_grad) {
      Node& pb = *n.parents[2];
      for (int c = 0; c < d.cout; ++c) {
        long double acc = 0.0L;
        for (int64_t m = 0; m < d.M; ++m) acc += n.grad[c * d.M + m];
        pb.grad[c] += static_cast<double>(acc);
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, const ConvGeom& g) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 3 || ws.size() != 4) throw std::invalid_argument("conv2d: bad ranks");
  // [C,H,W] is bitwise [C,1,H,W]; run the shared 3d kernel with unit depth.
  Var x4 = reshape(x, {xs[0], 1, xs[1], xs[2]});
  Var w5 = reshape(w, {ws[0], ws[1], 1, ws[2], ws[3]});
  ConvGeom g3 = g;
  g3.kt = 1;
  g3.st = 1;
  g3.pt = 0;
  g3.dt = 1;
  Var y = conv3d(x4, w5, b, g3);
  const auto& ys = y->value.shape();
  return reshape(y, {ys[0], ys[2], ys[3]});
}

// ---------------------------------------------------------------------------
// spatial
// ---------------------------------------------------------------------------

Var upsample2_nearest(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 3 && s.size() != 4)
    throw std::invalid_argument("upsample2_nearest: expected [C,H,W] or [C,T,H,W]");
  // Leading dims collapse into one plane index; only H and W scale.
  int64_t planes = 1;
  for (size_t i = 0; i + 2 < s.size(); ++i) planes *= s[i];
  int H = s[s.size() - 2], W = s[s.size() - 1];
  std::vector<int> os = s;
  os[os.size() - 2] = 2 * H;
  os[os.size() - 1] = 2 * W;
  Tensor out(os);
  const double* pi = x->value.data();
  double* po = out.data();
  for (int64_t c = 0; c < planes; ++c)
    for (int y = 0; y < 2 * H; ++y) {
      const double* srow = pi + (c * H + y / 2) * W;
      double* drow = po + (c * 2 * H + y) * 2 * W;
      for (int xx = 0; xx < 2 * W; ++xx) drow[xx] = srow[xx / 2];
    }
  return make_op(std::move(out), {x}, [planes, H, W](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t c = 0; c < planes; ++c)
      for (int y = 0; y < 2 * H; ++y) {
        double* srow = p.grad.data() + (c * H + y / 2) * W;
        const double* drow = n.grad.data() + (c * 2 * H + y) * 2 * W;
        for (int xx = 0; xx < 2 * W; ++xx) srow[xx / 2] += drow[xx];
      }
  });
}

// ---------------------------------------------------------------------------
// image-domain ops
// ---------------------------------------------------------------------------

Var box_filter_valid(const Var& img, int k) {
  const auto& s = img->value.shape();
  if (s.size() != 3) throw std::invalid_argument("box_filter_valid: expected [H,W,C]");
  int H = s[0], W = s[1], C = s[2];
  if (k < 1 || H < k || W < k)
    throw std::invalid_argument("box_filter_valid: image smaller than window");
  int Ho = H - k + 1, Wo = W - k + 1;
  const double inv = 1.0 / (static_cast<double>(k) * k);

  // Separable pass: rows first, then columns.
  Tensor rows({H, Wo, C});
  const double* pi = img->value.data();
  {
    double* pr = rows.data();
    for (int y = 0; y < H; ++y)
      for (int xo = 0; xo < Wo; ++xo)
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int dx = 0; dx < k; ++dx) acc += pi[(static_cast<int64_t>(y) * W + xo + dx) * C + c];
          pr[(static_cast<int64_t>(y) * Wo + xo) * C + c] = acc;
        }
  }
  Tensor out({Ho, Wo, C});
  {
    const double* pr = rows.data();
    double* po = out.data();
    for (int yo = 0; yo < Ho; ++yo)
      for (int xo = 0; xo < Wo; ++xo)
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int dy = 0; dy < k; ++dy) acc += pr[(static_cast<int64_t>(yo + dy) * Wo + xo) * C + c];
          po[(static_cast<int64_t>(yo) * Wo + xo) * C + c] = acc * inv;
        }
  }
  return make_op(std::move(out), {img}, [H, W, C, k, Ho, Wo, inv](Node& n) {
    Node& p = *n.parents[0];
    for (int yo = 0; yo < Ho; ++yo)
      for (int xo = 0; xo < Wo; ++xo)
        for (int c = 0; c < C; ++c) {
          double g = n.grad[(static_cast<int64_t>(yo) * Wo + xo) * C + c] * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              p.grad[(static_cast<int64_t>(yo + dy) * W + xo + dx) * C + c] += g;
        }
  });
}

Var hdiff(const Var& img) {
  const auto& s = img->value.shape();
  if (s.size() != 3) throw std::invalid_argument("hdiff: expected [H,W,C]");
  int H = s[0], W = s[1], C = s[2];
  if (W < 2) throw std::invalid_argument("hdiff: width < 2");
  Tensor out({H, W - 1, C});
  const double* pi = img->value.data();
  double* po = out.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 1 < W; ++x)
      for (int c = 0; c < C; ++c)
        po[(static_cast<int64_t>(y) * (W - 1) + x) * C + c] =
            pi[(static_cast<int64_t>(y) * W + x + 1) * C + c] -
            pi[(static_cast<int64_t>(y) * W + x) * C + c];
  return make_op(std::move(out), {img}, [H, W, C](Node& n) {
    Node& p = *n.parents[0];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x)
        for (int c = 0; c < C; ++c) {
          double g = n.grad[(static_cast<int64_t>(y) * (W - 1) + x) * C + c];
          p.grad[(static_cast<int64_t>(y) * W + x + 1) * C + c] += g;
          p.grad[(static_cast<int64_t>(y) * W + x) * C + c] -= g;
        }
  });
}

Var vdiff(const Var& img) {
  const auto& s = img->value.shape();
  if (s.size() != 3) throw std::invalid_argument("vdiff: expected [H,W,C]");
  int H = s[0], W = s[1], C = s[2];
  if (H < 2) throw std::invalid_argument("vdiff: height < 2");
  Tensor out({H - 1, W, C});
  const double* pi = img->value.data();
  double* po = out.data();
  for (int y = 0; y + 1 < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        po[(static_cast<int64_t>(y) * W + x) * C + c] =
            pi[(static_cast<int64_t>(y + 1) * W + x) * C + c] -
            pi[(static_cast<int64_t>(y) * W + x) * C + c];
  return make_op(std::move(out), {img}, [H, W, C](Node& n) {
    Node& p = *n.parents[0];
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c) {
          double g = n.grad[(static_cast<int64_t>(y) * W + x) * C + c];
          p.grad[(static_cast<int64_t>(y + 1) * W + x) * C + c] += g;
          p.grad[(static_cast<int64_t>(y) * W + x) * C + c] -= g;
        }
  });
}

}  // namespace bvd::ad
