#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "ucnerf/camera.hpp"
#include "ucnerf/graph.hpp"
#include "ucnerf/image.hpp"
#include "ucnerf/io.hpp"
#include "ucnerf/params.hpp"

namespace ucnerf {

// Multi-view consistency cascade: per-source-view feature pyramids, plane
// sweeps into the target frustum, masked variance cost volumes, learned 3D
// regularization, per-pixel depth probability volumes, expected depth and a
// depth-concentration uncertainty map. Three stages run coarse to fine at
// 1/4, 1/2 and full resolution; each later stage re-centers its hypothesis
// range on the previous expectation (stop-gradient) and shrinks it.

// ---------------------------------------------------------------------------
// index helpers

// 3x3 neighborhood row indices over an HxW row-major grid; -1 pads borders.
inline std::shared_ptr<const std::vector<int32_t>> conv2d_indices(int H,
                                                                  int W) {
  auto idx = std::make_shared<std::vector<int32_t>>();
  idx->reserve(static_cast<size_t>(H) * W * 9);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          idx->push_back(yy < 0 || yy >= H || xx < 0 || xx >= W
                             ? -1
                             : yy * W + xx);
        }
  return idx;
}

// 3x3x3 neighborhood over a plane-major [Y*H*W] volume (row = j*H*W + y*W+x).
inline std::shared_ptr<const std::vector<int32_t>> conv3d_indices(int Y, int H,
                                                                  int W) {
  auto idx = std::make_shared<std::vector<int32_t>>();
  idx->reserve(static_cast<size_t>(Y) * H * W * 27);
  for (int j = 0; j < Y; ++j)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int dj = -1; dj <= 1; ++dj)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int jj = j + dj, yy = y + dy, xx = x + dx;
              idx->push_back(jj < 0 || jj >= Y || yy < 0 || yy >= H ||
                                     xx < 0 || xx >= W
                                 ? -1
                                 : (jj * H + yy) * W + xx);
            }
  return idx;
}

// Permutation turning a plane-major [Y*HW, 1] column into pixel-major
// [HW, Y] rows via gather_rows(group = Y).
inline std::shared_ptr<const std::vector<int32_t>> pixel_major_indices(
    int Y, int HW) {
  auto idx = std::make_shared<std::vector<int32_t>>();
  idx->reserve(static_cast<size_t>(HW) * Y);
  for (int p = 0; p < HW; ++p)
    for (int j = 0; j < Y; ++j) idx->push_back(j * HW + p);
  return idx;
}

// ---------------------------------------------------------------------------
// plane-sweep warps (host geometry)

template <typename T>
struct WarpGrid {
  std::shared_ptr<const std::vector<T>> uv;    // 2 per (plane, pixel) row
  std::shared_ptr<const std::vector<T>> mask;  // 1 per row, 0/1
};

// For each target stage pixel and hypothesis depth, the matching sample
// position in the source view's stage-resolution feature grid. hyp is
// pixel-major [HW*Y] camera-z depths; rows come out plane-major to match the
// cost volume layout. Samples behind the source camera or outside its image
// are masked invalid.
template <typename T>
WarpGrid<T> plane_warp(const Camera& tgt, const Camera& src, int Ws, int Hs,
                       int scale, const std::vector<T>& hyp, int Y) {
  const int HW = Ws * Hs;
  if (static_cast<int64_t>(hyp.size()) != static_cast<int64_t>(HW) * Y)
    throw std::invalid_argument("plane_warp: hyp size");
  auto uv = std::make_shared<std::vector<T>>(2 * static_cast<size_t>(Y) * HW);
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(Y) * HW);
  // x_src = z * (M d) + c with d the target pixel direction at unit depth.
  const Mat3 M = src.R * tgt.R.transpose();
  const Vec3 cvec = src.t - M * tgt.t;
  std::vector<double> ex(HW), ey(HW), ez(HW);
  for (int py = 0; py < Hs; ++py)
    for (int px = 0; px < Ws; ++px) {
      const double uf = (px + 0.5) * scale, vf = (py + 0.5) * scale;
      const Vec3 d{(uf - tgt.cx) / tgt.fx, (vf - tgt.cy) / tgt.fy, 1.0};
      const Vec3 e = M * d;
      ex[py * Ws + px] = e.x;
      ey[py * Ws + px] = e.y;
      ez[py * Ws + px] = e.z;
    }
  const double inv_s = 1.0 / scale;
  for (int j = 0; j < Y; ++j)
    for (int p = 0; p < HW; ++p) {
      const double z = static_cast<double>(hyp[static_cast<size_t>(p) * Y + j]);
      const double zs = z * ez[p] + cvec.z;
      const int64_t r = static_cast<int64_t>(j) * HW + p;
      if (zs <= 1e-9) {
        (*uv)[2 * r] = T(-1);
        (*uv)[2 * r + 1] = T(-1);
        (*mask)[r] = T(0);
        continue;
      }
      const double inv = 1.0 / zs;
      const double us = src.fx * (z * ex[p] + cvec.x) * inv + src.cx;
      const double vs = src.fy * (z * ey[p] + cvec.y) * inv + src.cy;
      const bool ok = us >= 0.0 && us <= src.width && vs >= 0.0 &&
                      vs <= src.height;
      (*uv)[2 * r] = static_cast<T>(us * inv_s - 0.5);
      (*uv)[2 * r + 1] = static_cast<T>(vs * inv_s - 0.5);
      (*mask)[r] = ok ? T(1) : T(0);
    }
  return {std::move(uv), std::move(mask)};
}

// Rows (plane, pixel) covered by fewer than two valid source views; those get
// the fill cost and carry no gradient.
template <typename T>
int64_t count_underfilled(const std::vector<WarpGrid<T>>& grids) {
  if (grids.empty()) return 0;
  const size_t n = grids[0].mask->size();
  int64_t bad = 0;
  for (size_t r = 0; r < n; ++r) {
    int cnt = 0;
    for (const auto& g : grids) cnt += (*g.mask)[r] != T(0);
    bad += cnt < 2;
  }
  return bad;
}

// ---------------------------------------------------------------------------
// hypothesis planes

// Evenly spaced camera-z depths shared by every pixel; pixel-major [HW*Y].
template <typename T>
std::vector<T> uniform_hyp(int HW, int Y, double near, double far) {
  if (Y < 2) throw std::invalid_argument("uniform_hyp: Y < 2");
  const double step = (far - near) / (Y - 1);
  std::vector<T> hyp(static_cast<size_t>(HW) * Y);
  for (int p = 0; p < HW; ++p)
    for (int j = 0; j < Y; ++j)
      hyp[static_cast<size_t>(p) * Y + j] = static_cast<T>(near + j * step);
  return hyp;
}

// Per-pixel window of width `range` centered on a previous depth estimate,
// clamped so every plane stays inside [near, far]; d0 gets the first plane.
template <typename T>
std::vector<T> narrowed_hyp(const std::vector<T>& center, int Y, double near,
                            double far, double range, std::vector<T>& d0,
                            double& spacing) {
  if (Y < 2) throw std::invalid_argument("narrowed_hyp: Y < 2");
  if (!(range > 0.0) || range > far - near)
    throw std::invalid_argument("narrowed_hyp: range");
  const int HW = static_cast<int>(center.size());
  spacing = range / (Y - 1);
  d0.resize(HW);
  std::vector<T> hyp(static_cast<size_t>(HW) * Y);
  for (int p = 0; p < HW; ++p) {
    const double c = std::clamp(static_cast<double>(center[p]),
                                near + range / 2, far - range / 2);
    const double lo = c - range / 2;
    d0[p] = static_cast<T>(lo);
    for (int j = 0; j < Y; ++j)
      hyp[static_cast<size_t>(p) * Y + j] = static_cast<T>(lo + j * spacing);
  }
  return hyp;
}

// Host bilinear 2x upsample of an [H*W] scalar map (pixel centers aligned).
template <typename T>
std::vector<T> upsample2_bilinear(const std::vector<T>& v, int H, int W) {
  std::vector<T> out(static_cast<size_t>(4) * H * W);
  const int Wo = 2 * W, Ho = 2 * H;
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      const double sx = (x + 0.5) / 2 - 0.5, sy = (y + 0.5) / 2 - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, W - 1);
      const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, H - 1);
      const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      const double fy = std::clamp(sy - y0, 0.0, 1.0);
      const double a = (1 - fy) * ((1 - fx) * v[y0 * W + x0] + fx * v[y0 * W + x1]);
      const double b = fy * ((1 - fx) * v[y1 * W + x0] + fx * v[y1 * W + x1]);
      out[static_cast<size_t>(y) * Wo + x] = static_cast<T>(a + b);
    }
  return out;
}

// ---------------------------------------------------------------------------
// uncertainty

// One minus the probability mass on the four planes bracketing the expected
// depth. Index = nearest plane at or below the expectation, window
// [Index-1, Index+2] clamped to the volume; result clamped to [0, 1].
template <typename T>
std::vector<T> uncertainty_map(const std::vector<T>& prob,
                               const std::vector<T>& depth,
                               const std::vector<T>& hyp, int Y) {
  const int HW = static_cast<int>(depth.size());
  if (static_cast<int64_t>(prob.size()) != static_cast<int64_t>(HW) * Y ||
      prob.size() != hyp.size())
    throw std::invalid_argument("uncertainty_map: shape");
  std::vector<T> U(HW);
  for (int p = 0; p < HW; ++p) {
    const T* h = hyp.data() + static_cast<size_t>(p) * Y;
    const T* pr = prob.data() + static_cast<size_t>(p) * Y;
    int j = 0;
    for (int k = Y - 1; k >= 0; --k)
      if (h[k] <= depth[p]) {
        j = k;
        break;
      }
    double mass = 0;
    for (int k = std::max(0, j - 1); k <= std::min(Y - 1, j + 2); ++k)
      mass += static_cast<double>(pr[k]);
    U[p] = static_cast<T>(std::clamp(1.0 - mass, 0.0, 1.0));
  }
  return U;
}

// ---------------------------------------------------------------------------
// config + module

struct SweepConfig {
  std::array<int, 3> stage_planes{48, 32, 8};
  int feat_channels = 8;      // stage-0 width; halves per stage
  double max_cost = 2.0;      // variance fill for under-covered rows
  double kappa_init = 10.0;   // photoconsistency skip gain
  double narrow = 1.0 / 3.0;  // hypothesis-range shrink per stage
};

template <typename T>
class SweepModule {
 public:
  using Id = typename Graph<T>::Id;
  SweepConfig cfg;

  explicit SweepModule(const SweepConfig& c = {}) : cfg(c) {
    for (int k = 0; k < 3; ++k)
      if (cfg.stage_planes[k] < 2)
        throw std::invalid_argument("sweep: stage planes < 2");
    if (cfg.feat_channels < 4 || cfg.feat_channels % 4 != 0)
      throw std::invalid_argument("sweep: feat channels must be multiple of 4");
  }

  int stage_channels(int k) const { return cfg.feat_channels >> k; }
  int stage_scale(int k) const { return 1 << (2 - k); }

  void register_params(ParamStore<T>& ps, Rng& rng) {
    const int Z = cfg.feat_channels;
    auto conv = [&](const std::string& name, int cin, int cout, bool zero) {
      const int fan = 9 * cin;
      const int w = ps.add(name + ".w", fan, cout,
                           zero ? zeros<T>(static_cast<int64_t>(fan) * cout)
                                : he_init<T>(rng, fan, static_cast<int64_t>(fan) * cout));
      const int b = ps.add(name + ".b", 1, cout, zeros<T>(cout));
      return Conv{w, b};
    };
    c0_ = conv("sweep.fpn.c0", 3, Z, false);
    c1_ = conv("sweep.fpn.c1", Z, Z, false);
    c2_ = conv("sweep.fpn.c2", Z, Z, false);
    h0_ = conv("sweep.fpn.h0", Z, Z, false);
    h1_ = conv("sweep.fpn.h1", 2 * Z, Z / 2, false);
    h2_ = conv("sweep.fpn.h2", Z / 2 + Z, Z / 4, false);
    for (int k = 0; k < 3; ++k) {
      const int C = stage_channels(k);
      const int fan = 27 * C;
      const std::string s = "sweep.reg" + std::to_string(k);
      reg_[k].wa = ps.add(s + ".wa", fan, C,
                          he_init<T>(rng, fan, static_cast<int64_t>(fan) * C));
      reg_[k].ba = ps.add(s + ".ba", 1, C, zeros<T>(C));
      reg_[k].wb = ps.add(s + ".wb", fan, C,
                          he_init<T>(rng, fan, static_cast<int64_t>(fan) * C));
      reg_[k].bb = ps.add(s + ".bb", 1, C, zeros<T>(C));
      reg_[k].wc = ps.add(s + ".wc", fan, 1, zeros<T>(fan));
      reg_[k].bc = ps.add(s + ".bc", 1, 1, zeros<T>(1));
      reg_[k].kappa =
          ps.add(s + ".kappa", 1, 1, {static_cast<T>(cfg.kappa_init)});
    }
  }

  // Feature pyramid for one source image leaf [H*W, 3]; stage k feature maps
  // come out at 1/4, 1/2, full resolution with Z, Z/2, Z/4 channels.
  std::array<Id, 3> features(Graph<T>& g, ParamBinder<T>& pb, Id img, int W,
                             int H) const {
    if (W % 4 != 0 || H % 4 != 0)
      throw std::invalid_argument("sweep: image dims must be multiples of 4");
    auto conv = [&](Id x, int Hc, int Wc, const Conv& c, bool act) {
      const Id y = g.linear(g.gather_rows(x, idx2d(Hc, Wc), 9), pb.use(c.w),
                            pb.use(c.b));
      return act ? g.relu(y) : y;
    };
    const Id a = conv(img, H, W, c0_, true);
    const Id ap = g.avgpool2(a, H, W);
    const Id b = conv(ap, H / 2, W / 2, c1_, true);
    const Id bp = g.avgpool2(b, H / 2, W / 2);
    const Id c = conv(bp, H / 4, W / 4, c2_, true);
    const Id f0 = conv(c, H / 4, W / 4, h0_, false);
    const Id u1 = g.upsample2(f0, H / 4, W / 4);
    const Id f1 = conv(g.concat_cols({u1, b}), H / 2, W / 2, h1_, false);
    const Id u2 = g.upsample2(f1, H / 2, W / 2);
    const Id f2 = conv(g.concat_cols({u2, a}), H, W, h2_, false);
    return {f0, f1, f2};
  }

  // Warped features -> masked variance cost volume, plane-major [Y*HW, C].
  Id build_cost(Graph<T>& g, const std::vector<Id>& feats,
                const std::vector<WarpGrid<T>>& grids, int Hs, int Ws) const {
    if (feats.size() != grids.size() || feats.size() < 2)
      throw std::invalid_argument("sweep: need >= 2 source views");
    std::vector<Id> warped;
    std::vector<std::shared_ptr<const std::vector<T>>> masks;
    for (size_t v = 0; v < feats.size(); ++v) {
      warped.push_back(g.gather_bilinear(feats[v], Hs, Ws, grids[v].uv));
      masks.push_back(grids[v].mask);
    }
    return g.variance_views_masked(warped, std::move(masks),
                                   static_cast<T>(cfg.max_cost));
  }

  // Two 3D conv layers produce the conditioning volume S; depth logits are a
  // zero-initialized head plus a learned multiple of the negated channel-mean
  // cost, so probabilities mirror photoconsistency from the first step.
  // Returns (S volume [Y*HW, C], probabilities pixel-major [HW, Y]).
  std::pair<Id, Id> regularize(Graph<T>& g, ParamBinder<T>& pb, int k, Id cost,
                               int Y, int Hs, int Ws) const {
    const Reg& r = reg_[k];
    const int C = stage_channels(k);
    const int64_t HW = static_cast<int64_t>(Hs) * Ws;
    const auto i3 = idx3d(Y, Hs, Ws);
    const Id gc = g.gather_rows(cost, i3, 27);
    const Id r1 = g.relu(g.linear(gc, pb.use(r.wa), pb.use(r.ba)));
    const Id g1 = g.gather_rows(r1, i3, 27);
    const Id S = g.linear(g1, pb.use(r.wb), pb.use(r.bb));
    const Id head = g.linear(g1, pb.use(r.wc), pb.use(r.bc));
    const Id wmean = g.value(C, 1, std::vector<T>(C, T(1) / static_cast<T>(C)));
    const Id cmean = g.linear(cost, wmean);
    const Id skip = g.mul(g.expand_rows(pb.use(r.kappa), Y * HW), cmean);
    const Id logits = g.sub(head, skip);
    const Id logits_px =
        g.gather_rows(logits, idxpm(Y, static_cast<int>(HW)), Y);
    return {S, g.softmax_rows(logits_px)};
  }

  struct StageOut {
    Id S = -1;      // [Y*HW, C] conditioning volume, plane-major
    Id P = -1;      // [HW, Y] plane probabilities, pixel-major
    Id depth = -1;  // [HW, 1] expected depth
    int W = 0, H = 0, Y = 0, C = 0, scale = 1;
    std::vector<T> hyp;  // pixel-major [HW*Y]
    std::vector<T> d0;   // per-pixel first plane
    double spacing = 0;
  };
  struct CascadeOut {
    std::array<StageOut, 3> stage;
    std::vector<Id> f2;  // per-view full-res features [H*W, Z/4]
    std::vector<T> U;    // [H*W] detached uncertainty
    int64_t underfilled = 0;
  };

  // Full cascade for one target camera. Stage-0 warp grids may be supplied
  // when cached by the caller (they depend only on the camera pair and depth
  // range); later stages depend on the running depth estimate and are rebuilt.
  CascadeOut run_cascade(Graph<T>& g, ParamBinder<T>& pb,
                         const std::vector<const Image*>& images,
                         const std::vector<Camera>& cams, const Camera& tgt,
                         double near, double far,
                         const std::vector<WarpGrid<T>>* stage0 = nullptr) const {
    const size_t V = images.size();
    if (V != cams.size() || V < 2)
      throw std::invalid_argument("sweep: need >= 2 source views");
    if (!(near > 0.0 && near < far))
      throw std::invalid_argument("sweep: bad depth range");
    const int W = tgt.width, H = tgt.height;
    if (W % 4 != 0 || H % 4 != 0)
      throw std::invalid_argument("sweep: image dims must be multiples of 4");
    std::vector<std::array<Id, 3>> feats(V);
    for (size_t v = 0; v < V; ++v) {
      const Image& im = *images[v];
      if (im.channels != 3 || im.width != cams[v].width ||
          im.height != cams[v].height)
        throw std::invalid_argument("sweep: image/camera mismatch");
      const Id leaf =
          g.value(static_cast<int64_t>(im.width) * im.height, 3,
                  std::vector<T>(im.data.begin(), im.data.end()));
      feats[v] = features(g, pb, leaf, im.width, im.height);
    }
    CascadeOut out;
    std::vector<T> prev_depth;  // detached, stage res
    for (int k = 0; k < 3; ++k) {
      StageOut st;
      st.scale = stage_scale(k);
      st.W = W / st.scale;
      st.H = H / st.scale;
      st.Y = cfg.stage_planes[k];
      st.C = stage_channels(k);
      const int HW = st.W * st.H;
      if (k == 0) {
        st.hyp = uniform_hyp<T>(HW, st.Y, near, far);
        st.d0.assign(HW, static_cast<T>(near));
        st.spacing = (far - near) / (st.Y - 1);
      } else {
        const std::vector<T> up =
            upsample2_bilinear(prev_depth, H / (st.scale * 2), W / (st.scale * 2));
        const double range = (far - near) * std::pow(cfg.narrow, k);
        st.hyp = narrowed_hyp(up, st.Y, near, far, range, st.d0, st.spacing);
      }
      std::vector<WarpGrid<T>> grids;
      if (k == 0 && stage0) {
        if (stage0->size() != V)
          throw std::invalid_argument("sweep: cached grid arity");
        grids = *stage0;
      } else {
        for (size_t v = 0; v < V; ++v)
          grids.push_back(plane_warp<T>(tgt, cams[v], st.W, st.H, st.scale,
                                        st.hyp, st.Y));
      }
      out.underfilled += count_underfilled(grids);
      std::vector<Id> fk(V);
      for (size_t v = 0; v < V; ++v) fk[v] = feats[v][k];
      const Id cost = build_cost(g, fk, grids, st.H, st.W);
      auto [S, P] = regularize(g, pb, k, cost, st.Y, st.H, st.W);
      st.S = S;
      st.P = P;
      const Id hypleaf = g.value(HW, st.Y, st.hyp);
      st.depth = g.sum_cols(g.mul(P, hypleaf));
      prev_depth = g.val(st.depth);
      out.stage[k] = std::move(st);
    }
    for (size_t v = 0; v < V; ++v) out.f2.push_back(feats[v][2]);
    const StageOut& s2 = out.stage[2];
    out.U = uncertainty_map(g.val(s2.P), g.val(s2.depth), s2.hyp, s2.Y);
    return out;
  }

 private:
  struct Conv {
    int w = -1, b = -1;
  };
  struct Reg {
    int wa = -1, ba = -1, wb = -1, bb = -1, wc = -1, bc = -1, kappa = -1;
  };
  Conv c0_, c1_, c2_, h0_, h1_, h2_;
  std::array<Reg, 3> reg_;

  using IdxPtr = std::shared_ptr<const std::vector<int32_t>>;
  mutable std::map<std::pair<int, int>, IdxPtr> idx2d_;
  mutable std::map<std::tuple<int, int, int>, IdxPtr> idx3d_;
  mutable std::map<std::pair<int, int>, IdxPtr> idxpm_;

  IdxPtr idx2d(int H, int W) const {
    auto& e = idx2d_[{H, W}];
    if (!e) e = conv2d_indices(H, W);
    return e;
  }
  IdxPtr idx3d(int Y, int H, int W) const {
    auto& e = idx3d_[{Y, H, W}];
    if (!e) e = conv3d_indices(Y, H, W);
    return e;
  }
  IdxPtr idxpm(int Y, int HW) const {
    auto& e = idxpm_[{Y, HW}];
    if (!e) e = pixel_major_indices(Y, HW);
    return e;
  }
};

// ---------------------------------------------------------------------------
// sparse supervision

// Confidence weights from reprojection errors: w = exp(-(omega/mean)^2),
// with weight 1 everywhere when the mean error is zero.
template <typename T>
std::vector<T> sparse_weights(const std::vector<SparsePoint>& pts) {
  std::vector<T> w(pts.size(), T(1));
  double mean = 0;
  for (const auto& p : pts) mean += p.omega;
  mean /= pts.empty() ? 1.0 : static_cast<double>(pts.size());
  if (mean > 0)
    for (size_t i = 0; i < pts.size(); ++i) {
      const double r = pts[i].omega / mean;
      w[i] = static_cast<T>(std::exp(-r * r));
    }
  return w;
}

// Weighted mean absolute deviation between each stage's expected-depth map
// (sampled bilinearly at the sparse points' stage coordinates) and the sparse
// depths, combined across stages with weights alpha.
template <typename T>
typename Graph<T>::Id consistency_loss(
    Graph<T>& g, const typename SweepModule<T>::CascadeOut& cas,
    const std::vector<SparsePoint>& pts,
    const std::array<double, 3>& alpha = {0.5, 1.0, 2.0}) {
  if (pts.empty()) throw std::invalid_argument("consistency_loss: no points");
  const auto wts = sparse_weights<T>(pts);
  const int64_t n = static_cast<int64_t>(pts.size());
  std::vector<T> depths(n);
  for (int64_t i = 0; i < n; ++i) depths[i] = static_cast<T>(pts[i].depth);
  const auto dleaf = g.value(n, 1, depths);
  const auto wleaf = g.value(n, 1, wts);
  std::vector<typename Graph<T>::Id> terms;
  std::vector<T> coeffs;
  for (int k = 0; k < 3; ++k) {
    const auto& st = cas.stage[k];
    auto uv = std::make_shared<std::vector<T>>(2 * n);
    for (int64_t i = 0; i < n; ++i) {
      (*uv)[2 * i] = static_cast<T>(pts[i].u / st.scale - 0.5);
      (*uv)[2 * i + 1] = static_cast<T>(pts[i].v / st.scale - 0.5);
    }
    const auto pred = g.gather_bilinear(st.depth, st.H, st.W, uv);
    const auto dev = g.absval(g.sub(pred, dleaf));
    terms.push_back(g.mean_all(g.mul(dev, wleaf)));
    coeffs.push_back(static_cast<T>(alpha[k]));
  }
  return g.weighted_sum(terms, coeffs);
}

}  // namespace ucnerf
