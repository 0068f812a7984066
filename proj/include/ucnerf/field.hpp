#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ucnerf/camera.hpp"
#include "ucnerf/graph.hpp"
#include "ucnerf/image.hpp"
#include "ucnerf/params.hpp"
#include "ucnerf/raycore.hpp"
#include "ucnerf/sweep.hpp"

namespace ucnerf {

// Conditional radiance field with two branches. The base branch sees encoded
// position plus multi-view conditioning (trilinear samples of the cascade's
// S volumes, source colors, validity flags) and is view-independent; the
// adaptive branch additionally sees the view direction and per-view image
// features. Outputs fuse under the depth-uncertainty map U:
//   c     = c_b (1-U) + c_a U
//   sigma = sigma_b U + sigma_a (1-U)        ("paper" fusion)
// "swapped" fusion exchanges the density mix:
//   sigma = sigma_b (1-U) + sigma_a U

struct FieldConfig {
  int trunk_width = 32;
  int trunk_depth = 2;
  int branch_width = 16;
  int l_pos = 4;
  int l_dir = 2;
  bool use_adaptive = true;
  bool use_uncertainty = true;
  std::string density_fusion = "paper";
};

// Per-chunk host geometry: where every sample lands in the conditioning
// volumes, the per-view feature grids and the source images.
template <typename T>
struct ConditionInputs {
  std::array<std::shared_ptr<const std::vector<T>>, 3> s_coords;  // 3/sample
  std::array<std::array<int, 3>, 3> s_dims{};                     // (Y, H, W)
  std::vector<std::shared_ptr<const std::vector<T>>> f2_coords;   // 2/sample
  std::vector<std::array<int, 2>> f2_dims;                        // (H, W)
  std::vector<T> gamma_x, gamma_d;  // [n, dx], [n, dd]
  std::vector<T> cond;              // [n, 4V]: 3V colors then V flags
  int n = 0, V = 0, dx = 0, dd = 0;
};

// Rays through the target camera with their per-ray unit world direction and
// ray-major camera-z sample depths.
struct SamplePoints {
  std::vector<double> u, v;  // per ray, full-res pixel coordinates
  std::vector<Vec3> dir;     // per ray
  std::vector<double> z;     // [R*S]
  int R = 0, S = 0;
};

template <typename T>
class FieldModule {
 public:
  using Id = typename Graph<T>::Id;
  FieldConfig cfg;

  FieldModule(const FieldConfig& c, int n_views, int feat_channels)
      : cfg(c), V_(n_views), Z_(feat_channels) {
    if (cfg.density_fusion != "paper" && cfg.density_fusion != "swapped")
      throw std::invalid_argument("field: unknown density_fusion '" +
                                  cfg.density_fusion + "'");
    if (cfg.trunk_depth < 1 || cfg.trunk_width < 1 || cfg.branch_width < 1)
      throw std::invalid_argument("field: bad layer sizes");
    if (cfg.l_pos < 1 || cfg.l_dir < 1)
      throw std::invalid_argument("field: bad encoding orders");
    if (V_ < 1 || Z_ < 4 || Z_ % 4 != 0)
      throw std::invalid_argument("field: bad view/channel counts");
  }

  int n_views() const { return V_; }
  int s_channels() const { return Z_ + Z_ / 2 + Z_ / 4; }
  int dx() const { return encode_dim(cfg.l_pos, true); }
  int dd() const { return encode_dim(cfg.l_dir, true); }
  int trunk_in() const { return dx() + s_channels() + 4 * V_; }
  int adapt_in() const { return cfg.trunk_width + dd() + V_ * (Z_ / 4) + V_; }

  void register_params(ParamStore<T>& ps, Rng& rng) {
    auto lin = [&](const std::string& name, int in, int out,
                   std::vector<T> binit) {
      const int w = ps.add(name + ".w", in, out,
                           he_init<T>(rng, in, static_cast<int64_t>(in) * out));
      const int b = ps.add(name + ".b", 1, out, std::move(binit));
      return Lin{w, b};
    };
    trunk_.clear();
    for (int l = 0; l < cfg.trunk_depth; ++l)
      trunk_.push_back(lin("field.trunk" + std::to_string(l),
                           l == 0 ? trunk_in() : cfg.trunk_width,
                           cfg.trunk_width, zeros<T>(cfg.trunk_width)));
    base_h_ = lin("field.base.h", cfg.trunk_width, cfg.branch_width,
                  zeros<T>(cfg.branch_width));
    base_out_ = lin("field.base.out", cfg.branch_width, 4, head_bias());
    if (cfg.use_adaptive) {
      adapt_h_ = lin("field.adapt.h", adapt_in(), cfg.branch_width,
                     zeros<T>(cfg.branch_width));
      adapt_out_ = lin("field.adapt.out", cfg.branch_width, 4, head_bias());
    }
  }

  // Host geometry for one chunk of samples: trilinear coordinates into each
  // S volume (plane index from the per-pixel first-plane map), bilinear
  // coordinates into each source view's full-res features and image colors
  // with validity flags, plus the positional/directional encodings.
  ConditionInputs<T> gather_condition(
      const Camera& tgt, const std::vector<Camera>& src_cams,
      const std::vector<const Image*>& src_images,
      const typename SweepModule<T>::CascadeOut& cas,
      const SamplePoints& pts) const {
    if (static_cast<int>(src_cams.size()) != V_ || src_images.size() != src_cams.size())
      throw std::invalid_argument("field: source view arity");
    const int n = pts.R * pts.S;
    if (static_cast<int>(pts.z.size()) != n ||
        static_cast<int>(pts.u.size()) != pts.R ||
        pts.v.size() != pts.u.size() || pts.dir.size() != pts.u.size())
      throw std::invalid_argument("field: sample shapes");
    ConditionInputs<T> ci;
    ci.n = n;
    ci.V = V_;
    ci.dx = dx();
    ci.dd = dd();

    std::array<std::shared_ptr<std::vector<T>>, 3> sc;
    for (int k = 0; k < 3; ++k) {
      const auto& st = cas.stage[k];
      ci.s_dims[k] = {st.Y, st.H, st.W};
      sc[k] = std::make_shared<std::vector<T>>(3 * static_cast<size_t>(n));
    }
    std::vector<std::shared_ptr<std::vector<T>>> fc(V_);
    for (int v = 0; v < V_; ++v) {
      ci.f2_dims.push_back({src_cams[v].height, src_cams[v].width});
      fc[v] = std::make_shared<std::vector<T>>(2 * static_cast<size_t>(n));
    }
    ci.cond.assign(static_cast<size_t>(n) * 4 * V_, T(0));
    std::vector<double> xyz(3 * static_cast<size_t>(n));
    std::vector<double> dirs(3 * static_cast<size_t>(n));

    for (int r = 0; r < pts.R; ++r)
      for (int s = 0; s < pts.S; ++s) {
        const int i = r * pts.S + s;
        const double z = pts.z[i];
        if (!(z > 0))
          throw std::invalid_argument("field: sample behind target camera");
        const Vec3 x = tgt.unproject(pts.u[r], pts.v[r], z);
        xyz[3 * i] = x.x;
        xyz[3 * i + 1] = x.y;
        xyz[3 * i + 2] = x.z;
        dirs[3 * i] = pts.dir[r].x;
        dirs[3 * i + 1] = pts.dir[r].y;
        dirs[3 * i + 2] = pts.dir[r].z;
        for (int k = 0; k < 3; ++k) {
          const auto& st = cas.stage[k];
          const double uk = pts.u[r] / st.scale - 0.5;
          const double vk = pts.v[r] / st.scale - 0.5;
          const double d0 = bilin(st.d0, st.H, st.W, uk, vk);
          (*sc[k])[3 * i] = static_cast<T>((z - d0) / st.spacing);
          (*sc[k])[3 * i + 1] = static_cast<T>(vk);
          (*sc[k])[3 * i + 2] = static_cast<T>(uk);
        }
        for (int v = 0; v < V_; ++v) {
          const Camera& sc_cam = src_cams[v];
          const Vec3 pc = sc_cam.R * x + sc_cam.t;
          T* row = ci.cond.data() + static_cast<size_t>(i) * 4 * V_;
          if (pc.z > 1e-9) {
            const double us = sc_cam.fx * pc.x / pc.z + sc_cam.cx;
            const double vs = sc_cam.fy * pc.y / pc.z + sc_cam.cy;
            const bool ok = us >= 0.0 && us <= sc_cam.width && vs >= 0.0 &&
                            vs <= sc_cam.height;
            (*fc[v])[2 * i] = static_cast<T>(us - 0.5);
            (*fc[v])[2 * i + 1] = static_cast<T>(vs - 0.5);
            if (ok) {
              row[3 * V_ + v] = T(1);
              sample_color(*src_images[v], us, vs, row + 3 * v);
            }
          } else {
            (*fc[v])[2 * i] = T(-1);
            (*fc[v])[2 * i + 1] = T(-1);
          }
        }
      }
    ci.gamma_x.resize(static_cast<size_t>(n) * ci.dx);
    positional_encode(xyz.data(), n, cfg.l_pos, true, ci.gamma_x.data());
    ci.gamma_d.resize(static_cast<size_t>(n) * ci.dd);
    positional_encode(dirs.data(), n, cfg.l_dir, true, ci.gamma_d.data());
    for (int k = 0; k < 3; ++k) ci.s_coords[k] = sc[k];
    for (int v = 0; v < V_; ++v) ci.f2_coords.push_back(fc[v]);
    return ci;
  }

  // Graph-side handles to the conditioning volumes: either the cascade's own
  // nodes or per-chunk leaf copies of their values.
  struct VolumeIds {
    std::array<Id, 3> S{-1, -1, -1};
    std::vector<Id> f2;
  };

  struct FieldOut {
    Id sigma = -1, rgb = -1;          // fused
    Id sigma_b = -1, rgb_b = -1;      // base branch
    Id sigma_a = -1, rgb_a = -1;      // adaptive branch (-1 when disabled)
  };

  // U_sample holds one uncertainty value per sample, already expanded from
  // the per-pixel map; must lie in [0, 1].
  FieldOut build(Graph<T>& g, ParamBinder<T>& pb, const VolumeIds& vol,
                 const ConditionInputs<T>& ci,
                 const std::vector<T>& U_sample) const {
    if (static_cast<int>(vol.f2.size()) != V_ || ci.V != V_)
      throw std::invalid_argument("field: volume arity");
    if (static_cast<int>(U_sample.size()) != ci.n)
      throw std::invalid_argument("field: U size");
    for (T u : U_sample)
      if (!(u >= T(0) && u <= T(1)))
        throw std::invalid_argument("field: U outside [0, 1]");
    const int n = ci.n;
    std::vector<Id> parts{g.value(n, ci.dx, ci.gamma_x)};
    for (int k = 0; k < 3; ++k)
      parts.push_back(g.gather_trilinear(vol.S[k], ci.s_dims[k][0],
                                         ci.s_dims[k][1], ci.s_dims[k][2],
                                         ci.s_coords[k]));
    const Id cond = g.value(n, 4 * V_, ci.cond);
    parts.push_back(cond);
    Id h = g.concat_cols(parts);
    for (const Lin& l : trunk_)
      h = g.relu(g.linear(h, pb.use(l.w), pb.use(l.b)));
    const Id hb = g.relu(g.linear(h, pb.use(base_h_.w), pb.use(base_h_.b)));
    const Id bout = g.linear(hb, pb.use(base_out_.w), pb.use(base_out_.b));
    FieldOut out;
    out.sigma_b = g.softplus(g.slice_cols(bout, 0, 1));
    out.rgb_b = g.sigmoid(g.slice_cols(bout, 1, 4));
    if (!cfg.use_adaptive) {
      out.sigma = out.sigma_b;
      out.rgb = out.rgb_b;
      return out;
    }
    std::vector<Id> aparts{h, g.value(n, ci.dd, ci.gamma_d)};
    for (int v = 0; v < V_; ++v)
      aparts.push_back(g.gather_bilinear(vol.f2[v], ci.f2_dims[v][0],
                                         ci.f2_dims[v][1], ci.f2_coords[v]));
    aparts.push_back(g.slice_cols(cond, 3 * V_, 4 * V_));
    const Id ha = g.relu(g.linear(g.concat_cols(aparts), pb.use(adapt_h_.w),
                                  pb.use(adapt_h_.b)));
    const Id aout = g.linear(ha, pb.use(adapt_out_.w), pb.use(adapt_out_.b));
    out.sigma_a = g.softplus(g.slice_cols(aout, 0, 1));
    out.rgb_a = g.sigmoid(g.slice_cols(aout, 1, 4));

    const Id U = cfg.use_uncertainty
                     ? g.value(n, 1, U_sample)
                     : g.value(n, 1, std::vector<T>(n, T(0)));
    const Id oneU = g.affine(U, T(-1), T(1));
    out.rgb = g.add(g.mul_colvec(out.rgb_b, oneU), g.mul_colvec(out.rgb_a, U));
    out.sigma = cfg.density_fusion == "paper"
                    ? g.add(g.mul(out.sigma_b, U), g.mul(out.sigma_a, oneU))
                    : g.add(g.mul(out.sigma_b, oneU), g.mul(out.sigma_a, U));
    return out;
  }

 private:
  struct Lin {
    int w = -1, b = -1;
  };
  int V_, Z_;
  std::vector<Lin> trunk_;
  Lin base_h_, base_out_, adapt_h_, adapt_out_;

  // Density bias starts at -1 so softplus opens near zero density.
  std::vector<T> head_bias() const { return {T(-1), T(0), T(0), T(0)}; }

  static double bilin(const std::vector<T>& m, int H, int W, double u,
                      double v) {
    const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, W - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, H - 1);
    const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    const double fu = std::clamp(u - x0, 0.0, 1.0);
    const double fv = std::clamp(v - y0, 0.0, 1.0);
    return (1 - fv) * ((1 - fu) * m[y0 * W + x0] + fu * m[y0 * W + x1]) +
           fv * ((1 - fu) * m[y1 * W + x0] + fu * m[y1 * W + x1]);
  }

  static void sample_color(const Image& im, double u, double v, T* out) {
    const double uc = u - 0.5, vc = v - 0.5;
    const int x0 = std::clamp(static_cast<int>(std::floor(uc)), 0, im.width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(vc)), 0, im.height - 1);
    const int x1 = std::min(x0 + 1, im.width - 1);
    const int y1 = std::min(y0 + 1, im.height - 1);
    const double fu = std::clamp(uc - x0, 0.0, 1.0);
    const double fv = std::clamp(vc - y0, 0.0, 1.0);
    for (int c = 0; c < 3; ++c) {
      const double a = (1 - fu) * im.at(y0, x0, c) + fu * im.at(y0, x1, c);
      const double b = (1 - fu) * im.at(y1, x0, c) + fu * im.at(y1, x1, c);
      out[c] = static_cast<T>((1 - fv) * a + fv * b);
    }
  }
};

}  // namespace ucnerf
