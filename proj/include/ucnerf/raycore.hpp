#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ucnerf/camera.hpp"
#include "ucnerf/mathutil.hpp"

// Ray setup, stratified sampling, positional encoding, and the compositing
// conventions shared by training, evaluation, and the oracles.
//
// Conventions:
//  - integer pixel (ix, iy) is sampled at continuous coords (ix+0.5, iy+0.5);
//  - delta_i = t_{i+1} - t_i, with the last delta set to far - t_N;
//  - rendered depth is sum(w_i t_i); when total opacity < kEmptyOpacity the
//    reported depth is `far` (empty space);
//  - background contributes bg * tail_transmittance to color.

namespace ucnerf {

inline constexpr double kEmptyOpacity = 1e-3;

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
  double near = 0;
  double far = 0;
};

struct SampleBatch {
  std::vector<double> t;      // R*S ascending within each ray
  std::vector<double> delta;  // R*S
  int64_t n_rays = 0;
  int64_t n_samples = 0;
};

inline Ray make_ray(const Camera& cam, double u, double v, double near,
                    double far) {
  if (!(near > 0.0) || !(far > near))
    throw std::invalid_argument("make_ray: need 0 < near < far");
  if (u < 0.0 || u > cam.width || v < 0.0 || v > cam.height)
    throw std::invalid_argument("make_ray: pixel outside image bounds");
  auto [o, d] = cam.ray_through(u, v);
  return Ray{o, d, near, far};
}

inline std::vector<Ray> generate_rays(const Camera& cam,
                                      const std::vector<std::pair<double, double>>& pixels,
                                      double near, double far) {
  std::vector<Ray> out;
  out.reserve(pixels.size());
  for (const auto& [u, v] : pixels) out.push_back(make_ray(cam, u, v, near, far));
  return out;
}

// One uniform draw per bin of [near, far); strictly ascending samples.
inline void stratified_sample(const Ray& ray, int64_t S, Rng& rng,
                              SampleBatch& out) {
  if (S < 1) throw std::invalid_argument("stratified_sample: S < 1");
  const double w = (ray.far - ray.near) / static_cast<double>(S);
  const size_t base = out.t.size();
  out.t.resize(base + S);
  out.delta.resize(base + S);
  for (int64_t i = 0; i < S; ++i)
    out.t[base + i] = ray.near + (static_cast<double>(i) + rng.uniform()) * w;
  for (int64_t i = 0; i + 1 < S; ++i)
    out.delta[base + i] = out.t[base + i + 1] - out.t[base + i];
  out.delta[base + S - 1] = ray.far - out.t[base + S - 1];
  out.n_rays += 1;
  out.n_samples = S;
}

// ---- positional encoding ----
// Layout per row: [x, y, z] (if identity) then for k = 0..L-1:
// sin(2^k pi x), sin(2^k pi y), sin(2^k pi z), cos(...) likewise.

struct EncodingConfig {
  int L_pos = 4;
  int L_dir = 2;
  bool include_identity = true;
};

inline int encode_dim(int L, bool include_identity) {
  return 3 * ((include_identity ? 1 : 0) + 2 * L);
}

template <typename T>
inline void positional_encode(const double* xs, int64_t n, int L,
                              bool include_identity, T* out) {
  const int dim = encode_dim(L, include_identity);
  for (int64_t i = 0; i < n; ++i) {
    const double* x = xs + i * 3;
    T* o = out + i * dim;
    int c = 0;
    if (include_identity)
      for (int d = 0; d < 3; ++d) o[c++] = static_cast<T>(x[d]);
    for (int k = 0; k < L; ++k) {
      const double f = std::ldexp(kPi, k);
      for (int d = 0; d < 3; ++d) o[c++] = static_cast<T>(std::sin(f * x[d]));
      for (int d = 0; d < 3; ++d) o[c++] = static_cast<T>(std::cos(f * x[d]));
    }
  }
}

// ---- host compositing ----

struct CompositeResult {
  double rgb[3] = {0, 0, 0};
  double depth = 0;  // unnormalized expectation sum(w_i t_i), far on empty rays
  double tail = 1;   // transmittance past the last sample

  // Opacity-normalized depth: the surface estimate used for depth maps.
  double surface_depth(double far) const {
    const double opacity = 1.0 - tail;
    return opacity < kEmptyOpacity ? far : depth / opacity;
  }
};

inline std::vector<double> transmittance_host(const std::vector<double>& sigma,
                                              const std::vector<double>& delta) {
  if (sigma.size() != delta.size())
    throw std::invalid_argument("transmittance: size mismatch");
  std::vector<double> T(sigma.size());
  double trans = 1.0;
  for (size_t i = 0; i < sigma.size(); ++i) {
    if (sigma[i] < 0.0)
      throw std::invalid_argument("transmittance: negative density");
    T[i] = trans;
    trans *= std::exp(-sigma[i] * delta[i]);
  }
  return T;
}

// sigma/color/t/delta for one ray; color is 3 per sample.
inline CompositeResult composite_ray(const double* sigma, const double* color,
                                     const double* t, const double* delta,
                                     int64_t S, double far,
                                     const double* bg = nullptr) {
  CompositeResult res;
  double trans = 1.0;
  for (int64_t s = 0; s < S; ++s) {
    if (sigma[s] < 0.0)
      throw std::invalid_argument("composite: negative density");
    const double a = -std::expm1(-sigma[s] * delta[s]);
    const double w = trans * a;
    res.rgb[0] += w * color[3 * s];
    res.rgb[1] += w * color[3 * s + 1];
    res.rgb[2] += w * color[3 * s + 2];
    res.depth += w * t[s];
    trans *= 1.0 - a;
  }
  res.tail = trans;
  if (bg)
    for (int d = 0; d < 3; ++d) res.rgb[d] += trans * bg[d];
  if (1.0 - trans < kEmptyOpacity) res.depth = far;
  return res;
}

}  // namespace ucnerf
