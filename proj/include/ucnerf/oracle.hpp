#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ucnerf/mathutil.hpp"

// Independent reference implementations used to pin expected test values.
// Everything here is written as plain explicit loops on purpose: these
// oracles must not share code with the optimized kernels or the graph.

namespace ucnerf::oracle {

struct OracleConfig {
  double fd_step = 1e-5;
  int n_quadrature = 4096;
};

// Central finite differences of a scalar function, step scaled per element.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(x[i]));
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct QuadResult {
  double rgb[3] = {0, 0, 0};
  double depth = 0;          // unnormalized expectation sum(w_i t_i)
  double surface_depth = 0;  // opacity-normalized; far on empty rays
  double opacity = 0;
};

// Midpoint-rule quadrature of the volume rendering integral for analytic
// density/color fields. Empty rays (opacity below `empty_opacity`) report
// depth = far, matching the renderer convention.
inline QuadResult dense_quadrature_render(
    const std::function<double(const Vec3&)>& sigma_fn,
    const std::function<void(const Vec3&, const Vec3&, double*)>& color_fn,
    const Vec3& origin, const Vec3& dir, double near, double far, int n,
    const double* bg = nullptr, double empty_opacity = 1e-3) {
  if (n < 1) throw std::invalid_argument("dense_quadrature_render: n < 1");
  const double h = (far - near) / static_cast<double>(n);
  QuadResult res;
  double log_trans = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = near + (static_cast<double>(i) + 0.5) * h;
    const Vec3 x{origin.x + t * dir.x, origin.y + t * dir.y,
                 origin.z + t * dir.z};
    const double s = sigma_fn(x);
    if (s < 0.0)
      throw std::invalid_argument("dense_quadrature_render: negative density");
    const double trans = std::exp(log_trans);
    const double alpha = -std::expm1(-s * h);
    const double w = trans * alpha;
    double c[3];
    color_fn(x, dir, c);
    res.rgb[0] += w * c[0];
    res.rgb[1] += w * c[1];
    res.rgb[2] += w * c[2];
    res.depth += w * t;
    log_trans -= s * h;
  }
  const double tail = std::exp(log_trans);
  res.opacity = 1.0 - tail;
  if (bg)
    for (int d = 0; d < 3; ++d) res.rgb[d] += tail * bg[d];
  res.surface_depth =
      res.opacity < empty_opacity ? far : res.depth / res.opacity;
  if (res.opacity < empty_opacity) res.depth = far;
  return res;
}

// Expectation of `values` under a probability vector `p` (must sum to ~1).
inline double brute_expectation(const std::vector<double>& p,
                                const std::vector<double>& values) {
  if (p.size() != values.size() || p.empty())
    throw std::invalid_argument("brute_expectation: size mismatch");
  double sum = 0.0;
  for (double v : p) sum += v;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("brute_expectation: p does not sum to 1");
  double e = 0.0;
  for (size_t i = 0; i < p.size(); ++i) e += p[i] * values[i];
  return e;
}

}  // namespace ucnerf::oracle
