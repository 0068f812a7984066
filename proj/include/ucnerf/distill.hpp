#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ucnerf/graph.hpp"

namespace ucnerf {

// Training losses. Photometric and SfM terms act on rendered rays; the
// monocular distillation pair acts on depth patches routed by uncertainty:
// high-uncertainty patches get an affine-invariant gradient match against the
// prior, low-uncertainty patches get edge-aware smoothness.

struct LossWeights {
  double rgb = 10.0, con = 0.5, scale = 0.5, grad = 0.5, reg = 0.05;
};

// ---------------------------------------------------------------------------
// host helpers

// Least squares fit prior ~= s * pred + q over one patch.
struct ScaleShift {
  double s = 0, q = 0;
};

inline ScaleShift solve_scale_shift(const double* pred, const double* prior,
                                    int n, double var_eps = 1e-8) {
  if (n < 2) throw std::invalid_argument("scale fit: too few samples");
  double mp = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mp += pred[i];
    my += prior[i];
  }
  mp /= n;
  my /= n;
  double cov = 0, var = 0;
  for (int i = 0; i < n; ++i) {
    cov += (pred[i] - mp) * (prior[i] - my);
    var += (pred[i] - mp) * (pred[i] - mp);
  }
  cov /= n;
  var /= n;
  if (var < var_eps)
    throw std::invalid_argument("scale fit: constant prediction");
  const double s = cov / var;
  return {s, my - s * mp};
}

// Patch routing by mean uncertainty against the image mean; strictly above
// goes to the high set, ties stay low, an all-zero map keeps everything low.
template <typename T>
std::vector<uint8_t> partition_patches(
    const std::vector<T>& U, int W, int H,
    const std::vector<std::pair<int, int>>& corners, int side) {
  if (static_cast<int64_t>(U.size()) != static_cast<int64_t>(W) * H)
    throw std::invalid_argument("partition: U size");
  double thresh = 0;
  for (T u : U) thresh += static_cast<double>(u);
  thresh /= U.empty() ? 1.0 : static_cast<double>(U.size());
  std::vector<uint8_t> high;
  for (const auto& [x0, y0] : corners) {
    if (x0 < 0 || y0 < 0 || x0 + side > W || y0 + side > H)
      throw std::invalid_argument("partition: patch outside image");
    double m = 0;
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        m += static_cast<double>(U[(y0 + y) * W + x0 + x]);
    m /= side * side;
    high.push_back(m > thresh ? 1 : 0);
  }
  return high;
}

// ---------------------------------------------------------------------------
// graph builders

namespace detail {

template <typename T>
void check_finite(Graph<T>& g, typename Graph<T>::Id id, const char* name) {
  if (!std::isfinite(static_cast<double>(g.val(id)[0])))
    throw std::runtime_error(std::string("distill: ") + name + " not finite");
}

// Forward-difference index pairs inside row-major side x side patches,
// excluding the trailing border. axis 0 steps in x, axis 1 in y.
inline std::pair<std::shared_ptr<std::vector<int32_t>>,
                 std::shared_ptr<std::vector<int32_t>>>
diff_indices(int patches, int side, int axis) {
  auto a = std::make_shared<std::vector<int32_t>>();
  auto b = std::make_shared<std::vector<int32_t>>();
  const int xmax = axis == 0 ? side - 1 : side;
  const int ymax = axis == 0 ? side : side - 1;
  const int step = axis == 0 ? 1 : side;
  for (int p = 0; p < patches; ++p)
    for (int y = 0; y < ymax; ++y)
      for (int x = 0; x < xmax; ++x) {
        const int32_t at = p * side * side + y * side + x;
        a->push_back(at + step);
        b->push_back(at);
      }
  return {std::move(a), std::move(b)};
}

}  // namespace detail

// L_rgb: mean over rays of the squared color error.
template <typename T>
typename Graph<T>::Id rgb_loss(Graph<T>& g, typename Graph<T>::Id rgb,
                               const std::vector<T>& gt) {
  const int64_t R = g.rows(rgb);
  if (g.cols(rgb) != 3 || static_cast<int64_t>(gt.size()) != 3 * R)
    throw std::invalid_argument("distill: rgb loss shapes");
  const auto gleaf = g.value(R, 3, gt);
  const auto L = g.mean_all(g.sum_cols(g.square(g.sub(rgb, gleaf))));
  detail::check_finite(g, L, "rgb loss");
  return L;
}

// L_scale: confidence-weighted mean absolute deviation from sparse depth.
template <typename T>
typename Graph<T>::Id scale_loss(Graph<T>& g, typename Graph<T>::Id dhat,
                                 const std::vector<T>& dsfm,
                                 const std::vector<T>& w) {
  const int64_t M = g.rows(dhat);
  if (g.cols(dhat) != 1 || static_cast<int64_t>(dsfm.size()) != M ||
      w.size() != dsfm.size())
    throw std::invalid_argument("distill: scale loss shapes");
  const auto dleaf = g.value(M, 1, dsfm);
  const auto wleaf = g.value(M, 1, w);
  const auto L = g.mean_all(g.mul(g.absval(g.sub(dhat, dleaf)), wleaf));
  detail::check_finite(g, L, "scale loss");
  return L;
}

// L_grad on high-uncertainty patches: per patch, fit prior ~= s*pred + q in
// graph (so s and q carry gradient), then penalize the mean absolute forward
// difference of the residual in x and y. Patches whose prediction is (near)
// constant under the current values are skipped and counted.
template <typename T>
typename Graph<T>::Id grad_loss(Graph<T>& g, typename Graph<T>::Id dhat,
                                const std::vector<T>& prior, int patches,
                                int side, int* skipped,
                                double var_eps = 1e-8) {
  const int npx = side * side;
  if (g.cols(dhat) != 1 ||
      g.rows(dhat) != static_cast<int64_t>(patches) * npx ||
      prior.size() != static_cast<size_t>(patches) * npx)
    throw std::invalid_argument("distill: grad loss shapes");
  const auto& cur = g.val(dhat);
  std::vector<int> valid;
  for (int p = 0; p < patches; ++p) {
    double m = 0, var = 0;
    for (int i = 0; i < npx; ++i) m += cur[p * npx + i];
    m /= npx;
    for (int i = 0; i < npx; ++i) {
      const double d = cur[p * npx + i] - m;
      var += d * d;
    }
    if (var / npx >= var_eps) valid.push_back(p);
  }
  if (skipped) *skipped = patches - static_cast<int>(valid.size());
  if (valid.empty()) return g.constant_scalar(T(0));

  const int nv = static_cast<int>(valid.size());
  auto sel = std::make_shared<std::vector<int32_t>>();
  std::vector<T> pv(static_cast<size_t>(nv) * npx);
  for (int j = 0; j < nv; ++j)
    for (int i = 0; i < npx; ++i) {
      sel->push_back(valid[j] * npx + i);
      pv[static_cast<size_t>(j) * npx + i] = prior[valid[j] * npx + i];
    }
  const auto dv = g.gather_rows(dhat, std::move(sel));
  const auto yv = g.value(static_cast<int64_t>(nv) * npx, 1, pv);
  const auto pm = g.group_mean(dv, npx);
  const auto ym = g.group_mean(yv, npx);
  const auto dp = g.sub(dv, g.expand_rows(pm, npx));
  const auto dy = g.sub(yv, g.expand_rows(ym, npx));
  const auto cov = g.group_mean(g.mul(dp, dy), npx);
  const auto var = g.group_mean(g.square(dp), npx);
  const auto s = g.mul(cov, g.recip(var));
  const auto q = g.sub(ym, g.mul(s, pm));
  const auto fit = g.add(g.mul(g.expand_rows(s, npx), dv),
                         g.expand_rows(q, npx));
  const auto R = g.sub(yv, fit);
  typename Graph<T>::Id axis[2];
  for (int ax = 0; ax < 2; ++ax) {
    auto [ia, ib] = detail::diff_indices(nv, side, ax);
    axis[ax] = g.mean_all(
        g.absval(g.sub(g.gather_rows(R, std::move(ia)),
                       g.gather_rows(R, std::move(ib)))));
  }
  const auto L = g.weighted_sum({axis[0], axis[1]}, {T(0.5), T(0.5)});
  detail::check_finite(g, L, "grad loss");
  return L;
}

// L_reg on low-uncertainty patches: mean absolute depth gradient, damped
// where the prior itself has edges; both depths normalized by far.
template <typename T>
typename Graph<T>::Id smooth_loss(Graph<T>& g, typename Graph<T>::Id dhat,
                                  const std::vector<T>& prior, int patches,
                                  int side, double far, double beta = 1.0) {
  const int npx = side * side;
  if (g.cols(dhat) != 1 ||
      g.rows(dhat) != static_cast<int64_t>(patches) * npx ||
      prior.size() != static_cast<size_t>(patches) * npx)
    throw std::invalid_argument("distill: smooth loss shapes");
  if (!(far > 0)) throw std::invalid_argument("distill: smooth loss far");
  const auto dn = g.affine(dhat, static_cast<T>(1.0 / far), T(0));
  typename Graph<T>::Id axis[2];
  for (int ax = 0; ax < 2; ++ax) {
    auto [ia, ib] = detail::diff_indices(patches, side, ax);
    std::vector<T> w(ia->size());
    for (size_t i = 0; i < w.size(); ++i) {
      const double dp =
          (static_cast<double>(prior[(*ia)[i]]) - prior[(*ib)[i]]) / far;
      w[i] = static_cast<T>(std::exp(-beta * std::abs(dp)));
    }
    const auto wleaf = g.value(static_cast<int64_t>(w.size()), 1, w);
    const auto d = g.absval(g.sub(g.gather_rows(dn, std::move(ia)),
                                  g.gather_rows(dn, std::move(ib))));
    axis[ax] = g.mean_all(g.mul(d, wleaf));
  }
  const auto L = g.weighted_sum({axis[0], axis[1]}, {T(0.5), T(0.5)});
  detail::check_finite(g, L, "smooth loss");
  return L;
}

}  // namespace ucnerf
