#include "ucnerf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ucnerf {

namespace {

void check_pair(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height ||
      a.channels != b.channels || a.data.empty())
    throw std::invalid_argument("metrics: image shape mismatch");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_pair(a, b);
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const Image& a, const Image& b) {
  check_pair(a, b);
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const int W = a.width, H = a.height;
  if (W < kWin || H < kWin)
    throw std::invalid_argument("metrics: image smaller than ssim window");

  double win[kWin * kWin];
  double wsum = 0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - (kWin - 1) / 2.0, dx = x - (kWin - 1) / 2.0;
      win[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      wsum += win[y * kWin + x];
    }
  for (double& w : win) w /= wsum;

  const std::vector<float> la = luma(a), lb = luma(b);
  double total = 0;
  int64_t count = 0;
  for (int cy = 0; cy + kWin <= H; ++cy)
    for (int cx = 0; cx + kWin <= W; ++cx) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
          const double w = win[y * kWin + x];
          const double va = la[(cy + y) * W + cx + x];
          const double vb = lb[(cy + y) * W + cx + x];
          ma += w * va;
          mb += w * vb;
          aa += w * va * va;
          bb += w * vb * vb;
          ab += w * va * vb;
        }
      const double sa = aa - ma * ma;
      const double sb = bb - mb * mb;
      const double sab = ab - ma * mb;
      total += ((2 * ma * mb + kC1) * (2 * sab + kC2)) /
               ((ma * ma + mb * mb + kC1) * (sa + sb + kC2));
      ++count;
    }
  return total / static_cast<double>(count);
}

namespace {

double lower_median(std::vector<double> v) {
  const size_t mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  return v[mid];
}

}  // namespace

double median_scale(const std::vector<double>& gt,
                    const std::vector<double>& pred) {
  if (gt.empty() || gt.size() != pred.size())
    throw std::invalid_argument("metrics: median scale sizes");
  const double mp = lower_median(pred);
  if (mp == 0) throw std::invalid_argument("metrics: zero median prediction");
  return lower_median(gt) / mp;
}

DepthMetrics depth_metrics(const std::vector<double>& gt,
                           const std::vector<double>& pred) {
  if (gt.empty() || gt.size() != pred.size())
    throw std::invalid_argument("metrics: depth metric sizes");
  DepthMetrics m;
  for (size_t i = 0; i < gt.size(); ++i) {
    const double g = gt[i], p = pred[i];
    if (!(g > 0) || !(p > 0))
      throw std::invalid_argument("metrics: nonpositive depth");
    const double d = p - g;
    m.abs_rel += std::abs(d) / g;
    m.sq_rel += d * d / g;
    m.rmse += d * d;
    const double dl = std::log(p) - std::log(g);
    m.rmse_log += dl * dl;
    if (std::max(p / g, g / p) < 1.25) m.delta1 += 1;
  }
  const double n = static_cast<double>(gt.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 /= n;
  return m;
}

}  // namespace ucnerf
