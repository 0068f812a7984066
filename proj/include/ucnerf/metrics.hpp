#pragma once

#include <vector>

#include "ucnerf/image.hpp"

namespace ucnerf {

// Peak signal-to-noise ratio in dB over all channels, peak 1.0; identical
// images return +infinity.
double psnr(const Image& a, const Image& b);

// Mean SSIM on BT.601 luma with an 11x11 Gaussian window (sigma 1.5,
// K1=0.01, K2=0.03), evaluated at fully-covered positions only. Throws if
// either image is smaller than the window.
double ssim(const Image& a, const Image& b);

// Scale factor aligning pred to gt by the ratio of medians (lower-middle
// element for even counts). Throws on empty input or a zero pred median.
double median_scale(const std::vector<double>& gt,
                    const std::vector<double>& pred);

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, delta1 = 0;
};

// Standard depth errors over positive-depth pairs; delta1 counts ratios
// strictly below 1.25. Throws on empty or nonpositive entries.
DepthMetrics depth_metrics(const std::vector<double>& gt,
                           const std::vector<double>& pred);

}  // namespace ucnerf
