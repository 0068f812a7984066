#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "ucnerf/metrics.hpp"

using namespace ucnerf;

namespace {

// Two deterministic interference patterns; exact in float on any platform.
Image pattern(int mx, int my, int mc) {
  Image im(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(y, x, c) =
            static_cast<float>((x * mx + y * my + c * mc) % 32) / 31.0f;
  return im;
}

}  // namespace

TEST_CASE("psnr pins the 20dB point and the identity sentinel") {
  Image a(8, 6, 3, 0.0f), b(8, 6, 3, 0.1f);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-15));
  CHECK(std::isinf(psnr(a, a)));
  Image c(7, 6, 3);
  CHECK_THROWS_AS(psnr(a, c), std::invalid_argument);
}

TEST_CASE("ssim matches a frozen independent reference") {
  const Image a = pattern(7, 13, 5);
  const Image b = pattern(5, 11, 3);
  // Reference computed with an independent SSIM implementation (Gaussian
  // 11x11, sigma 1.5, valid positions, covariance without Bessel correction).
  CHECK(ssim(a, b) == doctest::Approx(0.31931948519891395).epsilon(1e-9));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-15));

  // Constant images leave only the luminance term.
  Image ca(16, 16, 3, 0.5f), cb(16, 16, 3, 0.6f);
  const double va = 0.299f * 0.5f + 0.587f * 0.5f + 0.114f * 0.5f;
  const double vb = 0.299f * 0.6f + 0.587f * 0.6f + 0.114f * 0.6f;
  const double want = (2 * va * vb + 1e-4) / (va * va + vb * vb + 1e-4);
  CHECK(ssim(ca, cb) == doctest::Approx(want).epsilon(1e-9));

  Image small(8, 8, 3, 0.5f);
  CHECK_THROWS_AS(ssim(small, small), std::invalid_argument);
}

TEST_CASE("median scale uses the lower-middle median") {
  CHECK(median_scale({1, 2, 9}, {1, 4, 8}) == doctest::Approx(0.5).epsilon(1e-15));
  // Even count: {1,2,3,100} -> 2, {2,4,6,8} -> 4.
  CHECK(median_scale({2, 1, 100, 3}, {8, 2, 6, 4}) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(median_scale({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(median_scale({1, 2}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(median_scale({1, 2, 3}, {-1, 0, 1}), std::invalid_argument);

  // Applying the factor matches the target median exactly.
  Rng rng(77);
  std::vector<double> gt = testutil::rand_vec(rng, 31, 0.5, 5.0);
  std::vector<double> pred = testutil::rand_vec(rng, 31, 0.2, 3.0);
  const double f = median_scale(gt, pred);
  std::vector<double> scaled(pred);
  for (double& v : scaled) v *= f;
  const double target = median_scale(gt, gt);  // == 1
  CHECK(target == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(median_scale(gt, scaled) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("depth metrics pin closed-form errors") {
  const auto m = depth_metrics({2.0}, {3.0});
  CHECK(m.abs_rel == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.sq_rel == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.rmse_log == doctest::Approx(std::log(1.5)).epsilon(1e-12));
  CHECK(m.delta1 == 0.0);

  const auto p = depth_metrics({2.0, 2.0}, {2.0, 2.2});
  CHECK(p.delta1 == 1.0);
  CHECK(p.abs_rel == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(p.rmse == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));

  // The 1.25 threshold is strict.
  CHECK(depth_metrics({2.0}, {2.5}).delta1 == 0.0);

  const auto id = depth_metrics({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
  CHECK(id.abs_rel == 0.0);
  CHECK(id.rmse == 0.0);
  CHECK(id.delta1 == 1.0);

  CHECK_THROWS_AS(depth_metrics({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(depth_metrics({0.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(depth_metrics({1.0}, {-2.0}), std::invalid_argument);
}
