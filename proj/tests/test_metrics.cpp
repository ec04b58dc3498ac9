#include <gtest/gtest.h>

#include <random>

#include "gslight/metrics.hpp"
#include "test_util.hpp"

using namespace gslight;

namespace {

RgbImage noise_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage img(w, h, 3);
  for (double& v : img.values()) v = u(rng);
  return img;
}

/// SSIM by direct windowed sums (no separable filtering).
double direct_ssim(const RgbImage& a, const RgbImage& b) {
  const auto& k = detail::ssim_kernel();
  const int r = kSsimWindow / 2;
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int j = -r; j <= r; ++j)
          for (int i = -r; i <= r; ++i) {
            const int px = x + i, py = y + j;
            if (px < 0 || py < 0 || px >= a.width() || py >= a.height()) continue;
            const double w = k[i + r] * k[j + r];
            const double va = a.at(px, py, c), vb = b.at(px, py, c);
            mx += w * va;
            my += w * vb;
            xx += w * va * va;
            yy += w * vb * vb;
            xy += w * va * vb;
          }
        const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
        total += (2 * mx * my + kSsimC1) * (2 * sxy + kSsimC2) /
                 ((mx * mx + my * my + kSsimC1) * (sx + sy + kSsimC2));
      }
  return total / static_cast<double>(a.size());
}

}  // namespace

TEST(Ssim, KernelIsNormalizedGaussian) {
  const auto& k = detail::ssim_kernel();
  double s = 0;
  for (double v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_NEAR(k[5] / k[6], std::exp(1.0 / (2 * 1.5 * 1.5)), 1e-12);
}

TEST(Ssim, MatchesDirectWindowedSums) {
  std::mt19937_64 rng(50);
  const RgbImage a = noise_image(rng, 19, 14), b = noise_image(rng, 19, 14);
  EXPECT_NEAR(ssim(a, b), direct_ssim(a, b), 1e-12);
  EXPECT_DOUBLE_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(51);
  RgbImage a = noise_image(rng, 13, 9);
  const RgbImage b = noise_image(rng, 13, 9);
  RgbImage grad;
  ssim(a, b, &grad);
  for (std::size_t i = 0; i < a.size(); i += 5) {
    const double saved = a.values()[i];
    a.values()[i] = saved + 1e-6;
    const double up = ssim(a, b);
    a.values()[i] = saved - 1e-6;
    const double down = ssim(a, b);
    a.values()[i] = saved;
    EXPECT_NEAR(grad.values()[i], (up - down) / 2e-6, 1e-8);
  }
}

TEST(Psnr, KnownValuesAndIdentity) {
  RgbImage a(4, 4, 3, 0.5), b(4, 4, 3, 0.6);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);  // MSE = 0.01
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_NEAR(mean_abs_error(a, b), 0.1, 1e-15);
  const ImageQuality q = compute_psnr_ssim(a, a);
  EXPECT_DOUBLE_EQ(q.ssim, 1.0);
}

TEST(Metrics, ShapeMismatchIsShapeError) {
  EXPECT_EQ(testutil::error_kind_of([] { psnr(RgbImage(4, 4, 3), RgbImage(4, 5, 3)); }), ErrorKind::shape);
}
