#include <gtest/gtest.h>

#include <random>

#include "gslight/illumination.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gslight;
using testutil::error_kind_of;

namespace {

struct Plane {
  CameraView view;
  DepthMap depth;
  NormalMap normals;
};

Plane fronto_parallel(int size, double depth) {
  Plane p{oracle::camera(size, size, size), DepthMap(size, size, static_cast<float>(depth)), NormalMap(size, size)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) p.normals.set(x, y, {0.0, 0.0, -1.0});
  return p;
}

}  // namespace

TEST(IncidentDirection, Examples) {
  CameraView v = oracle::camera(10, 10, 10.0);
  EXPECT_TRUE(incident_direction(v, {5.0, 5.0}, 1.0, {{0.0, -1.0, 1.0}}).isApprox(Eigen::Vector3d(0, 1, 0), 1e-15));
  EXPECT_TRUE(incident_direction(v, {3.0, 8.0}, 1.0, {{0.0, 0.0, -1e9}}).isApprox(Eigen::Vector3d(0, 0, 1), 1e-8));
  EXPECT_EQ(error_kind_of([&] { incident_direction(v, {5.0, 5.0}, 1.0, {{0.0, 0.0, 1.0}}); }), ErrorKind::degenerate);
}

TEST(IncidentDirection, AlwaysUnitLength) {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const CameraView v = oracle::camera(40, 30, 35.0);
  for (int i = 0; i < 1000; ++i) {
    const LightPosition l{{10 * u(rng) - 5, 10 * u(rng) - 5, 10 * u(rng) - 5}};
    EXPECT_NEAR(incident_direction(v, {40 * u(rng), 30 * u(rng)}, 0.1 + 5 * u(rng), l).norm(), 1.0, 1e-12);
  }
}

TEST(Phong, HeadOnGrazingAndHalfAngle) {
  Plane p = fronto_parallel(16, 2.0);
  p.view.cx = p.view.cy = 8.5;  // pixel (8,8) sits on the principal ray
  for (double gamma : {0.5, 1.0, 2.0, 7.0}) {
    EXPECT_EQ(phong_diffuse(p.view, p.depth, p.normals, LightPosition{{0, 0, -3}}, gamma).at(8, 8), 1.0);
  }
  const auto grazing = phong_diffuse(p.view, p.depth, p.normals, ViewLight{LightModel::directional, {}, {0, 1, 0}});
  for (double v : grazing.values.values()) EXPECT_EQ(v, 0.0);

  // ⟨l_in, n⟩ = -0.5 with γ = 2 gives 0.25.
  const Eigen::Vector3d l(std::sqrt(0.75), 0.0, 0.5);
  const auto half = phong_diffuse(p.view, p.depth, p.normals, ViewLight{LightModel::directional, {}, l}, 2.0);
  EXPECT_NEAR(half.at(3, 3), 0.25, 1e-15);
}

TEST(Phong, InvalidPixelsAreZeroAndShapesChecked) {
  Plane p = fronto_parallel(8, 1.0);
  p.depth.at(2, 2) = 0.0f;
  p.normals.set(3, 3, Eigen::Vector3d::Zero());
  const auto m = phong_diffuse(p.view, p.depth, p.normals, ViewLight{LightModel::directional, {}, {0, 0, 1}});
  EXPECT_EQ(m.at(2, 2), 0.0);
  EXPECT_EQ(m.at(3, 3), 0.0);
  EXPECT_EQ(m.at(4, 4), 1.0);
  EXPECT_EQ(error_kind_of([&] { phong_diffuse(p.view, DepthMap(4, 4), p.normals, LightPosition{}); }),
            ErrorKind::shape);
  EXPECT_EQ(error_kind_of([&] { phong_diffuse(p.view, p.depth, p.normals, LightPosition{}, 0.0); }), ErrorKind::domain);
}

TEST(Phong, MonotoneInGammaAndParallelDeterministic) {
  Plane p = fronto_parallel(32, 3.0);
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 0.4);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) p.normals.set(x, y, Eigen::Vector3d(n(rng), n(rng), -1.0).normalized());
  const ViewLight lamp{LightModel::point, {-2.0, -1.0, 0.5}, {}};
  const auto low = phong_diffuse(p.view, p.depth, p.normals, lamp, 1.0);
  const auto high = phong_diffuse(p.view, p.depth, p.normals, lamp, 3.0);
  for (std::size_t i = 0; i < low.values.size(); ++i) EXPECT_LE(high.values.values()[i], low.values.values()[i]);
  EXPECT_EQ(phong_diffuse(p.view, p.depth, p.normals, lamp, 3.0, 4).values, high.values);
}

TEST(Encoder, AreaAverages) {
  const auto enc = reference_encoder();
  RgbImage constant(16, 8, 3, 0.3);
  const auto c = enc->encode(constant);
  EXPECT_EQ(c.width(), 2);
  EXPECT_EQ(c.height(), 1);
  EXPECT_EQ(c.channels(), 4);
  for (int k = 0; k < 3; ++k) EXPECT_FLOAT_EQ(c.at(1, 0, k), 0.3f);

  RgbImage checker(8, 8, 3);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int k = 0; k < 3; ++k) checker.at(x, y, k) = (x + y) % 2;
  for (int k = 0; k < 4; ++k) EXPECT_FLOAT_EQ(enc->encode(checker).at(0, 0, k), 0.5f);

  EXPECT_EQ(enc->encode(RgbImage(512, 512, 3)).width(), 64);
  EXPECT_EQ(error_kind_of([&] { enc->encode(RgbImage(12, 8, 3)); }), ErrorKind::shape);
}

TEST(InitLatent, NoiseFreeSeededAndConcatenated) {
  IlluminationMap illum{Raster<double>(16, 16, 1, 0.0), 2.0};
  RgbImage source(16, 16, 3);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : illum.values.values()) v = u(rng);
  for (double& v : source.values()) v = u(rng);
  const auto enc = reference_encoder();

  const LatentBlock clean = encode_init_latent(illum, source, *enc, 0.0, 1);
  const Raster<float> ld = enc->encode(replicate_to_rgb(illum));
  const Raster<float> li = enc->encode(source);
  ASSERT_EQ(clean.channel_count(), 2 * enc->channel_count());
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(clean.values.at(x, y, k), ld.at(x, y, k));
        EXPECT_EQ(clean.values.at(x, y, 4 + k), li.at(x, y, k));
      }

  const LatentBlock a = encode_init_latent(illum, source, *enc, 0.6, 42, 3);
  EXPECT_EQ(a.values, encode_init_latent(illum, source, *enc, 0.6, 42, 3).values);
  EXPECT_NE(a.values, encode_init_latent(illum, source, *enc, 0.6, 43, 3).values);
  EXPECT_NE(a.values, encode_init_latent(illum, source, *enc, 0.6, 42, 4).values);
  EXPECT_EQ(error_kind_of([&] { encode_init_latent(illum, source, *enc, 1.5, 0); }), ErrorKind::domain);
}

TEST(InitLatent, PureNoiseHasUnitVariance) {
  IlluminationMap illum{Raster<double>(256, 256, 1, 0.7), 2.0};
  const RgbImage source(256, 256, 3, 0.5);
  const LatentBlock b = encode_init_latent(illum, source, *reference_encoder(), 1.0, 9);
  double s = 0, s2 = 0, n = 0;
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      for (int k = 0; k < 4; ++k) {
        const double v = b.values.at(x, y, k);
        s += v;
        s2 += v * v;
        n += 1;
      }
  EXPECT_NEAR(s / n, 0.0, 0.05);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(InitLatent, FileRoundTrip) {
  testutil::TempDir tmp;
  IlluminationMap illum{Raster<double>(16, 8, 1, 0.25), 2.0};
  const LatentBlock b = encode_init_latent(illum, RgbImage(16, 8, 3, 0.5), *reference_encoder(), 0.6, 1, 2);
  save_latent(tmp / "l.gsll", b);
  EXPECT_EQ(load_latent(tmp / "l.gsll", 2).values, b.values);
  testutil::spit(tmp / "bad.gsll", "XXXX");
  EXPECT_EQ(error_kind_of([&] { load_latent(tmp / "bad.gsll"); }), ErrorKind::format);
}
