#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cstring>
#include <random>

#include "gslight/scene_io.hpp"
#include "test_util.hpp"

using namespace gslight;
using testutil::error_kind_of;
using testutil::TempDir;

namespace {

nlohmann::json camera_entry(int id) {
  return {{"view_id", id},
          {"width", 64},
          {"height", 48},
          {"fx", 50.0},
          {"fy", 52.0},
          {"cx", 31.0},
          {"cy", 25.0},
          {"rotation", {1, 0, 0, 0, 1, 0, 0, 0, 1}},
          {"translation", {0.1, -0.2, 0.3}}};
}

}  // namespace

TEST(Cameras, JsonRoundTripPreservesEveryField) {
  const CameraView v = camera_from_json(camera_entry(3));
  const CameraView w = camera_from_json(camera_to_json(v));
  EXPECT_EQ(w.view_id, 3);
  EXPECT_EQ(w.width, 64);
  EXPECT_EQ(w.height, 48);
  EXPECT_DOUBLE_EQ(w.fy, 52.0);
  EXPECT_DOUBLE_EQ(w.cx, 31.0);
  EXPECT_TRUE(w.rotation.isApprox(v.rotation, 0.0));
  EXPECT_EQ(w.translation, v.translation);
}

TEST(Cameras, PrincipalPointDefaultsToImageCentre) {
  auto j = camera_entry(0);
  j.erase("cx");
  j.erase("cy");
  const CameraView v = camera_from_json(j);
  EXPECT_DOUBLE_EQ(v.cx, 32.0);
  EXPECT_DOUBLE_EQ(v.cy, 24.0);
}

TEST(Cameras, SortedByIdAndDuplicatesRejected) {
  const auto views = parse_cameras({camera_entry(5), camera_entry(1), camera_entry(3)});
  ASSERT_EQ(views.size(), 3u);
  EXPECT_EQ(views[0].view_id, 1);
  EXPECT_EQ(views[2].view_id, 5);
  EXPECT_EQ(error_kind_of([] { parse_cameras({camera_entry(2), camera_entry(2)}); }), ErrorKind::validation);
}

TEST(Cameras, NearlyOrthonormalRotationIsSnapped) {
  auto j = camera_entry(0);
  j["rotation"] = {1.0, 2e-4, 0, 0, 1.0, 0, 0, 0, 1.0};
  const CameraView v = camera_from_json(j);
  EXPECT_LT((v.rotation.transpose() * v.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_NEAR(v.rotation.determinant(), 1.0, 1e-12);
}

TEST(Cameras, InvalidPosesAndIntrinsicsAreRejected) {
  auto skewed = camera_entry(0);
  skewed["rotation"] = {1.0, 0.01, 0, 0, 1.0, 0, 0, 0, 1.0};
  EXPECT_EQ(error_kind_of([&] { camera_from_json(skewed); }), ErrorKind::validation);

  auto mirrored = camera_entry(0);
  mirrored["rotation"] = {-1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_EQ(error_kind_of([&] { camera_from_json(mirrored); }), ErrorKind::validation);

  auto outside = camera_entry(0);
  outside["cx"] = 70.0;
  EXPECT_EQ(error_kind_of([&] { camera_from_json(outside); }), ErrorKind::validation);

  auto no_focal = camera_entry(0);
  no_focal["fx"] = 0.0;
  EXPECT_EQ(error_kind_of([&] { camera_from_json(no_focal); }), ErrorKind::validation);

  auto missing = camera_entry(0);
  missing.erase("translation");
  EXPECT_EQ(error_kind_of([&] { camera_from_json(missing); }), ErrorKind::format);
}

TEST(Cameras, ProjectAndWorldTransformsAreInverse) {
  CameraView v = camera_from_json(camera_entry(0));
  v.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const Eigen::Vector3d p(0.4, -0.7, 5.0);
  EXPECT_TRUE(v.to_world(v.to_camera(p)).isApprox(p, 1e-12));
  EXPECT_TRUE(v.to_camera(v.center()).isZero(1e-12));
  const Eigen::Vector2d px = v.project({0.0, 0.0, 2.0});
  EXPECT_DOUBLE_EQ(px.x(), v.cx);
  EXPECT_DOUBLE_EQ(px.y(), v.cy);
}

TEST(Pfm, RandomMapsRoundTripBitExactly) {
  TempDir tmp;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size(1, 40), chan(0, 1);
  std::normal_distribution<float> value(0.0f, 100.0f);
  for (int i = 0; i < 100; ++i) {
    Raster<float> r(size(rng), size(rng), chan(rng) ? 3 : 1);
    for (float& v : r.values()) v = value(rng);
    write_pfm_raster(tmp / "m.pfm", r);
    EXPECT_EQ(read_pfm_raster(tmp / "m.pfm"), r) << "map " << i;
  }
}

TEST(Pfm, RowsAreStoredBottomUp) {
  TempDir tmp;
  Raster<float> r(1, 2, 1);
  r.at(0, 0) = 1.0f;  // top row
  r.at(0, 1) = 2.0f;
  write_pfm_raster(tmp / "m.pfm", r);
  const std::string bytes = testutil::slurp(tmp / "m.pfm");
  float first = 0.0f;
  std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
  EXPECT_EQ(first, 2.0f);
}

TEST(Pfm, BigEndianFilesAreAccepted) {
  TempDir tmp;
  const float v = 3.25f;
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, 4);
  std::string data = "Pf\n1 1\n1.0\n";
  for (int s = 24; s >= 0; s -= 8) data += static_cast<char>((bits >> s) & 0xFF);
  testutil::spit(tmp / "be.pfm", data);
  EXPECT_EQ(read_pfm_raster(tmp / "be.pfm").at(0, 0), 3.25f);
}

TEST(Pfm, MalformedFilesAreFormatErrors) {
  TempDir tmp;
  testutil::spit(tmp / "bad.pfm", "P6\n1 1\n255\n");
  EXPECT_EQ(error_kind_of([&] { read_pfm_raster(tmp / "bad.pfm"); }), ErrorKind::format);
  testutil::spit(tmp / "short.pfm", "Pf\n4 4\n-1.0\nabc");
  EXPECT_EQ(error_kind_of([&] { read_pfm_raster(tmp / "short.pfm"); }), ErrorKind::format);
}

TEST(Pfm, DepthScaleAndInvalidValues) {
  TempDir tmp;
  Raster<float> r(3, 1, 1);
  r.at(0, 0) = 2.0f;
  r.at(1, 0) = -1.0f;
  r.at(2, 0) = std::numeric_limits<float>::quiet_NaN();
  write_pfm_raster(tmp / "d.pfm", r);
  const DepthMap d = load_depth_pfm(tmp / "d.pfm", 0.5);
  EXPECT_FLOAT_EQ(d.at(0, 0), 1.0f);
  EXPECT_FALSE(d.valid(1, 0));
  EXPECT_FALSE(d.valid(2, 0));
  EXPECT_EQ(error_kind_of([&] { load_normals_pfm(tmp / "d.pfm"); }), ErrorKind::format);
}

TEST(Pfm, NormalsAreRenormalizedOrRejected) {
  TempDir tmp;
  NormalMap n(2, 1);
  n.set(0, 0, {0.0, 0.0, 1.005});
  write_pfm_raster(tmp / "n.pfm", n.raster);
  const NormalMap loaded = load_normals_pfm(tmp / "n.pfm");
  EXPECT_NEAR(loaded.at(0, 0).norm(), 1.0, 1e-6);
  EXPECT_FALSE(loaded.valid(1, 0));

  n.set(1, 0, {0.0, 0.5, 0.0});
  write_pfm_raster(tmp / "bad.pfm", n.raster);
  EXPECT_EQ(error_kind_of([&] { load_normals_pfm(tmp / "bad.pfm"); }), ErrorKind::data);
}

TEST(Png, RgbRoundTripWithinQuantization) {
  TempDir tmp;
  RgbImage img(5, 3, 3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.values()) v = u(rng);
  save_png_rgb(tmp / "a.png", img);
  const RgbImage back = load_png_rgb(tmp / "a.png");
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.values()[i], img.values()[i], 0.5 / 255 + 1e-12);
}

TEST(Png, MaskRoundTrip) {
  TempDir tmp;
  ObjectMask m(4, 4);
  m.set(1, 2);
  m.set(3, 0);
  save_mask_png(tmp / "m.png", m);
  const ObjectMask back = load_mask_png(tmp / "m.png");
  EXPECT_EQ(back.count(), 2u);
  EXPECT_TRUE(back.at(1, 2));
  EXPECT_TRUE(back.at(3, 0));
}

TEST(Ply, SceneRoundTripAtFloatPrecision) {
  TempDir tmp;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  GaussianScene s;
  for (int i = 0; i < 25; ++i) {
    GaussianRecord g;
    g.position = {n(rng), n(rng), n(rng)};
    g.log_scale = {n(rng) - 2, n(rng) - 2, n(rng) - 2};
    g.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
    g.color_logit = {n(rng), n(rng), n(rng)};
    g.opacity_logit = n(rng);
    s.records.push_back(g);
  }
  save_scene(tmp / "s.ply", s);
  const GaussianScene back = load_scene(tmp / "s.ply");
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_TRUE(back.records[i].position.isApprox(s.records[i].position, 1e-6));
    EXPECT_TRUE(back.records[i].color().isApprox(s.records[i].color(), 1e-6));
    EXPECT_NEAR(back.records[i].opacity_logit, s.records[i].opacity_logit, 1e-6);
    EXPECT_TRUE(back.records[i].covariance().isApprox(s.records[i].covariance(), 1e-5));
  }
  // Saving what was loaded is a fixed point.
  save_scene(tmp / "t.ply", back);
  save_scene(tmp / "u.ply", load_scene(tmp / "t.ply"));
  EXPECT_EQ(testutil::slurp(tmp / "t.ply"), testutil::slurp(tmp / "u.ply"));
}

TEST(Ply, MissingFieldNamesTheField) {
  TempDir tmp;
  testutil::spit(tmp / "s.ply",
                 "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
                 "end_header\n");
  try {
    load_scene(tmp / "s.ply");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("missing PLY field z"), std::string::npos);
  }
}

TEST(Ply, AsciiAndNonFiniteRecordsAreRejected) {
  TempDir tmp;
  testutil::spit(tmp / "a.ply", "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n");
  EXPECT_EQ(error_kind_of([&] { load_scene(tmp / "a.ply"); }), ErrorKind::format);

  GaussianScene s;
  s.records.emplace_back();
  s.records.back().position.x() = std::numeric_limits<double>::infinity();
  save_scene(tmp / "inf.ply", s);
  EXPECT_EQ(error_kind_of([&] { load_scene(tmp / "inf.ply"); }), ErrorKind::data);
}
