#include <gtest/gtest.h>

#include <random>

#include "gslight/gaussian_scene.hpp"
#include "gslight/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gslight;
using testutil::error_kind_of;

namespace {

GaussianRecord blob(const Eigen::Vector3d& pos, double scale, double color_logit, double opacity_logit) {
  GaussianRecord g;
  g.position = pos;
  g.log_scale = Eigen::Vector3d::Constant(std::log(scale));
  g.color_logit = Eigen::Vector3d::Constant(color_logit);
  g.opacity_logit = opacity_logit;
  return g;
}

}  // namespace

TEST(Gaussian, EvaluateAtMeanAndOneSigma) {
  GaussianRecord g = blob({1, 2, 3}, 0.5, 0, 0);
  EXPECT_DOUBLE_EQ(evaluate_gaussian(g, {1, 2, 3}), 1.0);
  EXPECT_NEAR(evaluate_gaussian(g, {1.5, 2, 3}), std::exp(-0.5), 1e-15);
  g.log_scale.x() = std::numeric_limits<double>::infinity();
  EXPECT_EQ(error_kind_of([&] { evaluate_gaussian(g, {0, 0, 0}); }), ErrorKind::numeric);
}

TEST(Gaussian, CovarianceIsRotatedDiagonal) {
  GaussianRecord g = blob({0, 0, 0}, 1.0, 0, 0);
  g.log_scale = {std::log(2.0), 0.0, 0.0};
  g.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()));
  const Eigen::Matrix3d c = g.covariance();
  EXPECT_NEAR(c(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(c(1, 1), 4.0, 1e-12);
  EXPECT_NEAR(c(2, 2), 1.0, 1e-12);
}

TEST(Render, SingleOpaqueSplatCentrePixel) {
  const CameraView v = oracle::camera(32, 32, 32.0);
  GaussianScene s;
  s.records.push_back(blob({0.5 / 32.0 * 4.0, 0.5 / 32.0 * 4.0, 4.0}, 0.5, 0.0, 10.0));
  const auto out = render(s, v);
  // Centre of pixel (16,16) is the splat mean: α = sigmoid(10).
  const double a = 1.0 / (1.0 + std::exp(-10.0));
  EXPECT_NEAR(out.alpha.at(16, 16), a, 1e-12);
  EXPECT_NEAR(out.color.at(16, 16, 1), 0.5 * a, 1e-12);
  EXPECT_EQ(out.contributors.at(16, 16), 1);
  EXPECT_EQ(out.contributors.at(0, 0), 0);
}

TEST(Render, FrontSplatOccludesBack) {
  const CameraView v = oracle::camera(16, 16, 16.0);
  GaussianScene s;
  s.records.push_back(blob({0, 0, 6}, 2.0, -8.0, 12.0));  // dark, behind
  s.records.push_back(blob({0, 0, 3}, 1.0, 8.0, 12.0));   // bright, in front
  const auto out = render(s, v);
  EXPECT_GT(out.color.at(8, 8, 0), 0.99);
  std::swap(s.records[0], s.records[1]);
  EXPECT_EQ(render(s, v).color, out.color);
}

TEST(Render, MatchesBruteForceOracleAtAnyThreadCount) {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 5; ++trial) {
    const GaussianScene s = oracle::random_scene(rng, 150);
    const CameraView v = oracle::camera(50, 37, 45.0);
    const RgbImage ref = oracle::brute_render(s, v);
    const RgbImage one = render(s, v, 1).color;
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(one.values()[i], ref.values()[i], 1e-9);
    EXPECT_EQ(render(s, v, 3).color, one);
  }
}

TEST(Render, BehindCameraIsCulledAndEmptySceneRejected) {
  const CameraView v = oracle::camera(8, 8, 8.0);
  GaussianScene s;
  s.records.push_back(blob({0, 0, -2}, 1.0, 0, 5));
  EXPECT_EQ(render(s, v).alpha.values()[0], 0.0);
  EXPECT_EQ(error_kind_of([&] { render(GaussianScene{}, v); }), ErrorKind::domain);
}

TEST(Backward, MatchesCentralDifferences) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraView v = oracle::camera(24, 24, 22.0);
  for (int trial = 0; trial < 5; ++trial) {
    GaussianScene s = oracle::random_scene(rng, 12);
    RgbImage w(24, 24, 3);
    for (double& x : w.values()) x = u(rng);
    auto f = [&] {
      const RgbImage c = render(s, v).color;
      double acc = 0;
      for (std::size_t i = 0; i < c.size(); ++i) acc += w.values()[i] * c.values()[i];
      return acc;
    };
    const auto g = render_backward(s, v, w, 2);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (int k = 0; k < 4; ++k) {
        double& p = k < 3 ? s.records[i].color_logit[k] : s.records[i].opacity_logit;
        const double saved = p;
        p = saved + 1e-5;
        const double up = f();
        p = saved - 1e-5;
        const double down = f();
        p = saved;
        const double analytic = k < 3 ? g.color_logit[i][k] : g.opacity_logit[i];
        EXPECT_NEAR(analytic, (up - down) / 2e-5, 1e-6 * (1.0 + std::abs(analytic)));
      }
    }
  }
}

TEST(Loss, ZeroAtTargetWithExactlyZeroGradient) {
  RgbImage img(20, 20, 3);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.values()) v = u(rng);
  const LossResult r = compute_loss(img, img);
  EXPECT_EQ(r.loss.total, 0.0);
  EXPECT_EQ(r.loss.ssim, 1.0);
  for (double g : r.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage a(12, 10, 3), b(12, 10, 3);
  for (double& v : a.values()) v = u(rng);
  for (double& v : b.values()) v = u(rng);
  const LossResult r = compute_loss(a, b, 0.2);
  for (std::size_t i = 0; i < a.size(); i += 7) {
    const double saved = a.values()[i];
    a.values()[i] = saved + 1e-6;
    const double up = compute_loss(a, b, 0.2).loss.total;
    a.values()[i] = saved - 1e-6;
    const double down = compute_loss(a, b, 0.2).loss.total;
    a.values()[i] = saved;
    EXPECT_NEAR(r.grad.values()[i], (up - down) / 2e-6, 1e-7);
  }
}

TEST(Schedule, DefaultsAndValidation) {
  const TuneSchedule s;
  EXPECT_EQ(s.k_int, 500);
  EXPECT_EQ(s.k_reap, 2);
  EXPECT_DOUBLE_EQ(s.lambda, 0.2);
  TuneSchedule bad;
  bad.k_int = 0;
  EXPECT_EQ(error_kind_of([&] { bad.validate(); }), ErrorKind::validation);
  bad = TuneSchedule{};
  bad.lambda = 1.5;
  EXPECT_EQ(error_kind_of([&] { bad.validate(); }), ErrorKind::validation);
}

TEST(Finetune, UpdatesOnlyAppearanceAndLogsEveryStep) {
  SyntheticOptions opt;
  opt.gaussians = 120;
  opt.width = opt.height = 32;
  opt.focal = 32;
  opt.views = 3;
  const SyntheticDataset ds = make_plane_dataset(opt);
  TuneSchedule sched;
  sched.k_int = 12;
  sched.k_reap = 3;
  int calls = 0;
  const RelightFn darken = [&](const std::vector<RgbImage>& renders, const std::vector<RgbImage>&, int epoch) {
    EXPECT_EQ(epoch, calls++);
    std::vector<RgbImage> out;
    for (const auto& r : renders) out.push_back(scaled(r, 0.8));
    return out;
  };
  const FinetuneResult r = finetune(ds.scene, ds.views, ds.images, sched, darken);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(r.dataset_updates, (std::vector<int>{0, 12, 24}));
  ASSERT_EQ(r.log.size(), 36u);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, static_cast<int>(i));
    EXPECT_EQ(r.log[i].view_id, ds.views[i % 3].view_id);
  }
  for (std::size_t i = 0; i < ds.scene.size(); ++i) {
    EXPECT_EQ(r.scene.records[i].position, ds.scene.records[i].position);
    EXPECT_EQ(r.scene.records[i].log_scale, ds.scene.records[i].log_scale);
    EXPECT_EQ(r.scene.records[i].rotation.coeffs(), ds.scene.records[i].rotation.coeffs());
  }
  EXPECT_LT(mean_value(render(r.scene, ds.views[0]).color), mean_value(ds.images[0]));
}

TEST(Finetune, RelightFailureAbortsWithPartialResults) {
  SyntheticOptions opt;
  opt.gaussians = 50;
  opt.width = opt.height = 16;
  opt.focal = 16;
  opt.views = 2;
  const SyntheticDataset ds = make_plane_dataset(opt);
  TuneSchedule sched;
  sched.k_int = 4;
  const RelightFn flaky = [](const std::vector<RgbImage>& renders, const std::vector<RgbImage>&, int epoch) {
    if (epoch == 1) fail(ErrorKind::adapter, "backend crashed");
    return renders;
  };
  const FinetuneResult r = finetune(ds.scene, ds.views, ds.images, sched, flaky);
  ASSERT_TRUE(r.aborted.has_value());
  EXPECT_NE(r.aborted->find("backend crashed"), std::string::npos);
  EXPECT_EQ(r.log.size(), 4u);
}

TEST(Finetune, LossCsvFormat) {
  const std::vector<LossLogEntry> log{{0, 3, {0.5, 0.25, 0.55}}};
  EXPECT_EQ(loss_log_csv(log), "step,view_id,l1,ssim,total\n0,3,0.5,0.25,0.55000000000000004\n");
}
