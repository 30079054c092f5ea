#include <gtest/gtest.h>

#include <cmath>

#include "depthmae/metrics.hpp"
#include "depthmae/random.hpp"
#include "depthmae/synthetic.hpp"
#include "depthmae/training.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace depthmae {
namespace {

DepthImage image(std::size_t h, std::size_t w, std::vector<float> v) { return DepthImage(h, w, std::move(v)); }

DepthImage random_depth(std::size_t h, std::size_t w, Rng& rng, double hole = 0.2) {
  DepthImage d(h, w);
  for (float& v : d.values()) v = rng.uniform() < hole ? 0.0f : static_cast<float>(rng.uniform(0.5, 4.0));
  return d;
}

TEST(Metrics, RmseIgnoresMissingGroundTruth) {
  EXPECT_DOUBLE_EQ(*rmse(image(1, 2, {3, 100}), image(1, 2, {1, 0})), 2.0);
}

TEST(Metrics, MeanErrorIsAbsolute) { EXPECT_DOUBLE_EQ(*mean_error(image(1, 2, {2, 0}), image(1, 2, {1, 1})), 1.0); }

TEST(Metrics, DeltaExample) {
  EXPECT_DOUBLE_EQ(*delta(image(1, 2, {1.2f, 2.0f}), image(1, 2, {1, 1}), 1.25), 0.5);
}

TEST(Metrics, UndefinedWithoutGroundTruth) {
  const DepthImage zeros(2, 2);
  EXPECT_FALSE(rmse(zeros, zeros).has_value());
  EXPECT_FALSE(mean_error(zeros, zeros).has_value());
  EXPECT_FALSE(delta(zeros, zeros, 1.25).has_value());
}

TEST(Metrics, SizeMismatchIsAnError) { EXPECT_THROW(rmse(DepthImage(2, 2), DepthImage(2, 3)), ShapeError); }

TEST(Metrics, RandomImagesMatchLoopOracles) {
  Rng rng(8);
  for (int k = 0; k < 30; ++k) {
    const DepthImage gt = random_depth(6, 9, rng);
    const DepthImage pred = random_depth(6, 9, rng, 0.1);
    const std::vector<double> g(gt.values().begin(), gt.values().end());
    const std::vector<double> p(pred.values().begin(), pred.values().end());
    EXPECT_NEAR(*rmse(pred, gt), oracle::rmse(p, g), 1e-12);
    EXPECT_NEAR(*mean_error(pred, gt), oracle::mean_abs_error(p, g), 1e-12);
    EXPECT_NEAR(*delta(pred, gt, 1.25), oracle::delta(p, g, 1.25), 1e-12);
  }
}

TEST(Metrics, RmseBoundsMeanError) {
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const DepthImage gt = random_depth(5, 5, rng);
    const DepthImage pred = random_depth(5, 5, rng);
    if (!rmse(pred, gt)) continue;
    EXPECT_GE(*rmse(pred, gt) + 1e-12, *mean_error(pred, gt));
  }
}

TEST(Metrics, IgnoresPredictionsWhereGroundTruthIsMissing) {
  Rng rng(10);
  const DepthImage gt = random_depth(12, 12, rng, 0.3);
  DepthImage a = random_depth(12, 12, rng, 0.0);
  DepthImage b = a;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt.values()[i] == 0.0f) b.values()[i] = 123.0f;
  EXPECT_EQ(rmse(a, gt), rmse(b, gt));
  EXPECT_EQ(mean_error(a, gt), mean_error(b, gt));
  EXPECT_EQ(delta(a, gt, 1.25), delta(b, gt, 1.25));
  EXPECT_EQ(masked_ssim(a, gt, 8.0), masked_ssim(b, gt, 8.0));
}

TEST(Metrics, DeltaIsScaleInvariant) {
  Rng rng(11);
  DepthImage gt = random_depth(8, 8, rng);
  DepthImage pred = random_depth(8, 8, rng);
  const double before = *delta(pred, gt, 1.25);
  for (float& v : gt.values()) v *= 2.0f;  // exact in binary floating point
  for (float& v : pred.values()) v *= 2.0f;
  EXPECT_EQ(*delta(pred, gt, 1.25), before);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  Rng rng(12);
  const DepthImage x = random_depth(16, 20, rng);
  EXPECT_DOUBLE_EQ(ssim(x, x, 8.0), 1.0);
}

TEST(Ssim, InvertedStructureScoresLow) {
  DepthImage x(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t c = 0; c < 16; ++c) x.at(y, c) = ((y / 2 + c / 2) % 2) ? 4.0f : 0.5f;
  DepthImage inv = x;
  for (float& v : inv.values()) v = 4.5f - v;
  EXPECT_LT(ssim(x, inv, 8.0), 0.0);
}

TEST(Ssim, UniformWindowOnConstantsMatchesClosedForm) {
  const double a = 1.5, b = 3.0, r = 8.0;
  const double c1 = (0.01 * r) * (0.01 * r);
  const double want = (2 * a * b + c1) / (a * a + b * b + c1);
  EXPECT_NEAR(ssim(DepthImage(11, 11, 1.5f), DepthImage(11, 11, 3.0f), r, SsimWindow::kUniform), want, 1e-12);
}

TEST(Ssim, Symmetric) {
  Rng rng(13);
  for (int k = 0; k < 5; ++k) {
    const DepthImage a = random_depth(14, 15, rng);
    const DepthImage b = random_depth(14, 15, rng);
    EXPECT_NEAR(ssim(a, b, 8.0), ssim(b, a, 8.0), 1e-12);
  }
}

TEST(Ssim, SmallImageIsAnError) { EXPECT_THROW(ssim(DepthImage(10, 20), DepthImage(10, 20), 8.0), ShapeError); }

TEST(Report, AggregateIsMeanOfDefinedValues) {
  Rng rng(14);
  std::vector<ImageMetrics> images;
  for (int k = 0; k < 5; ++k) {
    const DepthImage gt = random_depth(12, 12, rng);
    images.push_back(score_image(random_depth(12, 12, rng), gt, 8.0, "img" + std::to_string(k)));
  }
  images.push_back(score_image(DepthImage(12, 12, 1.0f), DepthImage(12, 12), 8.0, "empty"));
  const EvalReport r = EvalReport::from_images(images);
  double acc = 0;
  for (int k = 0; k < 5; ++k) acc += *images[k].rmse_m;
  EXPECT_NEAR(*r.aggregate.rmse_m, acc / 5.0, 1e-12);
  acc = 0;
  for (int k = 0; k < 5; ++k) acc += *images[k].ssim;
  EXPECT_NEAR(*r.aggregate.ssim, acc / 5.0, 1e-12);
}

TEST(Report, TsvLayout) {
  const DepthImage gt(11, 11, 2.0f);
  const EvalReport r = EvalReport::from_images(
      {score_image(gt, gt, 8.0, "same"), score_image(gt, DepthImage(11, 11), 8.0, "nogt")});
  const std::string tsv = r.to_tsv();
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "identifier\trmse_m\tme_m\tssim\tdelta_1.25\tdelta_1.25^2\tvalid_pixels");
  EXPECT_NE(tsv.find("same\t0.000000\t0.000000\t1.000000\t1.000000\t1.000000\t121\n"), std::string::npos) << tsv;
  EXPECT_NE(tsv.find("nogt\tNA\tNA\tNA\tNA\tNA\t0\n"), std::string::npos) << tsv;
  EXPECT_NE(tsv.find("AGGREGATE\t0.000000"), std::string::npos) << tsv;
}

TEST(Report, PerfectPredictionsScorePerfectly) {
  std::vector<ImageMetrics> images;
  for (std::uint64_t k = 0; k < 6; ++k) {
    const RgbdSample s = generate_scene(derive_seed(40, k));
    images.push_back(score_image(s.gt_depth, s.gt_depth, 8.0, s.identifier));
  }
  const ImageMetrics& a = EvalReport::from_images(images).aggregate;
  EXPECT_EQ(*a.rmse_m, 0.0);
  EXPECT_EQ(*a.me_m, 0.0);
  EXPECT_EQ(*a.ssim, 1.0);
  EXPECT_EQ(*a.delta_1, 1.0);
  EXPECT_EQ(*a.delta_2, 1.0);
}

TEST(Report, EvaluationIsRepeatable) {
  test::TempDir dir;
  const DatasetManifest m = make_synthetic_dataset(dir.path(), 3, 9);
  TrainConfig tc = TrainConfig::defaults(Stage::kFinetune);
  tc.epochs = 1;
  const TrainResult r = train(test::synthetic_samples(2, 16, 1), test::tiny_config(16, 4, 8), tc);
  const std::string first = evaluate(m, r.checkpoint, kDefaultDepthScale).to_tsv();
  EXPECT_EQ(evaluate(m, r.checkpoint, kDefaultDepthScale).to_tsv(), first);
}

}  // namespace
}  // namespace depthmae
