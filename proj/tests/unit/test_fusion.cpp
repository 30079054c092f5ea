#include <gtest/gtest.h>

#include "depthmae/fusion.hpp"
#include "depthmae/training.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace depthmae {
namespace {

TEST(Fuse, FullyValidOriginalIsKept) {
  const DepthImage o(3, 3, 1.25f);
  const DepthImage d(3, 3, 7.0f);
  EXPECT_EQ(fuse(o, d), o);
}

TEST(Fuse, EmptyOriginalTakesCompletion) {
  const DepthImage d(3, 3, 7.0f);
  EXPECT_EQ(fuse(DepthImage(3, 3), d), d);
}

TEST(Fuse, MatchesLoopOracle) {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    DepthImage o(5, 7), d(5, 7);
    for (float& v : o.values()) v = rng.uniform() < 0.4 ? 0.0f : static_cast<float>(rng.uniform(0.5, 4));
    for (float& v : d.values()) v = static_cast<float>(rng.uniform(0.0, 4));
    EXPECT_EQ(fuse(o, d).values(), oracle::fuse(o.values(), d.values()));
    EXPECT_LE(fuse(o, d).count_holes(), o.count_holes());
  }
}

TEST(Fuse, ShapeMismatchIsAnError) { EXPECT_THROW(fuse(DepthImage(2, 2), DepthImage(2, 3)), ShapeError); }

TEST(Fuse, ClampMarksNonpositiveAsMissing) {
  const DepthImage c = clamp_to_valid(DepthImage(1, 3, {-1.0f, 0.0f, 2.0f}));
  EXPECT_EQ(c.values(), (std::vector<float>{0.0f, 0.0f, 2.0f}));
}

Checkpoint finetuned_checkpoint() {
  const auto samples = test::synthetic_samples(2, 16, 3);
  TrainConfig tc = TrainConfig::defaults(Stage::kFinetune);
  tc.epochs = 1;
  tc.batch_size = 2;
  tc.precision = Precision::kFloat64;
  return train(samples, test::tiny_config(16, 4, 8), tc).checkpoint;
}

TEST(Complete, KeepsOriginalResolutionAndIsDeterministic) {
  const Completer completer(finetuned_checkpoint());
  RgbdSample s = test::random_sample(16, 4);
  s = resize_sample(s, 16, 16, 4);
  RgbdSample odd{resize_bilinear(s.rgb, 21, 30), resize_nearest(s.raw_depth, 21, 30), {}, "odd"};
  const DepthImage a = completer.complete(odd);
  EXPECT_EQ(a.height(), 21u);
  EXPECT_EQ(a.width(), 30u);
  EXPECT_EQ(a, completer.complete(odd));
  for (float v : a.values()) EXPECT_GE(v, 0.0f);
}

TEST(Complete, RejectsPretrainCheckpoint) {
  Checkpoint ckpt = finetuned_checkpoint();
  ckpt.stage = Stage::kPretrain;
  EXPECT_THROW(Completer{ckpt}, CheckpointError);
}

}  // namespace
}  // namespace depthmae
