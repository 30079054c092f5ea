#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "depthmae/checkpoint.hpp"
#include "depthmae/fusion.hpp"
#include "depthmae/metrics.hpp"
#include "depthmae/ops.hpp"
#include "depthmae/training.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace depthmae {
namespace {

using T64 = Tensor<double>;

TEST(Loss, PretrainExample) {
  // 2x2 image, one 2x2 patch, masked; only the first pixel has ground truth.
  const T64 gt({1, 2, 2}, {2, 0, 0, 0});
  const T64 pred({1, 2, 2}, {1, 9, 9, 9});
  const PatchGrid grid = PatchGrid::for_image(2, 2, 2, 1);
  const auto loss = loss_pretrain(pred, gt, MaskPlan::from_kept(1, {}), grid);
  ASSERT_TRUE(loss.has_value());
  EXPECT_DOUBLE_EQ(loss->item(), 1.0);
}

TEST(Loss, PretrainWithoutSupervisedPixelsIsSkipped) {
  const T64 gt({1, 2, 2}, {0, 0, 0, 0});
  const PatchGrid grid = PatchGrid::for_image(2, 2, 2, 1);
  EXPECT_FALSE(loss_pretrain(gt, gt, MaskPlan::from_kept(1, {}), grid).has_value());
  const T64 gt2({1, 2, 2}, {1, 1, 1, 1});
  EXPECT_FALSE(loss_pretrain(gt2, gt2, MaskPlan::identity(1), grid).has_value());
}

TEST(Loss, FinetuneExample) {
  Rng rng(1);
  std::vector<double> g(16);
  for (double& v : g) v = rng.uniform();
  std::vector<double> p = g;
  for (double& v : p) v += 1.0;
  EXPECT_NEAR(loss_finetune(T64({1, 4, 4}, p), T64({1, 4, 4}, g)).item(), 1.0, 1e-15);
}

TEST(Loss, PretrainMatchesLoopOracle) {
  const PatchGrid grid = PatchGrid::for_image(8, 12, 4, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> p(96), g(96);
    for (std::size_t i = 0; i < 96; ++i) {
      p[i] = rng.uniform(-1, 1);
      g[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    }
    const MaskPlan plan = sample_mask(grid.num_tokens(), 0.5, seed);
    const auto loss = loss_pretrain(T64({1, 8, 12}, p), T64({1, 8, 12}, g), plan, grid);
    bool defined = false;
    const double want = oracle::pretrain_loss(p, g, 8, 12, 4, plan.masked, &defined);
    ASSERT_EQ(loss.has_value(), defined);
    if (loss) {
      EXPECT_NEAR(loss->item(), want, 1e-12);
    }
  }
}

TEST(AdamW, ZeroGradientsLeaveParametersUnchanged) {
  T64 w({3}, {1.0, -2.0, 0.5}, true);
  const std::vector<NamedTensor<double>> params{{"w.weight", w}};
  backward(sum(mul_scalar(w, 0.0)));
  OptimizerState<double> state;
  AdamWSettings s;
  s.learning_rate = 0.1;
  adamw_step(params, state, s);
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(AdamW, SingleStepMatchesHandFormula) {
  T64 w({1}, {0.7}, true);
  const std::vector<NamedTensor<double>> params{{"layer.weight", w}};
  backward(sum(square(w)));  // g = 1.4
  OptimizerState<double> state;
  AdamWSettings s{0.01, 0.1, 0.9, 0.999, 1e-8};
  adamw_step(params, state, s);
  const double g = 1.4;
  const double m_hat = (0.1 * g) / (1 - 0.9);
  const double v_hat = (0.001 * g * g) / (1 - 0.999);
  const double want = 0.7 * (1 - 0.01 * 0.1) - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
  EXPECT_NEAR(w.data()[0], want, 1e-10);
}

TEST(AdamW, DecayOnlyAppliesToWeights) {
  T64 w({1}, {1.0}, true);
  T64 b({1}, {1.0}, true);
  const std::vector<NamedTensor<double>> params{{"x.weight", w}, {"x.bias", b}};
  backward(sum(mul_scalar(w + b, 0.0)));
  OptimizerState<double> state;
  adamw_step(params, state, AdamWSettings{0.1, 0.5, 0.9, 0.999, 1e-8});
  EXPECT_DOUBLE_EQ(w.data()[0], 1.0 - 0.1 * 0.5);
  EXPECT_EQ(b.data()[0], 1.0);
}

TEST(AdamW, ParametersWithoutGradientAreSkipped) {
  T64 used({1}, {1.0}, true);
  T64 unused({1}, {1.0}, true);
  const std::vector<NamedTensor<double>> params{{"a.weight", used}, {"b.weight", unused}};
  backward(sum(square(used)));
  OptimizerState<double> state;
  adamw_step(params, state, AdamWSettings{0.1, 0.5, 0.9, 0.999, 1e-8});
  EXPECT_NE(used.data()[0], 1.0);
  EXPECT_EQ(unused.data()[0], 1.0);
}

TEST(AdamW, QuadraticDecreasesMonotonically) {
  T64 x({1}, {3.0}, true);
  const std::vector<NamedTensor<double>> params{{"x", x}};
  OptimizerState<double> state;
  const AdamWSettings s{0.01, 0.0, 0.9, 0.999, 1e-8};
  double prev = 9.0;
  for (int i = 0; i < 100; ++i) {
    x.zero_grad();
    backward(square(sum(x)));
    adamw_step(params, state, s);
    const double f = x.data()[0] * x.data()[0];
    EXPECT_LT(f, prev) << "step " << i;
    prev = f;
  }
}

TEST(TrainConfig, ValidateNamesKey) {
  TrainConfig c = TrainConfig::defaults(Stage::kPretrain);
  c.batch_size = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "batch_size");
  }
  c = TrainConfig::defaults(Stage::kPretrain);
  c.init_checkpoint = "x.ckpt";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, StageDefaults) {
  EXPECT_EQ(TrainConfig::defaults(Stage::kPretrain).epochs, 200u);
  EXPECT_DOUBLE_EQ(TrainConfig::defaults(Stage::kPretrain).learning_rate, 1.5e-4);
  EXPECT_EQ(TrainConfig::defaults(Stage::kFinetune).epochs, 20u);
  EXPECT_DOUBLE_EQ(TrainConfig::defaults(Stage::kFinetune).learning_rate, 1e-4);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  test::TempDir dir;
  const auto model = DepthCompletionModel<double>::create(test::tiny_config(), 3);
  Checkpoint ckpt;
  ckpt.stage = Stage::kFinetune;
  ckpt.model = model.config();
  ckpt.scalar_bytes = 8;
  ckpt.metadata["train.step"] = "12";
  store_params(ckpt, model.params());
  ckpt.save(dir / "a.ckpt");
  const Checkpoint back = Checkpoint::load(dir / "a.ckpt");
  EXPECT_EQ(back, ckpt);
  const auto rebuilt = model_from_checkpoint<double>(back);
  const auto a = model.params().named();
  const auto b = rebuilt.params().named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
  }
}

TEST(Checkpoint, CorruptFileIsRejected) {
  test::TempDir dir;
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  EXPECT_THROW(Checkpoint::load(dir / "bad.ckpt"), CheckpointError);
  EXPECT_THROW(Checkpoint::load(dir / "missing.ckpt"), std::exception);
}

TEST(Checkpoint, IncompatibleInitListsEveryMismatch) {
  const auto small = DepthCompletionModel<double>::create(test::tiny_config(8, 4, 8), 1);
  Checkpoint ckpt;
  ckpt.model = small.config();
  store_params(ckpt, small.params());
  const auto big = DepthCompletionModel<double>::create(test::tiny_config(16, 4, 16), 1);
  try {
    load_matching(big.params(), ckpt);
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    for (const char* name : {"patch_embed.weight", "enc_pos_embed", "dec_pos_embed", "head.weight", "mask_token"}) {
      EXPECT_NE(msg.find(name), std::string::npos) << name << " missing from: " << msg;
    }
  }
}

TEST(Checkpoint, InitFromPretrainLoadsEverything) {
  const auto pre = DepthCompletionModel<double>::create(test::tiny_config(), 1);
  Checkpoint ckpt;
  ckpt.model = pre.config();
  store_params(ckpt, pre.params());
  const auto fine = DepthCompletionModel<double>::create(test::tiny_config(), 2);
  const InitReport r = load_matching(fine.params(), ckpt);
  EXPECT_EQ(r.loaded.size(), fine.params().named().size());
  EXPECT_TRUE(r.not_in_checkpoint.empty());
  EXPECT_EQ(fine.params().enc_pos_embed.data()[0], pre.params().enc_pos_embed.data()[0]);
}

TEST(Loss, FinetuneSeesEveryPixel) {
  Rng rng(3);
  std::vector<double> g(48), p(48);
  for (std::size_t i = 0; i < 48; ++i) {
    g[i] = rng.uniform(0.5, 4.0);
    p[i] = g[i] + rng.uniform(-0.5, 0.5);
  }
  const double base = loss_finetune(T64({1, 6, 8}, p), T64({1, 6, 8}, g)).item();
  for (std::size_t i = 0; i < 48; ++i) {
    auto q = p;
    q[i] += 0.25;
    EXPECT_NE(loss_finetune(T64({1, 6, 8}, q), T64({1, 6, 8}, g)).item(), base) << "pixel " << i;
  }
}

TrainConfig quick_config(Stage stage, std::size_t epochs) {
  TrainConfig c = TrainConfig::defaults(stage);
  c.epochs = epochs;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.precision = Precision::kFloat64;
  c.seed = 11;
  return c;
}

TEST(Training, RunsAreSeedDeterministic) {
  const auto samples = test::synthetic_samples(3, 16, 4);
  const ModelConfig mc = test::tiny_config(16, 4, 8);
  const TrainConfig tc = quick_config(Stage::kPretrain, 2);
  const TrainResult a = train(samples, mc, tc);
  const TrainResult b = train(samples, mc, tc);
  EXPECT_EQ(a.checkpoint, b.checkpoint);
  ASSERT_EQ(a.epochs.size(), 2u);
  EXPECT_EQ(a.epochs.back().mean_loss_m, b.epochs.back().mean_loss_m);
  EXPECT_EQ(a.steps, 4u);  // ceil(3 / 2) * 2
}

TEST(Training, DifferentSeedsDiffer) {
  const auto samples = test::synthetic_samples(2, 16, 4);
  TrainConfig tc = quick_config(Stage::kFinetune, 1);
  const TrainResult a = train(samples, test::tiny_config(16, 4, 8), tc);
  tc.seed = 12;
  const TrainResult b = train(samples, test::tiny_config(16, 4, 8), tc);
  EXPECT_NE(a.checkpoint, b.checkpoint);
}

TEST(Training, WritesRunDirectory) {
  test::TempDir dir;
  const auto samples = test::synthetic_samples(2, 16, 4);
  TrainConfig tc = quick_config(Stage::kPretrain, 3);
  tc.checkpoint_every = 2;
  TrainOptions opt;
  opt.out_dir = dir.path();
  const TrainResult r = train(samples, test::tiny_config(16, 4, 8), tc, opt);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints/final.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints/step_00000002.ckpt"));
  const auto log = read_metrics_log(dir / "metrics.log");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[2].epoch, 3u);
  EXPECT_NEAR(log[2].mean_loss_m, r.epochs[2].mean_loss_m, 1e-9);
  EXPECT_EQ(Checkpoint::load(dir / "checkpoints/final.ckpt"), r.checkpoint);
}

TEST(Training, ResumeReproducesUninterruptedRun) {
  const auto samples = test::synthetic_samples(3, 16, 5);
  const ModelConfig mc = test::tiny_config(16, 4, 8);
  const TrainConfig tc = quick_config(Stage::kPretrain, 3);
  const TrainResult full = train(samples, mc, tc);
  TrainOptions first;
  first.stop_after_steps = 3;  // mid-epoch
  const TrainResult half = train(samples, mc, tc, first);
  TrainOptions second;
  second.resume = &half.checkpoint;
  const TrainResult rest = train(samples, mc, tc, second);
  EXPECT_EQ(rest.checkpoint, full.checkpoint);
  EXPECT_EQ(rest.epochs.back().mean_loss_m, full.epochs.back().mean_loss_m);
}

TEST(Training, ResumeWithDifferentSeedIsRejected) {
  const auto samples = test::synthetic_samples(2, 16, 5);
  TrainConfig tc = quick_config(Stage::kPretrain, 2);
  TrainOptions first;
  first.stop_after_steps = 1;
  const TrainResult half = train(samples, test::tiny_config(16, 4, 8), tc, first);
  tc.seed = 99;
  TrainOptions second;
  second.resume = &half.checkpoint;
  EXPECT_THROW(train(samples, test::tiny_config(16, 4, 8), tc, second), CheckpointError);
}

TEST(Training, FinetuneFromPretrainReportsLoadedTensors) {
  const auto samples = test::synthetic_samples(2, 16, 6);
  const ModelConfig mc = test::tiny_config(16, 4, 8);
  const TrainResult pre = train(samples, mc, quick_config(Stage::kPretrain, 1));
  TrainOptions opt;
  opt.init = &pre.checkpoint;
  const TrainResult fine = train(samples, mc, quick_config(Stage::kFinetune, 1), opt);
  EXPECT_FALSE(fine.init.loaded.empty());
  EXPECT_EQ(fine.checkpoint.stage, Stage::kFinetune);
}

TEST(Training, InitRejectedForPretraining) {
  const auto samples = test::synthetic_samples(2, 16, 6);
  const ModelConfig mc = test::tiny_config(16, 4, 8);
  const TrainResult pre = train(samples, mc, quick_config(Stage::kPretrain, 1));
  TrainOptions opt;
  opt.init = &pre.checkpoint;
  EXPECT_THROW(train(samples, mc, quick_config(Stage::kPretrain, 1), opt), ConfigError);
}

TrainConfig single_sample_config(Stage stage, std::size_t steps) {
  TrainConfig c = TrainConfig::defaults(stage);
  c.epochs = steps;
  c.batch_size = 1;
  c.weight_decay = 0.0;
  c.beta2 = 0.95;
  c.seed = 21;
  return c;
}

ModelConfig single_sample_model() {
  ModelConfig m = test::tiny_config(16, 4, 32);
  m.enc_layers = 2;
  return m;
}

TEST(Training, SingleSamplePretrainingDrivesLossDown) {
  const auto samples = test::synthetic_samples(1, 16, 8);
  const TrainResult r = train(samples, single_sample_model(), single_sample_config(Stage::kPretrain, 300));
  ASSERT_EQ(r.epochs.size(), 300u);
  EXPECT_LT(r.epochs.back().mean_loss_m, 0.05 * r.epochs.front().mean_loss_m);
}

TEST(Training, SingleSampleCompletionIsAccurate) {
  const auto samples = test::synthetic_samples(1, 16, 8);
  TrainConfig tc = single_sample_config(Stage::kFinetune, 300);
  tc.learning_rate = 2e-3;
  tc.cosine_decay = true;
  const TrainResult r = train(samples, single_sample_model(), tc);
  const Completer completer(r.checkpoint);
  const auto err = rmse(completer.complete(samples[0]), samples[0].gt_depth);
  ASSERT_TRUE(err.has_value());
  EXPECT_LT(*err, 0.05);
}

}  // namespace
}  // namespace depthmae
