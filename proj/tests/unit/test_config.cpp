#include <gtest/gtest.h>

#include <fstream>

#include "depthmae/config.hpp"
#include "temp_dir.hpp"

namespace depthmae {
namespace {

std::string error_key(const std::string& text) {
  try {
    RunConfig::parse(text, Stage::kPretrain);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

TEST(RunConfig, ParsesKeysCommentsAndWhitespace) {
  const RunConfig c = RunConfig::parse(
      "# tiny run\n"
      "image_size = 32   # pixels\n"
      "\n"
      "  patch_size=4\n"
      "learning_rate = 2e-3\n"
      "cosine_decay = true\n"
      "precision = f64\n"
      "manifest = /data/m.tsv\n",
      Stage::kPretrain);
  EXPECT_EQ(c.model.image_size, 32u);
  EXPECT_EQ(c.model.patch_size, 4u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 2e-3);
  EXPECT_TRUE(c.train.cosine_decay);
  EXPECT_EQ(c.train.precision, Precision::kFloat64);
  EXPECT_EQ(c.manifest, "/data/m.tsv");
  EXPECT_EQ(c.train.epochs, 200u);
}

TEST(RunConfig, StageDefaultsApply) {
  const RunConfig c = RunConfig::parse("", Stage::kFinetune);
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.train.stage, Stage::kFinetune);
}

TEST(RunConfig, ErrorsNameTheKey) {
  EXPECT_EQ(error_key("lerning_rate = 1\n"), "lerning_rate");
  EXPECT_EQ(error_key("epochs = many\n"), "epochs");
  EXPECT_EQ(error_key("epochs = -3\n"), "epochs");
  EXPECT_EQ(error_key("shuffle = maybe\n"), "shuffle");
  EXPECT_EQ(error_key("precision = f16\n"), "precision");
  EXPECT_EQ(error_key("seed = 1\nseed = 2\n"), "seed");
  EXPECT_EQ(error_key("just_a_word\n"), "just_a_word");
}

TEST(RunConfig, ValidateNamesMissingManifest) {
  RunConfig c = RunConfig::defaults(Stage::kPretrain);
  c.out_dir = "/tmp/x";
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "manifest");
  }
}

TEST(RunConfig, RelativePathsResolveAgainstConfigFile) {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  std::ofstream(dir / "sub/run.cfg") << "manifest = data/m.tsv\nout_dir = ../runs/a\n";
  const RunConfig c = RunConfig::load(dir / "sub/run.cfg", Stage::kPretrain);
  EXPECT_EQ(c.manifest, (dir.path() / "sub/data/m.tsv").lexically_normal());
  EXPECT_EQ(c.out_dir, (dir.path() / "runs/a").lexically_normal());
}

TEST(RunConfig, TextRoundTripReproducesEveryField) {
  RunConfig c = RunConfig::defaults(Stage::kFinetune);
  c.model.image_size = 48;
  c.model.patch_size = 8;
  c.model.mask_ratio = 0.6;
  c.model.max_depth = 10.0 / 3.0;
  c.train.learning_rate = 1.0 / 3.0 * 1e-3;
  c.train.shuffle = false;
  c.train.seed = 1234567890123ULL;
  c.train.init_checkpoint = "/a/b.ckpt";
  c.manifest = "/m.tsv";
  c.out_dir = "/out";
  c.depth_scale = 1000.0;
  const std::string text = c.to_text();
  const RunConfig back = RunConfig::parse(text, Stage::kFinetune);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.train.learning_rate, c.train.learning_rate);
  EXPECT_EQ(back.train.seed, c.train.seed);
  EXPECT_EQ(back.train.init_checkpoint, c.train.init_checkpoint);
}

}  // namespace
}  // namespace depthmae
