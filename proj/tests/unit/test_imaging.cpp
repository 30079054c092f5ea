#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <png.h>

#include "depthmae/imaging.hpp"
#include "depthmae/random.hpp"
#include "temp_dir.hpp"

namespace depthmae {
namespace {

namespace fs = std::filesystem;

// Writes a 16-bit grayscale PNG directly through libpng.
void write_counts(const fs::path& path, std::size_t h, std::size_t w, const std::vector<std::uint16_t>& counts) {
  FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(w * 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      row[2 * x] = static_cast<unsigned char>(counts[y * w + x] >> 8);
      row[2 * x + 1] = static_cast<unsigned char>(counts[y * w + x] & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

TEST(Imaging, CountsAtScaleBecomeMeters) {
  test::TempDir dir;
  write_counts(dir / "d.png", 1, 2, {4000, 0});
  const DepthImage d = load_depth(dir / "d.png", 4000.0);
  EXPECT_EQ(d.at(0, 0), 1.0f);
  EXPECT_EQ(d.at(0, 1), 0.0f);
  EXPECT_EQ(d.count_valid(), 1u);
}

TEST(Imaging, DepthRoundTripPreservesCounts) {
  test::TempDir dir;
  Rng rng(3);
  std::vector<std::uint16_t> counts(12 * 7);
  for (auto& c : counts) c = static_cast<std::uint16_t>(rng.bounded(65536));
  write_counts(dir / "a.png", 12, 7, counts);
  const DepthImage d = load_depth(dir / "a.png");
  EXPECT_EQ(depth_to_counts(d, kDefaultDepthScale), counts);
  save_depth(dir / "b.png", d);
  EXPECT_EQ(depth_to_counts(load_depth(dir / "b.png"), kDefaultDepthScale), counts);
}

TEST(Imaging, EightBitDepthIsRejectedWithFormat) {
  test::TempDir dir;
  RgbImage rgb(2, 2, 0.5f);
  save_rgb(dir / "rgb.png", rgb);
  try {
    load_depth(dir / "rgb.png");
    FAIL();
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3 channel"), std::string::npos) << msg;
    EXPECT_NE(msg.find("8 bits"), std::string::npos) << msg;
  }
}

TEST(Imaging, MissingFileIsIoError) { EXPECT_THROW(load_depth("/nonexistent/depth.png"), IoError); }

TEST(Imaging, RgbRoundTrip) {
  test::TempDir dir;
  RgbImage rgb(3, 4);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) rgb.at(c, y, x) = static_cast<float>((c * 40 + y * 17 + x * 5) % 256) / 255.0f;
  save_rgb(dir / "rgb.png", rgb);
  EXPECT_EQ(load_rgb(dir / "rgb.png"), rgb);
}

TEST(Imaging, ResizeSameSizeIsIdentity) {
  DepthImage d(3, 5);
  RgbImage rgb(3, 5);
  Rng rng(1);
  for (float& v : d.values()) v = static_cast<float>(rng.uniform(0.0, 4.0));
  EXPECT_EQ(resize_nearest(d, 3, 5), d);
  EXPECT_EQ(resize_bilinear(rgb, 3, 5), rgb);
}

TEST(Imaging, NearestKeepsValueSet) {
  DepthImage d(4, 4);
  for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] = (i % 3 == 0) ? 2.0f : 0.0f;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{7, 3}, {2, 2}, {9, 11}}) {
    const DepthImage r = resize_nearest(d, h, w);
    const std::set<float> values(r.values().begin(), r.values().end());
    EXPECT_EQ(values, (std::set<float>{0.0f, 2.0f}));
  }
}

TEST(Imaging, BilinearDownsampleOfCheckerboardIsUniform) {
  RgbImage rgb(8, 8);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) rgb.at(c, y, x) = static_cast<float>((x + y) % 2);
  const RgbImage r = resize_bilinear(rgb, 4, 4);
  for (float v : r.values()) EXPECT_NEAR(v, 0.5f, 1e-6f);
}

TEST(Imaging, ResizeSampleNeedsPatchMultiple) {
  RgbdSample s{RgbImage(6, 6), DepthImage(6, 6), DepthImage(6, 6), "x"};
  EXPECT_THROW(resize_sample(s, 10, 8, 4), ShapeError);
  const RgbdSample r = resize_sample(s, 8, 12, 4);
  EXPECT_EQ(r.raw_depth.height(), 8u);
  EXPECT_EQ(r.gt_depth.width(), 12u);
  EXPECT_EQ(r.rgb.width(), 12u);
}

TEST(Imaging, ModelInputNormalizesDepth) {
  RgbdSample s{RgbImage(2, 2, 0.25f), DepthImage(2, 2, 8.0f), DepthImage(2, 2, 4.0f), "x"};
  const auto raw = to_model_input<double>(s, DepthSource::kRaw, 8.0);
  ASSERT_EQ(raw.shape(), (Shape{4, 2, 2}));
  EXPECT_EQ(raw.data()[0], 0.25);
  EXPECT_EQ(raw.data()[12], 1.0);
  const auto gt = to_model_input<double>(s, DepthSource::kGroundTruth, 8.0);
  EXPECT_EQ(gt.data()[12], 0.5);
}

TEST(Imaging, NormalizationInverts) {
  DepthImage d(3, 3);
  Rng rng(2);
  for (float& v : d.values()) v = static_cast<float>(rng.uniform(0.0, 8.0));
  const DepthImage back = tensor_to_depth(depth_to_tensor<double>(d, 8.0), 8.0);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(back.values()[i], d.values()[i], 1e-6);
}

TEST(Manifest, SaveLoadRoundTrip) {
  test::TempDir dir;
  DatasetManifest m;
  m.root = dir.path();
  m.split = "train";
  m.records.push_back({"rgb/a.png", "raw/a.png", "gt/a.png", "rgb/a"});
  m.records.push_back({"rgb/b.png", "raw/b.png", "gt/b.png", "rgb/b"});
  m.save(dir / "m.tsv");
  const DatasetManifest back = DatasetManifest::load(dir / "m.tsv");
  EXPECT_EQ(back.split, "train");
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[1].gt_depth, fs::path("gt/b.png"));
  EXPECT_EQ(back.records[0].identifier, "rgb/a");
  EXPECT_EQ(back.missing_files().size(), 6u);
}

TEST(Manifest, DuplicateIdentifierIsRejected) {
  test::TempDir dir;
  std::ofstream(dir / "m.tsv") << "rgb/a.png\traw/a.png\tgt/a.png\nrgb/a.png\traw/b.png\tgt/b.png\n";
  EXPECT_THROW(DatasetManifest::load(dir / "m.tsv"), IoError);
}

TEST(Manifest, MalformedLineIsRejected) {
  test::TempDir dir;
  std::ofstream(dir / "m.tsv") << "rgb/a.png\traw/a.png\n";
  EXPECT_THROW(DatasetManifest::load(dir / "m.tsv"), IoError);
}

}  // namespace
}  // namespace depthmae
