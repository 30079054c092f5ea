#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "depthmae/checkpoint.hpp"
#include "depthmae/imaging.hpp"

namespace depthmae {

// All metrics score only pixels with nonzero ground truth (the O-set) and
// ignore prediction values elsewhere.

/// sqrt(mean over O of (pred - gt)^2); nullopt when O is empty.
std::optional<double> rmse(const DepthImage& pred, const DepthImage& gt);

/// Mean absolute error over O; nullopt when O is empty.
std::optional<double> mean_error(const DepthImage& pred, const DepthImage& gt);

/// Fraction of O with max(pred/gt, gt/pred) < threshold. Nonpositive
/// predictions count as failures. nullopt when O is empty.
std::optional<double> delta(const DepthImage& pred, const DepthImage& gt, double threshold);

enum class SsimWindow { kGaussian, kUniform };

/// Single-scale SSIM averaged over every fully inside 11x11 window.
/// Gaussian window uses sigma 1.5; C1 = (0.01 R)^2, C2 = (0.03 R)^2.
/// Throws ShapeError when the images differ in size or are smaller than the window.
double ssim(const DepthImage& a, const DepthImage& b, double dynamic_range,
            SsimWindow window = SsimWindow::kGaussian);

/// SSIM of pred against gt after zeroing pred where gt has no value.
double masked_ssim(const DepthImage& pred, const DepthImage& gt, double dynamic_range);

struct ImageMetrics {
  std::string identifier;
  std::optional<double> rmse_m;
  std::optional<double> me_m;
  std::optional<double> ssim;
  std::optional<double> delta_1;  // threshold 1.25
  std::optional<double> delta_2;  // threshold 1.25^2
  std::size_t valid_pixels = 0;
};

ImageMetrics score_image(const DepthImage& pred, const DepthImage& gt, double max_depth, std::string identifier = {});

struct EvalReport {
  std::vector<ImageMetrics> images;
  ImageMetrics aggregate;  // unweighted mean over images where each metric is defined

  static EvalReport from_images(std::vector<ImageMetrics> images);

  /// Tab-separated: header, one row per image, then the AGGREGATE row.
  /// Missing values print as NA.
  std::string to_tsv() const;
  void write(const std::filesystem::path& path) const;
  static std::string header();
  static std::string row(const ImageMetrics& m);
};

/// Completes every manifest sample with a fine-tuned checkpoint and scores it
/// at the original ground-truth resolution.
EvalReport evaluate(const DatasetManifest& manifest, const Checkpoint& checkpoint, double depth_scale);

}  // namespace depthmae
