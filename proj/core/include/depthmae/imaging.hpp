#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthmae/tensor.hpp"

namespace depthmae {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matterport-style 16-bit depth: 4000 counts per meter.
inline constexpr double kDefaultDepthScale = 4000.0;
inline constexpr double kDefaultMaxDepth = 8.0;

/// Metric depth map. A zero pixel means "no measurement".
class DepthImage {
 public:
  DepthImage() = default;
  DepthImage(std::size_t height, std::size_t width, float fill = 0.0f);
  DepthImage(std::size_t height, std::size_t width, std::vector<float> meters);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float at(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }
  float& at(std::size_t y, std::size_t x) { return values_[y * width_ + x]; }
  const std::vector<float>& values() const { return values_; }
  std::vector<float>& values() { return values_; }

  static bool valid(float meters) { return meters > 0.0f; }
  std::size_t count_valid() const;
  std::size_t count_holes() const { return size() - count_valid(); }

  bool operator==(const DepthImage&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

/// Planar RGB, channel-major, values in [0, 1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t height, std::size_t width, float fill = 0.0f);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  float at(std::size_t c, std::size_t y, std::size_t x) const { return values_[(c * height_ + y) * width_ + x]; }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return values_[(c * height_ + y) * width_ + x]; }
  const std::vector<float>& values() const { return values_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

struct RgbdSample {
  RgbImage rgb;
  DepthImage raw_depth;
  DepthImage gt_depth;  // may be empty when only completing
  std::string identifier;
};

// 16-bit single-channel PNG <-> meters. Counts are round(meters * depth_scale).
DepthImage load_depth(const std::filesystem::path& path, double depth_scale = kDefaultDepthScale);
void save_depth(const std::filesystem::path& path, const DepthImage& depth, double depth_scale = kDefaultDepthScale);
std::vector<std::uint16_t> depth_to_counts(const DepthImage& depth, double depth_scale);

// 8-bit 3-channel PNG.
RgbImage load_rgb(const std::filesystem::path& path);
void save_rgb(const std::filesystem::path& path, const RgbImage& rgb);

/// Half-pixel-centered bilinear resampling.
RgbImage resize_bilinear(const RgbImage& rgb, std::size_t height, std::size_t width);
/// Nearest-neighbor resampling; never creates values absent from the input.
DepthImage resize_nearest(const DepthImage& depth, std::size_t height, std::size_t width);

/// Stretches all images of a sample to (height, width). Both must be
/// multiples of `patch_size`.
RgbdSample resize_sample(const RgbdSample& sample, std::size_t height, std::size_t width, std::size_t patch_size);

enum class DepthSource { kRaw, kGroundTruth };

/// [4, H, W] tensor: RGB in channels 0..2, depth / max_depth in channel 3.
template <typename T>
Tensor<T> to_model_input(const RgbdSample& sample, DepthSource which, double max_depth = kDefaultMaxDepth);

/// [1, H, W] tensor of depth / max_depth.
template <typename T>
Tensor<T> depth_to_tensor(const DepthImage& depth, double max_depth = kDefaultMaxDepth);

/// Inverse of depth_to_tensor for a [1, H, W] or [H, W] tensor.
template <typename T>
DepthImage tensor_to_depth(const Tensor<T>& normalized, double max_depth = kDefaultMaxDepth);

struct ManifestRecord {
  std::filesystem::path rgb;
  std::filesystem::path raw_depth;
  std::filesystem::path gt_depth;
  std::string identifier;
};

/// Tab-separated manifest: one `rgb<TAB>raw_depth<TAB>gt_depth` line per sample,
/// paths relative to `root`. An optional `# split: <name>` line tags the split.
struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<ManifestRecord> records;

  /// Throws IoError when the file is unreadable or malformed, or when two
  /// records share an identifier. Existence of image files is checked by
  /// `verify_files`.
  static DatasetManifest load(const std::filesystem::path& path, std::filesystem::path root = {});
  void save(const std::filesystem::path& path) const;
  /// Paths of referenced files that do not exist.
  std::vector<std::filesystem::path> missing_files() const;

  RgbdSample load_sample(std::size_t index, double depth_scale = kDefaultDepthScale) const;
};

}  // namespace depthmae
