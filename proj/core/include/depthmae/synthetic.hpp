#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "depthmae/imaging.hpp"

namespace depthmae {

/// Procedural indoor scenes: a box-shaped room (floor, ceiling, side and back
/// walls) with a few boxes standing on the floor, seen by a pinhole camera.
/// Ground-truth depth lies in [0.5, 4] m and has no holes.
struct SyntheticOptions {
  std::size_t height = 32;
  std::size_t width = 40;
  /// Raw depth loses rectangles until this fraction range is reached...
  double min_hole_fraction = 0.10;
  double max_hole_fraction = 0.35;
  /// ...then each remaining pixel drops out with this probability.
  double speckle_probability = 0.02;
  double depth_scale = kDefaultDepthScale;
};

RgbdSample generate_scene(std::uint64_t seed, const SyntheticOptions& options = {});

/// Writes `count` scenes as rgb/, raw/ and gt/ PNGs under `out_dir` plus
/// `manifest.tsv`, and returns the manifest. Byte-identical for equal seeds.
DatasetManifest make_synthetic_dataset(const std::filesystem::path& out_dir, std::size_t count, std::uint64_t seed,
                                       const SyntheticOptions& options = {});

}  // namespace depthmae
