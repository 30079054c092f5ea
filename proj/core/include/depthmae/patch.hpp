#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "depthmae/tensor.hpp"

namespace depthmae {

/// Tiling of a [C, H, W] image into non-overlapping square patches.
struct PatchGrid {
  std::size_t patch_size = 16;
  std::size_t grid_h = 14;
  std::size_t grid_w = 14;
  std::size_t channels = 4;

  static PatchGrid for_image(std::size_t height, std::size_t width, std::size_t patch_size, std::size_t channels);

  std::size_t num_tokens() const { return grid_h * grid_w; }
  std::size_t token_dim() const { return patch_size * patch_size * channels; }
  std::size_t height() const { return grid_h * patch_size; }
  std::size_t width() const { return grid_w * patch_size; }
  /// Raster index of the patch containing pixel (y, x).
  std::size_t token_of(std::size_t y, std::size_t x) const { return (y / patch_size) * grid_w + x / patch_size; }
};

/// [C, H, W] -> [L, C*p*p]. Token i is patch i in raster order; inside a
/// token the layout is channel-major, then row, then column.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size);

/// Exact inverse of patchify. Differentiable.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, const PatchGrid& grid);

/// Partition of token indices into kept and masked sets.
///
/// The "shuffled" sequence is `kept` followed by `masked`; `restore_perm[i]`
/// is the shuffled position of raster token i.
struct MaskPlan {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> masked;
  std::vector<std::size_t> restore_perm;
  std::uint64_t seed = 0;

  std::size_t num_tokens() const { return kept.size() + masked.size(); }
  bool trivial() const { return masked.empty(); }

  /// Keeps every token.
  static MaskPlan identity(std::size_t num_tokens);
  /// Builds a plan from an explicit kept set; everything else is masked.
  static MaskPlan from_kept(std::size_t num_tokens, std::vector<std::size_t> kept);
};

/// Number of masked tokens: round(mask_ratio * L) with ties to even.
std::size_t masked_count(std::size_t num_tokens, double mask_ratio);

/// Uniformly random masked subset of exact size masked_count(L, ratio).
/// The draw uses mt19937_64 with a portable bounded-integer and partial
/// Fisher-Yates shuffle, so a seed reproduces across standard libraries.
MaskPlan sample_mask(std::size_t num_tokens, double mask_ratio, std::uint64_t seed);

/// Rows of `tokens` at plan.kept, in ascending index order.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskPlan& plan);

/// Throws ShapeError unless `plan` is a valid partition of [0, num_tokens).
void validate_plan(const MaskPlan& plan, std::size_t num_tokens);

}  // namespace depthmae
