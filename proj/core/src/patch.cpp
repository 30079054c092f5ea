#include "depthmae/patch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "depthmae/ops.hpp"
#include "depthmae/random.hpp"

namespace depthmae {

PatchGrid PatchGrid::for_image(std::size_t height, std::size_t width, std::size_t patch_size, std::size_t channels) {
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
  return PatchGrid{patch_size, height / patch_size, width / patch_size, channels};
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size) {
  if (image.rank() != 3) throw ShapeError("patchify expects [C, H, W], got " + shape_string(image.shape()));
  const PatchGrid g = PatchGrid::for_image(image.dim(1), image.dim(2), patch_size, image.dim(0));
  const std::size_t p = patch_size;
  auto blocks = reshape(image, Shape{g.channels, g.grid_h, p, g.grid_w, p});
  auto tokens = permute(blocks, {1, 3, 0, 2, 4});
  return reshape(tokens, Shape{g.num_tokens(), g.token_dim()});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, const PatchGrid& grid) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid.num_tokens() || tokens.dim(1) != grid.token_dim()) {
    throw ShapeError("unpatchify: tokens " + shape_string(tokens.shape()) + " do not fit a " +
                     std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w) + " grid of " +
                     std::to_string(grid.channels) + "-channel " + std::to_string(grid.patch_size) + "px patches");
  }
  const std::size_t p = grid.patch_size;
  auto blocks = reshape(tokens, Shape{grid.grid_h, grid.grid_w, grid.channels, p, p});
  auto image = permute(blocks, {2, 0, 3, 1, 4});
  return reshape(image, Shape{grid.channels, grid.height(), grid.width()});
}

MaskPlan MaskPlan::identity(std::size_t num_tokens) {
  std::vector<std::size_t> all(num_tokens);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return from_kept(num_tokens, std::move(all));
}

MaskPlan MaskPlan::from_kept(std::size_t num_tokens, std::vector<std::size_t> kept) {
  std::sort(kept.begin(), kept.end());
  std::vector<bool> is_kept(num_tokens, false);
  for (std::size_t k : kept) {
    if (k >= num_tokens || is_kept[k]) throw ShapeError("kept indices must be distinct and below " + std::to_string(num_tokens));
    is_kept[k] = true;
  }
  MaskPlan plan;
  plan.kept = std::move(kept);
  for (std::size_t i = 0; i < num_tokens; ++i) {
    if (!is_kept[i]) plan.masked.push_back(i);
  }
  plan.restore_perm.resize(num_tokens);
  std::size_t pos = 0;
  for (std::size_t k : plan.kept) plan.restore_perm[k] = pos++;
  for (std::size_t m : plan.masked) plan.restore_perm[m] = pos++;
  return plan;
}

std::size_t masked_count(std::size_t num_tokens, double mask_ratio) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("mask_ratio must lie in [0, 1), got " + std::to_string(mask_ratio));
  }
  // nearbyint honors the default FE_TONEAREST mode: ties go to even.
  return static_cast<std::size_t>(std::nearbyint(mask_ratio * static_cast<double>(num_tokens)));
}

MaskPlan sample_mask(std::size_t num_tokens, double mask_ratio, std::uint64_t seed) {
  if (num_tokens == 0) throw ShapeError("sample_mask: need at least one token");
  const std::size_t n_masked = masked_count(num_tokens, mask_ratio);
  std::vector<std::size_t> order(num_tokens);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n_masked; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bounded(num_tokens - i));
    std::swap(order[i], order[j]);
  }
  MaskPlan plan = MaskPlan::from_kept(num_tokens, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(n_masked), order.end()));
  plan.seed = seed;
  return plan;
}

void validate_plan(const MaskPlan& plan, std::size_t num_tokens) {
  if (plan.num_tokens() != num_tokens || plan.restore_perm.size() != num_tokens) {
    throw ShapeError("mask plan covers " + std::to_string(plan.num_tokens()) + " tokens, expected " +
                     std::to_string(num_tokens));
  }
  std::vector<bool> seen(num_tokens, false);
  for (const auto* part : {&plan.kept, &plan.masked}) {
    for (std::size_t i : *part) {
      if (i >= num_tokens || seen[i]) throw ShapeError("mask plan is not a partition of the token indices");
      seen[i] = true;
    }
  }
  std::vector<bool> used(num_tokens, false);
  for (std::size_t pos : plan.restore_perm) {
    if (pos >= num_tokens || used[pos]) throw ShapeError("mask plan restore permutation is invalid");
    used[pos] = true;
  }
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskPlan& plan) {
  if (tokens.rank() != 2) throw ShapeError("apply_mask expects [L, D], got " + shape_string(tokens.shape()));
  validate_plan(plan, tokens.dim(0));
  if (plan.trivial()) return tokens;
  return index_select(tokens, 0, plan.kept);
}

template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, const PatchGrid&);
template Tensor<double> unpatchify(const Tensor<double>&, const PatchGrid&);
template Tensor<float> apply_mask(const Tensor<float>&, const MaskPlan&);
template Tensor<double> apply_mask(const Tensor<double>&, const MaskPlan&);

}  // namespace depthmae
