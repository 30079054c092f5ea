#pragma once

#include <cstdint>
#include <vector>

#include "depthmae/imaging.hpp"
#include "depthmae/model.hpp"
#include "depthmae/random.hpp"
#include "depthmae/synthetic.hpp"

namespace depthmae::test {

inline ModelConfig tiny_config(std::size_t image = 8, std::size_t patch = 4, std::size_t dim = 8) {
  ModelConfig c;
  c.image_size = image;
  c.patch_size = patch;
  c.enc_layers = 1;
  c.enc_heads = 2;
  c.enc_dim = dim;
  c.dec_layers = 1;
  c.dec_heads = 2;
  c.dec_dim = dim;
  return c;
}

/// RGB-D sample with random depth in [0.5, 4] m and roughly `hole_fraction` zeros.
inline RgbdSample random_sample(std::size_t size, std::uint64_t seed, double hole_fraction = 0.3) {
  Rng rng(seed);
  RgbdSample s{RgbImage(size, size), DepthImage(size, size), DepthImage(size, size), "random"};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) s.rgb.at(c, y, x) = static_cast<float>(rng.uniform());
  for (std::size_t i = 0; i < s.gt_depth.size(); ++i) {
    s.gt_depth.values()[i] = static_cast<float>(rng.uniform(0.5, 4.0));
    s.raw_depth.values()[i] = rng.uniform() < hole_fraction ? 0.0f : s.gt_depth.values()[i];
  }
  return s;
}

/// Synthetic scenes already at `size` x `size`.
inline std::vector<RgbdSample> synthetic_samples(std::size_t count, std::size_t size, std::uint64_t seed) {
  SyntheticOptions opt;
  opt.height = size;
  opt.width = size;
  std::vector<RgbdSample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(derive_seed(seed, i), opt));
  return out;
}

}  // namespace depthmae::test
