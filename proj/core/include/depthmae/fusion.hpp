#pragma once

#include <variant>

#include "depthmae/checkpoint.hpp"
#include "depthmae/imaging.hpp"
#include "depthmae/model.hpp"

namespace depthmae {

/// Per pixel: the measured depth where it exists, otherwise the completed one.
DepthImage fuse(const DepthImage& original, const DepthImage& completed);

/// Sets nonpositive (and non-finite) values to zero, i.e. "missing".
DepthImage clamp_to_valid(DepthImage depth);

/// Runs the fine-tuned network on (rgb, raw_depth), clamps nonpositive
/// outputs to missing and resizes back to the raw depth resolution.
template <typename T>
DepthImage complete(const DepthCompletionModel<T>& model, const RgbdSample& sample);

/// A fine-tuned network loaded from a checkpoint at its stored precision.
class Completer {
 public:
  /// Throws CheckpointError unless the checkpoint is from the fine-tuning stage.
  explicit Completer(const Checkpoint& checkpoint);

  DepthImage complete(const RgbdSample& sample) const;
  const ModelConfig& config() const;
  double depth_scale() const { return depth_scale_; }

 private:
  std::variant<DepthCompletionModel<float>, DepthCompletionModel<double>> model_;
  double depth_scale_;
};

}  // namespace depthmae
