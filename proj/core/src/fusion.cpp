#include "depthmae/fusion.hpp"

#include <cmath>

namespace depthmae {

DepthImage fuse(const DepthImage& original, const DepthImage& completed) {
  if (original.height() != completed.height() || original.width() != completed.width()) {
    throw ShapeError("fuse: original " + std::to_string(original.height()) + "x" + std::to_string(original.width()) +
                     " vs completed " + std::to_string(completed.height()) + "x" + std::to_string(completed.width()));
  }
  DepthImage out = original;
  auto& v = out.values();
  const auto& c = completed.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0f) v[i] = c[i];
  }
  return out;
}

DepthImage clamp_to_valid(DepthImage depth) {
  for (float& v : depth.values()) {
    if (!(v > 0.0f) || !std::isfinite(v)) v = 0.0f;
  }
  return depth;
}

template <typename T>
DepthImage complete(const DepthCompletionModel<T>& model, const RgbdSample& sample) {
  const ModelConfig& cfg = model.config();
  if (sample.raw_depth.empty()) throw ShapeError("complete: sample has no raw depth");
  RgbdSample input;
  input.identifier = sample.identifier;
  input.rgb = sample.rgb;
  input.raw_depth = sample.raw_depth;
  input = resize_sample(input, cfg.image_size, cfg.image_size, cfg.patch_size);
  const DepthImage predicted = clamp_to_valid(model.forward_finetune(input));
  return resize_nearest(predicted, sample.raw_depth.height(), sample.raw_depth.width());
}

template DepthImage complete(const DepthCompletionModel<float>&, const RgbdSample&);
template DepthImage complete(const DepthCompletionModel<double>&, const RgbdSample&);

namespace {

std::variant<DepthCompletionModel<float>, DepthCompletionModel<double>> load_model(const Checkpoint& ckpt) {
  if (ckpt.stage != Stage::kFinetune) {
    throw CheckpointError("completion needs a fine-tuned checkpoint, got a " + stage_name(ckpt.stage) + " checkpoint");
  }
  if (ckpt.scalar_bytes == 8) return model_from_checkpoint<double>(ckpt);
  return model_from_checkpoint<float>(ckpt);
}

}  // namespace

Completer::Completer(const Checkpoint& checkpoint) : model_(load_model(checkpoint)), depth_scale_(checkpoint.depth_scale) {}

DepthImage Completer::complete(const RgbdSample& sample) const {
  return std::visit([&](const auto& m) { return depthmae::complete(m, sample); }, model_);
}

const ModelConfig& Completer::config() const {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config(); }, model_);
}

}  // namespace depthmae
