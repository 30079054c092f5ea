#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "depthmae/imaging.hpp"
#include "depthmae/patch.hpp"
#include "depthmae/tensor.hpp"

namespace depthmae {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Architecture hyperparameters. Defaults are the full-size network
/// (ViT-Large-like encoder, 8-layer decoder, 75% masking at 224x224).
struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t channels = 4;
  std::size_t enc_layers = 24;
  std::size_t enc_heads = 16;
  std::size_t enc_dim = 1024;
  std::size_t dec_layers = 8;
  std::size_t dec_heads = 16;
  std::size_t dec_dim = 512;
  std::size_t mlp_ratio = 4;
  double mask_ratio = 0.75;
  double max_depth = kDefaultMaxDepth;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  PatchGrid grid() const { return PatchGrid::for_image(image_size, image_size, patch_size, channels); }
  std::size_t num_tokens() const { return grid().num_tokens(); }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Pre-norm block: x + attn(ln1(x)), then + mlp(ln2(.)). No dropout.
template <typename T>
struct TransformerBlock {
  LayerNormParams<T> norm1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNormParams<T> norm2;
  Linear<T> fc1;
  Linear<T> fc2;
  std::size_t heads = 1;

  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Multi-head self-attention over the rows of x [L, D] with fused qkv weights.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Linear<T>& qkv, const Linear<T>& proj, std::size_t heads);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct ModelParams {
  Linear<T> patch_embed;          // C*p*p -> enc_dim
  Tensor<T> enc_pos_embed;        // [L, enc_dim]
  std::vector<TransformerBlock<T>> encoder;
  LayerNormParams<T> enc_norm;
  Linear<T> enc_to_dec;           // enc_dim -> dec_dim
  Tensor<T> mask_token;           // [dec_dim]
  Tensor<T> dec_pos_embed;        // [L, dec_dim]
  std::vector<TransformerBlock<T>> decoder;
  LayerNormParams<T> dec_norm;
  Linear<T> head;                 // dec_dim -> p*p
  Linear<T> fusion_embed;         // p*p -> dec_dim

  /// Every learnable tensor with a stable dotted name, in a fixed order.
  /// Handles alias the parameters.
  std::vector<NamedTensor<T>> named() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
};

/// Fresh parameters: fan-in scaled normal weights, zero biases, unit gains,
/// N(0, 0.02^2) positional embeddings and mask token. Deterministic in `seed`.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Normalized depth prediction [1, H, W] and the plan that produced it.
template <typename T>
struct Prediction {
  Tensor<T> depth;
  MaskPlan plan;
};

/// The two-stage masked-autoencoder depth completion network.
template <typename T>
class DepthCompletionModel {
 public:
  DepthCompletionModel(ModelConfig config, ModelParams<T> params);
  static DepthCompletionModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  /// Embeds the kept tokens of `tokens` [L, 4p^2] (all of them when `plan`
  /// is null), adds their positional rows and runs the encoder.
  Tensor<T> encode(const Tensor<T>& tokens, const MaskPlan* plan) const;

  Tensor<T> project_to_decoder(const Tensor<T>& encoded) const;

  /// Fills masked slots with the shared mask token, restores raster order and
  /// adds decoder positional embeddings. `projected` is [L_kept, dec_dim].
  Tensor<T> assemble_decoder_input(const Tensor<T>& projected, const MaskPlan* plan) const;

  /// Token-level fusion: dec_in + fusion_embed(raw_depth_tokens). Only valid
  /// without masking; throws std::logic_error when `plan` masks anything.
  Tensor<T> fuse_depth_tokens(const Tensor<T>& dec_in, const Tensor<T>& raw_depth_tokens,
                              const MaskPlan* plan = nullptr) const;

  /// Decoder blocks and prediction head: [L, dec_dim] -> [L, p^2].
  Tensor<T> decode(const Tensor<T>& dec_in) const;

  /// Stage one. `input` is [4, H, W] built from RGB and ground-truth depth.
  Prediction<T> forward_pretrain(const Tensor<T>& input, const MaskPlan& plan) const;
  /// Stage two. `input` is [4, H, W] built from RGB and raw depth.
  Tensor<T> forward_finetune(const Tensor<T>& input) const;

  Prediction<T> forward_pretrain(const RgbdSample& sample, const MaskPlan& plan) const;
  DepthImage forward_finetune(const RgbdSample& sample) const;

 private:
  void check_input(const Tensor<T>& input) const;

  ModelConfig config_;
  ModelParams<T> params_;
};

extern template class DepthCompletionModel<float>;
extern template class DepthCompletionModel<double>;

}  // namespace depthmae
