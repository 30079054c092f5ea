#include "depthmae/model.hpp"

#include <cmath>
#include <stdexcept>

#include "depthmae/ops.hpp"
#include "depthmae/random.hpp"

namespace depthmae {

void ModelConfig::validate() const {
  auto positive = [](const char* key, std::size_t v) {
    if (v == 0) throw ConfigError(key, "must be positive");
  };
  positive("image_size", image_size);
  positive("patch_size", patch_size);
  positive("enc_layers", enc_layers);
  positive("enc_heads", enc_heads);
  positive("enc_dim", enc_dim);
  positive("dec_layers", dec_layers);
  positive("dec_heads", dec_heads);
  positive("dec_dim", dec_dim);
  positive("mlp_ratio", mlp_ratio);
  if (channels != 4) throw ConfigError("channels", "the network consumes 4-channel RGB-D tokens");
  if (image_size % patch_size != 0) throw ConfigError("patch_size", "must divide image_size");
  if (enc_dim % enc_heads != 0) throw ConfigError("enc_heads", "must divide enc_dim");
  if (dec_dim % dec_heads != 0) throw ConfigError("dec_heads", "must divide dec_dim");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio", "must lie in [0, 1)");
  if (!(max_depth > 0.0) || !std::isfinite(max_depth)) throw ConfigError("max_depth", "must be positive");
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return add(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> LayerNormParams<T>::operator()(const Tensor<T>& x) const {
  return layernorm(x, gain, bias);
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Linear<T>& qkv, const Linear<T>& proj, std::size_t heads) {
  const std::size_t tokens = x.dim(0);
  const std::size_t width = x.dim(1);
  const std::size_t head_dim = width / heads;
  auto packed = reshape(qkv(x), Shape{tokens, 3, heads, head_dim});
  auto split = permute(packed, {1, 2, 0, 3});  // [3, heads, L, head_dim]
  auto pick = [&](std::size_t i) { return reshape(index_select(split, 0, {i}), Shape{heads, tokens, head_dim}); };
  const auto q = pick(0);
  const auto k = pick(1);
  const auto v = pick(2);
  auto scores = mul_scalar(matmul(q, transpose(k, 1, 2)), T(1) / std::sqrt(static_cast<T>(head_dim)));
  auto attended = matmul(softmax(scores, 2), v);  // [heads, L, head_dim]
  auto merged = reshape(permute(attended, {1, 0, 2}), Shape{tokens, width});
  return proj(merged);
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x) const {
  auto h = add(x, self_attention(norm1(x), qkv, proj, heads));
  return add(h, fc2(gelu(fc1(norm2(h)))));
}

namespace {

template <typename T>
void append_linear(std::vector<NamedTensor<T>>& out, const std::string& prefix, const Linear<T>& l) {
  out.push_back({prefix + ".weight", l.weight});
  out.push_back({prefix + ".bias", l.bias});
}

template <typename T>
void append_norm(std::vector<NamedTensor<T>>& out, const std::string& prefix, const LayerNormParams<T>& n) {
  out.push_back({prefix + ".gain", n.gain});
  out.push_back({prefix + ".bias", n.bias});
}

template <typename T>
void append_blocks(std::vector<NamedTensor<T>>& out, const std::string& prefix,
                   const std::vector<TransformerBlock<T>>& blocks) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    const auto& b = blocks[i];
    append_norm(out, p + ".norm1", b.norm1);
    append_linear(out, p + ".attn.qkv", b.qkv);
    append_linear(out, p + ".attn.proj", b.proj);
    append_norm(out, p + ".norm2", b.norm2);
    append_linear(out, p + ".mlp.fc1", b.fc1);
    append_linear(out, p + ".mlp.fc2", b.fc2);
  }
}

template <typename T>
Tensor<T> normal_tensor(Rng& rng, Shape shape, double stddev) {
  std::vector<T> v(shape_numel(shape));
  for (T& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Linear<T> init_linear(Rng& rng, std::size_t in, std::size_t out) {
  return Linear<T>{normal_tensor<T>(rng, Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in))),
                   Tensor<T>::zeros(Shape{out}, true)};
}

template <typename T>
LayerNormParams<T> init_norm(std::size_t width) {
  return LayerNormParams<T>{Tensor<T>::full(Shape{width}, T(1), true), Tensor<T>::zeros(Shape{width}, true)};
}

template <typename T>
TransformerBlock<T> init_block(Rng& rng, std::size_t width, std::size_t heads, std::size_t mlp_ratio) {
  TransformerBlock<T> b;
  b.norm1 = init_norm<T>(width);
  b.qkv = init_linear<T>(rng, width, 3 * width);
  b.proj = init_linear<T>(rng, width, width);
  b.norm2 = init_norm<T>(width);
  b.fc1 = init_linear<T>(rng, width, mlp_ratio * width);
  b.fc2 = init_linear<T>(rng, mlp_ratio * width, width);
  b.heads = heads;
  return b;
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  append_linear(out, "patch_embed", patch_embed);
  out.push_back({"enc_pos_embed", enc_pos_embed});
  append_blocks(out, "encoder", encoder);
  append_norm(out, "enc_norm", enc_norm);
  append_linear(out, "enc_to_dec", enc_to_dec);
  out.push_back({"mask_token", mask_token});
  out.push_back({"dec_pos_embed", dec_pos_embed});
  append_blocks(out, "decoder", decoder);
  append_norm(out, "dec_norm", dec_norm);
  append_linear(out, "head", head);
  append_linear(out, "fusion_embed", fusion_embed);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named()) n += p.tensor.numel();
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() const {
  for (auto& p : named()) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t tokens = config.num_tokens();
  const std::size_t p2 = config.patch_size * config.patch_size;
  ModelParams<T> params;
  params.patch_embed = init_linear<T>(rng, config.channels * p2, config.enc_dim);
  params.enc_pos_embed = normal_tensor<T>(rng, Shape{tokens, config.enc_dim}, 0.02);
  for (std::size_t i = 0; i < config.enc_layers; ++i) {
    params.encoder.push_back(init_block<T>(rng, config.enc_dim, config.enc_heads, config.mlp_ratio));
  }
  params.enc_norm = init_norm<T>(config.enc_dim);
  params.enc_to_dec = init_linear<T>(rng, config.enc_dim, config.dec_dim);
  params.mask_token = normal_tensor<T>(rng, Shape{config.dec_dim}, 0.02);
  params.dec_pos_embed = normal_tensor<T>(rng, Shape{tokens, config.dec_dim}, 0.02);
  for (std::size_t i = 0; i < config.dec_layers; ++i) {
    params.decoder.push_back(init_block<T>(rng, config.dec_dim, config.dec_heads, config.mlp_ratio));
  }
  params.dec_norm = init_norm<T>(config.dec_dim);
  params.head = init_linear<T>(rng, config.dec_dim, p2);
  params.fusion_embed = init_linear<T>(rng, p2, config.dec_dim);
  return params;
}

template <typename T>
DepthCompletionModel<T>::DepthCompletionModel(ModelConfig config, ModelParams<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (params_.encoder.size() != config_.enc_layers || params_.decoder.size() != config_.dec_layers) {
    throw ConfigError("enc_layers", "parameter blocks do not match the configuration");
  }
}

template <typename T>
DepthCompletionModel<T> DepthCompletionModel<T>::create(const ModelConfig& config, std::uint64_t seed) {
  return DepthCompletionModel(config, init_params<T>(config, seed));
}

template <typename T>
Tensor<T> DepthCompletionModel<T>::encode(const Tensor<T>& tokens, const MaskPlan* plan) const {
  const PatchGrid grid = config_.grid();
  if (tokens.rank() != 2 || tokens.dim(0) != grid.num_tokens() || tokens.dim(1) != grid.token_dim()) {
    throw ShapeError("encode: expected tokens [" + std::to_string(grid.num_tokens()) + ", " +
                     std::to_string(grid.token_dim()) + "], got " + shape_string(tokens.shape()));
  }
  Tensor<T> x = tokens;
  Tensor<T> pos = params_.enc_pos_embed;
  if (plan) {
    validate_plan(*plan, grid.num_tokens());
    if (!plan->trivial()) {
      x = apply_mask(tokens, *plan);
      pos = index_select(pos, 0, plan->kept);
    }
  }
  Tensor<T> h = add(params_.patch_embed(x), pos);
  for (const auto& block : params_.encoder) h = block(h);
  return params_.enc_norm(h);
}

template <typename T>
Tensor<T> DepthCompletionModel<T>::project_to_decoder(const Tensor<T>& encoded) const {
  return params_.enc_to_dec(encoded);
}

template <typename T>
Tensor<T> DepthCompletionModel<T>::assemble_decoder_input(const Tensor<T>& projected, const MaskPlan* plan) const {
  const std::size_t tokens = config_.num_tokens();
  if (projected.rank() != 2 || projected.dim(1) != config_.dec_dim) {
    throw ShapeError("assemble_decoder_input: expected [*, " + std::to_string(config_.dec_dim) + "], got " +
                     shape_string(projected.shape()));
  }
  Tensor<T> x = projected;
  if (plan) validate_plan(*plan, tokens);
  if (plan && !plan->trivial()) {
    if (projected.dim(0) != plan->kept.size()) {
      throw ShapeError("assemble_decoder_input: " + std::to_string(projected.dim(0)) + " encoded rows for " +
                       std::to_string(plan->kept.size()) + " kept tokens");
    }
    auto token_row = reshape(params_.mask_token, Shape{1, config_.dec_dim});
    auto fill = index_select(token_row, 0, std::vector<std::size_t>(plan->masked.size(), 0));
    x = index_select(concat(std::vector<Tensor<T>>{projected, fill}, 0), 0, plan->restore_perm);
  } else if (projected.dim(0) != tokens) {
    throw ShapeError("assemble_decoder_input: expected " + std::to_string(tokens) + " rows without masking, got " +
                     std::to_string(projected.dim(0)));
  }
  return add(x, params_.dec_pos_embed);
}

template <typename T>
Tensor<T> DepthCompletionModel<T>::fuse_depth_tokens(const Tensor<T>& dec_in, const Tensor<T>& raw_depth_tokens,
                                                     const MaskPlan* plan) const {
  if (plan && !plan->trivial()) {
    throw std::logic_error("token fusion is only defined for unmasked (fine-tuning) inputs");
  }
  const std::size_t p2 = config_.patch_size * config_.patch_size;
  if (raw_depth_tokens.shape() != Shape{config_.num_tokens(), p2} ||
      dec_in.shape() != Shape{config_.num_tokens(), config_.dec_dim}) {
    throw ShapeError("fuse_depth_tokens: got decoder input " + shape_string(dec_in.shape()) + " and depth tokens " +
                     shape_string(raw_depth_tokens.shape()));
  }
  return add(dec_in, params_.fusion_embed(raw_depth_tokens));
}

template <typename T>
Tensor<T> DepthCompletionModel<T>::decode(const Tensor<T>& dec_in) const {
  if (dec_in.shape() != Shape{config_.num_tokens(), config_.dec_dim}) {
    throw ShapeError("decode: expected [" + std::to_string(config_.num_tokens()) + ", " +
                     std::to_string(config_.dec_dim) + "], got " + shape_string(dec_in.shape()));
  }
  Tensor<T> h = dec_in;
  for (const auto& block : params_.decoder) h = block(h);
  return params_.head(params_.dec_norm(h));
}

template <typename T>
void DepthCompletionModel<T>::check_input(const Tensor<T>& input) const {
  const Shape want{config_.channels, config_.image_size, config_.image_size};
  if (input.shape() != want) {
    throw ShapeError("model input must be " + shape_string(want) + ", got " + shape_string(input.shape()));
  }
}

template <typename T>
Prediction<T> DepthCompletionModel<T>::forward_pretrain(const Tensor<T>& input, const MaskPlan& plan) const {
  check_input(input);
  const auto tokens = patchify(input, config_.patch_size);
  const auto encoded = encode(tokens, &plan);
  const auto dec_in = assemble_decoder_input(project_to_decoder(encoded), &plan);
  const auto out = decode(dec_in);
  PatchGrid depth_grid = config_.grid();
  depth_grid.channels = 1;
  return Prediction<T>{unpatchify(out, depth_grid), plan};
}

template <typename T>
Tensor<T> DepthCompletionModel<T>::forward_finetune(const Tensor<T>& input) const {
  check_input(input);
  const auto tokens = patchify(input, config_.patch_size);
  const auto encoded = encode(tokens, nullptr);
  const auto dec_in = assemble_decoder_input(project_to_decoder(encoded), nullptr);
  const auto depth_tokens = patchify(index_select(input, 0, {3}), config_.patch_size);
  const auto out = decode(fuse_depth_tokens(dec_in, depth_tokens));
  PatchGrid depth_grid = config_.grid();
  depth_grid.channels = 1;
  return unpatchify(out, depth_grid);
}

template <typename T>
Prediction<T> DepthCompletionModel<T>::forward_pretrain(const RgbdSample& sample, const MaskPlan& plan) const {
  return forward_pretrain(to_model_input<T>(sample, DepthSource::kGroundTruth, config_.max_depth), plan);
}

template <typename T>
DepthImage DepthCompletionModel<T>::forward_finetune(const RgbdSample& sample) const {
  NoGradGuard no_grad;
  return tensor_to_depth(forward_finetune(to_model_input<T>(sample, DepthSource::kRaw, config_.max_depth)),
                         config_.max_depth);
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNormParams<float>;
template struct LayerNormParams<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct ModelParams<float>;
template struct ModelParams<double>;
template class DepthCompletionModel<float>;
template class DepthCompletionModel<double>;
template Tensor<float> self_attention(const Tensor<float>&, const Linear<float>&, const Linear<float>&, std::size_t);
template Tensor<double> self_attention(const Tensor<double>&, const Linear<double>&, const Linear<double>&,
                                       std::size_t);
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);

}  // namespace depthmae
