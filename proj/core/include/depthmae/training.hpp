#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "depthmae/checkpoint.hpp"
#include "depthmae/imaging.hpp"
#include "depthmae/model.hpp"
#include "depthmae/patch.hpp"

namespace depthmae {

enum class Precision { kFloat32, kFloat64 };

std::string precision_name(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::kPretrain;
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  double learning_rate = 1.5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_decay = false;
  bool shuffle = true;
  std::uint64_t seed = 0;
  /// Write a resumable checkpoint every this many optimizer steps; 0 = final only.
  std::size_t checkpoint_every = 0;
  std::filesystem::path resume_path;
  /// Fine-tuning only: weights to start from (encoder and decoder where shapes match).
  std::filesystem::path init_checkpoint;
  Precision precision = Precision::kFloat32;

  /// Stage defaults: 200 epochs at 1.5e-4 for pre-training, 20 at 1e-4 for fine-tuning.
  static TrainConfig defaults(Stage stage);
  void validate() const;
};

/// RMSE over pixels that lie in a masked patch and have nonzero ground truth.
/// `pred` and `gt` are [1, H, W] (normalized units). Returns nullopt when that
/// pixel set is empty; callers skip the sample instead of producing NaN.
template <typename T>
std::optional<Tensor<T>> loss_pretrain(const Tensor<T>& pred, const Tensor<T>& gt, const MaskPlan& plan,
                                       const PatchGrid& grid);

/// RMSE over every pixel, holes included.
template <typename T>
Tensor<T> loss_finetune(const Tensor<T>& pred, const Tensor<T>& gt);

/// First/second moment accumulators, one buffer pair per parameter in
/// ModelParams::named() order.
template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

struct AdamWSettings {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam over named parameters.
///
/// Tensors without a gradient buffer (not reached by the last backward) are
/// left untouched. Weight decay applies only to tensors whose name ends in
/// ".weight"; biases, norms, embeddings and the mask token are not decayed.
template <typename T>
void adamw_step(const std::vector<NamedTensor<T>>& params, OptimizerState<T>& state, const AdamWSettings& settings);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss_m = 0.0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  /// Run directory for checkpoints/ and metrics.log; empty keeps everything in memory.
  std::filesystem::path out_dir;
  double depth_scale = kDefaultDepthScale;
  /// Stop after this many optimizer steps (0 = run all epochs). The state
  /// left behind is exactly what an uninterrupted run had at that step.
  std::size_t stop_after_steps = 0;
  /// Initialization for fine-tuning, already loaded. Overrides TrainConfig::init_checkpoint.
  const Checkpoint* init = nullptr;
  /// Resume state, already loaded. Overrides TrainConfig::resume_path.
  const Checkpoint* resume = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;  // final, resumable
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  std::size_t skipped_samples = 0;  // pre-training samples with no supervised pixels
  std::size_t skipped_files = 0;    // unreadable manifest records
  InitReport init;
};

/// Trains on samples already resized to the model resolution. Stage and
/// precision come from `train`.
TrainResult train(const std::vector<RgbdSample>& samples, const ModelConfig& model, const TrainConfig& train,
                  const TrainOptions& options = {});

/// Loads, resizes and trains on every readable record of `manifest`.
TrainResult run_pretrain(const DatasetManifest& manifest, const ModelConfig& model, const TrainConfig& train,
                         const TrainOptions& options = {});
TrainResult run_finetune(const DatasetManifest& manifest, const ModelConfig& model, const TrainConfig& train,
                         const TrainOptions& options = {});

/// Reads and resizes manifest records, skipping unreadable ones. Throws
/// std::runtime_error when the manifest is empty or nothing could be read.
std::vector<RgbdSample> load_training_samples(const DatasetManifest& manifest, const ModelConfig& model,
                                              double depth_scale, std::size_t* skipped = nullptr);

/// Reads metrics.log written by a training run.
std::vector<EpochRecord> read_metrics_log(const std::filesystem::path& path);

}  // namespace depthmae
