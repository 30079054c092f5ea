#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthmae/model.hpp"

namespace depthmae {

enum class Stage { kPretrain, kFinetune };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;  // exact for both scalar widths

  bool operator==(const StoredTensor&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Self-describing parameter container.
///
/// Layout (all integers little-endian):
///   "DMAECKPT"              8-byte magic
///   u32 version             currently 1
///   u32 byte-order mark     0x01020304
///   u8  scalar width        4 or 8 (IEEE-754 binary32 / binary64)
///   u8  stage               0 = pretrain, 1 = finetune
///   u16 reserved            0
///   u64 n + n bytes         metadata text, one `key=value` per line
///   u64 tensor count, then per tensor:
///     u32 n + n bytes name, u32 rank, u64 dims[rank], scalars[numel]
///
/// Metadata carries the full ModelConfig (`model.*`), `max_depth`,
/// `depth_scale` and, for resumable checkpoints, training progress
/// (`train.*`, floats written as hex literals). Optimizer moments are stored
/// as extra tensors named `optim.m/<param>` and `optim.v/<param>`.
struct Checkpoint {
  Stage stage = Stage::kPretrain;
  ModelConfig model;
  unsigned scalar_bytes = 4;
  double depth_scale = kDefaultDepthScale;
  std::vector<StoredTensor> tensors;
  std::map<std::string, std::string> metadata;  // extra keys beyond model/stage

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const StoredTensor* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

template <typename T>
void store_params(Checkpoint& ckpt, const ModelParams<T>& params);

/// Rebuilds a model; every parameter must be present with the right shape.
template <typename T>
DepthCompletionModel<T> model_from_checkpoint(const Checkpoint& ckpt);

/// Which parameters an initialization copied from a checkpoint.
struct InitReport {
  std::vector<std::string> loaded;
  std::vector<std::string> not_in_checkpoint;
};

/// Copies every parameter that exists in `ckpt` into `params`. Throws
/// CheckpointError listing all shape mismatches when any exist.
template <typename T>
InitReport load_matching(const ModelParams<T>& params, const Checkpoint& ckpt);

std::string hex_double(double value);
double parse_double(const std::string& text);

}  // namespace depthmae
