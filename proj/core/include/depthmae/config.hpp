#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "depthmae/model.hpp"
#include "depthmae/training.hpp"

namespace depthmae {

/// Everything a training command needs, read from a flat `key = value` file.
///
/// Every ModelConfig and TrainConfig field is a key of the same name, plus
/// `manifest`, `dataset_root`, `out_dir` and `depth_scale`. `#` starts a
/// comment. Unknown keys, duplicate keys and malformed values raise
/// ConfigError naming the key. Relative paths resolve against the directory
/// of the config file, and `to_text` writes them back absolute, so the echoed
/// file reproduces the run from anywhere.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path manifest;
  std::filesystem::path dataset_root;  // defaults to the manifest's directory
  std::filesystem::path out_dir;
  double depth_scale = kDefaultDepthScale;

  static RunConfig defaults(Stage stage);
  static RunConfig parse(std::string_view text, Stage stage, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path, Stage stage);

  /// Assigns one key as if it appeared in a config file.
  void set(const std::string& key, const std::string& value, const std::filesystem::path& base_dir = {});

  std::string to_text() const;
  void validate() const;
};

}  // namespace depthmae
