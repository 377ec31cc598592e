#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "setdet/augment.hpp"
#include "setdet/loss.hpp"
#include "setdet/model.hpp"
#include "setdet/trainer.hpp"

namespace setdet {

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t count = 8;
  std::size_t image_size = 128;
  std::size_t max_objects = 3;
};

struct DataSection {
  /// Exactly one of manifest / synthetic is set.
  std::optional<std::filesystem::path> manifest;
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::filesystem::path> folds;
  AugmentPolicy augment;
  bool multiscale = true;
  /// Short edge used for evaluation and inference; 0 keeps the native size.
  std::size_t eval_short_edge = 0;
};

struct RunSection {
  std::uint64_t seed = 0;
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  std::filesystem::path out = "out";
  double threshold = 0.3;
};

/// One JSON document with sections "model", "loss", "optimizer", "data" and
/// "run". Every key is optional; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  DataSection data;
  RunSection run;
  /// Text the config was parsed from, echoed into output directories.
  std::string source_text;

  /// Throws ConfigError for inconsistent values or missing referenced paths.
  void validate() const;
  TrainConfig train_config() const;
};

/// Throws ConfigError for malformed JSON, wrong types or unknown keys.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json optimizer_config_to_json(const OptimizerConfig& cfg);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

}  // namespace setdet
