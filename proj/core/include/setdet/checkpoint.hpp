#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "setdet/model.hpp"
#include "setdet/trainer.hpp"

namespace setdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

/// Everything needed to resume training. Per-sample and per-epoch random
/// streams are derived from (seed, epoch), so the seed is the RNG state.
class Checkpoint {
 public:
  std::string config_echo;  // verbatim run configuration, may be empty
  ModelConfig model_config;
  OptimizerConfig optimizer_config;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t adam_step = 0;
  std::vector<NamedArray> params;
  std::vector<NamedArray> adam_m;
  std::vector<NamedArray> adam_v;

  const NamedArray* find_param(const std::string& name) const;
};

/// Copies parameter values into the model by name. Throws ContractError on a
/// missing name or a shape mismatch.
void load_parameters(DetectionModel& model, const Checkpoint& ckpt);

/// Builds a model from the stored config and parameters.
DetectionModel model_from_checkpoint(const Checkpoint& ckpt);

/// Layout (little-endian): "SETDETCK", u32 version, u64 payload length,
/// payload, u64 FNV-1a checksum of the payload.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Throws MissingFile, VersionMismatch, or CorruptCheckpoint (bad magic,
/// truncation, checksum mismatch). Returns only fully parsed state.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace setdet
