#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "setdet/augment.hpp"
#include "setdet/data.hpp"
#include "setdet/loss.hpp"
#include "setdet/model.hpp"

namespace setdet {

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  /// true: param -= lr * wd * param before the Adam delta.
  /// false: wd * param is added to the gradient (classic L2).
  bool decoupled_weight_decay = true;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  OptimizerConfig hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

OptimizerState make_optimizer_state(std::span<const Tensor> params, const OptimizerConfig& hyper);

/// One bias-corrected Adam update of every parameter in place. `grads[i]`
/// must have the size of `params[i]`; an empty gradient counts as zero.
void adam_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads, OptimizerState& state);

/// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<const Tensor> params, OptimizerState& state);

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  bool multiscale = true;
  OptimizerConfig optimizer;
  LossConfig loss;
  AugmentPolicy augment;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossParts loss;         // mean over the epoch's samples
  double wall_seconds = 0.0;

  /// Serialized record; `with_time` false drops the wall clock for comparisons.
  nlohmann::json to_json(bool with_time = true) const;
};

/// Training input after augmentation and resizing for a given epoch. The
/// result depends only on (seed, sample id, epoch).
Sample prepare_sample(const Sample& sample, const TrainConfig& cfg, std::size_t epoch);

class Checkpoint;

class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& cfg);
  /// Resumes from a saved state; `cfg` supplies everything not stored in it.
  Trainer(const Checkpoint& ckpt, const TrainConfig& cfg);

  /// Runs the next epoch over `data` and returns its record.
  /// Throws ContractError on empty data, CapacityExceeded if any sample holds
  /// more objects than the model has queries.
  EpochRecord run_epoch(std::span<const Sample> data);

  /// Runs epochs until `cfg.epochs` have completed in total.
  std::vector<EpochRecord> train(std::span<const Sample> data,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {});

  Checkpoint checkpoint(const std::string& config_echo = "") const;

  std::size_t epochs_completed() const { return epoch_; }
  const DetectionModel& model() const { return model_; }
  DetectionModel& model() { return model_; }
  const OptimizerState& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  void check_dataset(std::span<const Sample> data) const;

  TrainConfig cfg_;
  DetectionModel model_;
  std::vector<Tensor> params_;
  OptimizerState opt_;
  std::size_t epoch_ = 0;
};

}  // namespace setdet
