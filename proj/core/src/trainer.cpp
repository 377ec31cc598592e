#include "setdet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "setdet/checkpoint.hpp"
#include "setdet/errors.hpp"
#include "setdet/rng.hpp"

namespace setdet {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5348554646000000ULL;

std::vector<Tensor> tensors_of(const DetectionModel& model) {
  std::vector<Tensor> out;
  for (auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be non-negative");
}

OptimizerState make_optimizer_state(std::span<const Tensor> params, const OptimizerConfig& hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].empty() && grads[i].size() != params[i].size())
      throw DimensionError("adam_step: gradient " + std::to_string(i) + " has the wrong size");
    if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size())
      throw DimensionError("adam_step: moment " + std::to_string(i) + " has the wrong size");
  }
  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double g = grads[i].empty() ? 0.0 : grads[i][j];
      if (h.decoupled_weight_decay)
        w[j] -= h.lr * h.weight_decay * w[j];
      else
        g += h.weight_decay * w[j];
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
      w[j] -= h.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h.eps);
    }
  }
}

void adam_step(std::span<const Tensor> params, OptimizerState& state) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    const auto g = p.grad();
    grads.emplace_back(g.begin(), g.end());
  }
  adam_step(params, grads, state);
}

nlohmann::json EpochRecord::to_json(bool with_time) const {
  nlohmann::json j = {{"epoch", epoch},
                      {"loss", loss.total()},
                      {"class", loss.classification},
                      {"giou", loss.giou},
                      {"l1", loss.l1}};
  if (with_time) j["wall_time"] = wall_seconds;
  return j;
}

Sample prepare_sample(const Sample& sample, const TrainConfig& cfg, std::size_t epoch) {
  Rng rng = sample_stream(cfg.seed, sample.id, epoch);
  Sample s = augment(sample, cfg.augment, rng);
  if (cfg.multiscale) s = resize_multiscale(s, rng);
  return s;
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& cfg)
    : cfg_(cfg), model_(model_config), params_(tensors_of(model_)), opt_(make_optimizer_state(params_, cfg.optimizer)) {
  if (cfg_.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  cfg_.loss.num_classes = model_config.num_classes;
}

Trainer::Trainer(const Checkpoint& ckpt, const TrainConfig& cfg)
    : cfg_(cfg), model_(model_from_checkpoint(ckpt)), params_(tensors_of(model_)) {
  if (cfg_.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  cfg_.loss.num_classes = ckpt.model_config.num_classes;
  cfg_.seed = ckpt.seed;
  cfg_.optimizer = ckpt.optimizer_config;
  opt_ = make_optimizer_state(params_, cfg_.optimizer);
  opt_.step = ckpt.adam_step;
  const auto named = model_.parameters();
  if (ckpt.adam_m.size() != named.size() || ckpt.adam_v.size() != named.size())
    throw ContractError("checkpoint: optimizer state does not match the model");
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (ckpt.adam_m[i].name != named[i].name || ckpt.adam_v[i].name != named[i].name ||
        ckpt.adam_m[i].values.size() != params_[i].size() || ckpt.adam_v[i].values.size() != params_[i].size())
      throw ContractError("checkpoint: optimizer state for " + named[i].name + " does not match the model");
    opt_.m[i] = ckpt.adam_m[i].values;
    opt_.v[i] = ckpt.adam_v[i].values;
  }
  epoch_ = ckpt.epoch;
}

void Trainer::check_dataset(std::span<const Sample> data) const {
  if (data.empty()) throw ContractError("train: dataset is empty");
  const std::size_t n = model_.config().n_queries;
  for (const auto& s : data)
    if (s.annotations.size() > n)
      throw CapacityExceeded("train: sample '" + s.id + "' has " + std::to_string(s.annotations.size()) +
                             " objects but the model has " + std::to_string(n) + " queries");
}

EpochRecord Trainer::run_epoch(std::span<const Sample> data) {
  check_dataset(data);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t epoch = epoch_ + 1;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle = derived_stream(cfg_.seed, kShuffleSalt + epoch);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);

  LossParts sum;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
    const double inv = 1.0 / static_cast<double>(end - begin);
    model_.zero_grad();
    for (std::size_t k = begin; k < end; ++k) {
      const Sample s = prepare_sample(data[order[k]], cfg_, epoch);
      const auto preds = model_.forward(s.image);
      const auto gts = s.normalized_annotations();
      auto loss = hungarian_loss(gts, preds, cfg_.loss);
      backward(scale(loss.total, inv));
      sum.classification += loss.parts.classification;
      sum.giou += loss.parts.giou;
      sum.l1 += loss.parts.l1;
    }
    adam_step(params_, opt_);
  }

  epoch_ = epoch;
  const double n = static_cast<double>(data.size());
  EpochRecord rec;
  rec.epoch = epoch;
  rec.loss = {sum.classification / n, sum.giou / n, sum.l1 / n};
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::vector<EpochRecord> Trainer::train(std::span<const Sample> data,
                                        const std::function<void(const EpochRecord&)>& on_epoch) {
  check_dataset(data);
  std::vector<EpochRecord> out;
  while (epoch_ < cfg_.epochs) {
    out.push_back(run_epoch(data));
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

Checkpoint Trainer::checkpoint(const std::string& config_echo) const {
  Checkpoint c;
  c.config_echo = config_echo;
  c.model_config = model_.config();
  c.optimizer_config = opt_.hyper;
  c.seed = cfg_.seed;
  c.epoch = epoch_;
  c.adam_step = opt_.step;
  const auto named = model_.parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& t = named[i].tensor;
    c.params.push_back({named[i].name, t.shape(), {t.values().begin(), t.values().end()}});
    c.adam_m.push_back({named[i].name, t.shape(), opt_.m[i]});
    c.adam_v.push_back({named[i].name, t.shape(), opt_.v[i]});
  }
  return c;
}

}  // namespace setdet
