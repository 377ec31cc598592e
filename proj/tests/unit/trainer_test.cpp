#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "setdet/checkpoint.hpp"
#include "setdet/errors.hpp"
#include "setdet/trainer.hpp"

namespace setdet {
namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.d_model = 8;
  m.n_heads = 2;
  m.n_encoder_layers = 1;
  m.n_decoder_layers = 1;
  m.n_queries = 4;
  m.num_classes = 2;
  m.backbone_channels = 8;
  m.ffn_hidden = 16;
  m.init_seed = 5;
  return m;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.seed = 17;
  t.multiscale = false;
  t.optimizer.lr = 1e-3;
  t.loss.num_classes = 2;
  return t;
}

std::vector<nlohmann::json> records(const std::vector<EpochRecord>& rs) {
  std::vector<nlohmann::json> out;
  for (const auto& r : rs) out.push_back(r.to_json(false));
  return out;
}

TEST(Adam, ZeroGradientZeroDecayLeavesParameters) {
  const auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  const std::vector<Tensor> params{p};
  auto state = make_optimizer_state(params, cfg);
  const std::vector<std::vector<double>> grads{{0.0, 0.0, 0.0}};
  for (int i = 0; i < 10; ++i) adam_step(params, grads, state);
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()), (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(state.step, 10u);
}

TEST(Adam, FirstStepWithUnitGradient) {
  const auto p = Tensor::from({2, 2}, {0.0, 1.0, 2.0, 3.0}, true);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  const std::vector<Tensor> params{p};
  auto state = make_optimizer_state(params, cfg);
  adam_step(params, std::vector<std::vector<double>>{{1, 1, 1, 1}}, state);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.at(i) - static_cast<double>(i), -1e-4 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, DefaultsMatchConfiguredRates) {
  const OptimizerConfig cfg;
  EXPECT_EQ(cfg.lr, 1e-4);
  EXPECT_EQ(cfg.weight_decay, 1e-3);
  EXPECT_EQ(cfg.beta1, 0.9);
  EXPECT_EQ(cfg.beta2, 0.999);
  EXPECT_EQ(cfg.eps, 1e-8);
  EXPECT_TRUE(cfg.decoupled_weight_decay);
}

TEST(Adam, MatchesReferenceRecurrence) {
  Rng rng(3);
  for (bool decoupled : {true, false}) {
    OptimizerConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    cfg.decoupled_weight_decay = decoupled;
    const auto p = Tensor::from({1}, {0.7}, true);
    const std::vector<Tensor> params{p};
    auto state = make_optimizer_state(params, cfg);
    double w = 0.7, m = 0.0, v = 0.0;
    for (int t = 1; t <= 20; ++t) {
      double g = uniform(rng, -1, 1);
      adam_step(params, std::vector<std::vector<double>>{{g}}, state);
      if (decoupled)
        w -= cfg.lr * cfg.weight_decay * w;
      else
        g += cfg.weight_decay * w;
      m = cfg.beta1 * m + (1 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
      const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
      w -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      EXPECT_NEAR(p.at(0), w, 1e-14);
    }
  }
}

TEST(Adam, ShapeMismatch) {
  const auto p = Tensor::from({2}, {1.0, 2.0}, true);
  const std::vector<Tensor> params{p};
  auto state = make_optimizer_state(params, OptimizerConfig{});
  EXPECT_THROW(adam_step(params, std::vector<std::vector<double>>{{1.0}}, state), ContractError);
  EXPECT_THROW(adam_step(params, std::vector<std::vector<double>>{}, state), ContractError);
}

TEST(Adam, ZeroGradientParameterStaysFixedWithoutDecay) {
  Rng rng(4);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.05;
  const auto moving = Tensor::from({2}, {0.3, 0.4}, true);
  const auto frozen = Tensor::from({3}, {1.5, -0.5, 2.0}, true);
  const std::vector<Tensor> params{moving, frozen};
  auto state = make_optimizer_state(params, cfg);
  for (int t = 0; t < 50; ++t)
    adam_step(params, std::vector<std::vector<double>>{{uniform(rng, -1, 1), uniform(rng, -1, 1)}, {0, 0, 0}}, state);
  EXPECT_NE(moving.at(0), 0.3);
  EXPECT_EQ(std::vector<double>(frozen.values().begin(), frozen.values().end()), (std::vector<double>{1.5, -0.5, 2.0}));
}

TEST(Trainer, IdenticalSeedsGiveIdenticalReports) {
  const auto data = generate_synthetic(2, 4, 32, 2);
  TrainConfig t = tiny_train(3);
  t.augment = AugmentPolicy{};
  Trainer a(tiny_model(), t), b(tiny_model(), t);
  EXPECT_EQ(records(a.train(data)), records(b.train(data)));
  const auto pa = a.model().parameters(), pb = b.model().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(),
                           pb[i].tensor.values().begin()));
}

TEST(Trainer, LossDecreasesOnTinySet) {
  const auto data = generate_synthetic(3, 2, 32, 1);
  TrainConfig t = tiny_train(60);
  t.augment = AugmentPolicy::none();
  Trainer trainer(tiny_model(), t);
  const auto rs = trainer.train(data);
  EXPECT_LT(rs.back().loss.total(), rs.front().loss.total());
  EXPECT_EQ(trainer.epochs_completed(), 60u);
}

TEST(Trainer, EmptyDatasetIsContractError) {
  Trainer trainer(tiny_model(), tiny_train(1));
  EXPECT_THROW(trainer.run_epoch({}), ContractError);
  EXPECT_EQ(trainer.optimizer().step, 0u);
}

TEST(Trainer, CapacityExceededNamesSample) {
  auto data = generate_synthetic(4, 2, 32, 1);
  data[1].id = "crowded";
  for (int i = 0; i < 5; ++i) data[1].annotations.push_back({0, Box::corner_abs(i, 0, i + 1, 1)});
  Trainer trainer(tiny_model(), tiny_train(1));
  try {
    trainer.run_epoch(data);
    FAIL() << "expected CapacityExceeded";
  } catch (const CapacityExceeded& e) {
    EXPECT_NE(std::string(e.what()).find("crowded"), std::string::npos);
  }
  EXPECT_EQ(trainer.optimizer().step, 0u);
}

TEST(Trainer, ResumeEqualsUninterrupted) {
  testing::TempDir dir("resume");
  const auto data = generate_synthetic(5, 3, 32, 2);
  TrainConfig t = tiny_train(6);
  t.augment = AugmentPolicy{};
  Trainer full(tiny_model(), t);
  const auto all = records(full.train(data));

  for (std::size_t split : {1u, 3u, 5u}) {
    TrainConfig first = t;
    first.epochs = split;
    Trainer a(tiny_model(), first);
    auto got = records(a.train(data));
    save_checkpoint(a.checkpoint("echo"), (dir / "mid.ckpt").string());
    Trainer b(load_checkpoint((dir / "mid.ckpt").string()), t);
    EXPECT_EQ(b.epochs_completed(), split);
    for (const auto& r : records(b.train(data))) got.push_back(r);
    EXPECT_EQ(got, all) << "split " << split;
    const auto pf = full.model().parameters(), pb = b.model().parameters();
    for (std::size_t i = 0; i < pf.size(); ++i)
      EXPECT_TRUE(std::equal(pf[i].tensor.values().begin(), pf[i].tensor.values().end(),
                             pb[i].tensor.values().begin()));
  }
}

TEST(PrepareSample, DependsOnlyOnSeedIdAndEpoch) {
  const auto s = generate_synthetic(6, 1, 64, 3)[0];
  TrainConfig t = tiny_train(1);
  t.multiscale = true;
  const auto a = prepare_sample(s, t, 4), b = prepare_sample(s, t, 4);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.annotations, b.annotations);
  const auto short_edge = std::min(a.image.width(), a.image.height());
  EXPECT_GE(short_edge, 288u);
  EXPECT_LE(short_edge, 416u);
}

TEST(EpochRecord, JsonFields) {
  EpochRecord r;
  r.epoch = 3;
  r.loss = {1.0, 2.0, 0.5};
  r.wall_seconds = 0.25;
  const auto j = r.to_json();
  EXPECT_EQ(j.at("epoch"), 3);
  EXPECT_EQ(j.at("loss").get<double>(), 3.5);
  EXPECT_EQ(j.at("class").get<double>(), 1.0);
  EXPECT_EQ(j.at("giou").get<double>(), 2.0);
  EXPECT_EQ(j.at("l1").get<double>(), 0.5);
  EXPECT_TRUE(j.contains("wall_time"));
  EXPECT_FALSE(r.to_json(false).contains("wall_time"));
}

}  // namespace
}  // namespace setdet
