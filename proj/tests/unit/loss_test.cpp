#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "setdet/errors.hpp"
#include "setdet/loss.hpp"

namespace setdet {
namespace {

using testing::random_center_box;
using testing::random_predictions;

std::vector<Annotation> random_gts(Rng& rng, std::size_t m, std::size_t num_classes) {
  std::vector<Annotation> gts;
  for (std::size_t i = 0; i < m; ++i)
    gts.push_back({static_cast<int>(uniform_index(rng, num_classes)), random_center_box(rng)});
  return gts;
}

TEST(BoxLoss, Examples) {
  const auto a = Box::center_norm(0.3, 0.4, 0.2, 0.1);
  LossConfig cfg;
  EXPECT_EQ(box_loss(a, a, cfg), 0.0);
  cfg.lambda_iou = 7;
  cfg.lambda_l1 = 0.3;
  EXPECT_EQ(box_loss(a, a, cfg), 0.0);

  LossConfig only_iou;
  only_iou.lambda_iou = 1;
  only_iou.lambda_l1 = 0;
  EXPECT_DOUBLE_EQ(box_loss(Box::center_norm(0.25, 0.5, 0.5, 0.5), Box::center_norm(0.75, 0.5, 0.5, 0.5), only_iou),
                   1.0);
}

TEST(BoxLoss, LinearCombination) {
  // Nested boxes: inner (0.4..0.6) x (0.25..0.75) inside outer (0.3..0.7) x (0.25..0.75):
  // iou = giou = 0.5 and L1 = |0.2 - 0.4| = 0.2; rescale the L1 weight so 5 * L1 -> 0.5.
  const auto inner = Box::center_norm(0.5, 0.5, 0.2, 0.5);
  const auto outer = Box::center_norm(0.5, 0.5, 0.4, 0.5);
  ASSERT_DOUBLE_EQ(giou(inner, outer), 0.5);
  LossConfig cfg;  // defaults 2 and 5
  EXPECT_EQ(cfg.lambda_iou, 2.0);
  EXPECT_EQ(cfg.lambda_l1, 5.0);
  EXPECT_NEAR(box_loss(inner, outer, cfg), 2.0 * 0.5 + 5.0 * 0.2, 1e-15);
}

TEST(ClassificationLoss, Examples) {
  LossConfig cfg;
  cfg.num_classes = 2;
  const std::vector<double> certain{1.0, 0.0, 0.0};
  EXPECT_EQ(classification_loss(certain, 0, cfg), 0.0);
  const std::vector<double> half{0.5, 0.25, 0.25};
  EXPECT_DOUBLE_EQ(classification_loss(half, 0, cfg), std::log(2.0));
  const std::vector<double> half_empty{0.25, 0.25, 0.5};
  EXPECT_DOUBLE_EQ(classification_loss(half_empty, cfg.no_object(), cfg), std::log(2.0));
  cfg.noobject_weight = 0.1;
  EXPECT_DOUBLE_EQ(classification_loss(half_empty, cfg.no_object(), cfg), 0.1 * std::log(2.0));
  // Zero probability is clamped, not infinite.
  EXPECT_DOUBLE_EQ(classification_loss(certain, 1, cfg), -std::log(kProbabilityFloor));
}

TEST(HungarianLoss, PerfectPredictionIsZero) {
  const auto b0 = Box::center_norm(0.3, 0.3, 0.2, 0.2), b1 = Box::center_norm(0.7, 0.6, 0.3, 0.2);
  const std::vector<Annotation> gts{{1, b0}, {0, b1}};
  // Query 2 carries gt 0, query 0 carries gt 1, query 1 is empty.
  const auto probs = Tensor::from({3, 3}, {1, 0, 0, 0, 0, 1, 0, 1, 0}, true);
  const auto boxes = Tensor::from({3, 4}, {b1.a, b1.b, b1.c, b1.d, 0.5, 0.5, 0.1, 0.1, b0.a, b0.b, b0.c, b0.d}, true);
  LossConfig cfg;
  cfg.num_classes = 2;
  const auto loss = hungarian_loss(gts, {probs, boxes}, cfg);
  EXPECT_EQ(loss.total.item(), 0.0);
  EXPECT_EQ(loss.assignment.sigma, (std::vector<std::size_t>{2, 0}));
}

TEST(HungarianLoss, NoGroundTruthUniform) {
  for (std::size_t k : {1u, 2u, 4u}) {
    const std::size_t n = 5;
    LossConfig cfg;
    cfg.num_classes = k;
    cfg.noobject_weight = 0.7;
    const auto probs = Tensor::full({n, k + 1}, 1.0 / static_cast<double>(k + 1), true);
    const auto boxes = Tensor::full({n, 4}, 0.5, true);
    const auto loss = hungarian_loss({}, {probs, boxes}, cfg);
    EXPECT_NEAR(loss.total.item(), static_cast<double>(n) * 0.7 * std::log(static_cast<double>(k + 1)), 1e-12);
  }
}

TEST(HungarianLoss, MatchesIndependentRecomputation) {
  Rng rng(21);
  LossConfig cfg;
  cfg.num_classes = 2;
  for (int trial = 0; trial < 200; ++trial) {
    const auto preds = random_predictions(rng, 3, 2);
    const auto gts = random_gts(rng, 2, 2);
    // Brute-force the matching objective, then recompute the set loss at its argmin.
    double best = 1e300;
    std::vector<std::size_t> arg;
    testing::for_each_injection(2, 3, [&](const std::vector<std::size_t>& s) {
      const double c = testing::match_cost_for(gts, preds, s, cfg);
      if (c < best) {
        best = c;
        arg = s;
      }
    });
    const auto loss = hungarian_loss(gts, preds, cfg);
    EXPECT_EQ(loss.assignment.sigma, arg);
    EXPECT_NEAR(loss.total.item(), testing::set_loss_for(gts, preds, arg, cfg), 1e-9);
  }
}

TEST(HungarianLoss, PartsSumToTotal) {
  Rng rng(22);
  LossConfig cfg;
  cfg.num_classes = 3;
  for (int trial = 0; trial < 100; ++trial) {
    const auto preds = random_predictions(rng, 6, 3);
    const auto loss = hungarian_loss(random_gts(rng, uniform_index(rng, 4), 3), preds, cfg);
    EXPECT_NEAR(loss.total.item(), loss.parts.total(), 1e-12);
  }
}

TEST(HungarianLoss, GroundTruthPermutationInvariance) {
  Rng rng(23);
  LossConfig cfg;
  cfg.num_classes = 2;
  for (int trial = 0; trial < 100; ++trial) {
    const auto preds = random_predictions(rng, 6, 2);
    auto gts = random_gts(rng, 3, 2);
    const double before = hungarian_loss(gts, preds, cfg).total.item();
    std::swap(gts[0], gts[2]);
    std::swap(gts[1], gts[2]);
    EXPECT_EQ(hungarian_loss(gts, preds, cfg).total.item(), before);
  }
}

TEST(HungarianLoss, RaisingMatchedProbabilityNeverIncreasesLoss) {
  Rng rng(24);
  LossConfig cfg;
  cfg.num_classes = 2;
  for (int trial = 0; trial < 100; ++trial) {
    const auto preds = random_predictions(rng, 4, 2);
    const auto gts = random_gts(rng, 2, 2);
    const auto base = hungarian_loss(gts, preds, cfg);
    const std::size_t q = base.assignment.sigma[0];
    const auto c = static_cast<std::size_t>(gts[0].class_id);
    std::vector<double> probs(preds.class_probs.values().begin(), preds.class_probs.values().end());
    const double old = probs[q * 3 + c];
    const double raised = old + uniform(rng, 0.0, 1.0) * (1.0 - old);
    for (std::size_t k = 0; k < 3; ++k)
      probs[q * 3 + k] = k == c ? raised : probs[q * 3 + k] * (1.0 - raised) / (1.0 - old);
    const PredictionSet bumped{Tensor::from({4, 3}, probs), preds.boxes};
    EXPECT_LE(hungarian_loss(gts, bumped, cfg).total.item(), base.total.item() + 1e-12);
  }
}

TEST(HungarianLoss, CapacityExceeded) {
  Rng rng(25);
  LossConfig cfg;
  const auto preds = random_predictions(rng, 2, 1);
  EXPECT_THROW(hungarian_loss(random_gts(rng, 3, 1), preds, cfg), CapacityExceeded);
}

TEST(HungarianLoss, GradientMatchesFiniteDifferences) {
  Rng rng(26);
  LossConfig cfg;
  cfg.num_classes = 2;
  for (int trial = 0; trial < 50; ++trial) {
    const auto init = random_predictions(rng, 4, 2);
    const auto gts = random_gts(rng, 2, 2);
    // Differentiate through softmax / sigmoid so every probability stays valid under perturbation.
    std::vector<double> logits(12), raw(16);
    for (auto& v : logits) v = uniform(rng, -2, 2);
    for (auto& v : raw) v = uniform(rng, -1.5, 1.5);
    auto lt = Tensor::from({4, 3}, logits, true);
    auto bt = Tensor::from({4, 4}, raw, true);
    const auto sigma = hungarian_loss(gts, {softmax_rows(lt), sigmoid(bt)}, cfg).assignment.sigma;
    const double err = testing::gradient_check(
        [&](const std::vector<Tensor>& in) {
          const PredictionSet p{softmax_rows(in[0]), sigmoid(in[1])};
          const auto loss = hungarian_loss(gts, p, cfg);
          // Finite differences must not straddle a change of assignment.
          EXPECT_EQ(loss.assignment.sigma, sigma);
          return loss.total;
        },
        {lt, bt});
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(GiouLossSum, GradientMatchesFiniteDifferences) {
  Rng rng(27);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box> targets{random_center_box(rng), random_center_box(rng)};
    std::vector<double> v;
    for (int k = 0; k < 2; ++k) {
      const auto b = random_center_box(rng);
      for (double x : {b.a, b.b, b.c, b.d}) v.push_back(x);
    }
    auto pred = Tensor::from({2, 4}, v, true);
    const double value = giou_loss_sum(pred, targets).item();
    const auto p0 = Box::center_norm(v[0], v[1], v[2], v[3]), p1 = Box::center_norm(v[4], v[5], v[6], v[7]);
    EXPECT_NEAR(value, (1 - giou(p0, targets[0])) + (1 - giou(p1, targets[1])), 1e-12);
    EXPECT_LT(testing::gradient_check([&](const auto& in) { return giou_loss_sum(in[0], targets); }, {pred}), 1e-4);
    EXPECT_LT(testing::gradient_check([&](const auto& in) { return l1_loss_sum(in[0], targets); }, {pred}), 1e-4);
  }
}

}  // namespace
}  // namespace setdet
