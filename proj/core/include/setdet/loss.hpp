#pragma once

#include <cstddef>
#include <span>

#include "setdet/matcher.hpp"
#include "setdet/types.hpp"

namespace setdet {

struct LossConfig {
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
  /// Weight on the class term of queries whose target is no-object.
  double noobject_weight = 1.0;
  /// Real classes; no-object is encoded as index num_classes.
  std::size_t num_classes = 1;

  std::size_t no_object() const { return num_classes; }
};

/// Probabilities are clamped below at this value before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// lambda_iou * (1 - giou) + lambda_l1 * L1 on CenterNorm boxes.
double box_loss(const Box& target, const Box& predicted, const LossConfig& cfg);

/// -log p(target), scaled by noobject_weight when target is no-object.
double classification_loss(std::span<const double> probs, std::size_t target, const LossConfig& cfg);

struct LossParts {
  double classification = 0.0;
  double giou = 0.0;  // already multiplied by lambda_iou
  double l1 = 0.0;    // already multiplied by lambda_l1

  double total() const { return classification + giou + l1; }
};

struct HungarianLoss {
  Tensor total;  // scalar, differentiable w.r.t. the prediction tensors
  LossParts parts;
  Assignment assignment;
};

/// Matches ground truths to predictions on detached costs, then sums the class
/// term over all N queries (unmatched queries target no-object) and the box
/// loss over matched pairs. `gts` hold CenterNorm boxes.
HungarianLoss hungarian_loss(std::span<const Annotation> gts, const PredictionSet& preds,
                             const LossConfig& cfg);

/// Differentiable sum over rows of (1 - giou(pred_k, target_k)); `pred` is a
/// [K x 4] CenterNorm tensor, targets are constants.
Tensor giou_loss_sum(const Tensor& pred, std::span<const Box> targets);

/// Differentiable sum over rows of |pred_k - target_k|_1.
Tensor l1_loss_sum(const Tensor& pred, std::span<const Box> targets);

}  // namespace setdet
