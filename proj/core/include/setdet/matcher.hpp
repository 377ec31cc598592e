#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "setdet/types.hpp"

namespace setdet {

/// rows = ground-truth objects, cols = predictions; row-major.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> costs;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), costs(r * c, fill) {}
  static CostMatrix from_rows(const std::vector<std::vector<double>>& rows);

  double at(std::size_t i, std::size_t j) const { return costs[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) { return costs[i * cols + j]; }
};

/// sigma[i] is the prediction matched to ground truth i.
struct Assignment {
  std::vector<std::size_t> sigma;
  double total_cost = 0.0;
};

/// cost(i, j) = -p_j(c_i) + lambda_iou * (1 - giou(b_i, b_j)) + lambda_l1 * |b_i - b_j|_1.
/// The class term is the raw probability, not its log.
/// Throws CapacityExceeded when there are more ground truths than predictions.
CostMatrix build_cost_matrix(std::span<const Annotation> gts, const PredictionSet& preds,
                             double lambda_iou, double lambda_l1);

/// Minimum-cost injective map rows -> cols (Kuhn-Munkres with potentials).
/// Among optimal assignments returns the lexicographically smallest sigma.
Assignment hungarian_assign(const CostMatrix& costs);

}  // namespace setdet
