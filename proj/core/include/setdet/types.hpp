#pragma once

#include <cstddef>
#include <vector>

#include "setdet/geometry.hpp"
#include "setdet/tensor.hpp"

namespace setdet {

/// One ground-truth object: class id plus box. Dataset annotations are
/// CornerAbs; the loss and matcher work on CenterNorm.
struct Annotation {
  int class_id = 0;
  Box box;

  bool operator==(const Annotation&) const = default;
};

/// Fixed-size model output: N per-query class distributions over
/// num_classes + 1 entries (the last one is "no object") and N CenterNorm boxes.
struct PredictionSet {
  Tensor class_probs;  // [N x (K + 1)]
  Tensor boxes;        // [N x 4]

  std::size_t num_queries() const { return boxes.dim(0); }
  /// Real classes, excluding no-object.
  std::size_t num_classes() const { return class_probs.dim(1) - 1; }
  std::size_t no_object_class() const { return num_classes(); }

  double prob(std::size_t query, std::size_t cls) const { return class_probs.at(query, cls); }
  Box box(std::size_t query) const {
    return Box::center_norm(boxes.at(query, 0), boxes.at(query, 1), boxes.at(query, 2),
                            boxes.at(query, 3));
  }
};

}  // namespace setdet
