#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "setdet/data.hpp"
#include "setdet/types.hpp"

namespace setdet {

inline constexpr double kDefaultScoreThreshold = 0.3;

struct Detection {
  int class_id = 0;
  double score = 0.0;  // highest real-class probability
  Box box;             // CornerAbs, original image pixels
};

/// Keeps queries whose best real-class probability is strictly above
/// `threshold`; boxes are denormalized and clamped to the image.
std::vector<Detection> postprocess(const PredictionSet& preds, ImageSize image,
                                   double threshold = kDefaultScoreThreshold);

struct MatchResult {
  std::vector<bool> true_positive;    // per detection, input order
  std::vector<bool> false_positive;   // per detection, input order
  std::vector<long> matched_gt;       // gt index or -1
  std::size_t false_negatives = 0;
};

/// Greedy evaluation matching: detections in descending score order (earlier
/// index first on ties) claim the highest-IoU unclaimed same-class ground
/// truth with IoU >= iou_threshold.
MatchResult match_for_eval(std::span<const Detection> dets, std::span<const Annotation> gts,
                           double iou_threshold = 0.5);

struct ImageEvaluation {
  std::vector<Detection> detections;
  std::vector<Annotation> ground_truths;  // CornerAbs, original pixels
  MatchResult match;
};

ImageEvaluation evaluate_image(std::vector<Detection> dets, std::vector<Annotation> gts,
                               double iou_threshold = 0.5);

enum class SizeBucket : std::size_t { Small = 0, Medium = 1, Large = 2 };
inline constexpr double kSmallAreaLimit = 32.0 * 32.0;
inline constexpr double kLargeAreaLimit = 96.0 * 96.0;
SizeBucket size_bucket(double area);
const char* bucket_name(SizeBucket b);

struct PrecisionRecall {
  std::vector<double> precision;
  std::vector<double> recall;
};

struct EvalReport {
  /// Mean of per-class AP@0.5 over classes with at least one ground truth.
  double ap50 = 0.0;
  std::map<int, double> per_class_ap;
  std::map<int, PrecisionRecall> per_class_curve;
  std::array<std::optional<double>, 3> bucket_ap{};  // empty when a bucket has no ground truth
  std::array<std::size_t, 3> bucket_gt_count{};
  std::size_t num_gt = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// 101-point interpolated AP: mean over r in {0, 0.01, ..., 1} of the highest
/// precision reached at recall >= r (0 when recall never reaches r).
double interpolated_ap(std::span<const double> precision, std::span<const double> recall);

/// Pools score-sorted detections over all images, per class and per size bucket.
EvalReport compute_ap(std::span<const ImageEvaluation> images);

nlohmann::json eval_report_to_json(const EvalReport& report);
nlohmann::json detections_to_json(std::span<const Detection> dets);

inline constexpr std::array<double, 3> kGroundTruthColor{0.0, 1.0, 0.0};
inline constexpr std::array<double, 3> kDetectionColor{1.0, 0.0, 0.0};

/// Writes a P6 copy of the image with 1-pixel outlines: ground truth first,
/// detections on top. Each detection's score goes into a header comment.
void render_overlay(const Sample& sample, std::span<const Detection> dets, const std::string& path);

}  // namespace setdet
