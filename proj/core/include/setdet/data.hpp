#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "setdet/image.hpp"
#include "setdet/rng.hpp"
#include "setdet/types.hpp"

namespace setdet {

/// One image with its ground truth. Annotation boxes are CornerAbs pixels.
struct Sample {
  std::string id;
  Image image;
  std::vector<Annotation> annotations;

  ImageSize size() const {
    return {static_cast<double>(image.width()), static_cast<double>(image.height())};
  }
  /// Annotations converted to CenterNorm, as consumed by the loss.
  std::vector<Annotation> normalized_annotations() const;
};

// ---- manifest ----------------------------------------------------------------
//
// {
//   "images":      [{"id": "a", "file_name": "a.ppm", "width": 64, "height": 48}],
//   "annotations": [{"image_id": "a", "category_id": 0, "bbox": [x, y, w, h]},
//                   {"image_id": "a", "category_id": 1, "mask_path": "a_1.pgm"}],
//   "categories":  [{"id": 0, "name": "lesion"}, {"id": 1, "name": "other"}]
// }
//
// Ids may be strings or integers. Paths are relative to the manifest file.
// Class indices follow the order of the categories array.

struct ManifestImage {
  std::string id;
  std::filesystem::path file;
  std::size_t width = 0;
  std::size_t height = 0;
};

struct ManifestAnnotation {
  std::string image_id;
  int class_id = 0;
  Box box;  // CornerAbs; resolved from the mask when mask_path is set
  std::optional<std::filesystem::path> mask_path;
};

struct DatasetManifest {
  std::filesystem::path source;
  std::vector<ManifestImage> images;
  std::vector<ManifestAnnotation> annotations;
  std::vector<std::string> categories;

  std::vector<std::string> image_ids() const;
};

/// Throws MissingFile, MalformedRecord, DanglingReference or EmptyMaskError.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Reads every image referenced by the manifest.
std::vector<Sample> load_samples(const DatasetManifest& manifest);

/// Writes samples as PPM files plus a manifest.json in `dir`; returns the manifest path.
std::filesystem::path write_dataset(const std::vector<Sample>& samples,
                                    const std::vector<std::string>& categories,
                                    const std::filesystem::path& dir);

// ---- synthetic data ---------------------------------------------------------------

/// Fill color used for rectangles of class `cls`.
std::array<double, 3> class_color(std::size_t cls);

/// Square images with a uniform background and 1..max_objects non-overlapping
/// filled rectangles; each rectangle's class decides its color.
std::vector<Sample> generate_synthetic(std::uint64_t seed, std::size_t count, std::size_t image_size,
                                       std::size_t max_objects, std::size_t num_classes = 2);

// ---- folds -------------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> assignments;

  std::vector<std::string> validation_ids(std::size_t fold) const;
  std::vector<std::string> training_ids(std::size_t fold) const;
  std::vector<std::size_t> fold_sizes() const;
};

/// Seeded shuffle, then round-robin over k folds. Throws ContractError when
/// k < 2 or there are fewer ids than folds.
FoldPlan kfold_split(std::vector<std::string> ids, std::size_t k, std::uint64_t seed);

nlohmann::json fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const nlohmann::json& j);

// ---- multi-scale resize ----------------------------------------------------------

inline constexpr std::array<std::size_t, 5> kShortEdgeChoices{288, 320, 352, 384, 416};
inline constexpr std::size_t kMaxLongEdge = 512;

struct ResizePlan {
  std::size_t width = 0;
  std::size_t height = 0;
  double scale = 1.0;
};

/// scale = target_short / short, capped so that scale * long <= max_long;
/// output extents are rounded to the nearest integer, at least 1.
ResizePlan plan_resize(std::size_t width, std::size_t height, std::size_t target_short,
                       std::size_t max_long = kMaxLongEdge);

/// Resamples the image bilinearly and scales boxes by the same factor.
Sample resize_to_short_edge(const Sample& sample, std::size_t target_short,
                            std::size_t max_long = kMaxLongEdge);

/// Draws the short-edge target uniformly from kShortEdgeChoices.
Sample resize_multiscale(const Sample& sample, Rng& rng);

/// Scales boxes by (sx, sy), clamps them to width x height and drops any
/// that collapse to zero extent.
std::vector<Annotation> scale_annotations(const std::vector<Annotation>& anns, double sx, double sy,
                                          double width, double height);

}  // namespace setdet
