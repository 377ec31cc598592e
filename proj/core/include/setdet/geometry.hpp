#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace setdet {

enum class BoxFormat : std::uint8_t {
  CenterNorm,  // (cx, cy, w, h), normalized to [0, 1] by image size
  CornerAbs,   // (x1, y1, x2, y2) in pixels, x2/y2 exclusive
};

struct ImageSize {
  double width = 0.0;
  double height = 0.0;
};

struct Box {
  BoxFormat format = BoxFormat::CornerAbs;
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;

  static Box center_norm(double cx, double cy, double w, double h) {
    return {BoxFormat::CenterNorm, cx, cy, w, h};
  }
  static Box corner_abs(double x1, double y1, double x2, double y2) {
    return {BoxFormat::CornerAbs, x1, y1, x2, y2};
  }

  double area() const;
  bool operator==(const Box&) const = default;
};

std::string to_string(const Box& box);

/// Corner coordinates in the box's own frame (normalized for CenterNorm, with
/// corners clamped to [0, 1]; pixels for CornerAbs).
struct Corners {
  double x1, y1, x2, y2;
};
Corners corners_of(const Box& box);

/// Converts between formats. `image` is required when the conversion crosses
/// between normalized and absolute coordinates; throws ContractError otherwise.
Box convert(const Box& box, BoxFormat target, std::optional<ImageSize> image = std::nullopt);

/// Intersection over union. Boxes must share a format. Zero-union pairs give 0.
double iou(const Box& lhs, const Box& rhs);

/// IoU minus the fraction of the enclosing hull not covered by the union.
/// Zero-union pairs give 0.
double giou(const Box& lhs, const Box& rhs);

/// Sum of absolute differences of the four parameters. Formats must match.
double l1_distance(const Box& lhs, const Box& rhs);

struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<bool> bits;  // row-major

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), bits(w * h, false) {}

  bool at(std::size_t row, std::size_t col) const { return bits[row * width + col]; }
  void set(std::size_t row, std::size_t col, bool v = true) { bits[row * width + col] = v; }
};

/// Tightest CornerAbs box around the set pixels; pixel (r, c) covers
/// [c, c+1) x [r, r+1). Throws EmptyMaskError when nothing is set.
Box mask_to_bbox(const BinaryMask& mask);

/// Reads a binary PGM (P5, maxval <= 255); nonzero samples are foreground.
BinaryMask read_pgm_mask(const std::string& path);
void write_pgm_mask(const BinaryMask& mask, const std::string& path);

}  // namespace setdet
