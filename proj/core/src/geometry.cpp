#include "setdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "setdet/errors.hpp"
#include "setdet/image.hpp"

namespace setdet {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_same_format(const Box& lhs, const Box& rhs, const char* op) {
  if (lhs.format != rhs.format)
    throw ContractError(std::string(op) + ": boxes are in different formats");
}

}  // namespace

double Box::area() const {
  const auto k = corners_of(*this);
  return std::max(0.0, k.x2 - k.x1) * std::max(0.0, k.y2 - k.y1);
}

std::string to_string(const Box& box) {
  std::ostringstream os;
  os << (box.format == BoxFormat::CenterNorm ? "CenterNorm(" : "CornerAbs(") << box.a << ", "
     << box.b << ", " << box.c << ", " << box.d << ')';
  return os.str();
}

Corners corners_of(const Box& box) {
  if (box.format == BoxFormat::CornerAbs) return {box.a, box.b, box.c, box.d};
  return {clamp01(box.a - 0.5 * box.c), clamp01(box.b - 0.5 * box.d), clamp01(box.a + 0.5 * box.c),
          clamp01(box.b + 0.5 * box.d)};
}

Box convert(const Box& box, BoxFormat target, std::optional<ImageSize> image) {
  if (box.format == target) return box;
  if (!image || !(image->width > 0.0) || !(image->height > 0.0))
    throw ContractError("convert: image size required between normalized and absolute boxes");
  const double w = image->width, h = image->height;
  if (target == BoxFormat::CornerAbs) {
    const auto k = corners_of(box);
    return Box::corner_abs(k.x1 * w, k.y1 * h, k.x2 * w, k.y2 * h);
  }
  const double x1 = box.a / w, y1 = box.b / h, x2 = box.c / w, y2 = box.d / h;
  return Box::center_norm(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1);
}

double iou(const Box& lhs, const Box& rhs) {
  require_same_format(lhs, rhs, "iou");
  const auto p = corners_of(lhs);
  const auto q = corners_of(rhs);
  const double iw = std::max(0.0, std::min(p.x2, q.x2) - std::max(p.x1, q.x1));
  const double ih = std::max(0.0, std::min(p.y2, q.y2) - std::max(p.y1, q.y1));
  const double inter = iw * ih;
  const double uni = lhs.area() + rhs.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& lhs, const Box& rhs) {
  require_same_format(lhs, rhs, "giou");
  const auto p = corners_of(lhs);
  const auto q = corners_of(rhs);
  const double iw = std::max(0.0, std::min(p.x2, q.x2) - std::max(p.x1, q.x1));
  const double ih = std::max(0.0, std::min(p.y2, q.y2) - std::max(p.y1, q.y1));
  const double inter = iw * ih;
  const double uni = lhs.area() + rhs.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  const double hull = (std::max(p.x2, q.x2) - std::min(p.x1, q.x1)) *
                      (std::max(p.y2, q.y2) - std::min(p.y1, q.y1));
  return inter / uni - (hull - uni) / hull;
}

double l1_distance(const Box& lhs, const Box& rhs) {
  require_same_format(lhs, rhs, "l1_distance");
  return std::fabs(lhs.a - rhs.a) + std::fabs(lhs.b - rhs.b) + std::fabs(lhs.c - rhs.c) +
         std::fabs(lhs.d - rhs.d);
}

Box mask_to_bbox(const BinaryMask& mask) {
  if (mask.bits.size() != mask.width * mask.height)
    throw ContractError("mask_to_bbox: bit count does not match extents");
  std::size_t x1 = mask.width, y1 = mask.height, x2 = 0, y2 = 0;
  bool any = false;
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        any = true;
        x1 = std::min(x1, c);
        y1 = std::min(y1, r);
        x2 = std::max(x2, c + 1);
        y2 = std::max(y2, r + 1);
      }
  if (!any) throw EmptyMaskError("mask has no set pixels");
  return Box::corner_abs(static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
                         static_cast<double>(y2));
}

BinaryMask read_pgm_mask(const std::string& path) {
  const auto raw = read_netpbm(path, NetpbmKind::GrayP5);
  BinaryMask mask(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) mask.bits[i] = raw.samples[i] != 0;
  return mask;
}

void write_pgm_mask(const BinaryMask& mask, const std::string& path) {
  NetpbmImage raw;
  raw.kind = NetpbmKind::GrayP5;
  raw.width = mask.width;
  raw.height = mask.height;
  raw.samples.resize(mask.bits.size());
  for (std::size_t i = 0; i < mask.bits.size(); ++i) raw.samples[i] = mask.bits[i] ? 255 : 0;
  write_netpbm(raw, path);
}

}  // namespace setdet
