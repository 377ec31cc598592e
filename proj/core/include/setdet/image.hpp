#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace setdet {

enum class NetpbmKind : std::uint8_t { GrayP5, ColorP6 };

/// Raw 8-bit netpbm raster plus any header comment lines (without the '#').
struct NetpbmImage {
  NetpbmKind kind = NetpbmKind::ColorP6;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> samples;  // interleaved for P6
  std::vector<std::string> comments;
};

/// Throws MissingFile / MalformedRecord.
NetpbmImage read_netpbm(const std::string& path, NetpbmKind expected);
void write_netpbm(const NetpbmImage& image, const std::string& path);

/// Three-channel float image, channel-major (3 x H x W), values in [0, 1].
class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), data_(kChannels * width * height, fill) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t channel, std::size_t y, std::size_t x) {
    return data_[(channel * height_ + y) * width_ + x];
  }
  double at(std::size_t channel, std::size_t y, std::size_t x) const {
    return data_[(channel * height_ + y) * width_ + x];
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

Image image_from_ppm(const NetpbmImage& raw);
/// Quantizes to 8 bits (round to nearest, clamped).
NetpbmImage image_to_ppm(const Image& image);

Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path,
               const std::vector<std::string>& comments = {});

/// Bilinear resample with half-pixel centers.
Image resize_bilinear(const Image& src, std::size_t width, std::size_t height);

}  // namespace setdet
