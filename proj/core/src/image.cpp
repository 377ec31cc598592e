#include "setdet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "setdet/errors.hpp"

namespace setdet {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& buf, const std::string& path) : buf_(buf), path_(path) {}

  // Skips whitespace and comment lines, collecting comment text.
  void skip(std::vector<std::string>& comments) {
    while (pos_ < buf_.size()) {
      const char c = buf_[pos_];
      if (c == '#') {
        std::size_t end = pos_;
        while (end < buf_.size() && buf_[end] != '\n') ++end;
        std::string text(buf_.begin() + static_cast<std::ptrdiff_t>(pos_) + 1,
                         buf_.begin() + static_cast<std::ptrdiff_t>(end));
        if (!text.empty() && text.front() == ' ') text.erase(0, 1);
        comments.push_back(std::move(text));
        pos_ = end;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(std::vector<std::string>& comments) {
    skip(comments);
    std::size_t v = 0;
    bool any = false;
    while (pos_ < buf_.size() && std::isdigit(static_cast<unsigned char>(buf_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(buf_[pos_] - '0');
      if (v > (1u << 24)) throw MalformedRecord(path_ + ": header value too large");
      ++pos_;
      any = true;
    }
    if (!any) throw MalformedRecord(path_ + ": malformed netpbm header");
    return v;
  }

  std::size_t& pos() { return pos_; }

 private:
  const std::vector<char>& buf_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

NetpbmImage read_netpbm(const std::string& path, NetpbmKind expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open image " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const char* magic = expected == NetpbmKind::ColorP6 ? "P6" : "P5";
  if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1])
    throw MalformedRecord(path + ": expected " + magic + " netpbm file");

  NetpbmImage img;
  img.kind = expected;
  HeaderReader hdr(buf, path);
  hdr.pos() = 2;
  img.width = hdr.number(img.comments);
  img.height = hdr.number(img.comments);
  const std::size_t maxval = hdr.number(img.comments);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255)
    throw MalformedRecord(path + ": unsupported netpbm dimensions or maxval");
  auto& pos = hdr.pos();
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw MalformedRecord(path + ": missing raster separator");
  ++pos;
  const std::size_t channels = expected == NetpbmKind::ColorP6 ? 3 : 1;
  const std::size_t n = img.width * img.height * channels;
  if (buf.size() - pos < n) throw MalformedRecord(path + ": truncated raster");
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::uint8_t>(buf[pos + i]);
    img.samples[i] = maxval == 255 ? v
                                   : static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
  }
  return img;
}

void write_netpbm(const NetpbmImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << (image.kind == NetpbmKind::ColorP6 ? "P6" : "P5") << '\n';
  for (const auto& c : image.comments) out << "# " << c << '\n';
  out << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.samples.data()),
            static_cast<std::streamsize>(image.samples.size()));
  if (!out) throw Error("failed writing " + path);
}

Image image_from_ppm(const NetpbmImage& raw) {
  Image img(raw.width, raw.height);
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        img.at(c, y, x) = raw.samples[(y * raw.width + x) * 3 + c] / 255.0;
  return img;
}

NetpbmImage image_to_ppm(const Image& image) {
  NetpbmImage raw;
  raw.kind = NetpbmKind::ColorP6;
  raw.width = image.width();
  raw.height = image.height();
  raw.samples.resize(raw.width * raw.height * 3);
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        raw.samples[(y * raw.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return raw;
}

Image read_ppm(const std::string& path) { return image_from_ppm(read_netpbm(path, NetpbmKind::ColorP6)); }

void write_ppm(const Image& image, const std::string& path, const std::vector<std::string>& comments) {
  auto raw = image_to_ppm(image);
  raw.comments = comments;
  write_netpbm(raw, path);
}

Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  Image dst(width, height);
  if (src.empty() || width == 0 || height == 0) return dst;
  const double sx = static_cast<double>(src.width()) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(height);
  const auto max_x = static_cast<double>(src.width() - 1);
  const auto max_y = static_cast<double>(src.height() - 1);

  std::vector<std::size_t> x0(width), x1(width);
  std::vector<double> fx(width);
  for (std::size_t x = 0; x < width; ++x) {
    const double px = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
    x0[x] = static_cast<std::size_t>(px);
    x1[x] = std::min(x0[x] + 1, src.width() - 1);
    fx[x] = px - static_cast<double>(x0[x]);
  }
  for (std::size_t y = 0; y < height; ++y) {
    const double py = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(py);
    const auto y1 = std::min(y0 + 1, src.height() - 1);
    const double fy = py - static_cast<double>(y0);
    for (std::size_t c = 0; c < Image::kChannels; ++c)
      for (std::size_t x = 0; x < width; ++x) {
        const double top = src.at(c, y0, x0[x]) * (1 - fx[x]) + src.at(c, y0, x1[x]) * fx[x];
        const double bot = src.at(c, y1, x0[x]) * (1 - fx[x]) + src.at(c, y1, x1[x]) * fx[x];
        dst.at(c, y, x) = top * (1 - fy) + bot * fy;
      }
  }
  return dst;
}

}  // namespace setdet
