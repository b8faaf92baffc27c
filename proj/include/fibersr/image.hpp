#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/io.hpp"
#include "fibersr/random.hpp"

namespace fibersr {

/// Grayscale intensity field, row-major, every sample in [0, 1].
/// Immutable once constructed.
class Image {
 public:
  Image() = default;

  Image(int width, int height, double fill = 0.0) : width_(width), height_(height) {
    check_dims(width, height);
    require(fill >= 0.0 && fill <= 1.0, "Image: fill value outside [0,1]");
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  Image(int width, int height, std::vector<double> data) : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    require(data_.size() == static_cast<std::size_t>(width) * height, "Image: data length != width*height");
    for (double v : data_) require(v >= 0.0 && v <= 1.0, "Image: sample outside [0,1]");
  }

  /// Builds an image from arbitrary reals, clamping into [0, 1]. NaN maps to 0.
  static Image clamped(int width, int height, std::vector<double> data) {
    for (double& v : data) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    return Image(width, height, std::move(data));
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Sample at column x, row y.
  double operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const {
    require(x >= 0 && y >= 0 && x < width_ && y < height_, "Image::at: out of bounds");
    return (*this)(x, y);
  }

  std::span<const double> pixels() const { return data_; }
  std::span<const double> row(int y) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(y) * width_, width_);
  }

  bool operator==(const Image&) const = default;

 private:
  static void check_dims(int width, int height) {
    require(width >= 1 && height >= 1, "Image: dimensions must be >= 1");
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

namespace detail {

struct PgmCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  long read_uint(const char* what) {
    skip_space_and_comments();
    long v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000'000L) throw Error(std::string("pgm: ") + what + " too large");
      ++pos;
      ++digits;
    }
    if (digits == 0) throw Error(std::string("pgm: malformed header (expected ") + what + ")");
    return v;
  }
};

}  // namespace detail

/// Decodes a binary graymap ("P5"). 16-bit samples are big-endian.
inline Image load_pgm(std::span<const std::uint8_t> bytes) {
  detail::PgmCursor cur{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw Error("pgm: malformed header (magic is not P5)");
  cur.pos = 2;
  if (cur.pos < bytes.size() && !detail::PgmCursor::is_space(bytes[cur.pos]) && bytes[cur.pos] != '#')
    throw Error("pgm: malformed header");
  const long width = cur.read_uint("width");
  const long height = cur.read_uint("height");
  const long maxval = cur.read_uint("maxval");
  if (width < 1 || height < 1) throw Error("pgm: malformed header (zero dimension)");
  if (maxval != 255 && maxval != 65535) throw Error("pgm: unsupported maxval " + std::to_string(maxval));
  if (cur.pos >= bytes.size() || !detail::PgmCursor::is_space(bytes[cur.pos]))
    throw Error("pgm: malformed header (missing separator before raster)");
  ++cur.pos;

  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const std::size_t sample_bytes = maxval == 255 ? 1 : 2;
  if (bytes.size() - cur.pos < count * sample_bytes) throw Error("pgm: truncated payload");

  std::vector<double> data(count);
  const double scale = static_cast<double>(maxval);
  const std::uint8_t* p = bytes.data() + cur.pos;
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned s = sample_bytes == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    data[i] = std::min(static_cast<double>(s), scale) / scale;
  }
  return Image(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

/// Encodes with round-to-nearest quantization; maxval must be 255 or 65535.
inline Bytes save_pgm(const Image& image, int maxval = 65535) {
  require(maxval == 255 || maxval == 65535, "save_pgm: maxval must be 255 or 65535");
  require(!image.empty(), "save_pgm: empty image");
  const std::string header =
      "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n" + std::to_string(maxval) + "\n";
  Bytes out(header.begin(), header.end());
  const std::size_t sample_bytes = maxval == 255 ? 1 : 2;
  out.reserve(out.size() + image.size() * sample_bytes);
  for (double v : image.pixels()) {
    const auto s = static_cast<unsigned>(std::lround(v * maxval));
    if (sample_bytes == 2) out.push_back(static_cast<std::uint8_t>(s >> 8));
    out.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  return out;
}

inline Image read_pgm(const std::filesystem::path& path) {
  try {
    return load_pgm(read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void write_pgm(const std::filesystem::path& path, const Image& image, int maxval = 65535) {
  write_file_atomic(path, save_pgm(image, maxval));
}

/// Rectangle [x0, x0+w) x [y0, y0+h); x is the column.
inline Image crop(const Image& image, int x0, int y0, int w, int h) {
  require(x0 >= 0 && y0 >= 0 && w >= 1 && h >= 1 && x0 + w <= image.width() && y0 + h <= image.height(),
          "crop: rectangle out of bounds");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(w) * h);
  for (int j = 0; j < h; ++j) {
    const auto r = image.row(y0 + j);
    out.insert(out.end(), r.begin() + x0, r.begin() + x0 + w);
  }
  return Image(w, h, std::move(out));
}

struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int size = 0;
};

/// Offset drawn uniformly over all valid positions (x first, then y).
inline CropWindow random_crop_window(int width, int height, int size, Rng& rng) {
  require(size >= 1 && size <= std::min(width, height), "random_crop: size exceeds image");
  const int x0 = static_cast<int>(rng.uniform_int(0, width - size));
  const int y0 = static_cast<int>(rng.uniform_int(0, height - size));
  return {x0, y0, size};
}

inline Image random_crop(const Image& image, int size, Rng& rng) {
  const CropWindow w = random_crop_window(image.width(), image.height(), size, rng);
  return crop(image, w.x0, w.y0, size, size);
}

}  // namespace fibersr
