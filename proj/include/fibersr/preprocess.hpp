#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/image.hpp"

namespace fibersr {

struct PreprocessConfig {
  double gaussian_sigma_px = 2.0;
  double clahe_clip_limit = 0.005;
  int clahe_tile_rows = 8;
  int clahe_tile_cols = 8;
  int clahe_bins = 256;

  void validate() const {
    require(gaussian_sigma_px > 0.0 && std::isfinite(gaussian_sigma_px), "PreprocessConfig: sigma must be > 0");
    require(clahe_clip_limit > 0.0 && clahe_clip_limit <= 1.0, "PreprocessConfig: clip limit must lie in (0,1]");
    require(clahe_tile_rows >= 1 && clahe_tile_cols >= 1, "PreprocessConfig: tile grid must be at least 1x1");
    require(clahe_bins >= 2, "PreprocessConfig: bins must be >= 2");
  }
};

/// Half-sample symmetric reflection (... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...),
/// periodic with period 2n so any offset is valid.
inline int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

/// Normalized Gaussian taps with radius ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), "gaussian_kernel: sigma must be > 0");
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

inline Image gaussian_blur(const Image& image, double sigma_px) {
  const auto k = gaussian_kernel(sigma_px);
  const int r = static_cast<int>(k.size() / 2);
  const int W = image.width();
  const int H = image.height();
  const auto src = image.pixels();
  std::vector<double> tmp(src.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int t = -r; t <= r; ++t)
        s += k[static_cast<std::size_t>(t + r)] * src[static_cast<std::size_t>(y) * W + reflect_index(x + t, W)];
      tmp[static_cast<std::size_t>(y) * W + x] = s;
    }
  std::vector<double> out(src.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int t = -r; t <= r; ++t)
        s += k[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(reflect_index(y + t, H)) * W + x];
      out[static_cast<std::size_t>(y) * W + x] = s;
    }
  return Image::clamped(W, H, std::move(out));
}

inline int histogram_bin(double v, int bins) {
  return std::min(bins - 1, static_cast<int>(std::floor(v * bins)));
}

namespace detail {

// Tile i spans [floor(i*n/tiles), floor((i+1)*n/tiles)).
inline int tile_edge(int i, int n, int tiles) {
  return static_cast<int>(static_cast<long long>(i) * n / tiles);
}

// Bracketing tile indices and the weight of the second one for a pixel at
// coordinate p, given tile centers; clamped outside the first/last center.
struct Blend {
  int lo = 0;
  int hi = 0;
  double w = 0.0;
};

inline std::vector<Blend> blend_axis(int n, int tiles) {
  std::vector<double> centers(static_cast<std::size_t>(tiles));
  for (int i = 0; i < tiles; ++i) centers[static_cast<std::size_t>(i)] = 0.5 * (tile_edge(i, n, tiles) + tile_edge(i + 1, n, tiles) - 1);
  std::vector<Blend> out(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) {
    Blend b;
    if (tiles == 1 || p <= centers.front()) {
      b = {0, 0, 0.0};
    } else if (p >= centers.back()) {
      b = {tiles - 1, tiles - 1, 0.0};
    } else {
      int i = 0;
      while (centers[static_cast<std::size_t>(i + 1)] <= p) ++i;
      const double c0 = centers[static_cast<std::size_t>(i)];
      const double c1 = centers[static_cast<std::size_t>(i + 1)];
      b = {i, i + 1, (p - c0) / (c1 - c0)};
    }
    out[static_cast<std::size_t>(p)] = b;
  }
  return out;
}

}  // namespace detail

/// Contrast-limited adaptive histogram equalization. Per tile: histogram,
/// clip at clip_limit * tile_pixels, spread the clipped excess evenly over all
/// bins in one pass, map each bin to its cumulative fraction. Pixels blend the
/// mappings of the four nearest tile centers bilinearly.
inline Image clahe(const Image& image, const PreprocessConfig& cfg) {
  cfg.validate();
  const int W = image.width();
  const int H = image.height();
  const int R = cfg.clahe_tile_rows;
  const int C = cfg.clahe_tile_cols;
  const int bins = cfg.clahe_bins;
  require(H >= R && W >= C, "clahe: image smaller than tile grid");
  const auto src = image.pixels();

  std::vector<int> bin_of(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) bin_of[i] = histogram_bin(src[i], bins);

  std::vector<std::vector<double>> maps(static_cast<std::size_t>(R) * C);
  for (int tr = 0; tr < R; ++tr)
    for (int tc = 0; tc < C; ++tc) {
      const int y0 = detail::tile_edge(tr, H, R), y1 = detail::tile_edge(tr + 1, H, R);
      const int x0 = detail::tile_edge(tc, W, C), x1 = detail::tile_edge(tc + 1, W, C);
      std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) hist[static_cast<std::size_t>(bin_of[static_cast<std::size_t>(y) * W + x])] += 1.0;
      const double n = static_cast<double>(y1 - y0) * (x1 - x0);
      const double ceiling = cfg.clahe_clip_limit * n;
      double excess = 0.0;
      for (double& h : hist)
        if (h > ceiling) {
          excess += h - ceiling;
          h = ceiling;
        }
      const double quantum = excess / bins;
      auto& map = maps[static_cast<std::size_t>(tr) * C + tc];
      map.resize(static_cast<std::size_t>(bins));
      double cdf = 0.0;
      for (int b = 0; b < bins; ++b) {
        cdf += hist[static_cast<std::size_t>(b)] + quantum;
        map[static_cast<std::size_t>(b)] = std::min(1.0, cdf / n);
      }
    }

  const auto by = detail::blend_axis(H, R);
  const auto bx = detail::blend_axis(W, C);
  std::vector<double> out(src.size());
  for (int y = 0; y < H; ++y) {
    const auto& a = by[static_cast<std::size_t>(y)];
    for (int x = 0; x < W; ++x) {
      const auto& b = bx[static_cast<std::size_t>(x)];
      const auto bin = static_cast<std::size_t>(bin_of[static_cast<std::size_t>(y) * W + x]);
      auto m = [&](int tr, int tc) { return maps[static_cast<std::size_t>(tr) * C + tc][bin]; };
      const double top = (1.0 - b.w) * m(a.lo, b.lo) + b.w * m(a.lo, b.hi);
      const double bottom = (1.0 - b.w) * m(a.hi, b.lo) + b.w * m(a.hi, b.hi);
      out[static_cast<std::size_t>(y) * W + x] = (1.0 - a.w) * top + a.w * bottom;
    }
  }
  return Image::clamped(W, H, std::move(out));
}

/// Blur, then CLAHE.
inline Image preprocess(const Image& image, const PreprocessConfig& cfg) {
  cfg.validate();
  return clahe(gaussian_blur(image, cfg.gaussian_sigma_px), cfg);
}

}  // namespace fibersr
