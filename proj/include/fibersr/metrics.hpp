#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/image.hpp"

namespace fibersr {

/// PSNR in dB. Identical images give +infinity (serialized as "inf"), never a
/// large stand-in value.
inline double psnr(const Image& reference, const Image& test, double peak = 1.0) {
  require(reference.width() == test.width() && reference.height() == test.height(), "psnr: dimension mismatch");
  require(peak > 0.0, "psnr: peak must be > 0");
  const auto a = reference.pixels();
  const auto b = test.pixels();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    require(window >= 1 && window % 2 == 1, "SsimConfig: window must be odd and >= 1");
    require(sigma > 0.0 && k1 > 0.0 && k2 > 0.0 && dynamic_range > 0.0, "SsimConfig: parameters must be > 0");
  }
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_window_1d(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - c;
    w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= total;
  return w;
}

/// Mean SSIM over every window position that lies fully inside the frame.
inline double ssim(const Image& reference, const Image& test, const SsimConfig& cfg = {}) {
  cfg.validate();
  require(reference.width() == test.width() && reference.height() == test.height(), "ssim: dimension mismatch");
  const int k = cfg.window;
  const int W = reference.width();
  const int H = reference.height();
  require(W >= k && H >= k, "ssim: image smaller than window");
  const auto g = gaussian_window_1d(k, cfg.sigma);
  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  const auto x = reference.pixels();
  const auto y = test.pixels();
  const int ow = W - k + 1;
  const int oh = H - k + 1;

  // Horizontal pass over all rows for the five moment fields, then vertical.
  const std::size_t hsize = static_cast<std::size_t>(H) * ow;
  std::vector<double> hx(hsize), hy(hsize), hxx(hsize), hyy(hsize), hxy(hsize);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < ow; ++c) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      const std::size_t base = static_cast<std::size_t>(r) * W + c;
      for (int t = 0; t < k; ++t) {
        const double wt = g[static_cast<std::size_t>(t)];
        const double a = x[base + t];
        const double b = y[base + t];
        sx += wt * a;
        sy += wt * b;
        sxx += wt * a * a;
        syy += wt * b * b;
        sxy += wt * a * b;
      }
      const std::size_t o = static_cast<std::size_t>(r) * ow + c;
      hx[o] = sx;
      hy[o] = sy;
      hxx[o] = sxx;
      hyy[o] = syy;
      hxy[o] = sxy;
    }

  double total = 0.0;
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
      for (int t = 0; t < k; ++t) {
        const double wt = g[static_cast<std::size_t>(t)];
        const std::size_t o = static_cast<std::size_t>(r + t) * ow + c;
        mx += wt * hx[o];
        my += wt * hy[o];
        exx += wt * hxx[o];
        eyy += wt * hyy[o];
        exy += wt * hxy[o];
      }
      const double vx = exx - mx * mx;
      const double vy = eyy - my * my;
      const double cov = exy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / (static_cast<double>(ow) * oh);
}

}  // namespace fibersr
