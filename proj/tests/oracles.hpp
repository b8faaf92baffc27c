#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Everything here is written directly from the textbook definitions,
// deliberately slow and without sharing code paths with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "fibersr/degrade.hpp"
#include "fibersr/image.hpp"
#include "fibersr/srcnn.hpp"

namespace oracle {

using fibersr::Image;

inline Image random_image(int w, int h, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = u(g);
  return Image(w, h, std::move(v));
}

// --- degradation ---------------------------------------------------------------

struct BruteDegrade {
  std::vector<double> lr;
  std::vector<double> sparse;
};

// Rebuilds LR and sparse images from (m, s) and the logged per-tile offsets:
// for every pixel, finds its tile by integer division and averages the
// tile's (clamped) ROI from scratch.
inline BruteDegrade brute_degrade(const Image& img, int m, int s, const std::vector<int>& dy,
                                  const std::vector<int>& dx) {
  const int W = img.width(), H = img.height();
  const int cols = W / s, rows = H / s;
  BruteDegrade out;
  out.lr.resize(static_cast<std::size_t>(W) * H);
  out.sparse.assign(static_cast<std::size_t>(W) * H, 0.0);
  auto roi = [&](int tr, int tc, int& r0, int& c0) {
    const int t = tr * cols + tc;
    r0 = tr * s + (s - m) / 2 + dy[static_cast<std::size_t>(t)];
    c0 = tc * s + (s - m) / 2 + dx[static_cast<std::size_t>(t)];
    if (r0 < 0) r0 = 0;
    if (c0 < 0) c0 = 0;
    if (r0 > H - m) r0 = H - m;
    if (c0 > W - m) c0 = W - m;
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int tr = y / s, tc = x / s;
      if (tr >= rows || tc >= cols) {
        out.lr[static_cast<std::size_t>(y) * W + x] = img(x, y);
        continue;
      }
      int r0, c0;
      roi(tr, tc, r0, c0);
      double sum = 0.0;
      for (int yy = r0; yy < r0 + m; ++yy)
        for (int xx = c0; xx < c0 + m; ++xx) sum += img(xx, yy);
      out.lr[static_cast<std::size_t>(y) * W + x] = sum / (m * m);
    }
  for (int tr = 0; tr < rows; ++tr)
    for (int tc = 0; tc < cols; ++tc) {
      int r0, c0;
      roi(tr, tc, r0, c0);
      for (int yy = r0; yy < r0 + m; ++yy)
        for (int xx = c0; xx < c0 + m; ++xx) out.sparse[static_cast<std::size_t>(yy) * W + xx] = img(xx, yy);
    }
  return out;
}

// --- preprocessing -------------------------------------------------------------

inline int mirror(int i, int n) {
  // Unfold repeatedly: ... 1 0 | 0 1 ... n-1 | n-1 ...
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Direct 2-D convolution with the outer product of 1-D Gaussian weights.
inline std::vector<double> gaussian_2d(const Image& img, double sigma) {
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  double total = 0.0;
  std::vector<double> w2((2 * r + 1) * (2 * r + 1));
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b) {
      const double v = std::exp(-(a * a + b * b) / (2.0 * sigma * sigma));
      w2[(a + r) * (2 * r + 1) + (b + r)] = v;
      total += v;
    }
  const int W = img.width(), H = img.height();
  std::vector<double> out(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int a = -r; a <= r; ++a)
        for (int b = -r; b <= r; ++b) s += w2[(a + r) * (2 * r + 1) + (b + r)] * img(mirror(x + b, W), mirror(y + a, H));
      out[static_cast<std::size_t>(y) * W + x] = std::clamp(s / total, 0.0, 1.0);
    }
  return out;
}

// Global histogram equalization: each pixel maps to the fraction of pixels
// whose bin is at or below its own bin.
inline std::vector<double> global_equalization(const Image& img, int bins) {
  auto bin = [&](double v) { return std::min(bins - 1, static_cast<int>(v * bins)); };
  const auto px = img.pixels();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    std::size_t below = 0;
    for (std::size_t j = 0; j < px.size(); ++j)
      if (bin(px[j]) <= bin(px[i])) ++below;
    out[i] = static_cast<double>(below) / static_cast<double>(px.size());
  }
  return out;
}

// --- metrics -------------------------------------------------------------------

// Per-window SSIM with an explicit 2-D Gaussian window (11 x 11, sigma 1.5).
inline double ssim_sliding(const Image& a, const Image& b) {
  const int k = 11;
  const double sigma = 1.5;
  std::vector<double> w(k * k);
  double total = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double di = i - 5, dj = j - 5;
      w[i * k + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      total += w[i * k + j];
    }
  for (auto& v : w) v /= total;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0.0;
  int n = 0;
  for (int y = 0; y + k <= a.height(); ++y)
    for (int x = 0; x + k <= a.width(); ++x) {
      double mx = 0, my = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          mx += w[i * k + j] * a(x + j, y + i);
          my += w[i * k + j] * b(x + j, y + i);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double dx = a(x + j, y + i) - mx, dy = b(x + j, y + i) - my;
          vx += w[i * k + j] * dx * dx;
          vy += w[i * k + j] * dy * dy;
          cxy += w[i * k + j] * dx * dy;
        }
      sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++n;
    }
  return sum / n;
}

// --- network -------------------------------------------------------------------

// The network oracle evaluates in extended precision so that central
// differences of the loss are not swamped by double rounding noise when a
// gradient is tiny. Parameters themselves stay double.
using Real = long double;

struct Plane {
  int c = 0, h = 0, w = 0;
  std::vector<Real> v;  // (c, h, w)
  Real& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  Real at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

// Six nested loops, zero same-padding, cross-correlation.
inline Plane conv(const Plane& in, const fibersr::ConvLayer<double>& l) {
  Plane out{l.out_channels, in.h, in.w, std::vector<Real>(static_cast<std::size_t>(l.out_channels) * in.h * in.w)};
  const int r = l.kernel / 2;
  for (int o = 0; o < l.out_channels; ++o)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        Real s = l.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < l.in_channels; ++i)
          for (int ky = 0; ky < l.kernel; ++ky)
            for (int kx = 0; kx < l.kernel; ++kx) {
              const int yy = y + ky - r, xx = x + kx - r;
              if (yy < 0 || xx < 0 || yy >= in.h || xx >= in.w) continue;
              s += static_cast<Real>(l.weight[((static_cast<std::size_t>(o) * l.in_channels + i) * l.kernel + ky) * l.kernel + kx]) *
                   in.at(i, yy, xx);
            }
        out.at(o, y, x) = s;
      }
  return out;
}

inline Real lrelu(Real v, Real slope) { return v >= 0 ? v : slope * v; }

struct ForwardTrace {
  Plane z1, z2, out;  // pre-activations of layers 1 and 2, final output
};

inline ForwardTrace forward(const fibersr::SrcnnModel<double>& m, const Plane& x) {
  ForwardTrace t;
  t.z1 = conv(x, m.layer(0));
  Plane a1 = t.z1;
  for (auto& v : a1.v) v = lrelu(v, m.slope());
  t.z2 = conv(a1, m.layer(1));
  Plane a2 = t.z2;
  for (auto& v : a2.v) v = lrelu(v, m.slope());
  t.out = conv(a2, m.layer(2));
  return t;
}

inline Real mse(const std::vector<Real>& a, const std::vector<double>& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<Real>(a.size());
}

// Smallest |pre-activation| of the two hidden layers; central differences
// are only meaningful when no unit sits near the LReLU kink.
inline double kink_margin(const ForwardTrace& t) {
  double m = INFINITY;
  for (Real v : t.z1.v) m = std::min(m, static_cast<double>(std::abs(v)));
  for (Real v : t.z2.v) m = std::min(m, static_cast<double>(std::abs(v)));
  return m;
}

// Central finite differences of the MSE loss for every parameter, in the
// library's group order (w1, b1, w2, b2, w3, b3).
inline std::vector<std::vector<double>> finite_difference_gradients(fibersr::SrcnnModel<double> m, const Plane& x,
                                                                    const std::vector<double>& target, double h) {
  std::vector<std::vector<double>> out;
  auto params = m.parameters();
  for (auto group : params) {
    std::vector<double> g(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const double orig = group[i];
      group[i] = orig + h;
      const double up = orig + h, down = orig - h;
      const Real lp = mse(forward(m, x).out.v, target);
      group[i] = down;
      const Real lm = mse(forward(m, x).out.v, target);
      group[i] = orig;
      // Divide by the step actually taken after rounding of orig +/- h.
      g[i] = static_cast<double>((lp - lm) / (static_cast<Real>(up) - static_cast<Real>(down)));
    }
    out.push_back(std::move(g));
  }
  return out;
}

// --- optimizer -----------------------------------------------------------------

// Adam as published: m_t, v_t, bias-corrected estimates, scalar parameter.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mh = m / (1.0 - std::pow(b1, t));
    const double vh = v / (1.0 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

// --- statistics ----------------------------------------------------------------

// Textbook pooled two-sample t with the p-value from the Student-t
// distribution object.
inline double pooled_t_p(const std::vector<double>& a, const std::vector<double>& b, double* t_out = nullptr) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  auto ss = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
  };
  const double na = a.size(), nb = b.size();
  const double sp2 = (ss(a) + ss(b)) / (na + nb - 2);
  const double t = (mean(a) - mean(b)) / std::sqrt(sp2 * (1 / na + 1 / nb));
  if (t_out) *t_out = t;
  boost::math::students_t dist(na + nb - 2);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// Exact two-sided permutation test on the difference of means over every
// split of the pooled values into groups of the original sizes.
inline double permutation_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  const std::size_t n = all.size(), na = a.size();
  auto diff = [&](const std::vector<bool>& in_a) {
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < n; ++i) (in_a[i] ? sa : sb) += all[i];
    return sa / na - sb / (n - na);
  };
  std::vector<bool> base(n, false);
  for (std::size_t i = 0; i < na; ++i) base[i] = true;
  const double observed = std::abs(diff(base));
  std::vector<bool> sel(n, false);
  std::fill(sel.end() - static_cast<std::ptrdiff_t>(na), sel.end(), true);
  std::size_t total = 0, extreme = 0;
  do {
    ++total;
    if (std::abs(diff(sel)) >= observed - 1e-12) ++extreme;
  } while (std::next_permutation(sel.begin(), sel.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// Monte-Carlo power of the TOST procedure for two binomial arms of size n
// with true proportion p in both: each trial estimates both proportions,
// uses the sample-based standard error, and declares equivalence when both
// one-sided z-tests reject at level alpha.
inline double tost_power_mc(int n, double alpha, double limit, double p, int trials, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::binomial_distribution<int> bin(n, p);
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha);
  int ok = 0;
  for (int t = 0; t < trials; ++t) {
    const double p1 = static_cast<double>(bin(g)) / n;
    const double p2 = static_cast<double>(bin(g)) / n;
    const double d = p1 - p2;
    const double se = std::sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / n);
    if (se == 0.0) {
      ok += std::abs(d) < limit;
      continue;
    }
    if ((d + limit) / se > z && (limit - d) / se > z) ++ok;
  }
  return static_cast<double>(ok) / trials;
}

// Smallest n in [lo, hi] whose simulated power reaches `power`, or -1.
inline int tost_sample_size_mc(double power, double alpha, double limit, double p, int lo, int hi, int trials) {
  for (int n = lo; n <= hi; ++n)
    if (tost_power_mc(n, alpha, limit, p, trials, 1000003ULL * n + 17) >= power) return n;
  return -1;
}

}  // namespace oracle
