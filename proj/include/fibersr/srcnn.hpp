#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/gemm.hpp"
#include "fibersr/image.hpp"
#include "fibersr/io.hpp"
#include "fibersr/parallel.hpp"
#include "fibersr/random.hpp"

namespace fibersr {

/// Dense (batch, channels, height, width) tensor, row-major.
template <class T>
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int batch, int channels, int height, int width, T fill = T(0))
      : n_(batch), c_(channels), h_(height), w_(width) {
    require(batch >= 1 && channels >= 1 && height >= 1 && width >= 1, "Tensor4: all dims must be >= 1");
    data_.assign(static_cast<std::size_t>(batch) * channels * height * width, fill);
  }

  int batch() const { return n_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  std::size_t item_size() const { return plane() * c_; }
  std::size_t size() const { return data_.size(); }
  bool same_dims(const Tensor4& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  T* item(int n) { return data_.data() + static_cast<std::size_t>(n) * item_size(); }
  const T* item(int n) const { return data_.data() + static_cast<std::size_t>(n) * item_size(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
  }

  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

/// Weights are laid out (out_channels, in_channels, k, k).
template <class T>
struct ConvLayer {
  int out_channels = 0;
  int in_channels = 0;
  int kernel = 0;
  std::vector<T> weight;
  std::vector<T> bias;

  ConvLayer() = default;
  ConvLayer(int out, int in, int k) : out_channels(out), in_channels(in), kernel(k) {
    require(out >= 1 && in >= 1, "ConvLayer: channel counts must be >= 1");
    require(k >= 1 && k % 2 == 1, "ConvLayer: kernel size must be odd");
    weight.assign(static_cast<std::size_t>(out) * in * k * k, T(0));
    bias.assign(static_cast<std::size_t>(out), T(0));
  }

  int taps() const { return in_channels * kernel * kernel; }
  T& w(int o, int i, int ky, int kx) { return weight[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx]; }
  T w(int o, int i, int ky, int kx) const {
    return weight[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx];
  }
};

/// Layer whose same-padded correlation computes the input gradient of
/// `layer`: channels swapped, kernel rotated by 180 degrees, zero bias.
template <class T>
ConvLayer<T> transpose_flip(const ConvLayer<T>& layer) {
  ConvLayer<T> t(layer.in_channels, layer.out_channels, layer.kernel);
  const int k = layer.kernel;
  for (int o = 0; o < layer.out_channels; ++o)
    for (int i = 0; i < layer.in_channels; ++i)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) t.w(i, o, k - 1 - ky, k - 1 - kx) = layer.w(o, i, ky, kx);
  return t;
}

namespace detail {

inline int pixel_block(int taps) { return std::max(64, (65536 / std::max(taps, 1)) & ~31); }

// col[t][j] = in[ic][y+ky-r][x+kx-r] for pixel p0+j, zero outside the frame.
template <class T>
void im2col_block(const T* in, int height, int width, int channels, int k, int p0, int count, T* col) {
  const int r = k / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  int t = 0;
  for (int ic = 0; ic < channels; ++ic) {
    const T* src = in + ic * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++t) {
        T* dst = col + static_cast<std::size_t>(t) * count;
        const int shift = kx - r;
        int j = 0;
        while (j < count) {
          const int p = p0 + j;
          const int y = p / width;
          const int x = p % width;
          const int run = std::min(count - j, width - x);
          const int yy = y + ky - r;
          T* d = dst + j;
          if (yy < 0 || yy >= height) {
            std::fill_n(d, run, T(0));
          } else {
            // valid q: 0 <= x + q + shift < width
            const int lo = std::clamp(-shift - x, 0, run);
            const int hi = std::clamp(width - shift - x, lo, run);
            std::fill_n(d, lo, T(0));
            std::copy_n(src + static_cast<std::size_t>(yy) * width + x + lo + shift, hi - lo, d + lo);
            std::fill_n(d + hi, run - hi, T(0));
          }
          j += run;
        }
      }
    }
  }
}

// Copy of a (channels, H, W) block with an r-pixel zero border.
template <class T>
const T* zero_padded(const T* in, int height, int width, int channels, int r) {
  thread_local std::vector<T> buf;
  const int pw = width + 2 * r;
  const int ph = height + 2 * r;
  buf.assign(static_cast<std::size_t>(channels) * ph * pw, T(0));
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(in + (static_cast<std::size_t>(c) * height + y) * width, width,
                  buf.data() + (static_cast<std::size_t>(c) * ph + y + r) * pw + r);
  return buf.data();
}

// Single output channel, direct form over a zero-padded input. Every pixel
// sums its taps in (ic, ky, kx) order, like the im2col path; padding terms
// contribute exact zeros.
template <class T>
void conv_single_output(const T* in, int height, int width, const ConvLayer<T>& layer, T* out) {
  constexpr int L = 16;
  using V [[gnu::vector_size(L * sizeof(T))]] = T;
  const int k = layer.kernel;
  const int r = k / 2;
  const T* pad = zero_padded(in, height, width, layer.in_channels, r);
  const int pw = width + 2 * r;
  const std::size_t pplane = static_cast<std::size_t>(height + 2 * r) * pw;
  for (int y = 0; y < height; ++y) {
    T* o = out + static_cast<std::size_t>(y) * width;
    int x0 = 0;
    for (; x0 + L <= width; x0 += L) {
      V acc = {};
      for (int ic = 0; ic < layer.in_channels; ++ic)
        for (int ky = 0; ky < k; ++ky) {
          const T* row = pad + ic * pplane + static_cast<std::size_t>(y + ky) * pw + x0;
          const T* wk = &layer.weight[(static_cast<std::size_t>(ic) * k + ky) * k];
          for (int kx = 0; kx < k; ++kx) {
            V v;
            std::memcpy(&v, row + kx, sizeof v);
            acc += wk[kx] * v;
          }
        }
      std::memcpy(o + x0, &acc, sizeof acc);
    }
    for (int x = x0; x < width; ++x) {
      T acc = T(0);
      for (int ic = 0; ic < layer.in_channels; ++ic)
        for (int ky = 0; ky < k; ++ky) {
          const T* row = pad + ic * pplane + static_cast<std::size_t>(y + ky) * pw + x;
          for (int kx = 0; kx < k; ++kx) acc += layer.w(0, ic, ky, kx) * row[kx];
        }
      o[x] = acc;
    }
  }
}

// grad_w[ic][ky][kx] += sum_p grad_out[p] * padded_in[ic][p + (ky, kx)] for
// a single output channel. Full 16-wide column chunks reduce into vector
// lanes, leftover columns into a scalar; both are folded in a fixed order.
template <class T>
void single_output_weight_grad(const T* in, int height, int width, const ConvLayer<T>& layer, const T* grad_out,
                               T* grad_w) {
  constexpr int L = 16;
  using V [[gnu::vector_size(L * sizeof(T))]] = T;
  const int k = layer.kernel;
  const int r = k / 2;
  const T* pad = zero_padded(in, height, width, layer.in_channels, r);
  const int pw = width + 2 * r;
  const std::size_t pplane = static_cast<std::size_t>(height + 2 * r) * pw;
  const int vmain = width / L * L;
  int t = 0;
  for (int ic = 0; ic < layer.in_channels; ++ic) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++t) {
        V acc = {};
        T tail = T(0);
        for (int y = 0; y < height; ++y) {
          const T* d = grad_out + static_cast<std::size_t>(y) * width;
          const T* src = pad + ic * pplane + static_cast<std::size_t>(y + ky) * pw + kx;
          for (int x = 0; x < vmain; x += L) {
            V dv, sv;
            std::memcpy(&dv, d + x, sizeof dv);
            std::memcpy(&sv, src + x, sizeof sv);
            acc += dv * sv;
          }
          for (int x = vmain; x < width; ++x) tail += d[x] * src[x];
        }
        T sum = T(0);
        for (int l = 0; l < L; ++l) sum += acc[l];
        grad_w[t] += sum + tail;
      }
    }
  }
}

// Same-padded cross-correlation of one batch item: out is (out_channels, H*W).
template <class T>
void conv_item(const T* in, int height, int width, const ConvLayer<T>& layer, T* out) {
  const int pixels = height * width;
  const int taps = layer.taps();
  if (layer.kernel == 1) {
    kernels::gemm<T>(layer.out_channels, pixels, layer.in_channels, layer.weight.data(), layer.in_channels, in, pixels,
                     false, out, pixels, false);
  } else if (layer.out_channels == 1) {
    conv_single_output(in, height, width, layer, out);
  } else {
    thread_local std::vector<T> col;
    const int block = pixel_block(taps);
    col.resize(static_cast<std::size_t>(taps) * block);
    for (int p0 = 0; p0 < pixels; p0 += block) {
      const int count = std::min(block, pixels - p0);
      im2col_block(in, height, width, layer.in_channels, layer.kernel, p0, count, col.data());
      kernels::gemm<T>(layer.out_channels, count, taps, layer.weight.data(), taps, col.data(), count, false, out + p0,
                       pixels, false);
    }
  }
  for (int o = 0; o < layer.out_channels; ++o) {
    const T b = layer.bias[o];
    T* row = out + static_cast<std::size_t>(o) * pixels;
    for (int p = 0; p < pixels; ++p) row[p] += b;
  }
}

// grad_w[o][t] += sum_p grad_out[o][p] * col[t][p]; grad_b[o] += sum_p grad_out[o][p].
template <class T>
void accumulate_layer_grad(const T* in, int height, int width, const ConvLayer<T>& layer, const T* grad_out, T* grad_w,
                           T* grad_b) {
  const int pixels = height * width;
  const int taps = layer.taps();
  if (layer.kernel == 1) {
    kernels::gemm<T>(layer.out_channels, taps, pixels, grad_out, pixels, in, pixels, true, grad_w, taps, true);
  } else if (layer.out_channels == 1) {
    single_output_weight_grad(in, height, width, layer, grad_out, grad_w);
  } else {
    thread_local std::vector<T> col;
    const int block = pixel_block(taps);
    col.resize(static_cast<std::size_t>(taps) * block);
    for (int p0 = 0; p0 < pixels; p0 += block) {
      const int count = std::min(block, pixels - p0);
      im2col_block(in, height, width, layer.in_channels, layer.kernel, p0, count, col.data());
      kernels::gemm<T>(layer.out_channels, taps, count, grad_out + p0, pixels, col.data(), count, true, grad_w, taps,
                       true);
    }
  }
  for (int o = 0; o < layer.out_channels; ++o) {
    const T* row = grad_out + static_cast<std::size_t>(o) * pixels;
    T s = T(0);
    for (int p = 0; p < pixels; ++p) s += row[p];
    grad_b[o] += s;
  }
}

template <class T>
void lrelu_inplace(std::span<T> v, T slope) {
  T* p = v.data();
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = p[i];
    p[i] = std::max(x, T(0)) + slope * std::min(x, T(0));
  }
}

}  // namespace detail

template <class T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvLayer<T>& layer) {
  require(input.channels() == layer.in_channels, "conv2d: input channels do not match layer");
  Tensor4<T> out(input.batch(), layer.out_channels, input.height(), input.width());
  for (int n = 0; n < input.batch(); ++n) detail::conv_item(input.item(n), input.height(), input.width(), layer, out.item(n));
  return out;
}

template <class T>
Tensor4<T> lrelu(Tensor4<T> x, T slope) {
  detail::lrelu_inplace(x.values(), slope);
  return x;
}

/// Channel and kernel geometry of the three-layer network. The defaults are
/// the published configuration; smaller instances serve as micro-models.
struct Architecture {
  int features = 64;
  int mapping = 32;
  int k1 = 9;
  int k2 = 1;
  int k3 = 5;

  /// Chebyshev radius of the input region that influences one output pixel.
  int receptive_radius() const { return k1 / 2 + k2 / 2 + k3 / 2; }
  bool operator==(const Architecture&) const = default;
};

inline constexpr std::size_t kParamGroups = 6;

template <class T>
using ParamArrays = std::array<std::vector<T>, kParamGroups>;

/// conv(1->features, k1) -> LReLU -> conv(features->mapping, k2) -> LReLU ->
/// conv(mapping->1, k3). Parameter groups are ordered w1, b1, w2, b2, w3, b3.
template <class T>
class SrcnnModel {
 public:
  SrcnnModel() : SrcnnModel(Architecture{}, 0.01) {}

  SrcnnModel(const Architecture& arch, double lrelu_slope)
      : layers_{ConvLayer<T>(arch.features, 1, arch.k1), ConvLayer<T>(arch.mapping, arch.features, arch.k2),
                ConvLayer<T>(1, arch.mapping, arch.k3)},
        slope_(static_cast<T>(lrelu_slope)) {
    check_slope(lrelu_slope);
  }

  SrcnnModel(std::array<ConvLayer<T>, 3> layers, double lrelu_slope)
      : layers_(std::move(layers)), slope_(static_cast<T>(lrelu_slope)) {
    check_slope(lrelu_slope);
    require(layers_[0].in_channels == 1 && layers_[2].out_channels == 1, "SrcnnModel: network must map 1 channel to 1");
    require(layers_[0].out_channels == layers_[1].in_channels && layers_[1].out_channels == layers_[2].in_channels,
            "SrcnnModel: channel chain mismatch");
    for (const auto& l : layers_) {
      require(l.weight.size() == static_cast<std::size_t>(l.out_channels) * l.taps(), "SrcnnModel: weight size mismatch");
      require(l.bias.size() == static_cast<std::size_t>(l.out_channels), "SrcnnModel: bias size mismatch");
    }
  }

  /// Zero-mean Gaussian weights with the given standard deviation, zero biases.
  static SrcnnModel initialized(std::uint64_t seed, double init_std = 1e-3, double lrelu_slope = 0.01,
                                const Architecture& arch = {}) {
    SrcnnModel m(arch, lrelu_slope);
    Rng rng(seed);
    for (auto& l : m.layers_)
      for (T& w : l.weight) w = static_cast<T>(init_std * rng.normal());
    return m;
  }

  const ConvLayer<T>& layer(int i) const { return layers_[static_cast<std::size_t>(i)]; }
  ConvLayer<T>& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }
  const std::array<ConvLayer<T>, 3>& layers() const { return layers_; }
  T slope() const { return slope_; }

  Architecture architecture() const {
    return {layers_[0].out_channels, layers_[1].out_channels, layers_[0].kernel, layers_[1].kernel, layers_[2].kernel};
  }

  std::array<std::span<T>, kParamGroups> parameters() {
    return {std::span<T>(layers_[0].weight), std::span<T>(layers_[0].bias), std::span<T>(layers_[1].weight),
            std::span<T>(layers_[1].bias),   std::span<T>(layers_[2].weight), std::span<T>(layers_[2].bias)};
  }
  std::array<std::span<const T>, kParamGroups> parameters() const {
    return {std::span<const T>(layers_[0].weight), std::span<const T>(layers_[0].bias),
            std::span<const T>(layers_[1].weight), std::span<const T>(layers_[1].bias),
            std::span<const T>(layers_[2].weight), std::span<const T>(layers_[2].bias)};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto s : parameters()) n += s.size();
    return n;
  }

  template <class U>
  SrcnnModel<U> cast() const {
    std::array<ConvLayer<U>, 3> out;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& l = layers_[i];
      out[i] = ConvLayer<U>(l.out_channels, l.in_channels, l.kernel);
      std::transform(l.weight.begin(), l.weight.end(), out[i].weight.begin(), [](T v) { return static_cast<U>(v); });
      std::transform(l.bias.begin(), l.bias.end(), out[i].bias.begin(), [](T v) { return static_cast<U>(v); });
    }
    return SrcnnModel<U>(std::move(out), static_cast<double>(slope_));
  }

  bool operator==(const SrcnnModel& o) const {
    if (slope_ != o.slope_) return false;
    for (std::size_t i = 0; i < 3; ++i)
      if (layers_[i].weight != o.layers_[i].weight || layers_[i].bias != o.layers_[i].bias ||
          layers_[i].kernel != o.layers_[i].kernel)
        return false;
    return true;
  }

 private:
  static void check_slope(double s) { require(s > 0.0 && s < 1.0, "SrcnnModel: LReLU slope must lie in (0,1)"); }

  std::array<ConvLayer<T>, 3> layers_;
  T slope_;
};

namespace detail {

template <class T>
struct ItemActivations {
  std::vector<T> a1, a2, out;
};

// Per-thread scratch reused across calls; avoids faulting in fresh pages for
// every batch item.
template <class T>
struct Workspace {
  ItemActivations<T> act;
  std::vector<T> d3, d2, d1;

  static Workspace& local() {
    thread_local Workspace ws;
    return ws;
  }
};

template <class T>
void forward_item(const SrcnnModel<T>& model, const T* in, int height, int width, ItemActivations<T>& act) {
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  act.a1.resize(pixels * model.layer(0).out_channels);
  act.a2.resize(pixels * model.layer(1).out_channels);
  act.out.resize(pixels);
  conv_item(in, height, width, model.layer(0), act.a1.data());
  lrelu_inplace(std::span<T>(act.a1), model.slope());
  conv_item(act.a1.data(), height, width, model.layer(1), act.a2.data());
  lrelu_inplace(std::span<T>(act.a2), model.slope());
  conv_item(act.a2.data(), height, width, model.layer(2), act.out.data());
}

// grad <- grad * d lrelu, using the activation sign (a >= 0 iff z >= 0).
template <class T>
void lrelu_backward(std::span<T> grad, std::span<const T> activation, T slope) {
  T* g = grad.data();
  const T* a = activation.data();
  const std::size_t n = grad.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T factor = a[i] < T(0) ? slope : T(1);
    g[i] *= factor;
  }
}

}  // namespace detail

/// Output is linear (not clamped); dims equal the input dims.
template <class T>
Tensor4<T> forward(const SrcnnModel<T>& model, const Tensor4<T>& lr_batch, int threads = 1) {
  require(lr_batch.channels() == 1, "forward: input must have a single channel");
  Tensor4<T> out(lr_batch.batch(), 1, lr_batch.height(), lr_batch.width());
  parallel_for(static_cast<std::size_t>(lr_batch.batch()), threads, [&](std::size_t n) {
    auto& act = detail::Workspace<T>::local().act;
    detail::forward_item(model, lr_batch.item(static_cast<int>(n)), lr_batch.height(), lr_batch.width(), act);
    std::copy(act.out.begin(), act.out.end(), out.item(static_cast<int>(n)));
  });
  return out;
}

/// Mean over all elements of (pred - target)^2, accumulated in double.
template <class T>
double mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
  require(pred.same_dims(target), "mse_loss: dimension mismatch");
  double s = 0.0;
  const auto p = pred.values();
  const auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    s += d * d;
  }
  return s / static_cast<double>(p.size());
}

template <class T>
struct Gradients {
  ParamArrays<T> groups;

  static Gradients zeros_like(const SrcnnModel<T>& model) {
    Gradients g;
    const auto p = model.parameters();
    for (std::size_t i = 0; i < kParamGroups; ++i) g.groups[i].assign(p[i].size(), T(0));
    return g;
  }

  std::array<std::span<const T>, kParamGroups> views() const {
    std::array<std::span<const T>, kParamGroups> v;
    for (std::size_t i = 0; i < kParamGroups; ++i) v[i] = groups[i];
    return v;
  }
};

template <class T>
struct LossAndGradients {
  double loss = 0.0;
  Gradients<T> gradients;
};

/// Exact gradients of mse_loss(forward(model, lr_batch), target) with respect
/// to every kernel and bias. Per-item contributions are reduced in batch
/// order, so the result does not depend on `threads`.
template <class T>
LossAndGradients<T> backward(const SrcnnModel<T>& model, const Tensor4<T>& lr_batch, const Tensor4<T>& target,
                             int threads = 1) {
  require(lr_batch.channels() == 1, "backward: input must have a single channel");
  require(lr_batch.same_dims(target), "backward: input/target dimension mismatch");
  const int batch = lr_batch.batch();
  const int height = lr_batch.height();
  const int width = lr_batch.width();
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  const T scale = static_cast<T>(2.0 / static_cast<double>(target.size()));
  const ConvLayer<T> back3 = transpose_flip(model.layer(2));
  const ConvLayer<T> back2 = transpose_flip(model.layer(1));

  std::vector<Gradients<T>> per_item(static_cast<std::size_t>(batch));
  std::vector<double> sq(static_cast<std::size_t>(batch), 0.0);

  parallel_for(static_cast<std::size_t>(batch), threads, [&](std::size_t n) {
    const int ni = static_cast<int>(n);
    Gradients<T>& g = per_item[n];
    g = Gradients<T>::zeros_like(model);
    auto& ws = detail::Workspace<T>::local();
    auto& act = ws.act;
    const T* x = lr_batch.item(ni);
    detail::forward_item(model, x, height, width, act);

    auto& d3 = ws.d3;
    d3.resize(pixels);
    const T* t = target.item(ni);
    double s = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const T r = act.out[p] - t[p];
      s += static_cast<double>(r) * static_cast<double>(r);
      d3[p] = scale * r;
    }
    sq[n] = s;

    detail::accumulate_layer_grad(act.a2.data(), height, width, model.layer(2), d3.data(), g.groups[4].data(),
                                  g.groups[5].data());
    auto& d2 = ws.d2;
    d2.resize(pixels * model.layer(1).out_channels);
    detail::conv_item(d3.data(), height, width, back3, d2.data());
    detail::lrelu_backward(std::span<T>(d2), std::span<const T>(act.a2), model.slope());

    detail::accumulate_layer_grad(act.a1.data(), height, width, model.layer(1), d2.data(), g.groups[2].data(),
                                  g.groups[3].data());
    auto& d1 = ws.d1;
    d1.resize(pixels * model.layer(0).out_channels);
    detail::conv_item(d2.data(), height, width, back2, d1.data());
    detail::lrelu_backward(std::span<T>(d1), std::span<const T>(act.a1), model.slope());

    detail::accumulate_layer_grad(x, height, width, model.layer(0), d1.data(), g.groups[0].data(), g.groups[1].data());
  });

  LossAndGradients<T> result;
  result.gradients = std::move(per_item[0]);
  double total = sq[0];
  for (int n = 1; n < batch; ++n) {
    for (std::size_t i = 0; i < kParamGroups; ++i) {
      auto& acc = result.gradients.groups[i];
      const auto& add = per_item[static_cast<std::size_t>(n)].groups[i];
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += add[j];
    }
    total += sq[static_cast<std::size_t>(n)];
  }
  result.loss = total / static_cast<double>(target.size());
  return result;
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::int64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update over every parameter group. Moments are
/// zero-initialized on first use.
template <class T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient group count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), T(0));
      state.second_moment.emplace_back(p.size(), T(0));
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: state shape mismatch");
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t gi = 0; gi < params.size(); ++gi) {
    auto p = params[gi];
    auto g = grads[gi];
    auto& m = state.first_moment[gi];
    auto& v = state.second_moment[gi];
    require(p.size() == g.size() && p.size() == m.size(), "adam_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] * c1;
      const T v_hat = v[i] * c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <class T>
void adam_step(SrcnnModel<T>& model, const Gradients<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  const auto params = model.parameters();
  const auto views = grads.views();
  adam_step<T>(std::span<const std::span<T>>(params), std::span<const std::span<const T>>(views), state, cfg);
}

/// Unclamped full-frame network output. Large frames are processed in
/// horizontal strips with a halo wider than the receptive radius, which
/// reproduces the single-pass result exactly.
template <class T>
std::vector<double> predict(const SrcnnModel<T>& model, const Image& lr, int threads = 1) {
  const int width = lr.width();
  const int height = lr.height();
  const int halo = model.architecture().receptive_radius() + 2;
  const int strip = std::max(16, 65536 / width);
  const int strips = (height + strip - 1) / strip;
  std::vector<double> out(lr.size());
  parallel_for(static_cast<std::size_t>(strips), threads, [&](std::size_t si) {
    const int y0 = static_cast<int>(si) * strip;
    const int y1 = std::min(height, y0 + strip);
    const int top = std::max(0, y0 - halo);
    const int bottom = std::min(height, y1 + halo);
    const int rows = bottom - top;
    std::vector<T> in(static_cast<std::size_t>(rows) * width);
    for (int y = top; y < bottom; ++y) {
      const auto r = lr.row(y);
      std::transform(r.begin(), r.end(), in.begin() + static_cast<std::ptrdiff_t>(y - top) * width,
                     [](double v) { return static_cast<T>(v); });
    }
    auto& act = detail::Workspace<T>::local().act;
    detail::forward_item(model, in.data(), rows, width, act);
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < width; ++x)
        out[static_cast<std::size_t>(y) * width + x] =
            static_cast<double>(act.out[static_cast<std::size_t>(y - top) * width + x]);
  });
  return out;
}

/// Full-frame inference, clamped into [0,1] (NaN maps to 0).
template <class T>
Image infer(const SrcnnModel<T>& model, const Image& lr, int threads = 1) {
  return Image::clamped(lr.width(), lr.height(), predict(model, lr, threads));
}

// Weights file: "SRCW", u32 version, f32 LReLU slope, then for each of the
// three layers u32 out, in, k followed by the kernel and the bias as f32.
// All fields little-endian.
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

struct ByteReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (bytes.size() - pos < 4) throw Error("weights: truncated payload");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace detail

template <class T>
Bytes save_weights(const SrcnnModel<T>& model) {
  Bytes out{'S', 'R', 'C', 'W'};
  detail::put_u32(out, kWeightsVersion);
  detail::put_f32(out, static_cast<float>(model.slope()));
  for (const auto& l : model.layers()) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.out_channels));
    detail::put_u32(out, static_cast<std::uint32_t>(l.in_channels));
    detail::put_u32(out, static_cast<std::uint32_t>(l.kernel));
    for (T w : l.weight) detail::put_f32(out, static_cast<float>(w));
    for (T b : l.bias) detail::put_f32(out, static_cast<float>(b));
  }
  return out;
}

template <class T = float>
SrcnnModel<T> load_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SRCW", 4) != 0) throw Error("weights: bad magic");
  detail::ByteReader in{bytes, 4};
  const std::uint32_t version = in.u32();
  if (version != kWeightsVersion) throw Error("weights: unsupported version " + std::to_string(version));
  const float slope = in.f32();
  std::array<ConvLayer<T>, 3> layers;
  for (auto& l : layers) {
    const std::uint32_t out = in.u32();
    const std::uint32_t inc = in.u32();
    const std::uint32_t k = in.u32();
    if (out == 0 || inc == 0 || out > 4096 || inc > 4096 || k > 63 || k % 2 == 0)
      throw Error("weights: implausible layer geometry");
    l = ConvLayer<T>(static_cast<int>(out), static_cast<int>(inc), static_cast<int>(k));
    if ((bytes.size() - in.pos) / 4 < l.weight.size() + l.bias.size()) throw Error("weights: truncated payload");
    for (T& w : l.weight) w = static_cast<T>(in.f32());
    for (T& b : l.bias) b = static_cast<T>(in.f32());
  }
  if (in.pos != bytes.size()) throw Error("weights: trailing bytes after last layer");
  try {
    return SrcnnModel<T>(std::move(layers), static_cast<double>(slope));
  } catch (const Error& e) {
    throw Error(std::string("weights: ") + e.what());
  }
}

}  // namespace fibersr
