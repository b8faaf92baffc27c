#include <gtest/gtest.h>

#include <random>

#include "fibersr/srcnn.hpp"
#include "oracles.hpp"

using namespace fibersr;

namespace {

Tensor4<double> random_tensor(int n, int c, int h, int w, std::mt19937_64& g, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(n, c, h, w);
  for (auto& v : t.values()) v = u(g);
  return t;
}

ConvLayer<double> random_layer(int out, int in, int k, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ConvLayer<double> l(out, in, k);
  for (auto& w : l.weight) w = u(g);
  for (auto& b : l.bias) b = u(g);
  return l;
}

SrcnnModel<double> random_model(std::uint64_t seed, const Architecture& arch = {}) {
  auto m = SrcnnModel<double>::initialized(seed, 0.1, 0.01, arch);
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  auto p = m.parameters();
  for (std::size_t gi = 1; gi < kParamGroups; gi += 2)
    for (auto& b : p[gi]) b = n(g);
  return m;
}

}  // namespace

TEST(Conv2d, OneByOneIdentity) {
  std::mt19937_64 g(1);
  ConvLayer<double> l(1, 1, 1);
  l.weight[0] = 1.0;
  const auto x = random_tensor(2, 1, 4, 5, g);
  const auto y = conv2d(x, l);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, ZeroPaddingCountsTaps) {
  ConvLayer<double> l(1, 1, 3);
  std::fill(l.weight.begin(), l.weight.end(), 1.0);
  const auto y = conv2d(Tensor4<double>(1, 1, 5, 5, 1.0), l);
  EXPECT_EQ(y.at(0, 0, 2, 2), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 4, 4), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 2), 6.0);
}

TEST(Conv2d, MatchesNestedLoops) {
  std::mt19937_64 g(2);
  for (const auto& [in, out, k, h, w] : std::vector<std::array<int, 5>>{{2, 3, 3, 5, 5}, {1, 64, 9, 12, 10}, {64, 32, 1, 7, 9}, {32, 1, 5, 11, 6}}) {
    const auto x = random_tensor(1, in, h, w, g);
    const auto l = random_layer(out, in, k, g);
    oracle::Plane p{in, h, w, std::vector<oracle::Real>(x.values().begin(), x.values().end())};
    const auto ref = oracle::conv(p, l);
    const auto y = conv2d(x, l);
    double worst = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      worst = std::max(worst, std::abs(y.values()[i] - static_cast<double>(ref.v[i])));
    EXPECT_LE(worst, 1e-12) << in << "->" << out << " k" << k;
  }
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(ConvLayer<double>(1, 1, 4), Error);
  EXPECT_THROW(conv2d(Tensor4<double>(1, 2, 3, 3), ConvLayer<double>(1, 1, 3)), Error);
  EXPECT_THROW(Tensor4<double>(0, 1, 1, 1), Error);
}

TEST(Lrelu, Elementwise) {
  std::mt19937_64 g(3);
  const auto x = random_tensor(2, 3, 4, 4, g);
  const auto y = lrelu(x, 0.01);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    EXPECT_EQ(y.values()[i], v >= 0 ? v : 0.01 * v);
  }
  EXPECT_EQ(lrelu(Tensor4<double>(1, 1, 1, 1, 0.0), 0.01).values()[0], 0.0);
  EXPECT_EQ(lrelu(Tensor4<double>(1, 1, 1, 1, -1.0), 0.01).values()[0], -0.01);
}

TEST(Forward, ZeroModelAndShape) {
  const SrcnnModel<double> zero;
  std::mt19937_64 g(4);
  const auto x = random_tensor(2, 1, 13, 9, g, 0.0, 1.0);
  const auto y = forward(zero, x);
  EXPECT_TRUE(y.same_dims(x));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const auto big = forward(SrcnnModel<float>::initialized(1), Tensor4<float>(8, 1, 64, 48));
  EXPECT_EQ(big.batch(), 8);
  EXPECT_EQ(big.height(), 64);
  EXPECT_EQ(big.width(), 48);
  EXPECT_THROW(forward(zero, Tensor4<double>(1, 2, 4, 4)), Error);
}

TEST(Forward, HandComposedMicroModel) {
  SrcnnModel<double> m(Architecture{1, 1, 3, 1, 1}, 0.1);
  auto p = m.parameters();
  for (std::size_t i = 0; i < 9; ++i) p[0][i] = static_cast<double>(i) - 4.0;  // w1 = -4..4
  p[1][0] = 0.5;
  p[2][0] = -2.0;
  p[3][0] = 1.0;
  p[4][0] = 3.0;
  p[5][0] = -0.25;
  Tensor4<double> x(1, 1, 3, 3);
  const double in[9] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::copy(in, in + 9, x.values().begin());
  const auto y = forward(m, x);
  auto act = [](double v) { return v >= 0 ? v : 0.1 * v; };
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double z1 = 0.5;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int yy = r + ky - 1, xx = c + kx - 1;
          if (yy >= 0 && yy < 3 && xx >= 0 && xx < 3) z1 += (ky * 3 + kx - 4.0) * in[yy * 3 + xx];
        }
      const double z2 = -2.0 * act(z1) + 1.0;
      EXPECT_NEAR(y.at(0, 0, r, c), 3.0 * act(z2) - 0.25, 1e-14) << r << "," << c;
    }
}

TEST(MseLoss, Cases) {
  std::mt19937_64 g(5);
  const auto a = random_tensor(2, 1, 6, 7, g);
  EXPECT_EQ(mse_loss(a, a), 0.0);
  Tensor4<double> b = a;
  for (auto& v : b.values()) v += 0.1;
  EXPECT_NEAR(mse_loss(a, b), 0.01, 1e-15);
  const auto c = random_tensor(2, 1, 6, 7, g);
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a.values()[i]) - c.values()[i];
    s += d * d;
  }
  const double ref = static_cast<double>(s / a.size());
  EXPECT_LE(std::abs(mse_loss(a, c) - ref) / ref, 1e-12);
  EXPECT_THROW(mse_loss(a, Tensor4<double>(1, 1, 6, 7)), Error);
}

TEST(Backward, ZeroResidualGivesZeroGradients) {
  const auto m = random_model(6);
  std::mt19937_64 g(6);
  const auto x = random_tensor(2, 1, 10, 10, g, 0.0, 1.0);
  const auto target = forward(m, x);
  const auto lg = backward(m, x, target);
  EXPECT_EQ(lg.loss, 0.0);
  for (const auto& grp : lg.gradients.groups)
    for (double v : grp) EXPECT_EQ(v, 0.0);
}

TEST(Backward, FinalBiasGradientForConstantResidual) {
  SrcnnModel<double> m;
  m.parameters()[5][0] = 0.3;
  const auto lg = backward(m, Tensor4<double>(3, 1, 5, 4, 0.7), Tensor4<double>(3, 1, 5, 4, 0.0));
  EXPECT_NEAR(lg.gradients.groups[5][0], 0.6, 1e-14);
  EXPECT_NEAR(lg.loss, 0.09, 1e-15);
}

TEST(Backward, MatchesFiniteDifferencesOnSmallModel) {
  const Architecture arch{4, 3, 3, 1, 3};
  for (std::uint64_t seed = 1;; ++seed) {
    auto m = SrcnnModel<double>::initialized(seed, 0.5, 0.01, arch);
    std::mt19937_64 g(seed);
    std::normal_distribution<double> n(0.0, 0.1);
    auto p = m.parameters();
    for (std::size_t gi = 1; gi < kParamGroups; gi += 2)
      for (auto& b : p[gi]) b = n(g);
    oracle::Plane x{1, 6, 6, std::vector<oracle::Real>(36)};
    std::vector<double> target(36);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.v) v = u(g);
    for (auto& v : target) v = u(g);
    if (oracle::kink_margin(oracle::forward(m, x)) < 1e-3) continue;
    Tensor4<double> in(1, 1, 6, 6), tgt(1, 1, 6, 6);
    std::copy(x.v.begin(), x.v.end(), in.values().begin());
    std::copy(target.begin(), target.end(), tgt.values().begin());
    const auto analytic = backward(m, in, tgt);
    const auto numeric = oracle::finite_difference_gradients(m, x, target, 1e-4);
    for (std::size_t gi = 0; gi < kParamGroups; ++gi)
      for (std::size_t i = 0; i < numeric[gi].size(); ++i) {
        const double a = analytic.gradients.groups[gi][i], b = numeric[gi][i];
        EXPECT_LE(std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}), 1e-5) << gi << "[" << i << "]";
      }
    break;
  }
}

TEST(Backward, IndependentOfThreadCount) {
  const auto m = random_model(7, Architecture{16, 8, 5, 1, 3}).cast<float>();
  std::mt19937_64 g(7);
  Tensor4<float> x(5, 1, 12, 12), t(5, 1, 12, 12);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : x.values()) v = u(g);
  for (auto& v : t.values()) v = u(g);
  const auto a = backward(m, x, t, 1);
  const auto b = backward(m, x, t, 4);
  EXPECT_EQ(a.loss, b.loss);
  for (std::size_t gi = 0; gi < kParamGroups; ++gi) EXPECT_EQ(a.gradients.groups[gi], b.gradients.groups[gi]);
  EXPECT_THROW(backward(m, x, Tensor4<float>(5, 1, 12, 11)), Error);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{0.5, -1.0};
  const std::vector<double> g{0.0, 0.0};
  AdamState<double> st;
  const std::span<double> ps[] = {std::span<double>(p)};
  const std::span<const double> gs[] = {std::span<const double>(g)};
  adam_step<double>(ps, gs, st, AdamConfig{});
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], -1.0);
  EXPECT_EQ(st.step_count, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double grad : {1e-3, -0.02, 1.0, 250.0}) {
    std::vector<double> p{0.0};
    const std::vector<double> g{grad};
    AdamState<double> st;
    const std::span<double> ps[] = {std::span<double>(p)};
    const std::span<const double> gs[] = {std::span<const double>(g)};
    adam_step<double>(ps, gs, st, AdamConfig{});
    EXPECT_NEAR(std::abs(p[0]), 1e-4, 1e-7) << grad;
    EXPECT_LT(p[0] * grad, 0.0);
  }
}

TEST(Adam, TrajectoryMatchesRecurrence) {
  AdamConfig cfg{0.05, 0.8, 0.95, 1e-8};
  oracle::ScalarAdam ref{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps};
  std::vector<double> theta{-2.0};
  double r = -2.0;
  AdamState<double> st;
  for (int i = 0; i < 25; ++i) {
    const std::vector<double> g{2.0 * (theta[0] - 1.0)};
    const std::span<double> ps[] = {std::span<double>(theta)};
    const std::span<const double> gs[] = {std::span<const double>(g)};
    adam_step<double>(ps, gs, st, cfg);
    r = ref.step(r, 2.0 * (r - 1.0));
    EXPECT_NEAR(theta[0], r, 1e-12);
  }
}

TEST(Infer, ZeroModelClampAndShape) {
  std::mt19937_64 g(8);
  const Image img = oracle::random_image(17, 11, g);
  const Image z = infer(SrcnnModel<float>{}, img);
  EXPECT_EQ(z.width(), 17);
  EXPECT_EQ(z.height(), 11);
  for (double v : z.pixels()) EXPECT_EQ(v, 0.0);
  SrcnnModel<float> bright;
  bright.parameters()[5][0] = 5.0f;
  const Image saturated = infer(bright, img);
  for (double v : saturated.pixels()) EXPECT_EQ(v, 1.0);
}

TEST(Infer, StripsMatchSinglePass) {
  const auto m = random_model(9).cast<float>();
  std::mt19937_64 g(9);
  const Image img = oracle::random_image(256, 600, g);  // three strips of 256 rows
  const auto strips = predict(m, img);
  Tensor4<float> x(1, 1, 600, 256);
  std::transform(img.pixels().begin(), img.pixels().end(), x.values().begin(), [](double v) { return static_cast<float>(v); });
  const auto full = forward(m, x);
  for (std::size_t i = 0; i < strips.size(); ++i) ASSERT_EQ(strips[i], static_cast<double>(full.values()[i])) << i;
  EXPECT_EQ(predict(m, img, 3), strips);
}

TEST(Infer, OverlappingHalvesMatchFullFrameInterior) {
  const auto m = random_model(10);
  std::mt19937_64 g(10);
  const Image img = oracle::random_image(30, 40, g);
  const int overlap = 7;
  const Image full = infer(m, img);
  const Image top = infer(m, crop(img, 0, 0, 30, 20 + overlap));
  const Image bottom = infer(m, crop(img, 0, 20 - overlap, 30, 20 + overlap));
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 30; ++x) {
      const double stitched = y < 20 ? top(x, y) : bottom(x, y - 20 + overlap);
      EXPECT_NEAR(stitched, full(x, y), 1e-12) << x << "," << y;
    }
}

TEST(Infer, PerturbationStaysWithinReceptiveRadius) {
  const auto m = random_model(11);
  EXPECT_EQ(m.architecture().receptive_radius(), 6);
  std::mt19937_64 g(11);
  const Image img = oracle::random_image(31, 31, g);
  std::vector<double> v(img.pixels().begin(), img.pixels().end());
  v[15 * 31 + 15] = 1.0 - v[15 * 31 + 15];
  const auto a = predict(m, img);
  const auto b = predict(m, Image(31, 31, v));
  bool changed_at_radius = false;
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 31; ++x) {
      const int r = std::max(std::abs(x - 15), std::abs(y - 15));
      const std::size_t i = static_cast<std::size_t>(y) * 31 + x;
      if (r > 6) EXPECT_EQ(a[i], b[i]) << x << "," << y;
      if (r == 6) changed_at_radius = changed_at_radius || a[i] != b[i];
    }
  EXPECT_TRUE(changed_at_radius);
}

TEST(Weights, RoundTrip) {
  const auto m = random_model(12);
  const Bytes bytes = save_weights(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SRCW");
  const auto back = load_weights<double>(bytes);
  EXPECT_EQ(back.architecture(), m.architecture());
  EXPECT_NEAR(back.slope(), 0.01, 1e-9);
  double worst = 0;
  for (std::size_t gi = 0; gi < kParamGroups; ++gi)
    for (std::size_t i = 0; i < m.parameters()[gi].size(); ++i)
      worst = std::max(worst, std::abs(m.parameters()[gi][i] - back.parameters()[gi][i]));
  EXPECT_LE(worst, 1e-6);
  const auto f = load_weights<float>(bytes);
  EXPECT_EQ(save_weights(f), bytes);
}

TEST(Weights, Errors) {
  Bytes bytes = save_weights(random_model(13, Architecture{4, 2, 3, 1, 3}));
  Bytes bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(load_weights(bad), Error);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(load_weights(bad), Error);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    Bytes t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(load_weights(t), Error) << cut;
  }
  bytes.push_back(0);
  EXPECT_THROW(load_weights(bytes), Error);
}
