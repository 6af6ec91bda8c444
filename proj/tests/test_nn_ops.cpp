#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "aseg/network.hpp"
#include "aseg/nn_ops.hpp"
#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"
#include "oracles.hpp"

using namespace aseg;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
ConvParams<T> random_conv(int oc, int c, int k, int d, Rng& rng) {
  ConvParams<T> p;
  p.weights = random_tensor<T>({oc, c, k, k}, rng, -0.5, 0.5);
  p.bias = random_tensor<T>({oc}, rng, -0.3, 0.3);
  p.dilation = d;
  return p;
}

std::vector<double> bias_as_double(const Tensor<float>& b) {
  std::vector<double> out(b.numel());
  for (size_t i = 0; i < b.numel(); ++i) out[i] = b.data[i];
  return out;
}

}  // namespace

TEST_SUITE("nn_ops") {

TEST_CASE("conv forward f32 matches im2col oracle across dilations") {
  // (C, OC, H, W, k, d): small channel counts keep the f32 accumulation
  // error well under the 1e-6 gate.
  const int cfg[][6] = {
      {1, 1, 7, 9, 3, 1},  {3, 5, 12, 10, 3, 2}, {4, 8, 22, 17, 3, 4},
      {2, 3, 9, 8, 1, 1},  {2, 6, 68, 66, 3, 32}, {4, 4, 37, 100, 3, 8},
  };
  Rng rng(42);
  for (const auto& cf : cfg) {
    CAPTURE(cf[0]); CAPTURE(cf[1]); CAPTURE(cf[2]); CAPTURE(cf[3]); CAPTURE(cf[4]); CAPTURE(cf[5]);
    Tensor<float> in = random_tensor<float>({2, cf[0], cf[2], cf[3]}, rng, 0.0, 1.0);
    ConvParams<float> p = random_conv<float>(cf[1], cf[0], cf[4], cf[5], rng);
    Tensor<float> out = conv2d_dilated(in, p);
    Tensor<double> ref = oracle::conv2d(in, p.weights, bias_as_double(p.bias), cf[5], false);
    CHECK(oracle::max_rel_diff(out, ref) <= 1e-6);

    // Fused ReLU path agrees with the oracle's clamped output.
    Tensor<float> out_r = conv2d_dilated(in, p, true);
    Tensor<double> ref_r = oracle::conv2d(in, p.weights, bias_as_double(p.bias), cf[5], true);
    CHECK(oracle::max_rel_diff(out_r, ref_r) <= 1e-6);
  }
}

TEST_CASE("conv forward f64 matches im2col oracle almost exactly") {
  Rng rng(7);
  Tensor<double> in = random_tensor<double>({1, 3, 15, 14}, rng, -1.0, 1.0);
  ConvParams<double> p;
  p.weights = random_tensor<double>({5, 3, 3, 3}, rng, -0.5, 0.5);
  p.bias = random_tensor<double>({5}, rng, -0.3, 0.3);
  p.dilation = 2;
  Tensor<double> out = conv2d_dilated(in, p);
  std::vector<double> b(p.bias.data.begin(), p.bias.data.end());
  Tensor<double> ref = oracle::conv2d(in, p.weights, b, 2, false);
  CHECK(oracle::max_abs_diff(out, ref) <= 1e-12);
}

TEST_CASE("conv forward wide-channel case stays within 1e-5 of the oracle") {
  Rng rng(11);
  Tensor<float> in = random_tensor<float>({1, 32, 7, 103}, rng, 0.0, 1.0);
  ConvParams<float> p = random_conv<float>(32, 32, 3, 1, rng);
  Tensor<float> out = conv2d_dilated(in, p);
  Tensor<double> ref = oracle::conv2d(in, p.weights, bias_as_double(p.bias), 1, false);
  CHECK(oracle::max_rel_diff(out, ref) <= 1e-5);
}

TEST_CASE("conv forward hand example") {
  // 3x3 input against a 3x3 edge filter, bias 0.5: single output value.
  Tensor<float> in({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) in.data[i] = static_cast<float>(i + 1);
  ConvParams<float> p;
  p.weights = Tensor<float>({1, 1, 3, 3});
  const float wv[9] = {1, 0, -1, 2, 0, -2, 1, 0, -1};
  std::copy(wv, wv + 9, p.weights.data.begin());
  p.bias = Tensor<float>({1}, 0.5f);
  p.dilation = 1;
  Tensor<float> out = conv2d_dilated(in, p);
  REQUIRE(out.shape == std::vector<int>{1, 1, 1, 1});
  CHECK(out.data[0] == doctest::Approx(-7.5).epsilon(1e-7));
  Tensor<float> out_r = conv2d_dilated(in, p, true);
  CHECK(out_r.data[0] == 0.0f);
}

TEST_CASE("dilated taps sample every d-th input") {
  // 5x5 ramp, all-ones 3x3 filter at dilation 2 touches exactly the even
  // lattice: values {0,2,4,10,12,14,20,22,24} summing to 108.
  Tensor<float> in({1, 1, 5, 5});
  for (int i = 0; i < 25; ++i) in.data[i] = static_cast<float>(i);
  ConvParams<float> p;
  p.weights = Tensor<float>({1, 1, 3, 3}, 1.0f);
  p.bias = Tensor<float>({1}, 0.0f);
  p.dilation = 2;
  Tensor<float> out = conv2d_dilated(in, p);
  REQUIRE(out.shape == std::vector<int>{1, 1, 1, 1});
  CHECK(out.data[0] == doctest::Approx(108.0));
}

TEST_CASE("conv output shape follows H - d*(k-1)") {
  Rng rng(3);
  Tensor<float> in = random_tensor<float>({1, 1, 131, 135}, rng, 0.0, 1.0);
  ConvParams<float> p = random_conv<float>(2, 1, 3, 32, rng);
  Tensor<float> out = conv2d_dilated(in, p);
  CHECK(out.shape == std::vector<int>{1, 2, 131 - 64, 135 - 64});
}

TEST_CASE("conv argument validation") {
  Rng rng(4);
  Tensor<float> in = random_tensor<float>({1, 2, 10, 10}, rng, 0.0, 1.0);
  ConvParams<float> p = random_conv<float>(3, 2, 3, 1, rng);

  SUBCASE("channel mismatch") {
    Tensor<float> bad = random_tensor<float>({1, 3, 10, 10}, rng, 0.0, 1.0);
    CHECK_THROWS_AS(conv2d_dilated(bad, p), std::invalid_argument);
  }
  SUBCASE("input smaller than filter span") {
    Tensor<float> small = random_tensor<float>({1, 2, 6, 6}, rng, 0.0, 1.0);
    ConvParams<float> wide = random_conv<float>(3, 2, 3, 3, rng);
    CHECK_THROWS_AS(conv2d_dilated(small, wide), std::invalid_argument);
  }
  SUBCASE("unsupported kernel size") {
    ConvParams<float> k2;
    k2.weights = random_tensor<float>({3, 2, 2, 2}, rng, -1.0, 1.0);
    k2.bias = Tensor<float>({3});
    CHECK_THROWS_AS(conv2d_dilated(in, k2), std::invalid_argument);
  }
  SUBCASE("bad dilation") {
    p.dilation = 0;
    CHECK_THROWS_AS(conv2d_dilated(in, p), std::invalid_argument);
  }
}

TEST_CASE("conv is deterministic and translation-consistent") {
  Rng rng(99);
  Tensor<float> in = random_tensor<float>({1, 3, 40, 41}, rng, -1.0, 1.0);
  ConvParams<float> p = random_conv<float>(8, 3, 3, 2, rng);

  Tensor<float> a = conv2d_dilated(in, p);
  Tensor<float> b = conv2d_dilated(in, p);
  CHECK(std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0);

  // Cropping the input by (dy, dx) crops the output by the same offset:
  // each output value is the same fixed-order sum, so agreement is exact.
  const int dy = 2, dx = 3;
  Tensor<float> crop({1, 3, 40 - dy, 41 - dx});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 40 - dy; ++y)
      for (int x = 0; x < 41 - dx; ++x) crop.at4(0, c, y, x) = in.at4(0, c, y + dy, x + dx);
  Tensor<float> shifted = conv2d_dilated(crop, p);
  double worst = 0.0;
  for (int o = 0; o < 8; ++o)
    for (int y = 0; y < shifted.dim(2); ++y)
      for (int x = 0; x < shifted.dim(3); ++x)
        worst = std::max(worst, std::abs(static_cast<double>(shifted.at4(0, o, y, x)) -
                                         a.at4(0, o, y + dy, x + dx)));
  CHECK(worst == 0.0);
}

TEST_CASE("conv gradients match finite differences in f64") {
  Rng rng(17);
  for (int k : {3, 1}) {
    CAPTURE(k);
    const int d = k == 3 ? 2 : 1;
    Tensor<double> in = random_tensor<double>({2, 2, 8, 7}, rng, -1.0, 1.0);
    ConvParams<double> p;
    p.weights = random_tensor<double>({3, 2, k, k}, rng, -0.7, 0.7);
    p.bias = random_tensor<double>({3}, rng, -0.3, 0.3);
    p.dilation = d;
    Tensor<double> r = random_tensor<double>(
        {2, 3, 8 - d * (k - 1), 7 - d * (k - 1)}, rng, -1.0, 1.0);

    auto loss = [&]() {
      Tensor<double> out = conv2d_dilated(in, p);
      double s = 0;
      for (size_t i = 0; i < out.numel(); ++i) s += out.data[i] * r.data[i];
      return s;
    };
    ConvGrads<double> g = conv2d_dilated_grad(in, p, r);
    CHECK(oracle::fd_max_rel_err(loss, p.weights, g.weights) <= 1e-6);
    CHECK(oracle::fd_max_rel_err(loss, p.bias, g.bias) <= 1e-6);
    CHECK(oracle::fd_max_rel_err(loss, in, g.input) <= 1e-6);
  }
}

TEST_CASE("conv gradients f32 fast path agrees with f64 path") {
  Rng rng(23);
  Tensor<float> in = random_tensor<float>({2, 32, 10, 53}, rng, 0.0, 1.0);
  ConvParams<float> p = random_conv<float>(32, 32, 3, 1, rng);
  Tensor<float> gout = random_tensor<float>({2, 32, 8, 51}, rng, -1.0, 1.0);

  ConvGrads<float> gf = conv2d_dilated_grad(in, p, gout);

  Tensor<double> in64 = in.cast<double>();
  ConvParams<double> p64;
  p64.weights = p.weights.cast<double>();
  p64.bias = p.bias.cast<double>();
  p64.dilation = 1;
  ConvGrads<double> gd = conv2d_dilated_grad(in64, p64, gout.cast<double>());

  CHECK(oracle::max_rel_diff(gf.weights, gd.weights) <= 1e-5);
  CHECK(oracle::max_rel_diff(gf.bias, gd.bias) <= 1e-5);
  CHECK(oracle::max_rel_diff(gf.input, gd.input) <= 1e-5);
}

TEST_CASE("conv gradients f32 single-input-channel shapes agree with f64 path") {
  // C == 1 takes a dedicated weight-gradient kernel; cover odd output-channel
  // counts (pair tail), ragged widths (masked tail) and dilation offsets.
  Rng rng(29);
  struct Shape { int oc, d, h, w; };
  for (const Shape s : {Shape{32, 1, 12, 53}, Shape{5, 2, 17, 23},
                        Shape{1, 1, 9, 16}, Shape{6, 4, 21, 40}}) {
    CAPTURE(s.oc); CAPTURE(s.d);
    Tensor<float> in = random_tensor<float>({2, 1, s.h, s.w}, rng, -1.0, 1.0);
    ConvParams<float> p = random_conv<float>(s.oc, 1, 3, s.d, rng);
    const int hp = s.h - 2 * s.d, wp = s.w - 2 * s.d;
    Tensor<float> gout = random_tensor<float>({2, s.oc, hp, wp}, rng, -1.0, 1.0);

    ConvGrads<float> gf = conv2d_dilated_grad(in, p, gout);

    Tensor<double> in64 = in.cast<double>();
    ConvParams<double> p64;
    p64.weights = p.weights.cast<double>();
    p64.bias = p.bias.cast<double>();
    p64.dilation = s.d;
    ConvGrads<double> gd = conv2d_dilated_grad(in64, p64, gout.cast<double>());

    CHECK(oracle::max_rel_diff(gf.weights, gd.weights) <= 1e-5);
    CHECK(oracle::max_rel_diff(gf.bias, gd.bias) <= 1e-5);
    CHECK(oracle::max_rel_diff(gf.input, gd.input) <= 1e-5);
  }
}

TEST_CASE("conv gradients f32 narrow-output shapes agree with f64 path") {
  // Output planes narrower than one vector take the im2col weight-gradient
  // path; cover channel counts off the 8/16 grain and high dilations.
  Rng rng(41);
  struct Shape { int c, oc, d, h, w; };
  for (const Shape s : {Shape{32, 32, 16, 43, 47}, Shape{4, 5, 8, 20, 20},
                        Shape{8, 32, 4, 17, 23}, Shape{3, 17, 1, 9, 12}}) {
    CAPTURE(s.c); CAPTURE(s.oc); CAPTURE(s.d);
    Tensor<float> in = random_tensor<float>({2, s.c, s.h, s.w}, rng, -1.0, 1.0);
    ConvParams<float> p = random_conv<float>(s.oc, s.c, 3, s.d, rng);
    const int hp = s.h - 2 * s.d, wp = s.w - 2 * s.d;
    Tensor<float> gout = random_tensor<float>({2, s.oc, hp, wp}, rng, -1.0, 1.0);

    ConvGrads<float> gf = conv2d_dilated_grad(in, p, gout);

    Tensor<double> in64 = in.cast<double>();
    ConvParams<double> p64;
    p64.weights = p.weights.cast<double>();
    p64.bias = p.bias.cast<double>();
    p64.dilation = s.d;
    ConvGrads<double> gd = conv2d_dilated_grad(in64, p64, gout.cast<double>());

    CHECK(oracle::max_rel_diff(gf.weights, gd.weights) <= 1e-5);
    CHECK(oracle::max_rel_diff(gf.bias, gd.bias) <= 1e-5);
    CHECK(oracle::max_rel_diff(gf.input, gd.input) <= 1e-5);
  }
}

TEST_CASE("batch norm train mode standardizes and updates running stats") {
  Rng rng(31);
  Tensor<float> in = random_tensor<float>({4, 3, 5, 6}, rng, -2.0, 5.0);
  BatchNormParams<float> p(3);
  p.running_mean.data = {1.0f, -2.0f, 0.5f};
  p.running_var.data = {2.0f, 1.5f, 3.0f};
  BatchNormCache<float> cache;
  Tensor<float> out = batch_norm(in, p, Mode::train, &cache);

  const size_t plane = 5 * 6;
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0, bsum = 0;
    for (int n = 0; n < 4; ++n)
      for (size_t i = 0; i < plane; ++i) {
        const double v = out.data[(n * 3 + c) * plane + i];
        sum += v;
        sq += v * v;
        bsum += in.data[(n * 3 + c) * plane + i];
      }
    const double m = 4.0 * plane;
    CHECK(std::abs(sum / m) <= 1e-5);
    CHECK(std::abs(sq / m - 1.0) <= 1e-4);
    // running = 0.9 * old + 0.1 * batch
    const double bmean = bsum / m;
    const double expect_rm = 0.9 * std::vector<double>{1.0, -2.0, 0.5}[c] + 0.1 * bmean;
    CHECK(p.running_mean.data[c] == doctest::Approx(expect_rm).epsilon(1e-4));
  }
}

TEST_CASE("batch norm inference with identity stats is a near-identity") {
  Rng rng(37);
  Tensor<float> in = random_tensor<float>({2, 2, 4, 4}, rng, -1.0, 1.0);
  BatchNormParams<float> p(2);  // gamma 1, beta 0, mean 0, var 1
  Tensor<float> out = batch_norm(in, p, Mode::infer);
  double worst = 0;
  for (size_t i = 0; i < in.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(out.data[i]) - in.data[i]));
  CHECK(worst <= 1e-4);  // off only by the epsilon inside 1/sqrt(var + eps)
  // and the running stats must be untouched
  CHECK(p.running_mean.data[0] == 0.0f);
  CHECK(p.running_var.data[1] == 1.0f);
}

TEST_CASE("batch norm gradients match finite differences in f64") {
  Rng rng(41);
  Tensor<double> in = random_tensor<double>({2, 3, 4, 5}, rng, -2.0, 2.0);
  Tensor<double> gamma0 = random_tensor<double>({3}, rng, 0.5, 1.5);
  Tensor<double> beta0 = random_tensor<double>({3}, rng, -0.5, 0.5);
  Tensor<double> r = random_tensor<double>({2, 3, 4, 5}, rng, -1.0, 1.0);

  auto make_loss = [&]() {
    BatchNormParams<double> p(3);
    p.gamma = gamma0;
    p.beta = beta0;
    BatchNormCache<double> cache;
    Tensor<double> out = batch_norm(in, p, Mode::train, &cache);
    double s = 0;
    for (size_t i = 0; i < out.numel(); ++i) s += out.data[i] * r.data[i];
    return s;
  };

  BatchNormParams<double> p(3);
  p.gamma = gamma0;
  p.beta = beta0;
  BatchNormCache<double> cache;
  batch_norm(in, p, Mode::train, &cache);
  BatchNormParams<double> pg(3);
  pg.gamma = gamma0;
  pg.beta = beta0;
  BatchNormGrads<double> g = batch_norm_grad(cache, pg, r);

  CHECK(oracle::fd_max_rel_err(make_loss, in, g.input) <= 1e-6);
  CHECK(oracle::fd_max_rel_err(make_loss, gamma0, g.gamma) <= 1e-6);
  CHECK(oracle::fd_max_rel_err(make_loss, beta0, g.beta) <= 1e-6);
}

TEST_CASE("relu and its backward") {
  Tensor<float> x({1, 1, 1, 4});
  x.data = {-1.5f, 0.0f, 0.25f, 3.0f};
  Tensor<float> y = relu(x);
  CHECK(y.data == std::vector<float>{0.0f, 0.0f, 0.25f, 3.0f});
  Tensor<float> g({1, 1, 1, 4});
  g.data = {1.0f, 2.0f, 3.0f, 4.0f};
  Tensor<float> gx = relu_backward(x, g);
  CHECK(gx.data == std::vector<float>{0.0f, 0.0f, 3.0f, 4.0f});

  // FD agreement away from the kink.
  Rng rng(5);
  Tensor<double> xd = random_tensor<double>({1, 2, 3, 3}, rng, -1.0, 1.0);
  for (auto& v : xd.data)
    if (std::abs(v) < 1e-3) v = 0.1;  // keep clear of the nondifferentiable point
  Tensor<double> r = random_tensor<double>({1, 2, 3, 3}, rng, -1.0, 1.0);
  auto loss = [&]() {
    Tensor<double> out = relu(xd);
    double s = 0;
    for (size_t i = 0; i < out.numel(); ++i) s += out.data[i] * r.data[i];
    return s;
  };
  Tensor<double> analytic = relu_backward(xd, r);
  CHECK(oracle::fd_max_rel_err(loss, xd, analytic) <= 1e-6);
}

TEST_CASE("softmax sums to one and matches a hand value") {
  Rng rng(13);
  Tensor<float> logits = random_tensor<float>({2, 4, 3, 5}, rng, -4.0, 4.0);
  Tensor<float> probs = softmax_channels(logits);
  const size_t plane = 3 * 5;
  for (int n = 0; n < 2; ++n)
    for (size_t i = 0; i < plane; ++i) {
      double s = 0;
      double mx = 0;
      for (int c = 0; c < 4; ++c) {
        const double v = probs.data[(n * 4 + c) * plane + i];
        CHECK(v >= 0.0);
        s += v;
        mx = std::max(mx, v);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
      CHECK(mx <= 1.0);
    }

  // softmax([0, ln 3]) = [1/4, 3/4]
  Tensor<float> two({1, 2, 1, 1});
  two.data = {0.0f, std::log(3.0f)};
  Tensor<float> q = softmax_channels(two);
  CHECK(q.data[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(q.data[1] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax backward matches finite differences in f64") {
  Rng rng(19);
  Tensor<double> logits = random_tensor<double>({1, 4, 2, 3}, rng, -2.0, 2.0);
  Tensor<double> r = random_tensor<double>({1, 4, 2, 3}, rng, -1.0, 1.0);
  auto loss = [&]() {
    Tensor<double> p = softmax_channels(logits);
    double s = 0;
    for (size_t i = 0; i < p.numel(); ++i) s += p.data[i] * r.data[i];
    return s;
  };
  Tensor<double> probs = softmax_channels(logits);
  Tensor<double> analytic = softmax_backward(probs, r);
  CHECK(oracle::fd_max_rel_err(loss, logits, analytic) <= 1e-6);
}

TEST_CASE("dropout mask is inverted, seeded and roughly balanced") {
  Rng rng(123);
  Tensor<float> m = dropout_mask<float>({1, 1, 100, 100}, 0.5, rng);
  size_t kept = 0;
  for (float v : m.data) {
    CHECK((v == 0.0f || v == 2.0f));
    kept += v != 0.0f;
  }
  const double frac = static_cast<double>(kept) / m.numel();
  CHECK(frac > 0.47);
  CHECK(frac < 0.53);

  Rng rng2(123);
  Tensor<float> m2 = dropout_mask<float>({1, 1, 100, 100}, 0.5, rng2);
  CHECK(std::memcmp(m.ptr(), m2.ptr(), m.numel() * sizeof(float)) == 0);

  Rng rng3(124);
  Tensor<float> m3 = dropout_mask<float>({1, 1, 100, 100}, 0.5, rng3);
  CHECK(std::memcmp(m.ptr(), m3.ptr(), m.numel() * sizeof(float)) != 0);

  CHECK_THROWS_AS(dropout_mask<float>({1, 1, 2, 2}, 1.0, rng), std::invalid_argument);
}

TEST_CASE("pad2d surrounds the image with the fill value") {
  Tensor<float> x({1, 2, 2, 3});
  for (size_t i = 0; i < x.numel(); ++i) x.data[i] = static_cast<float>(i + 1);
  Tensor<float> y = pad2d(x, 2, 0.0f);
  CHECK(y.shape == std::vector<int>{1, 2, 6, 7});
  CHECK(y.at4(0, 0, 0, 0) == 0.0f);
  CHECK(y.at4(0, 0, 1, 6) == 0.0f);
  CHECK(y.at4(0, 0, 2, 2) == x.at4(0, 0, 0, 0));
  CHECK(y.at4(0, 1, 3, 4) == x.at4(0, 1, 1, 2));
  CHECK(y.at4(0, 1, 5, 3) == 0.0f);
  double border_sum = 0;
  for (int yy = 0; yy < 6; ++yy)
    for (int xx = 0; xx < 7; ++xx)
      if (yy < 2 || yy >= 4 || xx < 2 || xx >= 5)
        border_sum += std::abs(y.at4(0, 0, yy, xx)) + std::abs(y.at4(0, 1, yy, xx));
  CHECK(border_sum == 0.0);
}

}  // TEST_SUITE
