#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fewshot/gradcheck.hpp"
#include "fewshot/layers.hpp"
#include "fewshot/rng.hpp"

using namespace fewshot;

namespace {

// independent six-loop reference convolution (stride 1, zero padding)
template <class T>
Tensor4<T> conv2d_naive(const Tensor4<T>& x, const ConvParams<T>& p, int pad) {
  const int k = p.kernel();
  Tensor4<T> y(x.n, p.out_c(), x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int oc = 0; oc < p.out_c(); ++oc)
      for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
          T acc = p.bias[oc];
          for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = oy + ky - pad;
                const int sx = ox + kx - pad;
                if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) continue;
                acc += p.weights.at(oc, ic, ky, kx) * x.at(i, ic, sy, sx);
              }
          y.at(i, oc, oy, ox) = acc;
        }
  return y;
}

template <class T>
Tensor4<T> random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor4<T> t(n, c, h, w);
  for (auto& v : t.data) v = T(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("tensor shape validation and indexing") {
  CHECK_THROWS_AS(Tensor4<float>(0, 1, 2, 2), ShapeError);
  CHECK_THROWS_AS(Tensor4<float>(1, 1, -3, 2), ShapeError);
  Tensor4<float> t(2, 3, 4, 5, 7.f);
  CHECK(t.size() == 120);
  t.at(1, 2, 3, 4) = 1.f;
  CHECK(t.data[119] == 1.f);  // w fastest, row-major
  CHECK(t.data[118] == 7.f);
}

TEST_CASE("conv2d matches the naive reference on 50 random shapes") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + int(rng.below(2));
    const int c = 1 + int(rng.below(4));
    const int oc = 1 + int(rng.below(4));
    const int k = rng.below(2) ? 5 : 1;
    const int h = k + int(rng.below(10));
    const int w = k + int(rng.below(10));
    const int pad = (k - 1) / 2;
    Tensor4<double> x = random_tensor<double>(n, c, h, w, rng);
    ConvParams<double> p;
    p.weights = random_tensor<double>(oc, c, k, k, rng);
    p.bias.resize(oc);
    for (auto& b : p.bias) b = rng.normal();
    const auto fast = conv2d_forward(x, p, pad);
    const auto slow = conv2d_naive(x, p, pad);
    REQUIRE(fast.same_shape(slow));
    for (std::size_t i = 0; i < fast.data.size(); ++i)
      CHECK(fast.data[i] == doctest::Approx(slow.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("conv2d with a centered identity kernel reproduces the input") {
  Rng rng(5);
  Tensor4<float> x = random_tensor<float>(1, 2, 6, 7, rng);
  ConvParams<float> p;
  p.weights = Tensor4<float>(2, 2, 5, 5, 0.f);
  p.bias.assign(2, 0.f);
  p.weights.at(0, 0, 2, 2) = 1.f;
  p.weights.at(1, 1, 2, 2) = 1.f;
  const auto y = conv2d_forward(x, p, 2);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d shape and parameter validation") {
  Tensor4<float> x(1, 3, 4, 4);
  ConvParams<float> p;
  p.weights = Tensor4<float>(2, 2, 3, 3);  // in_c mismatch
  p.bias.assign(2, 0.f);
  CHECK_THROWS_AS(conv2d_forward(x, p, 1), ShapeError);
  p.weights = Tensor4<float>(2, 3, 3, 3);
  p.bias.assign(1, 0.f);  // bias length mismatch
  CHECK_THROWS_AS(conv2d_forward(x, p, 1), ShapeError);
}

TEST_CASE("conv2d backward bias gradient is the per-channel sum") {
  Rng rng(7);
  Tensor4<double> x = random_tensor<double>(2, 2, 4, 4, rng);
  ConvParams<double> p;
  p.weights = random_tensor<double>(3, 2, 5, 5, rng);
  p.bias.assign(3, 0.0);
  Tensor4<double> gy = random_tensor<double>(2, 3, 4, 4, rng);
  const auto g = conv2d_backward(x, p, gy, 2);
  for (int oc = 0; oc < 3; ++oc) {
    double expect = 0;
    for (int i = 0; i < 2; ++i)
      for (int q = 0; q < 16; ++q)
        expect += gy.data[(std::size_t(i) * 3 + oc) * 16 + q];
    CHECK(g.b[oc] == doctest::Approx(expect));
  }
}

TEST_CASE("prelu forward and analytic gradients") {
  Tensor4<float> x(1, 2, 1, 2);
  x.data = {2.f, -4.f, -1.f, 3.f};
  PReluParams<float> p{{0.5f, 0.25f}};
  const auto y = prelu_forward(x, p);
  CHECK(y.data[0] == 2.f);
  CHECK(y.data[1] == -2.f);
  CHECK(y.data[2] == -0.25f);
  CHECK(y.data[3] == 3.f);
  Tensor4<float> gy(1, 2, 1, 2, 1.f);
  const auto g = prelu_backward(x, p, gy);
  CHECK(g.x.data[0] == 1.f);
  CHECK(g.x.data[1] == 0.5f);
  CHECK(g.alpha[0] == -4.f);  // sum of negative inputs times grad
  CHECK(g.alpha[1] == -1.f);
}

TEST_CASE("batchnorm train mode normalizes each channel") {
  Rng rng(3);
  Tensor4<double> x = random_tensor<double>(2, 3, 5, 5, rng);
  for (auto& v : x.data) v = v * 2.0 + 1.5;
  BatchNormParams<double> p;
  p.gamma.assign(3, 1.0);
  p.beta.assign(3, 0.0);
  p.running_mean.assign(3, 0.0);
  p.running_var.assign(3, 1.0);
  const auto r = batchnorm_forward(x, p, BnMode::train);
  for (int j = 0; j < 3; ++j) {
    double s = 0, s2 = 0;
    for (int i = 0; i < 2; ++i)
      for (int q = 0; q < 25; ++q) {
        const double v = r.y.data[(std::size_t(i) * 3 + j) * 25 + q];
        s += v;
        s2 += v * v;
      }
    CHECK(s / 50 == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(s2 / 50 == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks var
  }
}

TEST_CASE("batchnorm infer mode uses running statistics") {
  Tensor4<double> x(1, 1, 1, 2);
  x.data = {3.0, 5.0};
  BatchNormParams<double> p;
  p.gamma = {2.0};
  p.beta = {1.0};
  p.running_mean = {3.0};
  p.running_var = {4.0};
  const auto r = batchnorm_forward(x, p, BnMode::infer);
  // (3-3)/sqrt(4+eps)*2+1 = 1, (5-3)/2*2+1 ~= 3
  CHECK(r.y.data[0] == doctest::Approx(1.0));
  CHECK(r.y.data[1] == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("batchnorm running statistics blend with momentum 0.1") {
  Tensor4<double> x(1, 1, 2, 2);
  x.data = {1.0, 1.0, 3.0, 3.0};  // mean 2, var 1
  BatchNormParams<double> p;
  p.gamma = {1.0};
  p.beta = {0.0};
  p.running_mean = {0.0};
  p.running_var = {1.0};
  const auto r = batchnorm_forward(x, p, BnMode::train);
  batchnorm_update_running(p, r.cache);
  CHECK(p.running_mean[0] == doctest::Approx(0.2));
  CHECK(p.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("maxpool matches per-window brute force") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + int(rng.below(2));
    const int c = 1 + int(rng.below(3));
    const int h = 2 * (1 + int(rng.below(6)));
    const int w = 2 * (1 + int(rng.below(6)));
    Tensor4<float> x = random_tensor<float>(n, c, h, w, rng);
    const auto r = maxpool2x2(x);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j)
        for (int y = 0; y < h / 2; ++y)
          for (int xx = 0; xx < w / 2; ++xx) {
            float best = x.at(i, j, 2 * y, 2 * xx);
            best = std::max(best, x.at(i, j, 2 * y, 2 * xx + 1));
            best = std::max(best, x.at(i, j, 2 * y + 1, 2 * xx));
            best = std::max(best, x.at(i, j, 2 * y + 1, 2 * xx + 1));
            CHECK(r.y.at(i, j, y, xx) == best);
          }
  }
}

TEST_CASE("maxpool ties go to the lowest window offset") {
  Tensor4<float> x(1, 1, 2, 2, 4.f);
  const auto r = maxpool2x2(x);
  CHECK(r.y.data[0] == 4.f);
  CHECK(r.idx.argmax[0] == 0);
  CHECK_THROWS_AS(maxpool2x2(Tensor4<float>(1, 1, 3, 4)), ShapeError);
}

TEST_CASE("unpool places values at recorded offsets, maxpool inverts it") {
  Rng rng(17);
  Tensor4<float> x = random_tensor<float>(1, 2, 8, 6, rng);
  for (auto& v : x.data) v = std::abs(v) + 0.1f;  // keep maxima above the
                                                  // zeros unpooling inserts
  const auto pr = maxpool2x2(x);
  const auto up = unpool2x2(pr.y, pr.idx);
  // exactly one nonzero per window, at the argmax position, equal to the max
  std::size_t nonzero = 0;
  for (const float v : up.data) nonzero += (v != 0.f);
  CHECK(nonzero == pr.y.data.size());
  const auto again = maxpool2x2(up);
  for (std::size_t i = 0; i < pr.y.data.size(); ++i)
    CHECK(again.y.data[i] == pr.y.data[i]);
}

TEST_CASE("sigmoid is stable at extreme inputs") {
  Tensor4<double> x(1, 1, 1, 4);
  x.data = {1000.0, -1000.0, 0.0, 1.0};
  const auto y = sigmoid(x);
  CHECK(y.data[0] == 1.0);
  CHECK(y.data[1] == 0.0);
  CHECK(y.data[2] == 0.5);
  CHECK(y.data[3] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  for (const double v : y.data) CHECK(std::isfinite(v));
}

TEST_CASE("channel softmax sums to one and survives (1000, 0) logits") {
  Tensor4<double> x(1, 2, 1, 2);
  x.data = {1000.0, 0.0, 0.0, 3.0};
  const auto y = softmax_over_channels(x);
  CHECK(y.data[0] == doctest::Approx(1.0));  // channel 0 at pixel 0
  CHECK(y.data[2] == doctest::Approx(0.0));
  CHECK(y.data[0] + y.data[2] == doctest::Approx(1.0));
  CHECK(y.data[1] + y.data[3] == doctest::Approx(1.0));
  for (const double v : y.data) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(softmax_over_channels(Tensor4<double>(1, 1, 2, 2)),
                  ShapeError);
}

TEST_CASE("finite differences confirm every primitive backward") {
  for (const char* op : {"conv5x5", "conv1x1", "prelu", "batchnorm_train",
                         "maxpool_unpool", "sigmoid", "softmax_channels",
                         "dice_loss"})
    CHECK_MESSAGE(gradcheck(op) <= 1e-4, op);
}

TEST_CASE("a corrupted backward is detected by the gradcheck oracle") {
  CHECK(gradcheck("conv5x5_corrupted_fixture") > 1e-4);
  CHECK_THROWS_AS(gradcheck("no_such_op"), ConfigError);
}
