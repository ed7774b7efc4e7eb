#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <crowdnet/elementwise.hpp>
#include <crowdnet/rng.hpp>

#include "support/oracles.hpp"

using namespace crowdnet;

TEST_CASE("relu clamps negatives and keeps positives") {
  Tensor t(1, 1, 1, 3);
  t.data = {-1.0f, 0.0f, 2.0f};
  const Tensor out = relu_forward(t);
  CHECK(out.data[0] == 0.0f);
  CHECK(out.data[1] == 0.0f);
  CHECK(out.data[2] == 2.0f);
}

TEST_CASE("relu backward masks on the pre-activation sign") {
  Tensor t(1, 1, 1, 4);
  t.data = {-3.0f, 0.0f, 1.0f, 0.5f};
  Tensor up(1, 1, 1, 4);
  up.data = {10.0f, 10.0f, 10.0f, -2.0f};
  const Tensor g = relu_backward(t, up);
  CHECK(g.data[0] == 0.0f);
  // Subgradient at exactly zero is zero.
  CHECK(g.data[1] == 0.0f);
  CHECK(g.data[2] == 10.0f);
  CHECK(g.data[3] == -2.0f);

  Tensor bad(1, 1, 2, 2);
  REQUIRE_THROWS_AS(relu_backward(t, bad), Error);
}

TEST_CASE("channel concat stacks the branch outputs") {
  Tensor a(1, 512, 28, 28);
  Tensor b(1, 24, 28, 28);
  a.at(0, 511, 0, 0) = 3.0f;
  b.at(0, 0, 0, 0) = 5.0f;
  const Tensor cat = concat_channels(a, b);
  REQUIRE(cat.channels == 536);
  REQUIRE(cat.height == 28);
  REQUIRE(cat.width == 28);
  CHECK(cat.at(0, 511, 0, 0) == 3.0f);
  CHECK(cat.at(0, 512, 0, 0) == 5.0f);
}

TEST_CASE("concat preserves per-channel contents and splits back") {
  Rng rng(31);
  const Tensor a = oracle::random_tensor(rng, 2, 3, 4, 5);
  const Tensor b = oracle::random_tensor(rng, 2, 2, 4, 5);
  const Tensor cat = concat_channels(a, b);

  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 5; ++x) {
        for (int64_t c = 0; c < 3; ++c)
          REQUIRE(cat.at(n, c, y, x) == a.at(n, c, y, x));
        for (int64_t c = 0; c < 2; ++c)
          REQUIRE(cat.at(n, 3 + c, y, x) == b.at(n, c, y, x));
      }

  const Tensor upstream = oracle::random_tensor(rng, 2, 5, 4, 5);
  const auto [ga, gb] = concat_channels_backward(upstream, 3);
  REQUIRE(ga.same_shape(a));
  REQUIRE(gb.same_shape(b));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 5; ++x) {
        for (int64_t c = 0; c < 3; ++c)
          REQUIRE(ga.at(n, c, y, x) == upstream.at(n, c, y, x));
        for (int64_t c = 0; c < 2; ++c)
          REQUIRE(gb.at(n, c, y, x) == upstream.at(n, 3 + c, y, x));
      }
}

TEST_CASE("concat accepts a zero-channel operand") {
  Tensor a(1, 0, 3, 3);
  Tensor b(1, 2, 3, 3);
  b.at(0, 1, 2, 2) = 9.0f;
  const Tensor cat = concat_channels(a, b);
  REQUIRE(cat.channels == 2);
  REQUIRE(cat.at(0, 1, 2, 2) == 9.0f);

  Tensor mismatched(1, 2, 4, 3);
  REQUIRE_THROWS_AS(concat_channels(a, mismatched), Error);
}

TEST_CASE("l2 loss of a perfect prediction is zero") {
  Rng rng(32);
  const Tensor pred = oracle::random_tensor(rng, 2, 1, 3, 3);
  const LossResult r = l2_loss(pred, pred);
  REQUIRE(r.loss == 0.0);
  for (float g : r.grad.data) REQUIRE(g == 0.0f);
}

TEST_CASE("l2 loss of a uniform unit error is half the pixel count") {
  const int64_t p = 5 * 7;
  Tensor pred(1, 1, 5, 7);
  Tensor gt(1, 1, 5, 7);
  for (float& v : pred.data) v = 1.0f;
  const LossResult r = l2_loss(pred, gt);
  REQUIRE_THAT(r.loss, Catch::Matchers::WithinAbs(p / 2.0, 1e-9));
  for (float g : r.grad.data) REQUIRE(g == 1.0f);
}

TEST_CASE("l2 loss divides by the batch size") {
  Tensor pred(4, 1, 2, 2);
  Tensor gt(4, 1, 2, 2);
  for (float& v : pred.data) v = 2.0f;
  const LossResult r = l2_loss(pred, gt);
  // 16 pixels of squared error 4, over 2 * batch = 8.
  REQUIRE_THAT(r.loss, Catch::Matchers::WithinAbs(8.0, 1e-9));
  for (float g : r.grad.data) REQUIRE(g == 0.5f);

  REQUIRE_THROWS_AS(l2_loss(pred, Tensor(4, 1, 2, 3)), Error);
}

TEST_CASE("l2 loss gradient agrees with finite differences") {
  Rng rng(33);
  Tensor pred = oracle::random_tensor(rng, 2, 1, 4, 4);
  const Tensor gt = oracle::random_tensor(rng, 2, 1, 4, 4);
  const LossResult r = l2_loss(pred, gt);

  const auto scalar = [&]() { return l2_loss(pred, gt).loss; };
  const auto fd = oracle::fd_gradient(pred, scalar, 1e-3);
  REQUIRE(oracle::worst_rel_error(r.grad.data, fd, 1e-3) < 1e-3);
}

TEST_CASE("sgd without momentum steps against the gradient") {
  Tensor v(1, 1, 1, 1);
  v.at(0, 0, 0, 0) = 1.0f;
  ParamState p("w", v);
  p.grad.at(0, 0, 0, 0) = 2.0f;
  sgd_update(p, 0.1, 0.0);
  REQUIRE_THAT(p.value.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(0.8, 1e-6));
  // Gradient is consumed by the step.
  REQUIRE(p.grad.at(0, 0, 0, 0) == 0.0f);
}

TEST_CASE("two momentum steps with a constant gradient compound") {
  Tensor v(1, 1, 1, 1);
  ParamState p("w", v);
  const double lr = 0.01, g = 3.0;

  p.grad.at(0, 0, 0, 0) = static_cast<float>(g);
  sgd_update(p, lr, 0.9);
  p.grad.at(0, 0, 0, 0) = static_cast<float>(g);
  sgd_update(p, lr, 0.9);

  // v1 = -lr*g, v2 = 0.9*v1 - lr*g; total displacement = -lr*g*2.9.
  REQUIRE_THAT(p.value.at(0, 0, 0, 0),
               Catch::Matchers::WithinRel(-lr * g * 2.9, 1e-5));
}

TEST_CASE("momentum keeps coasting when the gradient vanishes") {
  Tensor v(1, 1, 1, 1);
  ParamState p("w", v);
  p.grad.at(0, 0, 0, 0) = 1.0f;
  sgd_update(p, 0.1, 0.5);
  REQUIRE_THAT(p.velocity.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(-0.1, 1e-7));
  // Zero gradient: velocity decays by the momentum factor.
  sgd_update(p, 0.1, 0.5);
  REQUIRE_THAT(p.velocity.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(-0.05, 1e-7));
  REQUIRE_THAT(p.value.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(-0.15, 1e-7));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Rng rng(34);
  Tensor v = oracle::random_tensor(rng, 2, 2, 3, 3);
  ParamState p("w", v);
  const std::vector<float> before = p.value.data;
  p.grad = oracle::random_tensor(rng, 2, 2, 3, 3);
  sgd_update(p, 0.0, 0.9);
  REQUIRE(p.value.data == before);
}

TEST_CASE("sgd validates its hyperparameters and gradient") {
  Tensor v(1, 1, 1, 1);
  ParamState p("conv3.weight", v);
  REQUIRE_THROWS_AS(sgd_update(p, -0.1, 0.9), Error);
  REQUIRE_THROWS_AS(sgd_update(p, 0.1, 1.0), Error);
  REQUIRE_THROWS_AS(sgd_update(p, 0.1, -0.1), Error);

  p.grad.at(0, 0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
  REQUIRE_THROWS_WITH(sgd_update(p, 0.1, 0.9),
                      Catch::Matchers::ContainsSubstring("conv3.weight"));
}

TEST_CASE("weight init is deterministic per seed with zero biases") {
  const LayerSpec spec = LayerSpec::conv2d(3, 8, 3, 1, 1);
  const ConvInit a = init_weights(spec, 99);
  const ConvInit b = init_weights(spec, 99);
  REQUIRE(a.weights.data == b.weights.data);
  const ConvInit c = init_weights(spec, 100);
  REQUIRE(a.weights.data != c.weights.data);

  REQUIRE(a.bias.size() == 8);
  for (float bias : a.bias) REQUIRE(bias == 0.0f);
  REQUIRE(a.weights.batch == 8);
  REQUIRE(a.weights.channels == 3);
  REQUIRE(a.weights.height == 3);
}

TEST_CASE("weight init draws match the configured distribution") {
  // Enough draws that the sample mean must sit within 3 sigma of zero.
  const LayerSpec spec = LayerSpec::conv2d(64, 64, 5);
  const ConvInit r = init_weights(spec, 7);
  const size_t n = r.weights.data.size();
  REQUIRE(n >= 100000);

  double sum = 0.0, sumsq = 0.0;
  for (float v : r.weights.data) {
    sum += v;
    sumsq += static_cast<double>(v) * v;
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sumsq / static_cast<double>(n) - mean * mean);
  REQUIRE(std::abs(mean) < 3.0 * kInitStddev / std::sqrt(static_cast<double>(n)));
  REQUIRE_THAT(sd, Catch::Matchers::WithinAbs(kInitStddev, 0.002));

  REQUIRE_THROWS_AS(init_weights(LayerSpec::activation(), 1), Error);
}
