#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include <crowdnet/pool.hpp>
#include <crowdnet/rng.hpp>

#include "support/oracles.hpp"

using namespace crowdnet;

namespace {

Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const int64_t h = static_cast<int64_t>(rows.size());
  const int64_t w = static_cast<int64_t>(rows.begin()->size());
  Tensor t(1, 1, h, w);
  int64_t y = 0;
  for (const auto& row : rows) {
    int64_t x = 0;
    for (float v : row) t.at(0, 0, y, x++) = v;
    ++y;
  }
  return t;
}

}  // namespace

TEST_CASE("2x2 max pool picks the window maximum") {
  const Tensor input = from_rows({{1, 2}, {3, 4}});
  const MaxPoolResult r = max_pool_forward(input, 2, 2, 0);
  REQUIRE(r.output.height == 1);
  REQUIRE(r.output.width == 1);
  REQUIRE(r.output.at(0, 0, 0, 0) == 4.0f);

  Tensor upstream(1, 1, 1, 1);
  upstream.at(0, 0, 0, 0) = 1.0f;
  const Tensor grad = max_pool_backward(r, input, upstream);
  CHECK(grad.at(0, 0, 0, 0) == 0.0f);
  CHECK(grad.at(0, 0, 0, 1) == 0.0f);
  CHECK(grad.at(0, 0, 1, 0) == 0.0f);
  CHECK(grad.at(0, 0, 1, 1) == 1.0f);
}

TEST_CASE("stride-2 pooling floors odd dimensions") {
  Tensor input(1, 1, 5, 5);
  const MaxPoolResult r = max_pool_forward(input, 2, 2, 0);
  REQUIRE(r.output.height == 2);
  REQUIRE(r.output.width == 2);
}

TEST_CASE("3x3 stride-1 pad-1 max pool preserves dims and dominates the input") {
  Rng rng(21);
  const Tensor input = oracle::random_tensor(rng, 1, 2, 28, 28);
  const MaxPoolResult r = max_pool_forward(input, 3, 1, 1);
  REQUIRE(r.output.height == 28);
  REQUIRE(r.output.width == 28);
  // Every output window contains the centered input value.
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t y = 0; y < 28; ++y)
      for (int64_t x = 0; x < 28; ++x)
        REQUIRE(r.output.at(0, c, y, x) >= input.at(0, c, y, x));

  const Tensor want = oracle::max_pool_naive(input, 3, 1, 1);
  REQUIRE(oracle::max_abs_diff(r.output, want) == 0.0);
}

TEST_CASE("max pool matches the naive oracle across configs") {
  Rng rng(22);
  struct Case {
    int kernel, stride, padding;
    int64_t h, w;
  };
  const Case cases[] = {
      {2, 2, 0, 8, 8}, {2, 2, 0, 9, 7}, {3, 2, 1, 11, 13}, {3, 1, 1, 6, 6},
      {3, 3, 0, 9, 9}, {2, 1, 1, 5, 5},
  };
  for (const Case& c : cases) {
    CAPTURE(c.kernel, c.stride, c.padding, c.h, c.w);
    const Tensor input = oracle::random_tensor(rng, 2, 3, c.h, c.w);
    const MaxPoolResult r = max_pool_forward(input, c.kernel, c.stride, c.padding);
    const Tensor want = oracle::max_pool_naive(input, c.kernel, c.stride, c.padding);
    REQUIRE(r.output.same_shape(want));
    REQUIRE(oracle::max_abs_diff(r.output, want) == 0.0);
  }
}

TEST_CASE("max pool backward routes each upstream value to one argmax cell") {
  Rng rng(23);
  const Tensor input = oracle::random_tensor(rng, 1, 2, 10, 10);
  const MaxPoolResult r = max_pool_forward(input, 2, 2, 0);
  const Tensor upstream = oracle::random_tensor(rng, 1, 2, 5, 5);
  const Tensor grad = max_pool_backward(r, input, upstream);

  double up_sum = 0.0, grad_sum = 0.0;
  for (float v : upstream.data) up_sum += v;
  for (float v : grad.data) grad_sum += v;
  REQUIRE_THAT(grad_sum, Catch::Matchers::WithinAbs(up_sum, 1e-4));

  // Non-overlapping windows: at most one nonzero cell per window.
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t oy = 0; oy < 5; ++oy)
      for (int64_t ox = 0; ox < 5; ++ox) {
        int nonzero = 0;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx)
            if (grad.at(0, c, oy * 2 + dy, ox * 2 + dx) != 0.0f) ++nonzero;
        REQUIRE(nonzero <= 1);
      }
}

TEST_CASE("max pool gradient agrees with finite differences") {
  Rng rng(24);
  // Values with a guaranteed gap so the perturbation never flips an argmax.
  Tensor input(1, 2, 8, 8);
  std::vector<int> ranks(input.data.size());
  std::iota(ranks.begin(), ranks.end(), 0);
  rng.shuffle(ranks);
  for (size_t i = 0; i < input.data.size(); ++i)
    input.data[i] = 0.02f * static_cast<float>(ranks[i]);
  const MaxPoolResult fwd = max_pool_forward(input, 3, 2, 1);
  const Tensor proj = oracle::projection_like(rng, fwd.output);

  const auto scalar = [&]() {
    return oracle::dot(max_pool_forward(input, 3, 2, 1).output, proj);
  };
  const Tensor analytic = max_pool_backward(fwd, input, proj);
  // Small eps keeps perturbations from changing any argmax.
  const auto fd = oracle::fd_gradient(input, scalar, 1e-3);
  REQUIRE(oracle::worst_rel_error(analytic.data, fd) < 1e-2);
}

TEST_CASE("2x2 average pool averages the window") {
  const Tensor input = from_rows({{1, 2}, {3, 4}});
  const Tensor out = avg_pool_forward(input, 2, 2);
  REQUIRE(out.height == 1);
  REQUIRE(out.width == 1);
  REQUIRE(out.at(0, 0, 0, 0) == 2.5f);
}

TEST_CASE("average pooling preserves total mass when the kernel tiles the input") {
  Rng rng(25);
  for (int k : {2, 3, 4}) {
    const int64_t h = 4 * k, w = 6 * k;
    const Tensor input = oracle::random_tensor(rng, 1, 1, h, w, 0.0, 1.0);
    const Tensor out = avg_pool_forward(input, k, k);
    double in_sum = 0.0, out_sum = 0.0;
    for (float v : input.data) in_sum += v;
    for (float v : out.data) out_sum += v;
    // Each output cell is mean of k*k inputs, so sum(out) * k^2 == sum(in).
    CAPTURE(k);
    REQUIRE_THAT(out_sum * k * k,
                 Catch::Matchers::WithinRel(in_sum, 1e-4));
  }
}

TEST_CASE("average pool backward spreads gradient uniformly") {
  Tensor input(1, 1, 4, 4);
  Tensor upstream(1, 1, 2, 2);
  for (float& v : upstream.data) v = 1.0f;
  const Tensor grad = avg_pool_backward(input, 2, 2, upstream);
  for (float v : grad.data) REQUIRE(v == 0.25f);
}

TEST_CASE("average pool gradient agrees with finite differences") {
  Rng rng(26);
  Tensor input = oracle::random_tensor(rng, 1, 2, 8, 8);
  const Tensor fwd = avg_pool_forward(input, 2, 2);
  const Tensor proj = oracle::projection_like(rng, fwd);

  const auto scalar = [&]() { return oracle::dot(avg_pool_forward(input, 2, 2), proj); };
  const Tensor analytic = avg_pool_backward(input, 2, 2, proj);
  const auto fd = oracle::fd_gradient(input, scalar, 1e-2);
  REQUIRE(oracle::worst_rel_error(analytic.data, fd) < 1e-2);
}

TEST_CASE("pool argument validation") {
  Tensor input(1, 1, 4, 4);
  REQUIRE_THROWS_AS(max_pool_forward(input, 0, 2, 0), Error);
  REQUIRE_THROWS_AS(max_pool_forward(input, 2, 0, 0), Error);
  // Padding must stay below the kernel so windows never go empty.
  REQUIRE_THROWS_AS(max_pool_forward(input, 2, 2, 2), Error);
  // Kernel larger than the padded input.
  REQUIRE_THROWS_AS(max_pool_forward(input, 5, 1, 0), Error);
  REQUIRE_THROWS_WITH(avg_pool_forward(Tensor(1, 1, 1, 1), 2, 2),
                      Catch::Matchers::ContainsSubstring("kernel"));
}
