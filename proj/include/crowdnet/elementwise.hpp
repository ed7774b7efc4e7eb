// ReLU, channel concatenation, L2 loss, SGD-with-momentum update, weight init.
#pragma once

#include <cmath>
#include <utility>

#include "crowdnet/rng.hpp"
#include "crowdnet/tensor.hpp"

namespace crowdnet {

inline Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data)
    if (v < 0.0f) v = 0.0f;
  return out;
}

// Subgradient at 0 is 0: only strictly positive inputs pass gradient.
inline Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  require(upstream.same_shape(input), "relu backward: upstream shape ",
          upstream.shape_str(), " does not match input ", input.shape_str());
  Tensor grad = upstream;
  for (int64_t i = 0; i < input.size(); ++i)
    if (input.data[static_cast<size_t>(i)] <= 0.0f) grad.data[static_cast<size_t>(i)] = 0.0f;
  return grad;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.batch == b.batch && a.height == b.height && a.width == b.width,
          "concat: shapes ", a.shape_str(), " and ", b.shape_str(),
          " differ outside the channel axis");
  Tensor out(a.batch, a.channels + b.channels, a.height, a.width);
  for (int64_t n = 0; n < a.batch; ++n) {
    for (int64_t c = 0; c < a.channels; ++c) {
      const float* src = a.plane(n, c);
      float* dst = out.plane(n, c);
      for (int64_t i = 0; i < a.plane_size(); ++i) dst[i] = src[i];
    }
    for (int64_t c = 0; c < b.channels; ++c) {
      const float* src = b.plane(n, c);
      float* dst = out.plane(n, a.channels + c);
      for (int64_t i = 0; i < b.plane_size(); ++i) dst[i] = src[i];
    }
  }
  return out;
}

// Splits the upstream gradient at the channel seam.
inline std::pair<Tensor, Tensor> concat_channels_backward(const Tensor& upstream,
                                                          int64_t a_channels) {
  require(a_channels >= 0 && a_channels <= upstream.channels,
          "concat backward: seam ", a_channels, " outside ", upstream.channels,
          " channels");
  Tensor ga(upstream.batch, a_channels, upstream.height, upstream.width);
  Tensor gb(upstream.batch, upstream.channels - a_channels, upstream.height,
            upstream.width);
  for (int64_t n = 0; n < upstream.batch; ++n) {
    for (int64_t c = 0; c < ga.channels; ++c) {
      const float* src = upstream.plane(n, c);
      float* dst = ga.plane(n, c);
      for (int64_t i = 0; i < ga.plane_size(); ++i) dst[i] = src[i];
    }
    for (int64_t c = 0; c < gb.channels; ++c) {
      const float* src = upstream.plane(n, a_channels + c);
      float* dst = gb.plane(n, c);
      for (int64_t i = 0; i < gb.plane_size(); ++i) dst[i] = src[i];
    }
  }
  return {std::move(ga), std::move(gb)};
}

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d pred
};

// loss = sum((pred - gt)^2) / (2 * batch); 64-bit accumulation.
inline LossResult l2_loss(const Tensor& pred, const Tensor& gt) {
  require(pred.same_shape(gt), "l2 loss: prediction shape ", pred.shape_str(),
          " does not match ground truth ", gt.shape_str());
  require(pred.batch >= 1, "l2 loss: empty batch");
  LossResult r;
  r.grad = Tensor::zeros_like(pred);
  const float inv_b = 1.0f / static_cast<float>(pred.batch);
  double acc = 0.0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const float d = pred.data[static_cast<size_t>(i)] - gt.data[static_cast<size_t>(i)];
    acc += static_cast<double>(d) * static_cast<double>(d);
    r.grad.data[static_cast<size_t>(i)] = d * inv_b;
  }
  r.loss = acc / (2.0 * static_cast<double>(pred.batch));
  return r;
}

// velocity <- momentum * velocity - lr * grad; value <- value + velocity; grad <- 0
inline void sgd_update(ParamState& p, double lr, double momentum) {
  require(lr >= 0.0, "sgd: learning rate must be >= 0, got ", lr);
  require(momentum >= 0.0 && momentum < 1.0, "sgd: momentum must be in [0, 1), got ",
          momentum);
  require(p.grad.same_shape(p.value) && p.velocity.same_shape(p.value),
          "sgd: state shapes differ for parameter '", p.name, "'");
  for (int64_t i = 0; i < p.grad.size(); ++i) {
    if (!std::isfinite(p.grad.data[static_cast<size_t>(i)]))
      fail("sgd: non-finite gradient in parameter '", p.name, "' at index ", i);
  }
  const float m = static_cast<float>(momentum);
  const float step = static_cast<float>(lr);
  for (int64_t i = 0; i < p.value.size(); ++i) {
    const size_t s = static_cast<size_t>(i);
    p.velocity.data[s] = m * p.velocity.data[s] - step * p.grad.data[s];
    p.value.data[s] += p.velocity.data[s];
    p.grad.data[s] = 0.0f;
  }
}

constexpr double kInitStddev = 0.1;  // Gaussian(0, 0.01) variance -> stddev 0.1

inline void fill_gaussian(Tensor& t, Rng& rng, double stddev = kInitStddev) {
  for (float& v : t.data) v = static_cast<float>(rng.normal(0.0, stddev));
}

struct ConvInit {
  Tensor weights;               // (out_ch, in_ch, k, k)
  std::vector<float> bias;      // zeros, length out_ch
};

inline ConvInit init_weights(const LayerSpec& spec, uint64_t seed) {
  spec.validate();
  require(spec.kind == LayerKind::conv, "init: spec is not a conv layer");
  ConvInit r;
  r.weights = Tensor(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel);
  Rng rng(seed);
  fill_gaussian(r.weights, rng);
  r.bias.assign(static_cast<size_t>(spec.out_channels), 0.0f);
  return r;
}

}  // namespace crowdnet
