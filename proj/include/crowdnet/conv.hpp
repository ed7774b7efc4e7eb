// 2-D convolution with dilation ("holes"), forward and backward.
#pragma once

#include <algorithm>
#include <span>

#include "crowdnet/tensor.hpp"

namespace crowdnet {

namespace detail {
// b > 0 assumed
inline int64_t ceil_div(int64_t a, int64_t b) {
  return a > 0 ? (a + b - 1) / b : a / b;
}
inline int64_t floor_div(int64_t a, int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

// Output rows oh for which ih = oh*stride + tap - pad lands inside [0, in).
struct TapRange {
  int64_t lo, hi;  // half-open
};
inline TapRange tap_range(int64_t out_dim, int64_t in_dim, int64_t stride,
                          int64_t tap_minus_pad) {
  int64_t lo = std::max<int64_t>(0, ceil_div(-tap_minus_pad, stride));
  int64_t hi = std::min<int64_t>(out_dim, floor_div(in_dim - 1 - tap_minus_pad, stride) + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

// up[i] * in[i*stride] summed over a row with eight independent accumulators:
// a fixed, deterministic order the compiler can still vectorize.
inline float dot_row(const float* up, const float* in, int64_t stride, int64_t n) {
  float acc[8] = {};
  int64_t i = 0;
  if (stride == 1) {
    for (; i + 8 <= n; i += 8)
      for (int l = 0; l < 8; ++l) acc[l] += up[i + l] * in[i + l];
  } else {
    for (; i + 8 <= n; i += 8)
      for (int l = 0; l < 8; ++l) acc[l] += up[i + l] * in[(i + l) * stride];
  }
  float sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
              ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) sum += up[i] * in[i * stride];
  return sum;
}
}  // namespace detail

inline void check_conv_args(const Tensor& input, const Tensor& weights,
                            std::span<const float> bias, const LayerSpec& spec) {
  spec.validate();
  require(weights.batch == spec.out_channels, "conv2d: weight tensor has ",
          weights.batch, " output channels, spec says ", spec.out_channels);
  require(weights.channels == spec.in_channels, "conv2d: weight tensor has ",
          weights.channels, " input channels, spec says ", spec.in_channels);
  require(weights.height == spec.kernel && weights.width == spec.kernel,
          "conv2d: weight tensor is ", weights.height, "x", weights.width,
          ", spec kernel is ", spec.kernel);
  require(input.channels == spec.in_channels, "conv2d: input has ", input.channels,
          " channels, weights expect ", spec.in_channels);
  require(static_cast<int64_t>(bias.size()) == spec.out_channels, "conv2d: bias has ",
          bias.size(), " entries, expected ", spec.out_channels);
}

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                             std::span<const float> bias, const LayerSpec& spec) {
  check_conv_args(input, weights, bias, spec);
  const int64_t oh_dim = conv_out_dim(input.height, spec.kernel, spec.stride,
                                      spec.padding, spec.dilation);
  const int64_t ow_dim = conv_out_dim(input.width, spec.kernel, spec.stride,
                                      spec.padding, spec.dilation);
  require(oh_dim >= 1 && ow_dim >= 1, "conv2d: output dims ", oh_dim, "x", ow_dim,
          " for input ", input.height, "x", input.width, " (kernel ", spec.kernel,
          ", stride ", spec.stride, ", pad ", spec.padding, ", dilation ",
          spec.dilation, ")");

  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding, d = spec.dilation;
  const int64_t in_h = input.height, in_w = input.width;
  Tensor out(input.batch, spec.out_channels, oh_dim, ow_dim);

  // Row-major tap accumulation: for each output row, the k x k taps touch at
  // most k input rows, which stay cache-hot across the inner SAXPYs. Each
  // output element accumulates its taps in (ic, kh, kw) order.
  for (int64_t b = 0; b < input.batch; ++b) {
    for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
      float* out_p = out.plane(b, oc);
      const float bv = bias[static_cast<size_t>(oc)];
      for (int64_t i = 0; i < oh_dim * ow_dim; ++i) out_p[i] = bv;
      for (int64_t ic = 0; ic < spec.in_channels; ++ic) {
        const float* in_p = input.plane(b, ic);
        const float* wk = weights.plane(oc, ic);
        for (int64_t oh = 0; oh < oh_dim; ++oh) {
          float* out_row = out_p + oh * ow_dim;
          for (int64_t kh = 0; kh < k; ++kh) {
            const int64_t ih = oh * s + kh * d - p;
            if (ih < 0 || ih >= in_h) continue;
            const float* in_row = in_p + ih * in_w;
            for (int64_t kw = 0; kw < k; ++kw) {
              const float wv = wk[kh * k + kw];
              auto rw = detail::tap_range(ow_dim, in_w, s, kw * d - p);
              const int64_t n = rw.hi - rw.lo;
              float* dst = out_row + rw.lo;
              const float* src = in_row + rw.lo * s + kw * d - p;
              if (s == 1) {
                for (int64_t i = 0; i < n; ++i) dst[i] += wv * src[i];
              } else {
                for (int64_t i = 0; i < n; ++i) dst[i] += wv * src[i * s];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

struct Conv2dGrads {
  Tensor input_grad;
  Tensor weight_grad;
  std::vector<float> bias_grad;
};

// need_input_grad=false skips the input-gradient scatter (and leaves
// input_grad empty) for layers whose input is a network root.
inline Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                                   const LayerSpec& spec, const Tensor& upstream,
                                   bool need_input_grad = true) {
  std::vector<float> dummy_bias(static_cast<size_t>(spec.out_channels), 0.0f);
  check_conv_args(input, weights, dummy_bias, spec);
  const int64_t oh_dim = conv_out_dim(input.height, spec.kernel, spec.stride,
                                      spec.padding, spec.dilation);
  const int64_t ow_dim = conv_out_dim(input.width, spec.kernel, spec.stride,
                                      spec.padding, spec.dilation);
  require(upstream.batch == input.batch && upstream.channels == spec.out_channels &&
              upstream.height == oh_dim && upstream.width == ow_dim,
          "conv2d backward: upstream shape ", upstream.shape_str(), " does not match ",
          "forward output (", input.batch, ",", spec.out_channels, ",", oh_dim, ",",
          ow_dim, ")");

  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding, d = spec.dilation;
  const int64_t in_h = input.height, in_w = input.width;

  Conv2dGrads g;
  if (need_input_grad) g.input_grad = Tensor::zeros_like(input);
  g.weight_grad = Tensor::zeros_like(weights);
  g.bias_grad.assign(static_cast<size_t>(spec.out_channels), 0.0f);

  for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
    double acc = 0.0;
    for (int64_t b = 0; b < input.batch; ++b) {
      const float* up_p = upstream.plane(b, oc);
      for (int64_t i = 0; i < oh_dim * ow_dim; ++i) acc += up_p[i];
    }
    g.bias_grad[static_cast<size_t>(oc)] = static_cast<float>(acc);
  }

  for (int64_t b = 0; b < input.batch; ++b) {
    for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
      const float* up_p = upstream.plane(b, oc);
      for (int64_t ic = 0; ic < spec.in_channels; ++ic) {
        const float* in_p = input.plane(b, ic);
        float* ig_p = need_input_grad ? g.input_grad.plane(b, ic) : nullptr;
        const float* wk = weights.plane(oc, ic);
        float* wg = g.weight_grad.plane(oc, ic);
        for (int64_t kh = 0; kh < k; ++kh) {
          auto rh = detail::tap_range(oh_dim, in_h, s, kh * d - p);
          for (int64_t kw = 0; kw < k; ++kw) {
            const float wv = wk[kh * k + kw];
            auto rw = detail::tap_range(ow_dim, in_w, s, kw * d - p);
            const int64_t n = rw.hi - rw.lo;
            double wacc = 0.0;
            for (int64_t oh = rh.lo; oh < rh.hi; ++oh) {
              const int64_t ih = oh * s + kh * d - p;
              const float* up_row = up_p + oh * ow_dim + rw.lo;
              const float* in_row = in_p + ih * in_w + rw.lo * s + kw * d - p;
              if (ig_p) {
                float* ig_row = ig_p + ih * in_w + rw.lo * s + kw * d - p;
                if (s == 1) {
                  for (int64_t i = 0; i < n; ++i) ig_row[i] += wv * up_row[i];
                } else {
                  for (int64_t i = 0; i < n; ++i) ig_row[i * s] += wv * up_row[i];
                }
              }
              wacc += detail::dot_row(up_row, in_row, s, n);
            }
            wg[kh * k + kw] += static_cast<float>(wacc);
          }
        }
      }
    }
  }
  return g;
}

}  // namespace crowdnet
