// Max pooling (with argmax bookkeeping) and average pooling, floor rounding.
#pragma once

#include <limits>

#include "crowdnet/tensor.hpp"

namespace crowdnet {

struct MaxPoolResult {
  Tensor output;
  std::vector<int64_t> argmax;  // flat index into the input tensor, per output cell
};

inline void check_pool_args(const Tensor& input, int kernel, int stride, int padding) {
  require(kernel >= 1, "pool: kernel must be >= 1, got ", kernel);
  require(stride >= 1, "pool: stride must be >= 1, got ", stride);
  require(padding >= 0, "pool: padding must be >= 0, got ", padding);
  require(padding < kernel, "pool: padding ", padding, " must be smaller than kernel ",
          kernel);
  require(kernel <= input.height + 2 * padding && kernel <= input.width + 2 * padding,
          "pool: kernel ", kernel, " larger than padded input ",
          input.height + 2 * padding, "x", input.width + 2 * padding);
}

inline MaxPoolResult max_pool_forward(const Tensor& input, int kernel, int stride,
                                      int padding) {
  check_pool_args(input, kernel, stride, padding);
  const int64_t oh_dim = pool_out_dim(input.height, kernel, stride, padding);
  const int64_t ow_dim = pool_out_dim(input.width, kernel, stride, padding);
  require(oh_dim >= 1 && ow_dim >= 1, "pool: empty output for input ", input.height,
          "x", input.width);

  MaxPoolResult r;
  r.output = Tensor(input.batch, input.channels, oh_dim, ow_dim);
  r.argmax.assign(static_cast<size_t>(r.output.size()), -1);

  int64_t out_idx = 0;
  for (int64_t b = 0; b < input.batch; ++b) {
    for (int64_t c = 0; c < input.channels; ++c) {
      const float* in_p = input.plane(b, c);
      const int64_t base = (b * input.channels + c) * input.plane_size();
      for (int64_t oh = 0; oh < oh_dim; ++oh) {
        for (int64_t ow = 0; ow < ow_dim; ++ow) {
          // padding contributes -infinity, so only real pixels compete
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_idx = -1;
          for (int64_t kh = 0; kh < kernel; ++kh) {
            const int64_t ih = oh * stride + kh - padding;
            if (ih < 0 || ih >= input.height) continue;
            for (int64_t kw = 0; kw < kernel; ++kw) {
              const int64_t iw = ow * stride + kw - padding;
              if (iw < 0 || iw >= input.width) continue;
              const float v = in_p[ih * input.width + iw];
              if (v > best) {
                best = v;
                best_idx = base + ih * input.width + iw;
              }
            }
          }
          r.output.data[static_cast<size_t>(out_idx)] = best;
          r.argmax[static_cast<size_t>(out_idx)] = best_idx;
          ++out_idx;
        }
      }
    }
  }
  return r;
}

// Routes each upstream value to the recorded argmax position.
inline Tensor max_pool_backward(const MaxPoolResult& fwd, const Tensor& input,
                                const Tensor& upstream) {
  require(upstream.same_shape(fwd.output), "max-pool backward: upstream shape ",
          upstream.shape_str(), " does not match pooled shape ",
          fwd.output.shape_str());
  Tensor grad = Tensor::zeros_like(input);
  for (int64_t i = 0; i < upstream.size(); ++i) {
    grad.data[static_cast<size_t>(fwd.argmax[static_cast<size_t>(i)])] +=
        upstream.data[static_cast<size_t>(i)];
  }
  return grad;
}

inline Tensor avg_pool_forward(const Tensor& input, int kernel, int stride) {
  check_pool_args(input, kernel, stride, 0);
  const int64_t oh_dim = pool_out_dim(input.height, kernel, stride, 0);
  const int64_t ow_dim = pool_out_dim(input.width, kernel, stride, 0);
  require(oh_dim >= 1 && ow_dim >= 1, "pool: empty output for input ", input.height,
          "x", input.width);

  Tensor out(input.batch, input.channels, oh_dim, ow_dim);
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  for (int64_t b = 0; b < input.batch; ++b) {
    for (int64_t c = 0; c < input.channels; ++c) {
      const float* in_p = input.plane(b, c);
      float* out_p = out.plane(b, c);
      for (int64_t oh = 0; oh < oh_dim; ++oh) {
        for (int64_t ow = 0; ow < ow_dim; ++ow) {
          float sum = 0.0f;
          for (int64_t kh = 0; kh < kernel; ++kh) {
            const float* row = in_p + (oh * stride + kh) * input.width + ow * stride;
            for (int64_t kw = 0; kw < kernel; ++kw) sum += row[kw];
          }
          out_p[oh * ow_dim + ow] = sum * inv;
        }
      }
    }
  }
  return out;
}

// Distributes upstream / k^2 uniformly over each window.
inline Tensor avg_pool_backward(const Tensor& input, int kernel, int stride,
                                const Tensor& upstream) {
  check_pool_args(input, kernel, stride, 0);
  const int64_t oh_dim = pool_out_dim(input.height, kernel, stride, 0);
  const int64_t ow_dim = pool_out_dim(input.width, kernel, stride, 0);
  require(upstream.batch == input.batch && upstream.channels == input.channels &&
              upstream.height == oh_dim && upstream.width == ow_dim,
          "avg-pool backward: upstream shape ", upstream.shape_str(),
          " does not match pooled shape (", input.batch, ",", input.channels, ",",
          oh_dim, ",", ow_dim, ")");

  Tensor grad = Tensor::zeros_like(input);
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  for (int64_t b = 0; b < input.batch; ++b) {
    for (int64_t c = 0; c < input.channels; ++c) {
      const float* up_p = upstream.plane(b, c);
      float* g_p = grad.plane(b, c);
      for (int64_t oh = 0; oh < oh_dim; ++oh) {
        for (int64_t ow = 0; ow < ow_dim; ++ow) {
          const float share = up_p[oh * ow_dim + ow] * inv;
          for (int64_t kh = 0; kh < kernel; ++kh) {
            float* row = g_p + (oh * stride + kh) * input.width + ow * stride;
            for (int64_t kw = 0; kw < kernel; ++kw) row[kw] += share;
          }
        }
      }
    }
  }
  return grad;
}

}  // namespace crowdnet
