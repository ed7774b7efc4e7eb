// Bilinear resize with half-pixel source mapping, forward and transpose backward.
#pragma once

#include <cmath>

#include "crowdnet/tensor.hpp"

namespace crowdnet {

namespace detail {
struct BlendAxis {
  std::vector<int64_t> lo, hi;
  std::vector<float> frac;  // weight of hi
};

// src = (dst + 0.5) * (src_dim / dst_dim) - 0.5, clamped to [0, src_dim - 1]
inline BlendAxis blend_axis(int64_t src_dim, int64_t dst_dim) {
  BlendAxis a;
  a.lo.resize(static_cast<size_t>(dst_dim));
  a.hi.resize(static_cast<size_t>(dst_dim));
  a.frac.resize(static_cast<size_t>(dst_dim));
  const double scale = static_cast<double>(src_dim) / static_cast<double>(dst_dim);
  for (int64_t d = 0; d < dst_dim; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > static_cast<double>(src_dim - 1)) s = static_cast<double>(src_dim - 1);
    const int64_t lo = static_cast<int64_t>(std::floor(s));
    const int64_t hi = lo + 1 < src_dim ? lo + 1 : src_dim - 1;
    a.lo[static_cast<size_t>(d)] = lo;
    a.hi[static_cast<size_t>(d)] = hi;
    a.frac[static_cast<size_t>(d)] = static_cast<float>(s - static_cast<double>(lo));
  }
  return a;
}
}  // namespace detail

inline Tensor bilinear_resize(const Tensor& input, int64_t target_h, int64_t target_w) {
  require(target_h >= 1 && target_w >= 1, "bilinear: target dims must be >= 1, got ",
          target_h, "x", target_w);
  require(input.height >= 1 && input.width >= 1, "bilinear: empty input ",
          input.shape_str());
  const auto ay = detail::blend_axis(input.height, target_h);
  const auto ax = detail::blend_axis(input.width, target_w);

  Tensor out(input.batch, input.channels, target_h, target_w);
  for (int64_t b = 0; b < input.batch; ++b) {
    for (int64_t c = 0; c < input.channels; ++c) {
      const float* in_p = input.plane(b, c);
      float* out_p = out.plane(b, c);
      for (int64_t y = 0; y < target_h; ++y) {
        const float* r0 = in_p + ay.lo[static_cast<size_t>(y)] * input.width;
        const float* r1 = in_p + ay.hi[static_cast<size_t>(y)] * input.width;
        const float fy = ay.frac[static_cast<size_t>(y)];
        for (int64_t x = 0; x < target_w; ++x) {
          const int64_t x0 = ax.lo[static_cast<size_t>(x)];
          const int64_t x1 = ax.hi[static_cast<size_t>(x)];
          const float fx = ax.frac[static_cast<size_t>(x)];
          const float top = r0[x0] + fx * (r0[x1] - r0[x0]);
          const float bot = r1[x0] + fx * (r1[x1] - r1[x0]);
          out_p[y * target_w + x] = top + fy * (bot - top);
        }
      }
    }
  }
  return out;
}

// Transpose of the forward blend: scatters each upstream value onto its
// four source neighbours with the same weights.
inline Tensor bilinear_resize_backward(const Tensor& upstream, int64_t src_h,
                                       int64_t src_w) {
  require(src_h >= 1 && src_w >= 1, "bilinear backward: source dims must be >= 1");
  const auto ay = detail::blend_axis(src_h, upstream.height);
  const auto ax = detail::blend_axis(src_w, upstream.width);

  Tensor grad(upstream.batch, upstream.channels, src_h, src_w);
  for (int64_t b = 0; b < upstream.batch; ++b) {
    for (int64_t c = 0; c < upstream.channels; ++c) {
      const float* up_p = upstream.plane(b, c);
      float* g_p = grad.plane(b, c);
      for (int64_t y = 0; y < upstream.height; ++y) {
        const int64_t y0 = ay.lo[static_cast<size_t>(y)];
        const int64_t y1 = ay.hi[static_cast<size_t>(y)];
        const float fy = ay.frac[static_cast<size_t>(y)];
        for (int64_t x = 0; x < upstream.width; ++x) {
          const int64_t x0 = ax.lo[static_cast<size_t>(x)];
          const int64_t x1 = ax.hi[static_cast<size_t>(x)];
          const float fx = ax.frac[static_cast<size_t>(x)];
          const float v = up_p[y * upstream.width + x];
          g_p[y0 * src_w + x0] += v * (1.0f - fy) * (1.0f - fx);
          g_p[y0 * src_w + x1] += v * (1.0f - fy) * fx;
          g_p[y1 * src_w + x0] += v * fy * (1.0f - fx);
          g_p[y1 * src_w + x1] += v * fy * fx;
        }
      }
    }
  }
  return grad;
}

}  // namespace crowdnet
