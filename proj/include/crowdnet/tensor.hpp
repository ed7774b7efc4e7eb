// Dense rank-4 tensor (batch, channels, height, width), row-major float32.
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace crowdnet {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void append_all(std::ostringstream&) {}
template <class T, class... Rest>
void append_all(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append_all(os, rest...);
}
}  // namespace detail

template <class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  std::ostringstream os;
  detail::append_all(os, parts...);
  throw Error(os.str());
}

template <class... Parts>
void require(bool cond, const Parts&... parts) {
  if (!cond) fail(parts...);
}

struct Tensor {
  int64_t batch = 0;
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int64_t b, int64_t c, int64_t h, int64_t w)
      : batch(b), channels(c), height(h), width(w) {
    require(b >= 0 && c >= 0 && h >= 0 && w >= 0,
            "tensor: negative dimension in (", b, ",", c, ",", h, ",", w, ")");
    data.assign(static_cast<size_t>(b * c * h * w), 0.0f);
  }

  int64_t size() const { return batch * channels * height * width; }
  int64_t plane_size() const { return height * width; }

  float& at(int64_t b, int64_t c, int64_t h, int64_t w) {
    return data[static_cast<size_t>(((b * channels + c) * height + h) * width + w)];
  }
  float at(int64_t b, int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(((b * channels + c) * height + h) * width + w)];
  }

  float* plane(int64_t b, int64_t c) {
    return data.data() + (b * channels + c) * height * width;
  }
  const float* plane(int64_t b, int64_t c) const {
    return data.data() + (b * channels + c) * height * width;
  }

  bool same_shape(const Tensor& o) const {
    return batch == o.batch && channels == o.channels && height == o.height &&
           width == o.width;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << batch << "," << channels << "," << height << "," << width << ")";
    return os.str();
  }

  static Tensor zeros_like(const Tensor& t) {
    return Tensor(t.batch, t.channels, t.height, t.width);
  }
};

// Momentum-SGD state for one named parameter tensor.
struct ParamState {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;

  ParamState() = default;
  ParamState(std::string n, Tensor v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor::zeros_like(value)),
        velocity(Tensor::zeros_like(value)) {}
};

enum class LayerKind { conv, max_pool, avg_pool, relu, concat, bilinear_resize };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::max_pool: return "max-pool";
    case LayerKind::avg_pool: return "avg-pool";
    case LayerKind::relu: return "relu";
    case LayerKind::concat: return "concat";
    case LayerKind::bilinear_resize: return "bilinear-resize";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int in_channels = 0;
  int out_channels = 0;

  void validate() const {
    require(kernel >= 1, layer_kind_name(kind), ": kernel must be >= 1, got ", kernel);
    require(stride >= 1, layer_kind_name(kind), ": stride must be >= 1, got ", stride);
    require(padding >= 0, layer_kind_name(kind), ": padding must be >= 0, got ", padding);
    require(dilation >= 1, layer_kind_name(kind), ": dilation must be >= 1, got ", dilation);
  }

  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride = 1,
                          int padding = 0, int dilation = 1) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.dilation = dilation;
    s.validate();
    return s;
  }
  static LayerSpec pool(LayerKind kind, int kernel, int stride, int padding = 0) {
    LayerSpec s;
    s.kind = kind;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.validate();
    return s;
  }
  static LayerSpec activation() {
    LayerSpec s;
    s.kind = LayerKind::relu;
    return s;
  }
};

// floor((in + 2*pad - dilation*(kernel-1) - 1) / stride) + 1
inline int64_t conv_out_dim(int64_t in, int kernel, int stride, int padding,
                            int dilation) {
  return (in + 2 * static_cast<int64_t>(padding) -
          static_cast<int64_t>(dilation) * (kernel - 1) - 1) /
             stride +
         1;
}

inline int64_t pool_out_dim(int64_t in, int kernel, int stride, int padding) {
  return conv_out_dim(in, kernel, stride, padding, 1);
}

inline bool all_finite(const Tensor& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace crowdnet
