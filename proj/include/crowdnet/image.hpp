// 8-bit grayscale raster plus conversions to and from the float tensor world.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "crowdnet/resize.hpp"
#include "crowdnet/tensor.hpp"

namespace crowdnet {

struct GrayImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int64_t h, int64_t w) : height(h), width(w) {
    require(h >= 1 && w >= 1, "image: dims must be >= 1, got ", h, "x", w);
    pixels.assign(static_cast<size_t>(h * w), 0);
  }

  uint8_t at(int64_t y, int64_t x) const {
    return pixels[static_cast<size_t>(y * width + x)];
  }
  uint8_t& at(int64_t y, int64_t x) {
    return pixels[static_cast<size_t>(y * width + x)];
  }
};

// (1, 1, H, W) tensor holding raw pixel values in [0, 255].
inline Tensor image_to_tensor(const GrayImage& img) {
  Tensor t(1, 1, img.height, img.width);
  for (int64_t i = 0; i < t.size(); ++i)
    t.data[static_cast<size_t>(i)] = static_cast<float>(img.pixels[static_cast<size_t>(i)]);
  return t;
}

inline uint8_t quantize_pixel(float v) {
  const long r = std::lroundf(v);
  if (r < 0) return 0;
  if (r > 255) return 255;
  return static_cast<uint8_t>(r);
}

inline GrayImage tensor_to_image(const Tensor& t) {
  require(t.batch == 1 && t.channels == 1, "image: tensor shape ", t.shape_str(),
          " is not a single grayscale plane");
  GrayImage img(t.height, t.width);
  for (int64_t i = 0; i < t.size(); ++i)
    img.pixels[static_cast<size_t>(i)] = quantize_pixel(t.data[static_cast<size_t>(i)]);
  return img;
}

inline GrayImage resize_image(const GrayImage& img, int64_t target_h, int64_t target_w) {
  if (target_h == img.height && target_w == img.width) return img;
  return tensor_to_image(bilinear_resize(image_to_tensor(img), target_h, target_w));
}

// Reflect-pads right/bottom (edge pixel included in the mirror). The pad
// amount must not exceed the source extent.
inline Tensor reflect_pad_tensor(const Tensor& t, int64_t target_h, int64_t target_w) {
  require(target_h >= t.height && target_w >= t.width, "reflect pad: target ",
          target_h, "x", target_w, " smaller than input ", t.height, "x", t.width);
  require(target_h - t.height <= t.height && target_w - t.width <= t.width,
          "reflect pad: pad exceeds source extent (", t.height, "x", t.width, " -> ",
          target_h, "x", target_w, ")");
  if (target_h == t.height && target_w == t.width) return t;
  Tensor out(t.batch, t.channels, target_h, target_w);
  for (int64_t b = 0; b < t.batch; ++b) {
    for (int64_t c = 0; c < t.channels; ++c) {
      const float* src = t.plane(b, c);
      float* dst = out.plane(b, c);
      for (int64_t y = 0; y < target_h; ++y) {
        const int64_t sy = y < t.height ? y : 2 * t.height - 1 - y;
        for (int64_t x = 0; x < target_w; ++x) {
          const int64_t sx = x < t.width ? x : 2 * t.width - 1 - x;
          dst[y * target_w + x] = src[sy * t.width + sx];
        }
      }
    }
  }
  return out;
}

inline GrayImage reflect_pad_image(const GrayImage& img, int64_t target_h,
                                   int64_t target_w) {
  if (target_h == img.height && target_w == img.width) return img;
  return tensor_to_image(reflect_pad_tensor(image_to_tensor(img), target_h, target_w));
}

inline GrayImage flip_horizontal(const GrayImage& img) {
  GrayImage out(img.height, img.width);
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      out.at(y, x) = img.at(y, img.width - 1 - x);
  return out;
}

inline GrayImage crop_image(const GrayImage& img, int64_t y0, int64_t x0, int64_t h,
                            int64_t w) {
  require(y0 >= 0 && x0 >= 0 && y0 + h <= img.height && x0 + w <= img.width,
          "crop: region ", h, "x", w, "+", x0, "+", y0, " outside image ",
          img.height, "x", img.width);
  GrayImage out(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

}  // namespace crowdnet
