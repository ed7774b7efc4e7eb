// Count-preserving density-map ground truth from point head annotations.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "crowdnet/tensor.hpp"

namespace crowdnet {

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

struct AnnotationSet {
  std::string image_id;
  std::vector<Point> points;
};

struct DensityMap {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> values;

  DensityMap() = default;
  DensityMap(int64_t h, int64_t w) : height(h), width(w) {
    require(h >= 1 && w >= 1, "density map: dims must be >= 1, got ", h, "x", w);
    values.assign(static_cast<size_t>(h * w), 0.0f);
  }

  float at(int64_t y, int64_t x) const {
    return values[static_cast<size_t>(y * width + x)];
  }
  float& at(int64_t y, int64_t x) {
    return values[static_cast<size_t>(y * width + x)];
  }

  double sum() const {
    double acc = 0.0;
    for (float v : values) acc += v;
    return acc;
  }
};

struct GaussianKernel {
  int radius = 0;
  std::vector<double> values;  // (2r+1)^2, sums to 1

  int side() const { return 2 * radius + 1; }
  double at(int dy, int dx) const {
    return values[static_cast<size_t>((dy + radius) * side() + (dx + radius))];
  }
};

inline int default_kernel_radius(double sigma) {
  return static_cast<int>(std::ceil(3.0 * sigma));
}

// exp(-(dx^2 + dy^2) / (2 sigma^2)) over a (2r+1)^2 grid, normalized to sum 1.
inline GaussianKernel gaussian_kernel(double sigma, int radius) {
  require(sigma > 0.0, "gaussian kernel: sigma must be positive, got ", sigma);
  require(radius >= 1, "gaussian kernel: radius must be >= 1, got ", radius);
  GaussianKernel k;
  k.radius = radius;
  const int side = k.side();
  k.values.resize(static_cast<size_t>(side) * side);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double sum = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double v = std::exp(-(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) * inv);
      k.values[static_cast<size_t>((dy + radius) * side + (dx + radius))] = v;
      sum += v;
    }
  }
  for (double& v : k.values) v /= sum;
  return k;
}

// Adds one normalized kernel per point, centered at the nearest pixel. The
// portion falling inside the image is renormalized to sum 1 so every point
// contributes exactly one count, border or not.
inline DensityMap generate_density_map(const std::vector<Point>& points, int64_t width,
                                       int64_t height, double sigma,
                                       int radius = -1) {
  require(width >= 1 && height >= 1, "density map: zero-sized image ", height, "x",
          width);
  if (radius < 0) radius = default_kernel_radius(sigma);
  const GaussianKernel kernel = gaussian_kernel(sigma, radius);

  std::vector<double> acc(static_cast<size_t>(height * width), 0.0);
  for (const Point& pt : points) {
    int64_t cx = std::llround(pt.x);
    int64_t cy = std::llround(pt.y);
    if (cx < 0) cx = 0;
    if (cx >= width) cx = width - 1;
    if (cy < 0) cy = 0;
    if (cy >= height) cy = height - 1;

    const int64_t y0 = std::max<int64_t>(cy - radius, 0);
    const int64_t y1 = std::min<int64_t>(cy + radius, height - 1);
    const int64_t x0 = std::max<int64_t>(cx - radius, 0);
    const int64_t x1 = std::min<int64_t>(cx + radius, width - 1);

    double clipped = 0.0;
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x)
        clipped += kernel.at(static_cast<int>(y - cy), static_cast<int>(x - cx));
    const double renorm = 1.0 / clipped;
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x)
        acc[static_cast<size_t>(y * width + x)] +=
            kernel.at(static_cast<int>(y - cy), static_cast<int>(x - cx)) * renorm;
  }

  DensityMap dm(height, width);
  for (size_t i = 0; i < acc.size(); ++i) dm.values[i] = static_cast<float>(acc[i]);
  return dm;
}

inline DensityMap density_from_tensor(const Tensor& t) {
  require(t.batch == 1 && t.channels == 1, "density: tensor shape ", t.shape_str(),
          " is not a single map");
  DensityMap dm(t.height, t.width);
  std::copy(t.data.begin(), t.data.end(), dm.values.begin());
  return dm;
}

inline Tensor density_to_tensor(const DensityMap& dm) {
  Tensor t(1, 1, dm.height, dm.width);
  std::copy(dm.values.begin(), dm.values.end(), t.data.begin());
  return t;
}

// Largest representable coordinate strictly below dim.
inline double upper_coord_bound(int64_t dim) {
  return std::nextafter(static_cast<double>(dim), 0.0);
}

inline Point clamp_point(Point p, int64_t width, int64_t height) {
  if (p.x < 0.0) p.x = 0.0;
  if (p.y < 0.0) p.y = 0.0;
  const double bx = upper_coord_bound(width);
  const double by = upper_coord_bound(height);
  if (p.x > bx) p.x = bx;
  if (p.y > by) p.y = by;
  return p;
}

// (x, y) -> (x*f, y*f), clamped into the floor-scaled image bounds.
inline std::vector<Point> scale_annotations(const std::vector<Point>& points,
                                            double factor, int64_t src_width,
                                            int64_t src_height) {
  require(factor > 0.0, "scale annotations: factor must be positive, got ", factor);
  const int64_t tw = static_cast<int64_t>(std::floor(src_width * factor));
  const int64_t th = static_cast<int64_t>(std::floor(src_height * factor));
  require(tw >= 1 && th >= 1, "scale annotations: scaled image ", th, "x", tw,
          " is empty");
  std::vector<Point> out;
  out.reserve(points.size());
  for (const Point& p : points)
    out.push_back(clamp_point({p.x * factor, p.y * factor}, tw, th));
  return out;
}

}  // namespace crowdnet
