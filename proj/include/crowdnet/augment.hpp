// Multi-scale training set construction: image pyramid, overlapping 225x225
// patches, and count-based oversampling.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "crowdnet/density.hpp"
#include "crowdnet/image.hpp"
#include "crowdnet/tensor.hpp"

namespace crowdnet {

constexpr int64_t kPatchSize = 225;

struct PatchRecord {
  GrayImage image;      // 225x225
  DensityMap gt;        // 225x225
  std::string image_id;
  double scale = 1.0;
  int64_t x = 0;        // origin in the pyramid level
  int64_t y = 0;
  double gt_count = 0.0;
};

struct PyramidLevel {
  double scale = 1.0;
  GrayImage image;
  std::vector<Point> points;
};

inline std::vector<double> pyramid_scales() {
  return {0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2};
}

// Repeated edge-inclusive reflection on the right/bottom until both dims reach
// target. Needed because a single reflect pass can at most double a dimension.
inline GrayImage pad_to_min_dim(const GrayImage& img, int64_t target) {
  GrayImage out = img;
  while (out.height < target || out.width < target) {
    const int64_t nh = std::max(out.height, std::min(target, 2 * out.height));
    const int64_t nw = std::max(out.width, std::min(target, 2 * out.width));
    out = reflect_pad_image(out, nh, nw);
  }
  return out;
}

// One level per usable scale: bilinear resize to floor-scaled dims, annotations
// scaled along. Levels whose min dim falls below 225 are dropped; if that
// eliminates every scale the source is reflect-padded to 225 first (points keep
// their coordinates since padding grows only right/bottom).
inline std::vector<PyramidLevel> build_pyramid(const GrayImage& image,
                                               const std::vector<Point>& points,
                                               const std::vector<double>& scales =
                                                   pyramid_scales()) {
  const double max_scale = *std::max_element(scales.begin(), scales.end());
  const GrayImage* src = &image;
  GrayImage padded;
  if (std::min(static_cast<double>(image.height), static_cast<double>(image.width)) *
          max_scale < static_cast<double>(kPatchSize)) {
    padded = pad_to_min_dim(image, kPatchSize);
    src = &padded;
  }

  std::vector<PyramidLevel> levels;
  for (double s : scales) {
    const int64_t h = static_cast<int64_t>(std::floor(src->height * s));
    const int64_t w = static_cast<int64_t>(std::floor(src->width * s));
    if (std::min(h, w) < kPatchSize) continue;
    PyramidLevel lvl;
    lvl.scale = s;
    lvl.image = resize_image(*src, h, w);
    lvl.points = scale_annotations(points, s, src->width, src->height);
    levels.push_back(std::move(lvl));
  }
  return levels;
}

// 50% overlap grid: stride 112, plus a boundary-snapped final origin so the
// grid always covers the full extent.
inline std::vector<int64_t> patch_origins(int64_t dim, int64_t patch = kPatchSize,
                                          double overlap = 0.5) {
  require(dim >= patch, "patch origins: dim ", dim, " is smaller than patch ", patch);
  const int64_t stride = static_cast<int64_t>(std::floor(patch * (1.0 - overlap)));
  require(stride >= 1, "patch origins: overlap ", overlap, " leaves no stride");
  std::vector<int64_t> origins;
  for (int64_t o = 0; o + patch <= dim; o += stride) origins.push_back(o);
  if (origins.back() != dim - patch) origins.push_back(dim - patch);
  return origins;
}

inline DensityMap crop_density(const DensityMap& dm, int64_t x, int64_t y,
                               int64_t w, int64_t h) {
  require(x >= 0 && y >= 0 && x + w <= dm.width && y + h <= dm.height,
          "density crop: ", w, "x", h, "+", x, "+", y, " exceeds ", dm.height, "x",
          dm.width);
  DensityMap out(h, w);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) out.at(r, c) = dm.at(y + r, x + c);
  return out;
}

// Per level: regenerate GT from the level's own points, then crop image and GT
// on the shared origin grid (row-major over origins).
inline std::vector<PatchRecord> extract_patch_dataset(
    const std::vector<PyramidLevel>& levels, const std::string& image_id,
    double sigma, int kernel_radius = -1) {
  std::vector<PatchRecord> records;
  for (const PyramidLevel& lvl : levels) {
    const DensityMap gt = generate_density_map(lvl.points, lvl.image.width,
                                               lvl.image.height, sigma, kernel_radius);
    const std::vector<int64_t> ys = patch_origins(lvl.image.height);
    const std::vector<int64_t> xs = patch_origins(lvl.image.width);
    for (int64_t oy : ys) {
      for (int64_t ox : xs) {
        PatchRecord rec;
        rec.image = crop_image(lvl.image, oy, ox, kPatchSize, kPatchSize);
        rec.gt = crop_density(gt, ox, oy, kPatchSize, kPatchSize);
        rec.image_id = image_id;
        rec.scale = lvl.scale;
        rec.x = ox;
        rec.y = oy;
        rec.gt_count = rec.gt.sum();
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

inline DensityMap flip_density(const DensityMap& dm) {
  DensityMap out(dm.height, dm.width);
  for (int64_t y = 0; y < dm.height; ++y)
    for (int64_t x = 0; x < dm.width; ++x) out.at(y, x) = dm.at(y, dm.width - 1 - x);
  return out;
}

// Mirrored copies appended after the originals, in order.
inline void append_flipped(std::vector<PatchRecord>& records) {
  const size_t n = records.size();
  records.reserve(2 * n);
  for (size_t i = 0; i < n; ++i) {
    PatchRecord rec = records[i];
    rec.image = flip_horizontal(rec.image);
    rec.gt = flip_density(rec.gt);
    records.push_back(std::move(rec));
  }
}

inline double median_count(const std::vector<PatchRecord>& records) {
  std::vector<double> counts;
  counts.reserve(records.size());
  for (const PatchRecord& r : records) counts.push_back(r.gt_count);
  std::sort(counts.begin(), counts.end());
  const size_t n = counts.size();
  return n % 2 == 1 ? counts[n / 2] : 0.5 * (counts[n / 2 - 1] + counts[n / 2]);
}

// Records above the median count appear `multiplicity` times total; the rest
// once. Output order: all originals, then the extra copies in input order.
inline std::vector<PatchRecord> oversample_dense(const std::vector<PatchRecord>& records,
                                                 int multiplicity = 3) {
  require(!records.empty(), "oversample: empty record list");
  require(multiplicity >= 1, "oversample: multiplicity must be >= 1, got ",
          multiplicity);
  const double m = median_count(records);
  std::vector<PatchRecord> out = records;
  for (int copy = 0; copy < multiplicity - 1; ++copy)
    for (const PatchRecord& r : records)
      if (r.gt_count > m) out.push_back(r);
  return out;
}

struct AugmentOptions {
  double sigma = 4.0;
  int kernel_radius = -1;                       // -1 -> ceil(3 sigma)
  std::vector<double> scales = pyramid_scales();
  bool flip = false;
  bool oversample = true;
  int oversample_multiplicity = 3;
};

// Full per-image pipeline minus oversampling, which runs once over the merged
// dataset so the median is taken fold-wide.
inline std::vector<PatchRecord> augment_image(const GrayImage& image,
                                              const std::vector<Point>& points,
                                              const std::string& image_id,
                                              const AugmentOptions& opts) {
  std::vector<PatchRecord> records = extract_patch_dataset(
      build_pyramid(image, points, opts.scales), image_id, opts.sigma,
      opts.kernel_radius);
  if (opts.flip) append_flipped(records);
  return records;
}

}  // namespace crowdnet
