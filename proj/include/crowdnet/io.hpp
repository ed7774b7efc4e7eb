// File formats and ingestion: annotations JSON, DMAP density files, binary PGM,
// heatmap rendering, patch manifests, fold plans, the JSON config, and CSV.
#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crowdnet/augment.hpp"
#include "crowdnet/density.hpp"
#include "crowdnet/image.hpp"
#include "crowdnet/model.hpp"
#include "crowdnet/train.hpp"
#include "crowdnet/weights_io.hpp"

namespace crowdnet {

// ---------------------------------------------------------------------------
// Raw file helpers

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open ", path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  require(!in.bad(), "read failed for ", path);
  return bytes;
}

inline std::string read_file_text(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_file_bytes(const std::string& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot write ", path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  require(out.good(), "write failed for ", path);
}

inline void write_file_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::span<const uint8_t>(
                             reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Annotations: {"image": str, "points": [[x, y], ...]}

struct ParsedAnnotations {
  AnnotationSet set;
  int warnings = 0;  // negative coordinates clamped to 0
};

inline ParsedAnnotations parse_annotations(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail("annotations: malformed JSON: ", e.what());
  }
  require(j.is_object(), "annotations: top level must be an object");
  require(j.contains("image"), "annotations: missing \"image\" key");
  require(j["image"].is_string(), "annotations: \"image\" must be a string");
  require(j.contains("points"), "annotations: missing \"points\" key");
  require(j["points"].is_array(), "annotations: \"points\" must be an array");

  ParsedAnnotations out;
  out.set.image_id = j["image"].get<std::string>();
  size_t idx = 0;
  for (const auto& el : j["points"]) {
    ++idx;
    require(el.is_array() && el.size() == 2, "annotations: point ", idx,
            " must be a [x, y] pair");
    require(el[0].is_number() && el[1].is_number(),
            "annotations: non-numeric coordinates in point ", idx);
    Point p{el[0].get<double>(), el[1].get<double>()};
    if (p.x < 0.0) {
      p.x = 0.0;
      ++out.warnings;
    }
    if (p.y < 0.0) {
      p.y = 0.0;
      ++out.warnings;
    }
    out.set.points.push_back(p);
  }
  return out;
}

inline std::string emit_annotations(const AnnotationSet& set) {
  nlohmann::json j;
  j["image"] = set.image_id;
  j["points"] = nlohmann::json::array();
  for (const Point& p : set.points) j["points"].push_back({p.x, p.y});
  return j.dump();
}

// Clamp into [0, dim) against known image dims; returns how many coordinates
// moved.
inline int clamp_annotations(AnnotationSet& set, int64_t width, int64_t height) {
  int warnings = 0;
  for (Point& p : set.points) {
    const Point c = clamp_point(p, width, height);
    if (c.x != p.x) ++warnings;
    if (c.y != p.y) ++warnings;
    p = c;
  }
  return warnings;
}

// ---------------------------------------------------------------------------
// DMAP density files

constexpr uint32_t kDensityFormatVersion = 1;

inline std::vector<uint8_t> serialize_density(const DensityMap& dm) {
  require(dm.height >= 1 && dm.width >= 1, "density file: empty map");
  std::vector<uint8_t> out;
  out.insert(out.end(), {'D', 'M', 'A', 'P'});
  detail::put_u32(out, kDensityFormatVersion);
  detail::put_u32(out, static_cast<uint32_t>(dm.height));
  detail::put_u32(out, static_cast<uint32_t>(dm.width));
  for (float v : dm.values) detail::put_f32(out, v);
  return out;
}

inline DensityMap parse_density(std::span<const uint8_t> bytes) {
  detail::ByteReader r(bytes, "density file");
  const std::string magic = r.str(4);
  if (magic != "DMAP") fail("density file: bad magic '", magic, "'");
  const uint32_t version = r.u32();
  if (version != kDensityFormatVersion)
    fail("density file: unsupported version ", version);
  const uint32_t h = r.u32();
  const uint32_t w = r.u32();
  if (h == 0 || w == 0) fail("density file: zero dimension ", h, "x", w);
  DensityMap dm(h, w);
  for (float& v : dm.values) v = r.f32();
  if (!r.done()) fail("density file: trailing bytes after pixel data");
  return dm;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255)

inline std::vector<uint8_t> serialize_pgm(const GrayImage& img) {
  require(img.height >= 1 && img.width >= 1, "pgm: empty image");
  std::string header = "P5\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

namespace detail {
inline bool pgm_space(uint8_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
}  // namespace detail

inline GrayImage parse_pgm(std::span<const uint8_t> bytes) {
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (detail::pgm_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    require(pos < bytes.size(), "pgm: truncated header");
    const size_t start = pos;
    while (pos < bytes.size() && !detail::pgm_space(bytes[pos]) && bytes[pos] != '#')
      ++pos;
    return std::string(reinterpret_cast<const char*>(bytes.data()) + start, pos - start);
  };
  auto next_int = [&](const char* what) -> int64_t {
    const std::string tok = next_token();
    int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    require(ec == std::errc() && p == tok.data() + tok.size(), "pgm: bad ", what,
            " '", tok, "' in header");
    return v;
  };

  const std::string magic = next_token();
  if (magic == "P2") fail("pgm: ASCII (P2) images are not supported, P5 required");
  if (magic != "P5") fail("pgm: not a P5 file (magic '", magic, "')");
  const int64_t w = next_int("width");
  const int64_t h = next_int("height");
  require(w >= 1 && h >= 1, "pgm: bad dimensions ", w, "x", h);
  const int64_t maxval = next_int("maxval");
  require(maxval == 255, "pgm: maxval must be 255, got ", maxval);
  require(pos < bytes.size() && detail::pgm_space(bytes[pos]),
          "pgm: missing whitespace after maxval");
  ++pos;

  const size_t expected = static_cast<size_t>(w * h);
  require(bytes.size() - pos == expected, "pgm: expected ", expected,
          " pixel bytes, found ", bytes.size() - pos);
  GrayImage img(h, w);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(),
            img.pixels.begin());
  return img;
}

// ---------------------------------------------------------------------------
// Heatmap rendering: pixel = round(255 * v / max) when max > 0.

inline GrayImage render_heatmap(const DensityMap& dm) {
  require(dm.height >= 1 && dm.width >= 1, "render: empty density map");
  float mx = 0.0f;
  for (float v : dm.values) mx = std::max(mx, v);
  GrayImage img(dm.height, dm.width);
  if (mx > 0.0f) {
    const float scale = 255.0f / mx;
    for (size_t i = 0; i < dm.values.size(); ++i)
      img.pixels[i] = quantize_pixel(dm.values[i] * scale);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Patch manifest (JSON lines) + packed blob. Per record the blob holds the
// 225x225 image bytes followed by the 225x225 GT as little-endian f32.

inline void write_patch_dataset(const std::vector<PatchRecord>& records,
                                const std::string& manifest_path,
                                const std::string& blob_path) {
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  require(blob.good(), "cannot write ", blob_path);
  std::ofstream manifest(manifest_path, std::ios::binary | std::ios::trunc);
  require(manifest.good(), "cannot write ", manifest_path);

  uint64_t offset = 0;
  std::vector<uint8_t> gt_bytes;
  for (const PatchRecord& rec : records) {
    require(rec.image.height == kPatchSize && rec.image.width == kPatchSize,
            "manifest: patch for \"", rec.image_id, "\" is not ", kPatchSize, "x",
            kPatchSize);
    nlohmann::json line;
    line["image_id"] = rec.image_id;
    line["scale"] = rec.scale;
    line["x"] = rec.x;
    line["y"] = rec.y;
    line["gt_count"] = rec.gt_count;
    line["image_offset"] = offset;
    blob.write(reinterpret_cast<const char*>(rec.image.pixels.data()),
               static_cast<std::streamsize>(rec.image.pixels.size()));
    offset += rec.image.pixels.size();
    line["gt_offset"] = offset;
    gt_bytes.clear();
    for (float v : rec.gt.values) detail::put_f32(gt_bytes, v);
    blob.write(reinterpret_cast<const char*>(gt_bytes.data()),
               static_cast<std::streamsize>(gt_bytes.size()));
    offset += gt_bytes.size();
    manifest << line.dump() << "\n";
  }
  blob.flush();
  manifest.flush();
  require(blob.good(), "write failed for ", blob_path);
  require(manifest.good(), "write failed for ", manifest_path);
}

inline std::vector<PatchRecord> read_patch_dataset(const std::string& manifest_path,
                                                   const std::string& blob_path) {
  const std::vector<uint8_t> blob = read_file_bytes(blob_path);
  std::istringstream manifest(read_file_text(manifest_path));

  const size_t pixels = static_cast<size_t>(kPatchSize) * kPatchSize;
  std::vector<PatchRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail("manifest line ", line_no, ": malformed JSON: ", e.what());
    }
    for (const char* key : {"image_id", "scale", "x", "y", "gt_count", "image_offset",
                            "gt_offset"})
      require(j.contains(key), "manifest line ", line_no, ": missing \"", key, "\"");

    PatchRecord rec;
    rec.image_id = j["image_id"].get<std::string>();
    rec.scale = j["scale"].get<double>();
    rec.x = j["x"].get<int64_t>();
    rec.y = j["y"].get<int64_t>();
    rec.gt_count = j["gt_count"].get<double>();
    const uint64_t img_off = j["image_offset"].get<uint64_t>();
    const uint64_t gt_off = j["gt_offset"].get<uint64_t>();
    require(img_off + pixels <= blob.size() && gt_off + 4 * pixels <= blob.size(),
            "manifest line ", line_no, ": offsets beyond blob size ", blob.size());

    rec.image = GrayImage(kPatchSize, kPatchSize);
    std::copy(blob.begin() + static_cast<std::ptrdiff_t>(img_off),
              blob.begin() + static_cast<std::ptrdiff_t>(img_off + pixels),
              rec.image.pixels.begin());
    rec.gt = DensityMap(kPatchSize, kPatchSize);
    detail::ByteReader r(std::span<const uint8_t>(blob.data() + gt_off, 4 * pixels),
                         "patch blob");
    for (float& v : rec.gt.values) v = r.f32();
    require(std::abs(rec.gt.sum() - rec.gt_count) <= 1e-3, "manifest line ", line_no,
            ": gt_count ", rec.gt_count, " does not match stored GT sum ",
            rec.gt.sum());
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Fold plans

inline std::string emit_fold_plan(const FoldPlan& plan) {
  nlohmann::json j;
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  j["folds"] = plan.folds;
  return j.dump();
}

inline FoldPlan parse_fold_plan(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail("fold plan: malformed JSON: ", e.what());
  }
  for (const char* key : {"k", "seed", "folds"})
    require(j.contains(key), "fold plan: missing \"", key, "\"");
  FoldPlan plan;
  plan.k = j["k"].get<int>();
  plan.seed = j["seed"].get<uint64_t>();
  plan.folds = j["folds"].get<std::vector<std::vector<std::string>>>();
  require(plan.k >= 1, "fold plan: k must be >= 1, got ", plan.k);
  require(plan.folds.size() == static_cast<size_t>(plan.k), "fold plan: k=", plan.k,
          " but ", plan.folds.size(), " folds listed");
  std::vector<std::string> seen;
  for (const auto& fold : plan.folds)
    for (const std::string& id : fold) {
      require(std::find(seen.begin(), seen.end(), id) == seen.end(),
              "fold plan: image \"", id, "\" appears in two folds");
      seen.push_back(id);
    }
  return plan;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace detail

// Wall time stays out of the file so identical runs produce identical bytes.
inline std::string format_train_log_csv(const TrainLog& log) {
  std::string out = "iteration,train_loss,val_mae\n";
  for (const TrainLogRow& row : log.rows) {
    out += std::to_string(row.iteration);
    out += ",";
    out += detail::fmt_g(row.train_loss);
    out += ",";
    if (std::isfinite(row.val_mae)) out += detail::fmt_g(row.val_mae);
    out += "\n";
  }
  return out;
}

inline std::string format_eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "image_id,actual,predicted\n";
  for (const EvalRow& row : rows) {
    out += row.image_id;
    out += ",";
    out += detail::fmt_g(row.actual);
    out += ",";
    out += detail::fmt_g(row.predicted);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: <dir>/<id>.pgm + <dir>/<id>.json, plus a plain
// id-per-line list file naming the images of a dataset or split.

inline std::string image_path(const std::string& dir, const std::string& id) {
  return dir + "/" + id + ".pgm";
}
inline std::string annotation_path(const std::string& dir, const std::string& id) {
  return dir + "/" + id + ".json";
}

inline std::vector<std::string> parse_id_list(const std::string& text) {
  std::vector<std::string> ids;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

inline std::string format_id_list(const std::vector<std::string>& ids) {
  std::string out;
  for (const std::string& id : ids) {
    out += id;
    out += "\n";
  }
  return out;
}

struct LoadedImage {
  std::string image_id;
  GrayImage image;
  std::vector<Point> points;
  int warnings = 0;
};

inline LoadedImage load_dataset_image(const std::string& dir, const std::string& id) {
  LoadedImage out;
  out.image_id = id;
  out.image = parse_pgm(read_file_bytes(image_path(dir, id)));
  ParsedAnnotations ann = parse_annotations(read_file_text(annotation_path(dir, id)));
  out.warnings = ann.warnings;
  out.warnings += clamp_annotations(ann.set, out.image.width, out.image.height);
  out.points = std::move(ann.set.points);
  return out;
}

// ---------------------------------------------------------------------------
// JSON config: {dataset, augmentation, network, training}; unknown keys are
// rejected everywhere. Defaults are the toy preset.

struct AppConfig {
  double sigma = 4.0;
  double mean_pixel = kDefaultMeanPixel;
  std::vector<double> scales = pyramid_scales();
  bool oversample = true;
  int oversample_multiplicity = 3;
  bool flip = false;
  std::string network_preset = "toy";
  double width_multiplier = kToyMultiplier;
  std::optional<std::vector<int>> deep_widths;
  std::optional<int> shallow_width;
  std::optional<int> shallow_kernel;
  TrainConfig training = TrainConfig::toy();

  NetworkConfig network_config() const {
    NetworkConfig cfg = network_preset == "paper"
                            ? NetworkConfig::paper()
                            : NetworkConfig::toy(width_multiplier);
    if (deep_widths) cfg.deep_widths = *deep_widths;
    if (shallow_width) cfg.shallow_width = *shallow_width;
    if (shallow_kernel) cfg.shallow_kernel = *shallow_kernel;
    cfg.mean_pixel = mean_pixel;
    cfg.validate();
    return cfg;
  }

  AugmentOptions augment_options() const {
    AugmentOptions opts;
    opts.sigma = sigma;
    opts.scales = scales;
    opts.flip = flip;
    opts.oversample = oversample;
    opts.oversample_multiplicity = oversample_multiplicity;
    return opts;
  }
};

namespace detail {
inline void reject_unknown(const nlohmann::json& obj, const std::string& section,
                           std::initializer_list<const char*> known) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* name : known)
      if (item.key() == name) ok = true;
    require(ok, "config: unknown key \"",
            section.empty() ? item.key() : section + "." + item.key(), "\"");
  }
}

template <class T>
T config_get(const nlohmann::json& obj, const std::string& section, const char* key) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail("config: bad value for \"", section, ".", key, "\": ", e.what());
  }
}
}  // namespace detail

inline AppConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail("config: malformed JSON: ", e.what());
  }
  require(j.is_object(), "config: top level must be an object");
  detail::reject_unknown(j, "", {"dataset", "augmentation", "network", "training"});

  AppConfig cfg;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    detail::reject_unknown(d, "dataset", {"sigma", "mean_pixel"});
    if (d.contains("sigma")) cfg.sigma = detail::config_get<double>(d, "dataset", "sigma");
    if (d.contains("mean_pixel"))
      cfg.mean_pixel = detail::config_get<double>(d, "dataset", "mean_pixel");
    require(cfg.sigma > 0.0, "config: dataset.sigma must be positive, got ", cfg.sigma);
  }
  if (j.contains("augmentation")) {
    const auto& a = j["augmentation"];
    detail::reject_unknown(a, "augmentation",
                           {"scales", "oversample", "oversample_multiplicity", "flip"});
    if (a.contains("scales"))
      cfg.scales = detail::config_get<std::vector<double>>(a, "augmentation", "scales");
    require(!cfg.scales.empty(), "config: augmentation.scales must not be empty");
    if (a.contains("oversample"))
      cfg.oversample = detail::config_get<bool>(a, "augmentation", "oversample");
    if (a.contains("oversample_multiplicity"))
      cfg.oversample_multiplicity =
          detail::config_get<int>(a, "augmentation", "oversample_multiplicity");
    if (a.contains("flip")) cfg.flip = detail::config_get<bool>(a, "augmentation", "flip");
  }
  if (j.contains("network")) {
    const auto& n = j["network"];
    detail::reject_unknown(n, "network",
                           {"preset", "width_multiplier", "deep_widths", "shallow_width",
                            "shallow_kernel"});
    if (n.contains("preset")) {
      cfg.network_preset = detail::config_get<std::string>(n, "network", "preset");
      require(cfg.network_preset == "paper" || cfg.network_preset == "toy",
              "config: network.preset must be \"paper\" or \"toy\", got \"",
              cfg.network_preset, "\"");
    }
    if (n.contains("width_multiplier")) {
      require(cfg.network_preset == "toy",
              "config: network.width_multiplier only applies to the toy preset");
      cfg.width_multiplier =
          detail::config_get<double>(n, "network", "width_multiplier");
    }
    if (n.contains("deep_widths"))
      cfg.deep_widths = detail::config_get<std::vector<int>>(n, "network", "deep_widths");
    if (n.contains("shallow_width"))
      cfg.shallow_width = detail::config_get<int>(n, "network", "shallow_width");
    if (n.contains("shallow_kernel"))
      cfg.shallow_kernel = detail::config_get<int>(n, "network", "shallow_kernel");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    detail::reject_unknown(t, "training",
                           {"preset", "lr", "momentum", "batch", "iterations",
                            "eval_interval", "seed", "per_pixel_loss"});
    if (t.contains("preset")) {
      const std::string preset = detail::config_get<std::string>(t, "training", "preset");
      require(preset == "paper" || preset == "toy",
              "config: training.preset must be \"paper\" or \"toy\", got \"", preset,
              "\"");
      cfg.training = preset == "paper" ? TrainConfig::paper() : TrainConfig::toy();
    }
    if (t.contains("lr")) cfg.training.lr = detail::config_get<double>(t, "training", "lr");
    if (t.contains("momentum"))
      cfg.training.momentum = detail::config_get<double>(t, "training", "momentum");
    if (t.contains("batch"))
      cfg.training.batch = detail::config_get<int>(t, "training", "batch");
    if (t.contains("iterations"))
      cfg.training.iterations = detail::config_get<int64_t>(t, "training", "iterations");
    if (t.contains("eval_interval"))
      cfg.training.eval_interval =
          detail::config_get<int64_t>(t, "training", "eval_interval");
    if (t.contains("seed"))
      cfg.training.seed = detail::config_get<uint64_t>(t, "training", "seed");
    if (t.contains("per_pixel_loss"))
      cfg.training.per_pixel_loss = detail::config_get<bool>(t, "training", "per_pixel_loss");
    cfg.training.validate();
  }
  return cfg;
}

}  // namespace crowdnet
