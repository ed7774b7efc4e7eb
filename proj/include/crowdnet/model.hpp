// Dual-branch density network: deep VGG-style branch with dilated block 5,
// shallow blob-detector branch, channel concat, 1x1 fusion, bilinear upsample.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crowdnet/conv.hpp"
#include "crowdnet/elementwise.hpp"
#include "crowdnet/image.hpp"
#include "crowdnet/pool.hpp"
#include "crowdnet/resize.hpp"
#include "crowdnet/rng.hpp"
#include "crowdnet/tensor.hpp"
#include "crowdnet/weights_io.hpp"

namespace crowdnet {

constexpr double kToyMultiplier = 1.0 / 64.0;
constexpr double kDefaultMeanPixel = 127.0;
constexpr int kDeepBlockConvs[5] = {2, 2, 3, 3, 3};

struct NetworkConfig {
  std::string preset = "paper";
  std::vector<int> deep_widths = {64, 128, 256, 512, 512};  // per block
  int shallow_width = 24;
  int shallow_kernel = 5;
  double mean_pixel = kDefaultMeanPixel;

  static NetworkConfig paper() { return NetworkConfig{}; }

  // Same structure, channel widths scaled down so from-scratch CPU training is
  // feasible.
  static NetworkConfig toy(double multiplier = kToyMultiplier) {
    require(multiplier > 0.0, "network config: toy multiplier must be positive, got ",
            multiplier);
    NetworkConfig c;
    c.preset = "toy";
    for (int& w : c.deep_widths)
      w = std::max(1, static_cast<int>(std::llround(w * multiplier)));
    c.shallow_width =
        std::max(1, static_cast<int>(std::llround(c.shallow_width * multiplier)));
    return c;
  }

  void validate() const {
    require(deep_widths.size() == 5, "network config: expected 5 deep block widths, got ",
            deep_widths.size());
    for (int w : deep_widths)
      require(w >= 1, "network config: deep width must be >= 1, got ", w);
    require(shallow_width >= 1, "network config: shallow width must be >= 1, got ",
            shallow_width);
    require(shallow_kernel >= 1 && shallow_kernel % 2 == 1,
            "network config: shallow kernel must be odd and >= 1, got ", shallow_kernel);
  }
};

struct ConvLayer {
  std::string name;
  LayerSpec spec;
  ParamState weights;  // (out_ch, in_ch, k, k)
  ParamState bias;     // (out_ch, 1, 1, 1)
};

// One stage of a branch. Convs carry an index into Network::convs; pools are
// purely structural.
struct Step {
  LayerSpec spec;
  int conv = -1;
  bool relu = false;
};

struct Network {
  NetworkConfig config;
  std::vector<ConvLayer> convs;  // deep, shallow, fusion — in build order
  std::vector<Step> deep;
  std::vector<Step> shallow;
  int fusion = -1;  // index into convs

  int deep_out_channels() const { return config.deep_widths.back(); }
  int shallow_out_channels() const { return config.shallow_width; }

  ConvLayer& fusion_layer() { return convs[static_cast<size_t>(fusion)]; }
  const ConvLayer& fusion_layer() const { return convs[static_cast<size_t>(fusion)]; }
};

namespace detail {
inline int add_conv(Network& net, const std::string& name, const LayerSpec& spec,
                    Rng& rng) {
  ConvLayer layer;
  layer.name = name;
  layer.spec = spec;
  Tensor w(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel);
  fill_gaussian(w, rng);
  layer.weights = ParamState(name + ".weight", std::move(w));
  layer.bias = ParamState(name + ".bias", Tensor(spec.out_channels, 1, 1, 1));
  net.convs.push_back(std::move(layer));
  return static_cast<int>(net.convs.size()) - 1;
}
}  // namespace detail

// Blocks of {2,2,3,3,3} 3x3 convs; max-pools k2/s2 after blocks 1-3; pool-4
// replaced by k3/s1/p1; no pool-5; block-5 convs dilated by 2. `original`
// restores pool-4 stride 2 and drops the dilation (receptive-field baseline
// only — pooled dims then disagree with the shallow branch).
struct NamedSpec {
  std::string name;
  LayerSpec spec;
};

inline std::vector<NamedSpec> deep_branch_specs(const NetworkConfig& cfg,
                                                bool original = false) {
  cfg.validate();
  std::vector<NamedSpec> seq;
  int in_ch = 3;
  for (int b = 0; b < 5; ++b) {
    const int dil = (b == 4 && !original) ? 2 : 1;
    for (int c = 0; c < kDeepBlockConvs[b]; ++c) {
      const std::string name =
          "deep.b" + std::to_string(b + 1) + "c" + std::to_string(c + 1);
      seq.push_back({name, LayerSpec::conv2d(in_ch, cfg.deep_widths[static_cast<size_t>(b)],
                                             3, 1, dil, dil)});
      in_ch = cfg.deep_widths[static_cast<size_t>(b)];
    }
    if (b <= 2)
      seq.push_back({"deep.pool" + std::to_string(b + 1),
                     LayerSpec::pool(LayerKind::max_pool, 2, 2)});
    else if (b == 3)
      seq.push_back({"deep.pool4",
                     LayerSpec::pool(LayerKind::max_pool, 3, original ? 2 : 1, 1)});
  }
  return seq;
}

inline std::vector<NamedSpec> shallow_branch_specs(const NetworkConfig& cfg) {
  cfg.validate();
  std::vector<NamedSpec> seq;
  int in_ch = 1;
  for (int c = 0; c < 3; ++c) {
    seq.push_back({"shallow.c" + std::to_string(c + 1),
                   LayerSpec::conv2d(in_ch, cfg.shallow_width, cfg.shallow_kernel, 1,
                                     (cfg.shallow_kernel - 1) / 2)});
    in_ch = cfg.shallow_width;
    seq.push_back({"shallow.pool" + std::to_string(c + 1),
                   LayerSpec::pool(LayerKind::avg_pool, 2, 2)});
  }
  return seq;
}

inline Network build_network(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  Network net;
  net.config = cfg;
  Rng rng(seed);
  for (const NamedSpec& ns : deep_branch_specs(cfg)) {
    Step st;
    st.spec = ns.spec;
    if (ns.spec.kind == LayerKind::conv) {
      st.conv = detail::add_conv(net, ns.name, ns.spec, rng);
      st.relu = true;
    }
    net.deep.push_back(st);
  }
  for (const NamedSpec& ns : shallow_branch_specs(cfg)) {
    Step st;
    st.spec = ns.spec;
    if (ns.spec.kind == LayerKind::conv) {
      st.conv = detail::add_conv(net, ns.name, ns.spec, rng);
      st.relu = true;
    }
    net.shallow.push_back(st);
  }
  const int fusion_in = net.deep_out_channels() + net.shallow_out_channels();
  net.fusion = detail::add_conv(net, "fusion", LayerSpec::conv2d(fusion_in, 1, 1), rng);
  return net;
}

// rf <- rf + (k_eff - 1) * jump, jump <- jump * stride, k_eff = d*(k-1)+1.
struct ReceptiveField {
  int64_t rf = 1;
  int64_t jump = 1;
};

inline std::vector<ReceptiveField> receptive_field(const std::vector<LayerSpec>& seq) {
  std::vector<ReceptiveField> out;
  out.reserve(seq.size());
  ReceptiveField cur;
  for (const LayerSpec& spec : seq) {
    const int64_t k_eff =
        static_cast<int64_t>(spec.dilation) * (spec.kernel - 1) + 1;
    cur.rf += (k_eff - 1) * cur.jump;
    cur.jump *= spec.stride;
    out.push_back(cur);
  }
  return out;
}

inline std::vector<LayerSpec> strip_names(const std::vector<NamedSpec>& seq) {
  std::vector<LayerSpec> out;
  out.reserve(seq.size());
  for (const NamedSpec& ns : seq) out.push_back(ns.spec);
  return out;
}

enum class ForwardMode { train, inference };

struct StepTrace {
  Tensor input;
  Tensor pre_act;      // conv output before relu
  MaxPoolResult pool;  // max-pool steps only
};

struct ForwardTrace {
  Tensor shallow_input;  // normalized single-channel input
  std::vector<StepTrace> deep;
  std::vector<StepTrace> shallow;
  Tensor concat;  // fusion input
  int64_t fused_h = 0, fused_w = 0;
};

namespace detail {
inline Tensor replicate_channels(const Tensor& x, int copies) {
  Tensor out(x.batch, x.channels * copies, x.height, x.width);
  const int64_t plane = x.plane_size();
  for (int64_t b = 0; b < x.batch; ++b)
    for (int64_t r = 0; r < copies; ++r)
      for (int64_t c = 0; c < x.channels; ++c)
        std::copy(x.plane(b, c), x.plane(b, c) + plane,
                  out.plane(b, r * x.channels + c));
  return out;
}

inline Tensor run_branch(const Network& net, const std::vector<Step>& steps, Tensor x,
                         std::vector<StepTrace>* traces) {
  for (const Step& st : steps) {
    StepTrace tr;
    if (traces) tr.input = x;
    switch (st.spec.kind) {
      case LayerKind::conv: {
        const ConvLayer& L = net.convs[static_cast<size_t>(st.conv)];
        Tensor y = conv2d_forward(x, L.weights.value,
                                  std::span<const float>(L.bias.value.data), st.spec);
        if (st.relu) {
          if (traces) tr.pre_act = y;
          y = relu_forward(y);
        }
        x = std::move(y);
        break;
      }
      case LayerKind::max_pool: {
        MaxPoolResult r =
            max_pool_forward(x, st.spec.kernel, st.spec.stride, st.spec.padding);
        if (traces) {
          tr.pool = std::move(r);
          x = tr.pool.output;
        } else {
          x = std::move(r.output);
        }
        break;
      }
      case LayerKind::avg_pool:
        x = avg_pool_forward(x, st.spec.kernel, st.spec.stride);
        break;
      default:
        fail("network: unexpected step kind ", layer_kind_name(st.spec.kind));
    }
    if (traces) traces->push_back(std::move(tr));
  }
  return x;
}

inline Tensor branch_backward(Network& net, const std::vector<Step>& steps,
                              const std::vector<StepTrace>& traces, Tensor up) {
  for (size_t i = steps.size(); i-- > 0;) {
    const Step& st = steps[i];
    const StepTrace& tr = traces[i];
    switch (st.spec.kind) {
      case LayerKind::conv: {
        ConvLayer& L = net.convs[static_cast<size_t>(st.conv)];
        if (st.relu) up = relu_backward(tr.pre_act, up);
        Conv2dGrads g = conv2d_backward(tr.input, L.weights.value, st.spec, up,
                                        /*need_input_grad=*/i != 0);
        for (int64_t j = 0; j < g.weight_grad.size(); ++j)
          L.weights.grad.data[static_cast<size_t>(j)] +=
              g.weight_grad.data[static_cast<size_t>(j)];
        for (size_t j = 0; j < g.bias_grad.size(); ++j)
          L.bias.grad.data[j] += g.bias_grad[j];
        up = std::move(g.input_grad);
        break;
      }
      case LayerKind::max_pool:
        up = max_pool_backward(tr.pool, tr.input, up);
        break;
      case LayerKind::avg_pool:
        up = avg_pool_backward(tr.input, st.spec.kernel, st.spec.stride, up);
        break;
      default:
        fail("network: unexpected step kind ", layer_kind_name(st.spec.kind));
    }
  }
  return up;
}
}  // namespace detail

// Raw pixel input (B,1,H,W) in [0,255] -> density (B,1,H,W). Normalization
// subtracts the mean pixel and divides by 255; the deep branch sees the
// normalized plane replicated to 3 channels. Strict mode insists on dims
// divisible by 8 so the 1/8-scale map upsamples back exactly; training on
// 225x225 patches runs non-strict (both branches share one floor-pooling
// schedule, so their dims agree for any input).
inline Tensor forward_density(const Network& net, const Tensor& image, ForwardMode mode,
                              ForwardTrace* trace = nullptr, bool strict = true) {
  require(image.channels == 1, "forward: expected single-channel input, got ",
          image.shape_str());
  require(image.batch >= 1 && image.height >= 1 && image.width >= 1,
          "forward: empty input ", image.shape_str());
  if (strict)
    require(image.height % 8 == 0 && image.width % 8 == 0,
            "forward: input dims ", image.height, "x", image.width,
            " not divisible by 8 (pad first)");

  Tensor norm = image;
  const float mean = static_cast<float>(net.config.mean_pixel);
  for (float& v : norm.data) v = (v - mean) / 255.0f;

  if (trace) trace->shallow_input = norm;
  Tensor deep_out = detail::run_branch(net, net.deep,
                                       detail::replicate_channels(norm, 3),
                                       trace ? &trace->deep : nullptr);
  Tensor shallow_out = detail::run_branch(net, net.shallow, std::move(norm),
                                          trace ? &trace->shallow : nullptr);
  Tensor cat = concat_channels(deep_out, shallow_out);

  const ConvLayer& F = net.fusion_layer();
  Tensor fused = conv2d_forward(cat, F.weights.value,
                                std::span<const float>(F.bias.value.data), F.spec);
  if (trace) {
    trace->concat = std::move(cat);
    trace->fused_h = fused.height;
    trace->fused_w = fused.width;
  }

  Tensor density = bilinear_resize(fused, image.height, image.width);
  if (mode == ForwardMode::inference)
    for (float& v : density.data)
      if (v < 0.0f) v = 0.0f;
  return density;
}

// Accumulates parameter gradients for d loss / d density. Input gradients are
// discarded at the branch roots.
inline void backward_density(Network& net, const ForwardTrace& trace,
                             const Tensor& upstream) {
  Tensor up = bilinear_resize_backward(upstream, trace.fused_h, trace.fused_w);
  ConvLayer& F = net.fusion_layer();
  Conv2dGrads g = conv2d_backward(trace.concat, F.weights.value, F.spec, up);
  for (int64_t j = 0; j < g.weight_grad.size(); ++j)
    F.weights.grad.data[static_cast<size_t>(j)] +=
        g.weight_grad.data[static_cast<size_t>(j)];
  for (size_t j = 0; j < g.bias_grad.size(); ++j) F.bias.grad.data[j] += g.bias_grad[j];

  auto [deep_up, shallow_up] =
      concat_channels_backward(g.input_grad, net.deep_out_channels());
  detail::branch_backward(net, net.deep, trace.deep, std::move(deep_up));
  detail::branch_backward(net, net.shallow, trace.shallow, std::move(shallow_up));
}

struct CropRecord {
  int64_t height = 0;
  int64_t width = 0;
};

// Reflect-pad right/bottom to the next multiples of m; the record restores the
// original dims on the produced density.
inline std::pair<Tensor, CropRecord> pad_to_multiple(const Tensor& image, int64_t m = 8) {
  require(m >= 1, "pad to multiple: m must be >= 1, got ", m);
  CropRecord rec{image.height, image.width};
  const int64_t th = (image.height + m - 1) / m * m;
  const int64_t tw = (image.width + m - 1) / m * m;
  if (th == image.height && tw == image.width) return {image, rec};
  return {reflect_pad_tensor(image, th, tw), rec};
}

inline Tensor crop_to_record(const Tensor& t, const CropRecord& rec) {
  require(rec.height >= 1 && rec.width >= 1 && rec.height <= t.height &&
              rec.width <= t.width,
          "crop: record ", rec.height, "x", rec.width, " incompatible with ",
          t.shape_str());
  if (rec.height == t.height && rec.width == t.width) return t;
  Tensor out(t.batch, t.channels, rec.height, rec.width);
  for (int64_t b = 0; b < t.batch; ++b)
    for (int64_t c = 0; c < t.channels; ++c)
      for (int64_t y = 0; y < rec.height; ++y)
        std::copy(t.plane(b, c) + y * t.width, t.plane(b, c) + y * t.width + rec.width,
                  out.plane(b, c) + y * rec.width);
  return out;
}

inline double count_from_density(const Tensor& density) {
  double acc = 0.0;
  for (float v : density.data) acc += v;
  return acc;
}

inline std::vector<WeightRecord> network_to_records(const Network& net) {
  std::vector<WeightRecord> records;
  records.reserve(net.convs.size());
  for (const ConvLayer& L : net.convs) {
    WeightRecord r;
    r.name = L.name;
    r.weights = L.weights.value;
    r.bias = L.bias.value.data;
    records.push_back(std::move(r));
  }
  return records;
}

// Strict by-name load: every record must match a layer and cover all of them.
inline void load_weights(Network& net, const std::vector<WeightRecord>& records) {
  std::map<std::string, const WeightRecord*> by_name;
  for (const WeightRecord& r : records) {
    require(by_name.emplace(r.name, &r).second, "weights: duplicate layer \"", r.name,
            "\"");
  }
  require(by_name.size() == net.convs.size(), "weights: file has ", by_name.size(),
          " layers, network expects ", net.convs.size());
  for (ConvLayer& L : net.convs) {
    auto it = by_name.find(L.name);
    require(it != by_name.end(), "weights: missing layer \"", L.name, "\"");
    const WeightRecord& r = *it->second;
    require(r.weights.same_shape(L.weights.value), "weights: layer \"", L.name,
            "\" has shape ", r.weights.shape_str(), ", network expects ",
            L.weights.value.shape_str());
    require(r.bias.size() == L.bias.value.data.size(), "weights: layer \"", L.name,
            "\" has ", r.bias.size(), " bias entries, network expects ",
            L.bias.value.data.size());
    L.weights.value = r.weights;
    std::copy(r.bias.begin(), r.bias.end(), L.bias.value.data.begin());
  }
}

// Rebuild the architecture a weight file was saved from: widths are read off
// the record dims, so a toy checkpoint loads without its config.
inline NetworkConfig config_from_records(const std::vector<WeightRecord>& records,
                                         double mean_pixel = kDefaultMeanPixel) {
  std::map<std::string, const WeightRecord*> by_name;
  for (const WeightRecord& r : records) by_name[r.name] = &r;
  auto dim = [&](const std::string& name) -> const WeightRecord& {
    auto it = by_name.find(name);
    require(it != by_name.end(), "weights: missing layer \"", name, "\"");
    return *it->second;
  };
  NetworkConfig cfg;
  cfg.mean_pixel = mean_pixel;
  for (int b = 0; b < 5; ++b)
    cfg.deep_widths[static_cast<size_t>(b)] = static_cast<int>(
        dim("deep.b" + std::to_string(b + 1) + "c1").weights.batch);
  const WeightRecord& sh = dim("shallow.c1");
  cfg.shallow_width = static_cast<int>(sh.weights.batch);
  cfg.shallow_kernel = static_cast<int>(sh.weights.height);
  cfg.preset = cfg.deep_widths == NetworkConfig::paper().deep_widths ? "paper" : "toy";
  return cfg;
}

inline Network network_from_records(const std::vector<WeightRecord>& records,
                                    double mean_pixel = kDefaultMeanPixel) {
  Network net = build_network(config_from_records(records, mean_pixel), 0);
  load_weights(net, records);
  return net;
}

}  // namespace crowdnet
