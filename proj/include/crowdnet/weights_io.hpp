// CNWT weight container: magic "CNWT", u32 version, u32 layer count; per layer
// u16 name length + name, u8 rank, u32 dims, f32 weights then f32 biases
// (bias count = dims[0]). All integers and floats little-endian.
#pragma once

#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "crowdnet/tensor.hpp"

namespace crowdnet {

struct WeightRecord {
  std::string name;
  Tensor weights;            // (out_ch, in_ch, k, k)
  std::vector<float> bias;   // length out_ch
};

namespace detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> bytes, const char* label = "weight file")
      : bytes_(bytes), label_(label) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    auto b = take(2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    auto b = take(4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    auto b = take(n);
    return std::string(reinterpret_cast<const char*>(b.data()), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const uint8_t> take(size_t n) {
    if (pos_ + n > bytes_.size()) fail(label_, ": truncated at byte ", pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const uint8_t> bytes_;
  const char* label_;
  size_t pos_ = 0;
};

}  // namespace detail

constexpr uint32_t kWeightFormatVersion = 1;

inline std::vector<uint8_t> serialize_weights(const std::vector<WeightRecord>& records) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'C', 'N', 'W', 'T'});
  detail::put_u32(out, kWeightFormatVersion);
  detail::put_u32(out, static_cast<uint32_t>(records.size()));
  for (const auto& rec : records) {
    require(rec.name.size() <= 0xffff, "weight file: layer name too long");
    detail::put_u16(out, static_cast<uint16_t>(rec.name.size()));
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    out.push_back(4);  // rank
    detail::put_u32(out, static_cast<uint32_t>(rec.weights.batch));
    detail::put_u32(out, static_cast<uint32_t>(rec.weights.channels));
    detail::put_u32(out, static_cast<uint32_t>(rec.weights.height));
    detail::put_u32(out, static_cast<uint32_t>(rec.weights.width));
    require(static_cast<int64_t>(rec.bias.size()) == rec.weights.batch,
            "weight file: bias count ", rec.bias.size(), " != out channels ",
            rec.weights.batch, " for layer '", rec.name, "'");
    for (float v : rec.weights.data) detail::put_f32(out, v);
    for (float v : rec.bias) detail::put_f32(out, v);
  }
  return out;
}

inline std::vector<WeightRecord> parse_weights(std::span<const uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const std::string magic = r.str(4);
  if (magic != "CNWT") fail("weight file: bad magic '", magic, "'");
  const uint32_t version = r.u32();
  if (version != kWeightFormatVersion)
    fail("weight file: unsupported version ", version);
  const uint32_t count = r.u32();

  std::vector<WeightRecord> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    WeightRecord rec;
    rec.name = r.str(r.u16());
    const uint8_t rank = r.u8();
    if (rank != 4) fail("weight file: layer '", rec.name, "' has rank ", int(rank),
                        ", expected 4");
    int64_t dims[4];
    for (auto& d : dims) {
      d = r.u32();
      if (d <= 0) fail("weight file: layer '", rec.name, "' has zero dimension");
    }
    rec.weights = Tensor(dims[0], dims[1], dims[2], dims[3]);
    for (float& v : rec.weights.data) v = r.f32();
    rec.bias.resize(static_cast<size_t>(dims[0]));
    for (float& v : rec.bias) v = r.f32();
    records.push_back(std::move(rec));
  }
  if (!r.done()) fail("weight file: trailing bytes after last layer");
  return records;
}

}  // namespace crowdnet
