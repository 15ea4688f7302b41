#pragma once

// "EGC1" checkpoint layout, all integers u32 and all parameters f32, little-endian:
//
//   magic "EGC1" | layer count L
//   L x { tag, k_h, k_w, in_channels, out_channels }
//   L x { weights [m][n][c][o] row-major, then biases [o] }
//
// tag = kind | activation << 8 | gamma << 16, with kind 0 egcl, 1 nconv, 2 sconv,
// 3 plain_conv; activation 0 none, 1 relu; gamma 0 softplus, 1 relu_shift.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "egcnn/image_io.hpp"
#include "egcnn/network.hpp"

namespace egcnn {

struct CheckpointError : IoError {
  using IoError::IoError;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  v = to_le(v);
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> b) : bytes_(std::move(b)) {}

  std::uint32_t u32() {
    if (bytes_.size() - pos_ < 4) throw CheckpointError("checkpoint: truncated file");
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return to_le(v);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Network<float>& net) {
  std::string out = "EGC1";
  const auto& spec = net.spec();
  detail::put_u32(out, static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& L : spec.layers) {
    const std::uint32_t tag = static_cast<std::uint32_t>(L.kind) |
                              static_cast<std::uint32_t>(L.activation) << 8 |
                              static_cast<std::uint32_t>(spec.gamma) << 16;
    detail::put_u32(out, tag);
    detail::put_u32(out, static_cast<std::uint32_t>(L.kernel));
    detail::put_u32(out, static_cast<std::uint32_t>(L.kernel));
    detail::put_u32(out, static_cast<std::uint32_t>(L.in_channels));
    detail::put_u32(out, static_cast<std::uint32_t>(L.out_channels));
  }
  for (const auto& p : net.params()) {
    for (float w : p.w.weights()) detail::put_f32(out, w);
    for (float b : p.b) detail::put_f32(out, b);
  }
  return out;
}

inline Network<float> deserialize_checkpoint(std::vector<unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "EGC1", 4) != 0)
    throw CheckpointError("checkpoint: bad magic (expected EGC1)");
  bytes.erase(bytes.begin(), bytes.begin() + 4);
  detail::ByteReader r(std::move(bytes));
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 1024) throw CheckpointError("checkpoint: implausible layer count");
  NetworkSpec spec;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t tag = r.u32();
    const std::uint32_t kind = tag & 0xff, act = (tag >> 8) & 0xff, gam = (tag >> 16) & 0xff;
    if (kind > 3 || act > 1 || gam > 1 || (tag >> 24) != 0)
      throw CheckpointError("checkpoint: unknown layer tag " + std::to_string(tag));
    const std::uint32_t kh = r.u32(), kw = r.u32(), in = r.u32(), out = r.u32();
    if (kh != kw || kh % 2 == 0 || kh > 63 || in == 0 || out == 0 || in > 4096 || out > 4096)
      throw CheckpointError("checkpoint: bad shape in layer " + std::to_string(l));
    const Gamma g = static_cast<Gamma>(gam);
    if (l > 0 && g != spec.gamma)
      throw CheckpointError("checkpoint: mixed applicability transforms are not supported");
    spec.gamma = g;
    spec.layers.push_back(
        {static_cast<LayerKind>(kind), kh, in, out, static_cast<Activation>(act)});
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (r.remaining() != spec.parameter_count() * 4)
    throw CheckpointError("checkpoint: parameter block has " + std::to_string(r.remaining()) +
                          " bytes, expected " + std::to_string(spec.parameter_count() * 4));
  Network<float> net(spec);
  for (auto& p : net.params()) {
    for (auto& w : p.w.weights()) w = r.f32();
    for (auto& b : p.b) b = r.f32();
    if (!p.finite()) throw CheckpointError("checkpoint: non-finite parameter values");
  }
  return net;
}

inline void save_checkpoint(const Network<float>& net, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(net));
}

inline Network<float> load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

inline void save_checkpoint(const UpsamplerModel& m, const std::string& path) {
  save_checkpoint(m.net, path);
}
inline void save_checkpoint(const FusionModel& m, const std::string& path) {
  save_checkpoint(m.net, path);
}

/// Interpret a checkpoint as an upsampler; all layers must share one guided kind.
inline UpsamplerModel as_upsampler(Network<float> net) {
  const auto& layers = net.spec().layers;
  const LayerKind k = layers.front().kind;
  UpsamplerKind kind;
  switch (k) {
    case LayerKind::egcl: kind = UpsamplerKind::edge; break;
    case LayerKind::nconv: kind = UpsamplerKind::normal; break;
    case LayerKind::sconv: kind = UpsamplerKind::sparse; break;
    default: throw CheckpointError("checkpoint is not an upsampling network");
  }
  for (const auto& L : layers)
    if (L.kind != k) throw CheckpointError("checkpoint mixes layer kinds");
  if (layers.front().in_channels != 1 || layers.back().out_channels != 1)
    throw CheckpointError("upsampling network must map 1 channel to 1 channel");
  return {kind, std::move(net)};
}

inline FusionModel as_fusion(Network<float> net) {
  const auto& layers = net.spec().layers;
  for (const auto& L : layers)
    if (L.kind != LayerKind::plain_conv)
      throw CheckpointError("checkpoint is not a fusion network");
  const std::size_t in = layers.front().in_channels;
  if (in < 4 || in % 2 != 0 || layers.back().out_channels != 1)
    throw CheckpointError("fusion network must take 2K >= 4 channels to 1");
  return {in / 2, std::move(net)};
}

inline UpsamplerModel load_upsampler(const std::string& path) {
  return as_upsampler(load_checkpoint(path));
}
inline FusionModel load_fusion(const std::string& path) { return as_fusion(load_checkpoint(path)); }

}  // namespace egcnn
