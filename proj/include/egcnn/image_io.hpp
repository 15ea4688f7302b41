#pragma once

// Requires linking libpng.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/edge_field.hpp"
#include "egcnn/grid.hpp"
#include "egcnn/numerics.hpp"

namespace egcnn {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Netpbm header tokens, skipping whitespace and '#' comments.
class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& b, const std::string& path)
      : bytes_(b), path_(path) {}

  std::string token() {
    skip_space();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t.push_back(bytes_[pos_++]);
    if (t.empty()) throw IoError("truncated header in '" + path_ + "'");
    return t;
  }

  long number() {
    const std::string t = token();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0' || v < 0) throw IoError("bad header field '" + t + "' in '" + path_ + "'");
    return v;
  }

  /// Consume the single whitespace byte that ends a binary header.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw IoError("malformed header in '" + path_ + "'");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline GridF read_netpbm(const std::vector<unsigned char>& bytes, const std::string& path) {
  HeaderReader hr(bytes, path);
  const std::string magic = hr.token();
  std::size_t channels;
  bool binary;
  if (magic == "P2") channels = 1, binary = false;
  else if (magic == "P5") channels = 1, binary = true;
  else if (magic == "P3") channels = 3, binary = false;
  else if (magic == "P6") channels = 3, binary = true;
  else throw IoError("unsupported netpbm type '" + magic + "' in '" + path + "'");
  const auto w = static_cast<std::size_t>(hr.number());
  const auto h = static_cast<std::size_t>(hr.number());
  const long maxval = hr.number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535)
    throw IoError("bad dimensions or maxval in '" + path + "'");
  GridF g(h, w, channels);
  if (!binary) {
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = static_cast<float>(hr.number());
    return g;
  }
  hr.end_header();
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (bytes.size() - hr.pos() < g.size() * bps) throw IoError("truncated pixel data in '" + path + "'");
  const unsigned char* p = bytes.data() + hr.pos();
  for (std::size_t k = 0; k < g.size(); ++k)
    g[k] = bps == 1 ? p[k] : static_cast<float>((p[2 * k] << 8) | p[2 * k + 1]);
  return g;
}

struct PngReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadState() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteState() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct MemoryReader {
  const std::vector<unsigned char>* bytes;
  std::size_t pos;
};

inline void png_error_fn(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

inline GridF read_png(const std::vector<unsigned char>& bytes, const std::string& path) {
  PngReadState st;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!st.png) throw IoError("png: cannot allocate reader");
  st.info = png_create_info_struct(st.png);
  if (!st.info) throw IoError("png: cannot allocate info");
  MemoryReader src{&bytes, 0};
  png_set_read_fn(st.png, &src, [](png_structp p, png_bytep out, png_size_t n) {
    auto* r = static_cast<MemoryReader*>(png_get_io_ptr(p));
    if (r->bytes->size() - r->pos < n) throw IoError("png: truncated file");
    std::memcpy(out, r->bytes->data() + r->pos, n);
    r->pos += n;
  });
  png_read_info(st.png, st.info);
  const png_uint_32 w = png_get_image_width(st.png, st.info);
  const png_uint_32 h = png_get_image_height(st.png, st.info);
  const int color = png_get_color_type(st.png, st.info);
  int depth = png_get_bit_depth(st.png, st.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(st.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(st.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(st.png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(st.png);
  png_read_update_info(st.png, st.info);
  const std::size_t channels = png_get_channels(st.png, st.info);
  depth = png_get_bit_depth(st.png, st.info);
  if (channels != 1 && channels != 3) throw IoError("png: unsupported channel layout in '" + path + "'");
  const std::size_t rowbytes = png_get_rowbytes(st.png, st.info);
  std::vector<unsigned char> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 i = 0; i < h; ++i) rows[i] = buf.data() + i * rowbytes;
  png_read_image(st.png, rows.data());
  GridF g(h, w, channels);
  for (png_uint_32 i = 0; i < h; ++i)
    for (std::size_t k = 0; k < w * channels; ++k) {
      float v;
      if (depth == 16) {
        std::uint16_t s;
        std::memcpy(&s, rows[i] + 2 * k, 2);
        v = s;
      } else {
        v = rows[i][k];
      }
      g[i * w * channels + k] = v;
    }
  return g;
}

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

}  // namespace detail

/// Read PNG (8/16-bit gray or RGB) or netpbm (P2/P3/P5/P6). Values stay in file units.
inline GridF read_image(const std::string& path) {
  const auto bytes = detail::read_file(path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(sig, sig + 8, bytes.begin())) return detail::read_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::read_netpbm(bytes, path);
  throw IoError("unsupported image format: '" + path + "'");
}

/// Binary PGM/PPM with values rounded and clamped to [0, maxval].
inline void write_netpbm(const std::string& path, const GridF& g, int maxval = 255) {
  if (g.channels() != 1 && g.channels() != 3) throw IoError("write_netpbm: need 1 or 3 channels");
  if (maxval != 255 && maxval != 65535) throw IoError("write_netpbm: maxval must be 255 or 65535");
  std::ostringstream os;
  os << (g.channels() == 1 ? "P5" : "P6") << '\n' << g.width() << ' ' << g.height() << '\n'
     << maxval << '\n';
  std::string data = os.str();
  for (float v : g.values()) {
    const auto q = static_cast<std::uint32_t>(std::clamp(std::round(v), 0.0f, float(maxval)));
    if (maxval > 255) data.push_back(static_cast<char>(q >> 8));
    data.push_back(static_cast<char>(q & 0xff));
  }
  detail::write_file(path, data);
}

/// PNG with 8- or 16-bit samples; values rounded and clamped to the sample range.
inline void write_png(const std::string& path, const GridF& g, int bit_depth = 8) {
  if (g.channels() != 1 && g.channels() != 3) throw IoError("write_png: need 1 or 3 channels");
  if (bit_depth != 8 && bit_depth != 16) throw IoError("write_png: bit depth must be 8 or 16");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  detail::PngWriteState st;
  st.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                   detail::png_warning_fn);
  if (!st.png) throw IoError("png: cannot allocate writer");
  st.info = png_create_info_struct(st.png);
  if (!st.info) throw IoError("png: cannot allocate info");
  png_init_io(st.png, fp.get());
  png_set_IHDR(st.png, st.info, static_cast<png_uint_32>(g.width()),
               static_cast<png_uint_32>(g.height()), bit_depth,
               g.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(st.png, st.info);
  const float maxv = bit_depth == 8 ? 255.0f : 65535.0f;
  const std::size_t row_samples = g.width() * g.channels();
  std::vector<unsigned char> row(row_samples * (bit_depth / 8));
  for (std::size_t i = 0; i < g.height(); ++i) {
    for (std::size_t k = 0; k < row_samples; ++k) {
      const auto q =
          static_cast<std::uint32_t>(std::clamp(std::round(g[i * row_samples + k]), 0.0f, maxv));
      if (bit_depth == 8) {
        row[k] = static_cast<unsigned char>(q);
      } else {
        row[2 * k] = static_cast<unsigned char>(q >> 8);
        row[2 * k + 1] = static_cast<unsigned char>(q & 0xff);
      }
    }
    png_write_row(st.png, row.data());
  }
  png_write_end(st.png, nullptr);
}

inline bool has_extension(const std::string& path, const std::string& ext) {
  if (path.size() < ext.size()) return false;
  std::string tail = path.substr(path.size() - ext.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
  return tail == ext;
}

/// Little-endian PFM ("Pf" gray / "PF" RGB, negative scale), rows stored bottom to top.
inline void write_pfm(const std::string& path, const GridF& g) {
  if (g.channels() != 1 && g.channels() != 3) throw IoError("write_pfm: need 1 or 3 channels");
  std::ostringstream os;
  os << (g.channels() == 1 ? "Pf" : "PF") << '\n' << g.width() << ' ' << g.height() << "\n-1.0\n";
  std::string data = os.str();
  const std::size_t row = g.width() * g.channels();
  for (std::size_t i = g.height(); i-- > 0;)
    for (std::size_t k = 0; k < row; ++k) {
      const std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(g[i * row + k]));
      char b[4];
      std::memcpy(b, &bits, 4);
      data.append(b, 4);
    }
  detail::write_file(path, data);
}

inline GridF read_pfm(const std::string& path) {
  const auto bytes = detail::read_file(path);
  detail::HeaderReader hr(bytes, path);
  const std::string magic = hr.token();
  std::size_t channels;
  if (magic == "Pf") channels = 1;
  else if (magic == "PF") channels = 3;
  else throw IoError("not a PFM file: '" + path + "'");
  const auto w = static_cast<std::size_t>(hr.number());
  const auto h = static_cast<std::size_t>(hr.number());
  const std::string scale_tok = hr.token();
  hr.end_header();
  const double scale = std::strtod(scale_tok.c_str(), nullptr);
  if (scale == 0.0 || w == 0 || h == 0) throw IoError("bad PFM header in '" + path + "'");
  const bool little = scale < 0.0;
  GridF g(h, w, channels);
  if (bytes.size() - hr.pos() < g.size() * 4) throw IoError("truncated PFM data in '" + path + "'");
  const unsigned char* p = bytes.data() + hr.pos();
  const std::size_t row = w * channels;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t k = 0; k < row; ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, p + 4 * (r * row + k), 4);
      const bool swap = little != (std::endian::native == std::endian::little);
      if (swap) bits = __builtin_bswap32(bits);
      g[(h - 1 - r) * row + k] = std::bit_cast<float>(bits);
    }
  if (!g.all_finite()) throw IoError("non-finite values in '" + path + "'");
  return g;
}

/// Depth from PFM (as stored) or from 16-bit PNG/PGM divided by `scale`.
inline GridF read_depth(const std::string& path, double scale = 256.0) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F')) {
    GridF g = read_pfm(path);
    if (g.channels() != 1) throw IoError("depth PFM must be single-channel: '" + path + "'");
    return g;
  }
  if (!(scale > 0.0)) throw IoError("read_depth: scale must be positive");
  GridF g = read_image(path);
  if (g.channels() != 1) throw IoError("depth image must be single-channel: '" + path + "'");
  for (auto& v : g.values()) v = static_cast<float>(v / scale);
  return g;
}

/// Depth as PFM (lossless) or as 16-bit PNG/PGM holding round(depth * scale).
inline void write_depth(const std::string& path, const GridF& depth, double scale = 256.0) {
  if (has_extension(path, ".pfm")) return write_pfm(path, depth);
  GridF q = depth;
  for (auto& v : q.values()) v = static_cast<float>(v * scale);
  if (has_extension(path, ".png")) return write_png(path, q, 16);
  if (has_extension(path, ".pgm")) return write_netpbm(path, q, 65535);
  throw IoError("write_depth: unsupported extension for '" + path + "'");
}

/// Binary edge map from any readable image; nonzero samples (any channel) are edges.
inline EdgeMap load_edge_map(const std::string& path) {
  const GridF g = read_image(path);
  EdgeMap m(g.height(), g.width());
  for (std::size_t p = 0; p < g.pixels(); ++p)
    for (std::size_t c = 0; c < g.channels(); ++c)
      if (g[p * g.channels() + c] != 0.0f) m.mask[p] = 1;
  return m;
}

inline void save_edge_map(const std::string& path, const EdgeMap& m) {
  GridF g(m.height, m.width, 1);
  for (std::size_t k = 0; k < m.mask.size(); ++k) g[k] = m.mask[k] ? 255.0f : 0.0f;
  if (has_extension(path, ".png")) return write_png(path, g, 8);
  write_netpbm(path, g, 255);
}

/// Edge-dist values as PFM, or as 16-bit PGM/PNG scaled by 65535.
inline void write_edge_dist(const std::string& path, const GridF& field) {
  if (has_extension(path, ".pfm")) return write_pfm(path, field);
  GridF q = scale(field, 65535.0);
  if (has_extension(path, ".png")) return write_png(path, q, 16);
  write_netpbm(path, q, 65535);
}

inline GridF read_edge_dist(const std::string& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == 'f') return read_pfm(path);
  GridF g = read_image(path);
  if (g.channels() != 1) throw IoError("edge-dist image must be single-channel: '" + path + "'");
  for (auto& v : g.values()) v = static_cast<float>(v / 65535.0);
  return g;
}

}  // namespace egcnn
