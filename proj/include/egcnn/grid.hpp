#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace egcnn {

/// Dense H x W x C field stored row-major with the channel index innermost.
template <typename T = float>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(std::size_t height, std::size_t width, std::size_t channels = 1, T fill = T{0})
      : height_(height), width_(width), channels_(channels),
        values_(height * width * channels, fill) {
    if (channels == 0) throw std::invalid_argument("Grid: channel count must be >= 1");
  }

  Grid(std::size_t height, std::size_t width, std::size_t channels, std::vector<T> values)
      : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (channels == 0) throw std::invalid_argument("Grid: channel count must be >= 1");
    if (values_.size() != height * width * channels)
      throw std::invalid_argument("Grid: value count " + std::to_string(values_.size()) +
                                  " does not match " + std::to_string(height) + "x" +
                                  std::to_string(width) + "x" + std::to_string(channels));
  }

  /// Build from nested rows of a single-channel matrix, mostly for tests.
  static Grid from_rows(const std::vector<std::vector<T>>& rows) {
    const std::size_t h = rows.size();
    const std::size_t w = h ? rows.front().size() : 0;
    std::vector<T> v;
    v.reserve(h * w);
    for (const auto& r : rows) {
      if (r.size() != w) throw std::invalid_argument("Grid::from_rows: ragged rows");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Grid(h, w, 1, std::move(v));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t i, std::size_t j, std::size_t c = 0) noexcept {
    return values_[(i * width_ + j) * channels_ + c];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t c = 0) const noexcept {
    return values_[(i * width_ + j) * channels_ + c];
  }

  T& operator[](std::size_t k) noexcept { return values_[k]; }
  const T& operator[](std::size_t k) const noexcept { return values_[k]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  bool same_spatial(const Grid& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }
  template <typename U>
  bool same_spatial(const Grid<U>& o) const noexcept {
    return height_ == o.height() && width_ == o.width();
  }
  template <typename U>
  bool same_shape(const Grid<U>& o) const noexcept {
    return same_spatial(o) && channels_ == o.channels();
  }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(),
                       [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  /// Extract one channel as a single-channel grid.
  Grid channel(std::size_t c) const {
    if (c >= channels_) throw std::out_of_range("Grid::channel: index out of range");
    Grid out(height_, width_, 1);
    for (std::size_t p = 0; p < pixels(); ++p) out[p] = values_[p * channels_ + c];
    return out;
  }

  template <typename U>
  Grid<U> cast() const {
    std::vector<U> v(values_.size());
    std::transform(values_.begin(), values_.end(), v.begin(),
                   [](T x) { return static_cast<U>(x); });
    return Grid<U>(height_, width_, channels_, std::move(v));
  }

  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" +
           std::to_string(channels_);
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.channels_ == b.channels_ &&
           a.values_ == b.values_;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 1;
  std::vector<T> values_;
};

using GridF = Grid<float>;
using GridD = Grid<double>;

/// Stack single- or multi-channel grids of equal spatial size along the channel axis.
template <typename T>
Grid<T> concat_channels(std::span<const Grid<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  std::size_t total = 0;
  for (const auto& g : parts) {
    if (!g.same_spatial(parts.front()))
      throw std::invalid_argument("concat_channels: spatial size mismatch");
    total += g.channels();
  }
  Grid<T> out(parts.front().height(), parts.front().width(), total);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    std::size_t o = 0;
    for (const auto& g : parts)
      for (std::size_t c = 0; c < g.channels(); ++c) out[p * total + o++] = g[p * g.channels() + c];
  }
  return out;
}

/// Plain-text matrix dump, one row per line, channels separated by '|'.
template <typename T>
void dump(const Grid<T>& g, std::ostream& os, int precision = 6) {
  os << std::setprecision(precision);
  for (std::size_t i = 0; i < g.height(); ++i) {
    for (std::size_t j = 0; j < g.width(); ++j) {
      if (j) os << ' ';
      for (std::size_t c = 0; c < g.channels(); ++c) {
        if (c) os << '|';
        os << static_cast<double>(g(i, j, c));
      }
    }
    os << '\n';
  }
}

template <typename T>
std::string dump_string(const Grid<T>& g, int precision = 6) {
  std::ostringstream os;
  dump(g, os, precision);
  return os.str();
}

}  // namespace egcnn
