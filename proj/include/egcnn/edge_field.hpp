#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/grid.hpp"

namespace egcnn {

/// Binary depth-edge mask, true at edge pixels.
struct EdgeMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;

  EdgeMap() = default;
  EdgeMap(std::size_t h, std::size_t w, bool fill = false)
      : height(h), width(w), mask(h * w, fill ? 1 : 0) {}

  bool at(std::size_t i, std::size_t j) const noexcept { return mask[i * width + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v = true) noexcept { mask[i * width + j] = v; }
  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  }

  friend bool operator==(const EdgeMap&, const EdgeMap&) = default;
};

struct CannyConfig {
  double low_threshold = 50.0;
  double high_threshold = 150.0;
  int aperture = 3;
  double blur_sigma = 1.0;  ///< 0 disables the Gaussian pre-blur

  static CannyConfig k3() { return {50.0, 150.0, 3, 1.0}; }
  static CannyConfig k5() { return {50.0, 150.0, 5, 1.0}; }
};

/// BT.601 luma of an RGB grid; single-channel input is returned unchanged.
template <typename T>
Grid<T> to_luma(const Grid<T>& image) {
  if (image.channels() == 1) return image;
  if (image.channels() != 3)
    throw std::invalid_argument("to_luma: expected 1 or 3 channels, got " +
                                std::to_string(image.channels()));
  Grid<T> out(image.height(), image.width(), 1);
  for (std::size_t p = 0; p < image.pixels(); ++p) {
    const double r = image[3 * p], g = image[3 * p + 1], b = image[3 * p + 2];
    out[p] = static_cast<T>(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return out;
}

namespace detail {

// Reflect-101 border (abcd|cba), so a constant image has zero gradient at the border.
inline long reflect101(long x, long n) {
  if (n == 1) return 0;
  while (x < 0 || x >= n) {
    if (x < 0) x = -x;
    if (x >= n) x = 2 * (n - 1) - x;
  }
  return x;
}

inline std::vector<double> separable_pass(const std::vector<double>& src, long H, long W,
                                          const std::vector<double>& taps, bool horizontal) {
  const long r = static_cast<long>(taps.size()) / 2;
  std::vector<double> dst(src.size());
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      double acc = 0.0;
      for (long t = -r; t <= r; ++t) {
        const long ii = horizontal ? i : reflect101(i + t, H);
        const long jj = horizontal ? reflect101(j + t, W) : j;
        acc += taps[t + r] * src[ii * W + jj];
      }
      dst[i * W + j] = acc;
    }
  return dst;
}

inline std::vector<double> gaussian_taps(double sigma) {
  const long r = std::max<long>(1, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * r + 1);
  double sum = 0.0;
  for (long t = -r; t <= r; ++t) sum += taps[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
  for (auto& v : taps) v /= sum;
  return taps;
}

}  // namespace detail

/// Canny edges: blur, Sobel (L1 magnitude), 4-direction non-maximum suppression,
/// 8-connected double-threshold hysteresis.
template <typename T>
EdgeMap canny_edges(const Grid<T>& image, const CannyConfig& cfg) {
  if (image.empty()) throw std::invalid_argument("canny_edges: empty image");
  if (!(cfg.low_threshold < cfg.high_threshold))
    throw std::invalid_argument("canny_edges: low threshold must be below high threshold");
  if (cfg.aperture != 3 && cfg.aperture != 5)
    throw std::invalid_argument("canny_edges: aperture must be 3 or 5");
  if (cfg.blur_sigma < 0.0) throw std::invalid_argument("canny_edges: negative blur sigma");

  const Grid<T> luma = to_luma(image);
  const long H = static_cast<long>(luma.height());
  const long W = static_cast<long>(luma.width());
  std::vector<double> src(luma.values().begin(), luma.values().end());
  if (cfg.blur_sigma > 0.0) {
    const auto taps = detail::gaussian_taps(cfg.blur_sigma);
    src = detail::separable_pass(src, H, W, taps, true);
    src = detail::separable_pass(src, H, W, taps, false);
    // integer levels, as in an 8-bit pipeline; Sobel is then exact and ties resolve consistently
    for (auto& v : src) v = std::round(v);
  }

  const std::vector<double> smooth =
      cfg.aperture == 3 ? std::vector<double>{1, 2, 1} : std::vector<double>{1, 4, 6, 4, 1};
  const std::vector<double> deriv =
      cfg.aperture == 3 ? std::vector<double>{-1, 0, 1} : std::vector<double>{-1, -2, 0, 2, 1};
  const auto gx = detail::separable_pass(detail::separable_pass(src, H, W, deriv, true), H, W,
                                         smooth, false);
  const auto gy = detail::separable_pass(detail::separable_pass(src, H, W, smooth, true), H, W,
                                         deriv, false);

  std::vector<double> mag(src.size());
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(gx[k]) + std::abs(gy[k]);
  auto m_at = [&](long i, long j) {
    return (i < 0 || i >= H || j < 0 || j >= W) ? 0.0 : mag[i * W + j];
  };

  // 0 = rejected, 1 = weak candidate, 2 = strong edge
  std::vector<std::uint8_t> state(mag.size(), 0);
  const double tan22 = std::tan(M_PI / 8.0);
  const double tan67 = std::tan(3.0 * M_PI / 8.0);
  std::vector<long> stack;
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      const double m = mag[i * W + j];
      if (m <= cfg.low_threshold) continue;
      const double ax = std::abs(gx[i * W + j]), ay = std::abs(gy[i * W + j]);
      bool is_max;
      if (ay <= tan22 * ax) {
        is_max = m > m_at(i, j - 1) && m >= m_at(i, j + 1);
      } else if (ay >= tan67 * ax) {
        is_max = m > m_at(i - 1, j) && m >= m_at(i + 1, j);
      } else {
        const long s = ((gx[i * W + j] < 0) != (gy[i * W + j] < 0)) ? -1 : 1;
        is_max = m > m_at(i - 1, j - s) && m > m_at(i + 1, j + s);
      }
      if (!is_max) continue;
      if (m > cfg.high_threshold) {
        state[i * W + j] = 2;
        stack.push_back(i * W + j);
      } else {
        state[i * W + j] = 1;
      }
    }

  while (!stack.empty()) {
    const long k = stack.back();
    stack.pop_back();
    const long i = k / W, j = k % W;
    for (long di = -1; di <= 1; ++di)
      for (long dj = -1; dj <= 1; ++dj) {
        const long ii = i + di, jj = j + dj;
        if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
        auto& s = state[ii * W + jj];
        if (s == 1) {
          s = 2;
          stack.push_back(ii * W + jj);
        }
      }
  }

  EdgeMap out(static_cast<std::size_t>(H), static_cast<std::size_t>(W));
  for (std::size_t k = 0; k < state.size(); ++k) out.mask[k] = state[k] == 2;
  return out;
}

/// Returned for every pixel when the edge map is empty; larger than any ramp width.
inline constexpr float kNoEdgeDistance = 1e30f;

/// Chamfer (3,4)/3 distance to the nearest edge pixel via a forward and a backward sweep.
inline GridF distance_transform(const EdgeMap& edges) {
  const long H = static_cast<long>(edges.height);
  const long W = static_cast<long>(edges.width);
  GridF out(edges.height, edges.width, 1);
  if (edges.count() == 0) {
    std::fill(out.values().begin(), out.values().end(), kNoEdgeDistance);
    return out;
  }
  constexpr std::int64_t kInf = std::numeric_limits<std::int32_t>::max();
  std::vector<std::int64_t> d(edges.mask.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = edges.mask[k] ? 0 : kInf;
  auto relax = [&](long i, long j, long ii, long jj, std::int64_t w) {
    if (ii < 0 || ii >= H || jj < 0 || jj >= W) return;
    d[i * W + j] = std::min(d[i * W + j], d[ii * W + jj] + w);
  };
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      relax(i, j, i - 1, j - 1, 4);
      relax(i, j, i - 1, j, 3);
      relax(i, j, i - 1, j + 1, 4);
      relax(i, j, i, j - 1, 3);
    }
  for (long i = H - 1; i >= 0; --i)
    for (long j = W - 1; j >= 0; --j) {
      relax(i, j, i + 1, j + 1, 4);
      relax(i, j, i + 1, j, 3);
      relax(i, j, i + 1, j - 1, 4);
      relax(i, j, i, j + 1, 3);
    }
  for (std::size_t k = 0; k < d.size(); ++k) out[k] = static_cast<float>(d[k] / 3.0);
  return out;
}

/// Per-pixel guidance weights: e_edge on edges, rising linearly to e_max at distance tau.
struct EdgeDistField {
  GridF values;
  float e_edge = 0.1f;
  float e_max = 1.0f;
  float tau = 5.0f;

  std::size_t height() const noexcept { return values.height(); }
  std::size_t width() const noexcept { return values.width(); }
};

inline float edge_ramp(float distance, float e_edge, float e_max, float tau) {
  const double v = e_edge + (static_cast<double>(e_max) - e_edge) * (distance / tau);
  return static_cast<float>(std::min<double>(e_max, v));
}

inline EdgeDistField build_edge_dist_field(const EdgeMap& edges, float e_edge = 0.1f,
                                           float e_max = 1.0f, float tau = 5.0f) {
  if (!(e_edge >= 0.0f && e_edge < e_max && e_max <= 1.0f))
    throw std::invalid_argument("build_edge_dist_field: need 0 <= e_edge < e_max <= 1");
  if (!(tau > 0.0f)) throw std::invalid_argument("build_edge_dist_field: tau must be positive");
  EdgeDistField field{distance_transform(edges), e_edge, e_max, tau};
  for (auto& v : field.values.values()) v = edge_ramp(v, e_edge, e_max, tau);
  return field;
}

/// Field with every value equal to 1, under which guided layers reduce to normalized convolution.
inline EdgeDistField unit_edge_dist_field(std::size_t h, std::size_t w) {
  return EdgeDistField{GridF(h, w, 1, 1.0f), 1.0f, 1.0f, 1.0f};
}

}  // namespace egcnn
