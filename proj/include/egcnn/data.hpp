#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/grid.hpp"
#include "egcnn/rng.hpp"

namespace egcnn {

/// Sparse measurements drawn from a dense depth map. confidence is 1 at measured pixels.
struct SparseDepthSample {
  GridF sparse_depth;
  GridF confidence;
  GridF ground_truth;
  double sampling_rate = 1.0;
};

inline std::size_t sample_count(std::size_t pixels, double rate) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(pixels)));
}

/// Keep exactly round(rate * H * W) pixels chosen uniformly without replacement.
inline SparseDepthSample sparsify(const GridF& dense, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0))
    throw std::invalid_argument("sparsify: rate must be in (0, 1], got " + std::to_string(rate));
  if (dense.channels() != 1) throw std::invalid_argument("sparsify: depth must be single-channel");
  const std::size_t n = dense.pixels();
  const std::size_t keep = std::min(n, sample_count(n, rate));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t k = 0; k < keep; ++k) std::swap(idx[k], idx[k + rng.below(n - k)]);

  SparseDepthSample s{GridF(dense.height(), dense.width(), 1),
                      GridF(dense.height(), dense.width(), 1), dense, rate};
  for (std::size_t k = 0; k < keep; ++k) {
    s.sparse_depth[idx[k]] = dense[idx[k]];
    s.confidence[idx[k]] = 1.0f;
  }
  return s;
}

enum class StripeOrientation { horizontal, vertical, diagonal };

/// One axis-aligned box of constant depth. Bounds are half-open [top, bottom) x [left, right).
struct SceneRect {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;
  float depth = 1.0f;
  std::array<float, 3> fill{};
  float stripe_amplitude = 0.0f;
  float stripe_period = 8.0f;
  StripeOrientation orientation = StripeOrientation::horizontal;

  bool contains(std::size_t i, std::size_t j) const noexcept {
    return i >= top && i < bottom && j >= left && j < right;
  }
};

struct SceneConfig {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t rectangles = 6;
  float depth_min = 2.0f;
  float depth_max = 10.0f;
  float texture_amplitude = 20.0f;  ///< color-only stripes, never present in depth
  std::uint64_t seed = 0;
};

struct Scene {
  GridF color;  ///< 3 channels, integer values in [0, 255]
  GridF depth;
  std::vector<SceneRect> rects;
  std::array<float, 3> background{};
  float background_depth = 0.0f;
};

/// Box world: opaque rectangles at constant depths over a background at depth_max.
/// The nearest rectangle covering a pixel determines both its depth and its color.
inline Scene synth_scene(const SceneConfig& cfg) {
  if (cfg.height < 8 || cfg.width < 8) throw std::invalid_argument("synth_scene: image too small");
  if (!(cfg.depth_min > 0.0f && cfg.depth_min < cfg.depth_max))
    throw std::invalid_argument("synth_scene: need 0 < depth_min < depth_max");
  Rng rng(cfg.seed);
  Scene scene;
  scene.background_depth = cfg.depth_max;
  for (auto& c : scene.background) c = static_cast<float>(std::floor(rng.uniform(20.0, 235.0)));

  const double near_max = cfg.depth_min + 0.9 * (cfg.depth_max - cfg.depth_min);
  for (std::size_t r = 0; r < cfg.rectangles; ++r) {
    SceneRect rect;
    const auto rh = static_cast<std::size_t>(rng.uniform(cfg.height / 8.0, cfg.height / 2.0));
    const auto rw = static_cast<std::size_t>(rng.uniform(cfg.width / 8.0, cfg.width / 2.0));
    rect.top = rng.below(cfg.height - rh + 1);
    rect.left = rng.below(cfg.width - rw + 1);
    rect.bottom = rect.top + rh;
    rect.right = rect.left + rw;
    rect.depth = static_cast<float>(rng.uniform(cfg.depth_min, near_max));
    for (auto& c : rect.fill) c = static_cast<float>(std::floor(rng.uniform(20.0, 235.0)));
    rect.stripe_amplitude = static_cast<float>(cfg.texture_amplitude * rng.uniform(0.5, 1.0));
    rect.stripe_period = static_cast<float>(rng.uniform(6.0, 12.0));
    rect.orientation = static_cast<StripeOrientation>(rng.below(3));
    scene.rects.push_back(rect);
  }

  scene.color = GridF(cfg.height, cfg.width, 3);
  scene.depth = GridF(cfg.height, cfg.width, 1, cfg.depth_max);
  for (std::size_t i = 0; i < cfg.height; ++i)
    for (std::size_t j = 0; j < cfg.width; ++j) {
      const SceneRect* front = nullptr;
      for (const auto& rect : scene.rects)
        if (rect.contains(i, j) && (!front || rect.depth < front->depth)) front = &rect;
      std::array<float, 3> rgb = scene.background;
      if (front) {
        scene.depth(i, j) = front->depth;
        double phase = 0.0;
        switch (front->orientation) {
          case StripeOrientation::horizontal: phase = static_cast<double>(i - front->top); break;
          case StripeOrientation::vertical: phase = static_cast<double>(j - front->left); break;
          case StripeOrientation::diagonal:
            phase = static_cast<double>(i - front->top + j - front->left) / std::sqrt(2.0);
            break;
        }
        const double stripe =
            front->stripe_amplitude * std::sin(2.0 * M_PI * phase / front->stripe_period);
        for (std::size_t c = 0; c < 3; ++c) rgb[c] = static_cast<float>(front->fill[c] + stripe);
      }
      for (std::size_t c = 0; c < 3; ++c)
        scene.color(i, j, c) = std::clamp(std::round(rgb[c]), 0.0f, 255.0f);
    }
  return scene;
}

/// out = constant / in. Used both for depth to disparity and back.
inline GridF depth_disparity_convert(const GridF& g, double constant = 1.0) {
  GridF out(g.height(), g.width(), g.channels());
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!(g[k] > 0.0f))
      throw std::invalid_argument("depth_disparity_convert: nonpositive value at index " +
                                  std::to_string(k));
    out[k] = static_cast<float>(constant / static_cast<double>(g[k]));
  }
  return out;
}

}  // namespace egcnn
