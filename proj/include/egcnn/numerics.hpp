#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/grid.hpp"

namespace egcnn {

/// Filter bank with odd spatial extents. Weights are indexed [m][n][c][o].
template <typename T = float>
class Kernel {
 public:
  Kernel() = default;

  Kernel(std::size_t k_h, std::size_t k_w, std::size_t in_channels, std::size_t out_channels,
         T fill = T{0})
      : k_h_(k_h), k_w_(k_w), in_(in_channels), out_(out_channels),
        weights_(k_h * k_w * in_channels * out_channels, fill) {
    if (k_h % 2 == 0 || k_w % 2 == 0)
      throw std::invalid_argument("Kernel: extents must be odd, got " + std::to_string(k_h) +
                                  "x" + std::to_string(k_w));
    if (in_channels == 0 || out_channels == 0)
      throw std::invalid_argument("Kernel: channel counts must be >= 1");
  }

  /// Identity map: 1 at the center tap from channel c to channel c.
  static Kernel identity(std::size_t k, std::size_t channels) {
    Kernel out(k, k, channels, channels);
    for (std::size_t c = 0; c < channels; ++c) out(k / 2, k / 2, c, c) = T{1};
    return out;
  }

  std::size_t k_h() const noexcept { return k_h_; }
  std::size_t k_w() const noexcept { return k_w_; }
  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t size() const noexcept { return weights_.size(); }

  std::size_t index(std::size_t m, std::size_t n, std::size_t c, std::size_t o) const noexcept {
    return ((m * k_w_ + n) * in_ + c) * out_ + o;
  }
  T& operator()(std::size_t m, std::size_t n, std::size_t c, std::size_t o) noexcept {
    return weights_[index(m, n, c, o)];
  }
  const T& operator()(std::size_t m, std::size_t n, std::size_t c, std::size_t o) const noexcept {
    return weights_[index(m, n, c, o)];
  }
  T& operator[](std::size_t k) noexcept { return weights_[k]; }
  const T& operator[](std::size_t k) const noexcept { return weights_[k]; }

  std::span<T> weights() noexcept { return weights_; }
  std::span<const T> weights() const noexcept { return weights_; }

  bool same_shape(const Kernel& o) const noexcept {
    return k_h_ == o.k_h_ && k_w_ == o.k_w_ && in_ == o.in_ && out_ == o.out_;
  }

  friend bool operator==(const Kernel&, const Kernel&) = default;

 private:
  std::size_t k_h_ = 1;
  std::size_t k_w_ = 1;
  std::size_t in_ = 1;
  std::size_t out_ = 1;
  std::vector<T> weights_ = std::vector<T>(1, T{0});
};

/// Same-size, stride-1 correlation with zero fill outside the image.
template <typename T>
Grid<T> correlate(const Grid<T>& input, const Kernel<T>& kernel) {
  if (input.channels() != kernel.in_channels())
    throw std::invalid_argument("correlate: input has " + std::to_string(input.channels()) +
                                " channels, kernel expects " +
                                std::to_string(kernel.in_channels()));
  const auto H = static_cast<long>(input.height());
  const auto W = static_cast<long>(input.width());
  const auto kh = static_cast<long>(kernel.k_h());
  const auto kw = static_cast<long>(kernel.k_w());
  const std::size_t C = kernel.in_channels();
  const std::size_t O = kernel.out_channels();
  Grid<T> out(input.height(), input.width(), O);
  std::vector<double> acc(O);
  for (long i = 0; i < H; ++i) {
    for (long j = 0; j < W; ++j) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (long m = 0; m < kh; ++m) {
        const long ii = i + m - kh / 2;
        if (ii < 0 || ii >= H) continue;
        for (long n = 0; n < kw; ++n) {
          const long jj = j + n - kw / 2;
          if (jj < 0 || jj >= W) continue;
          for (std::size_t c = 0; c < C; ++c) {
            const double x = input(ii, jj, c);
            const T* w = &kernel(m, n, c, 0);
            for (std::size_t o = 0; o < O; ++o) acc[o] += x * static_cast<double>(w[o]);
          }
        }
      }
      for (std::size_t o = 0; o < O; ++o) out(i, j, o) = static_cast<T>(acc[o]);
    }
  }
  return out;
}

enum class ElementwiseOp { add, mul, div_eps };

/// Per-element a+b, a*b, or a/(b+eps). eps must be positive for div_eps.
template <typename T>
Grid<T> elementwise(const Grid<T>& a, const Grid<T>& b, ElementwiseOp op, double eps = 1e-20) {
  if (!a.same_shape(b))
    throw std::invalid_argument("elementwise: shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  if (op == ElementwiseOp::div_eps && !(eps > 0.0))
    throw std::invalid_argument("elementwise: div_eps requires eps > 0");
  Grid<T> out(a.height(), a.width(), a.channels());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k], y = b[k];
    double r = 0.0;
    switch (op) {
      case ElementwiseOp::add: r = x + y; break;
      case ElementwiseOp::mul: r = x * y; break;
      case ElementwiseOp::div_eps: r = x / (y + eps); break;
    }
    out[k] = static_cast<T>(r);
  }
  return out;
}

template <typename T>
Grid<T> scale(const Grid<T>& a, double s) {
  Grid<T> out = a;
  for (auto& v : out.values()) v = static_cast<T>(static_cast<double>(v) * s);
  return out;
}

/// Reverse-order replay of adjoint closures recorded during a forward pass.
class GradTape {
 public:
  void record(std::function<void()> adjoint) { entries_.push_back(std::move(adjoint)); }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Runs every recorded adjoint once, newest first, then clears the tape.
  void backward() {
    auto entries = std::move(entries_);
    entries_.clear();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) (*it)();
  }

  void clear() noexcept { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

/// Max over parameters of |analytic - central difference| / max(1, |analytic|, |numeric|).
template <typename F>
double grad_check(const F& f, std::span<const double> params, std::span<const double> analytic,
                  double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  if (params.size() != analytic.size())
    throw std::invalid_argument("grad_check: analytic gradient size mismatch");
  std::vector<double> p(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double saved = p[k];
    p[k] = saved + h;
    const double fp = f(std::span<const double>(p));
    p[k] = saved - h;
    const double fm = f(std::span<const double>(p));
    p[k] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite function value at parameter " +
                               std::to_string(k));
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[k]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

}  // namespace egcnn
