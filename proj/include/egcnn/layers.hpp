#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/grid.hpp"
#include "egcnn/numerics.hpp"

namespace egcnn {

/// Nonnegativity transform applied to filter weights before they act as applicability.
enum class Gamma { softplus, relu_shift };

inline double gamma(double w, Gamma kind = Gamma::softplus) {
  if (kind == Gamma::relu_shift) return w > 0.0 ? w : 0.0;
  return std::max(w, 0.0) + std::log1p(std::exp(-std::abs(w)));
}

inline double gamma_derivative(double w, Gamma kind = Gamma::softplus) {
  if (kind == Gamma::relu_shift) return w > 0.0 ? 1.0 : 0.0;
  if (w >= 0.0) return 1.0 / (1.0 + std::exp(-w));
  const double e = std::exp(w);
  return e / (1.0 + e);
}

inline const char* to_string(Gamma g) { return g == Gamma::softplus ? "softplus" : "relu_shift"; }

inline constexpr double kDefaultEpsilon = 1e-20;

enum class LayerKind { egcl, nconv, sconv, plain_conv };
enum class Activation { none, relu };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::egcl: return "egcl";
    case LayerKind::nconv: return "nconv";
    case LayerKind::sconv: return "sconv";
    case LayerKind::plain_conv: return "plain_conv";
  }
  return "?";
}

/// Weights, bias and the fixed center-only edge-dist kernel of one layer.
template <typename T = float>
struct EgclParams {
  Kernel<T> w;
  std::vector<T> b;
  Kernel<T> w_prime;
  double epsilon = kDefaultEpsilon;
  Gamma gamma = Gamma::softplus;

  EgclParams() = default;
  EgclParams(std::size_t k, std::size_t in, std::size_t out, Gamma g = Gamma::softplus)
      : w(k, k, in, out), b(out, T{0}), w_prime(k, k, 1, 1), gamma(g) {
    w_prime(k / 2, k / 2, 0, 0) = T{1};
  }

  std::size_t kernel_size() const noexcept { return w.k_h(); }
  std::size_t in_channels() const noexcept { return w.in_channels(); }
  std::size_t out_channels() const noexcept { return w.out_channels(); }
  std::size_t parameter_count() const noexcept { return w.size() + b.size(); }

  bool finite() const {
    auto ok = [](T v) { return std::isfinite(static_cast<double>(v)); };
    return std::all_of(w.weights().begin(), w.weights().end(), ok) &&
           std::all_of(b.begin(), b.end(), ok);
  }
};

/// Data, confidence and edge-dist streams passed between layers.
template <typename T = float>
struct LayerIO {
  Grid<T> data;
  Grid<T> confidence;
  Grid<T> edge_dist;  ///< single channel; may be empty for kinds that ignore it
};

struct LayerGrads {
  std::vector<double> w;
  std::vector<double> b;
  GridD data;
  GridD confidence;
};

namespace detail {

template <typename T>
void check_params(const EgclParams<T>& p, const char* who) {
  if (!(p.epsilon > 0.0)) throw std::invalid_argument(std::string(who) + ": epsilon must be > 0");
  if (p.b.size() != p.w.out_channels())
    throw std::invalid_argument(std::string(who) + ": bias size does not match output channels");
  if (!p.finite()) throw std::invalid_argument(std::string(who) + ": non-finite parameter values");
}

template <typename T>
void check_io(const LayerIO<T>& io, const EgclParams<T>& p, bool need_conf, bool need_edge,
              const char* who) {
  const std::string w(who);
  if (io.data.empty()) throw std::invalid_argument(w + ": empty data grid");
  if (io.data.channels() != p.w.in_channels())
    throw std::invalid_argument(w + ": data has " + std::to_string(io.data.channels()) +
                                " channels, layer expects " + std::to_string(p.w.in_channels()));
  if (need_conf && !io.confidence.same_shape(io.data))
    throw std::invalid_argument(w + ": confidence shape " + io.confidence.shape_string() +
                                " does not match data " + io.data.shape_string());
  if (need_edge && (!io.edge_dist.same_spatial(io.data) || io.edge_dist.channels() != 1))
    throw std::invalid_argument(w + ": edge-dist must be single-channel and aligned with data");
}

template <typename T>
void check_upstream(const GridD& g, const Grid<T>& data, std::size_t out, const char* who) {
  if (!g.empty() && (!g.same_spatial(data) || g.channels() != out))
    throw std::invalid_argument(std::string(who) + ": upstream gradient shape mismatch");
}

struct Window {
  long H, W, k, r;
  long lo(long i) const { return std::max(0L, r - i); }
  long hi_h(long i) const { return std::min(k, H - i + r); }
  long hi_w(long j) const { return std::min(k, W - j + r); }
};

/// Shared engine for the guided and normalized layers. With edge == nullptr every
/// edge weight is taken as exactly 1.
template <typename T>
LayerIO<T> normalized_forward(const LayerIO<T>& io, const EgclParams<T>& p, const Grid<T>* edge) {
  const std::size_t C = p.in_channels(), O = p.out_channels();
  const std::size_t K = p.kernel_size();
  const Window win{static_cast<long>(io.data.height()), static_cast<long>(io.data.width()),
                   static_cast<long>(K), static_cast<long>(K / 2)};

  std::vector<double> g(p.w.size());
  std::vector<double> mass(O, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = gamma(p.w[k], p.gamma);
    mass[k % O] += g[k];
  }
  for (std::size_t o = 0; o < O; ++o)
    if (!(mass[o] > 0.0))
      throw std::invalid_argument("normalized layer: filter has zero applicability mass");

  const std::size_t N = io.data.size();
  std::vector<double> a(N), za(N);
  for (std::size_t q = 0; q < N; ++q) {
    const double e = edge ? static_cast<double>((*edge)[q / C]) : 1.0;
    a[q] = static_cast<double>(io.confidence[q]) * e;
    za[q] = static_cast<double>(io.data[q]) * a[q];
  }

  LayerIO<T> out{Grid<T>(io.data.height(), io.data.width(), O),
                 Grid<T>(io.data.height(), io.data.width(), O), {}};
  std::vector<double> num(O), den(O), cnum(O);
  for (long i = 0; i < win.H; ++i)
    for (long j = 0; j < win.W; ++j) {
      std::fill(num.begin(), num.end(), 0.0);
      std::fill(den.begin(), den.end(), 0.0);
      std::fill(cnum.begin(), cnum.end(), 0.0);
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const double av = a[q0 + c], zv = za[q0 + c];
            const double cv = io.confidence[q0 + c];
            const double* gk = &g[p.w.index(m, n, c, 0)];
            for (std::size_t o = 0; o < O; ++o) {
              num[o] += zv * gk[o];
              den[o] += av * gk[o];
              cnum[o] += cv * gk[o];
            }
          }
        }
      for (std::size_t o = 0; o < O; ++o) {
        out.data(i, j, o) =
            static_cast<T>(num[o] / (den[o] + p.epsilon) + static_cast<double>(p.b[o]));
        out.confidence(i, j, o) = static_cast<T>((cnum[o] + p.epsilon) / mass[o]);
      }
    }
  return out;
}

template <typename T>
LayerGrads normalized_backward(const LayerIO<T>& io, const EgclParams<T>& p, const Grid<T>* edge,
                               const GridD& up_data, const GridD& up_conf) {
  const std::size_t C = p.in_channels(), O = p.out_channels();
  const std::size_t K = p.kernel_size();
  const Window win{static_cast<long>(io.data.height()), static_cast<long>(io.data.width()),
                   static_cast<long>(K), static_cast<long>(K / 2)};

  std::vector<double> g(p.w.size());
  std::vector<double> mass(O, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = gamma(p.w[k], p.gamma);
    mass[k % O] += g[k];
  }
  const std::size_t N = io.data.size();
  std::vector<double> a(N), za(N);
  for (std::size_t q = 0; q < N; ++q) {
    const double e = edge ? static_cast<double>((*edge)[q / C]) : 1.0;
    a[q] = static_cast<double>(io.confidence[q]) * e;
    za[q] = static_cast<double>(io.data[q]) * a[q];
  }

  LayerGrads grads{std::vector<double>(p.w.size(), 0.0), std::vector<double>(O, 0.0),
                   GridD(io.data.height(), io.data.width(), C),
                   GridD(io.data.height(), io.data.width(), C)};
  std::vector<double> dg(p.w.size(), 0.0);
  std::vector<double> every_tap(O, 0.0);  // added to all taps of filter o
  std::vector<double> num(O), den(O), cnum(O), coef_y(O), coef_c(O), y(O);
  const bool has_conf_up = !up_conf.empty();

  for (long i = 0; i < win.H; ++i)
    for (long j = 0; j < win.W; ++j) {
      const std::size_t p0 = (i * win.W + j) * O;
      bool any = false;
      for (std::size_t o = 0; o < O; ++o) {
        coef_y[o] = up_data.empty() ? 0.0 : up_data[p0 + o];
        coef_c[o] = has_conf_up ? up_conf[p0 + o] : 0.0;
        any = any || coef_y[o] != 0.0 || coef_c[o] != 0.0;
      }
      if (!any) continue;
      std::fill(num.begin(), num.end(), 0.0);
      std::fill(den.begin(), den.end(), 0.0);
      std::fill(cnum.begin(), cnum.end(), 0.0);
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const double* gk = &g[p.w.index(m, n, c, 0)];
            for (std::size_t o = 0; o < O; ++o) {
              num[o] += za[q0 + c] * gk[o];
              den[o] += a[q0 + c] * gk[o];
              cnum[o] += io.confidence[q0 + c] * gk[o];
            }
          }
        }
      for (std::size_t o = 0; o < O; ++o) {
        const double d = den[o] + p.epsilon;
        y[o] = num[o] / d;
        grads.b[o] += coef_y[o];
        const double cprime = (cnum[o] + p.epsilon) / mass[o];
        every_tap[o] -= coef_c[o] * cprime / mass[o];
        coef_y[o] /= d;
        coef_c[o] /= mass[o];
      }
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          const double e = edge ? static_cast<double>((*edge)[q0 / C]) : 1.0;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t q = q0 + c;
            const double zq = io.data[q], cq = io.confidence[q];
            const std::size_t k0 = p.w.index(m, n, c, 0);
            double dz = 0.0, dc = 0.0;
            for (std::size_t o = 0; o < O; ++o) {
              const double diff = zq - y[o];
              dg[k0 + o] += coef_y[o] * a[q] * diff + coef_c[o] * cq;
              dz += coef_y[o] * a[q] * g[k0 + o];
              dc += coef_y[o] * e * g[k0 + o] * diff + coef_c[o] * g[k0 + o];
            }
            grads.data[q] += dz;
            grads.confidence[q] += dc;
          }
        }
    }
  for (std::size_t k = 0; k < dg.size(); ++k)
    grads.w[k] = (dg[k] + every_tap[k % O]) * gamma_derivative(p.w[k], p.gamma);
  return grads;
}

}  // namespace detail

/// Edge-guided layer: edge-weighted normalized data path, confidence propagation through
/// the applicability mass, and edge-dist propagation through the center-only kernel.
template <typename T>
LayerIO<T> egcl_forward(const LayerIO<T>& io, const EgclParams<T>& p) {
  detail::check_params(p, "egcl_forward");
  detail::check_io(io, p, true, true, "egcl_forward");
  LayerIO<T> out = detail::normalized_forward(io, p, &io.edge_dist);

  // W' is used as-is, without the applicability transform.
  const long H = static_cast<long>(io.data.height()), W = static_cast<long>(io.data.width());
  const long K = static_cast<long>(p.w_prime.k_h()), r = K / 2;
  double mass = 0.0;
  for (auto v : p.w_prime.weights()) mass += static_cast<double>(v);
  out.edge_dist = Grid<T>(io.data.height(), io.data.width(), 1);
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      double acc = 0.0;
      for (long m = 0; m < K; ++m) {
        const long ii = i + m - r;
        if (ii < 0 || ii >= H) continue;
        for (long n = 0; n < K; ++n) {
          const long jj = j + n - r;
          if (jj < 0 || jj >= W) continue;
          const double wp = p.w_prime(m, n, 0, 0);
          if (wp != 0.0) acc += static_cast<double>(io.edge_dist(ii, jj)) * wp;
        }
      }
      out.edge_dist(i, j) = static_cast<T>((acc + p.epsilon) / mass);
    }
  return out;
}

/// Normalized convolution with confidence propagation; edge-dist is passed through.
template <typename T>
LayerIO<T> nconv_forward(const LayerIO<T>& io, const EgclParams<T>& p) {
  detail::check_params(p, "nconv_forward");
  detail::check_io(io, p, true, false, "nconv_forward");
  LayerIO<T> out = detail::normalized_forward<T>(io, p, nullptr);
  out.edge_dist = io.edge_dist;
  return out;
}

/// Sparsity-invariant convolution over a binary validity mask, mask propagated by max-pool.
template <typename T>
LayerIO<T> sconv_forward(const LayerIO<T>& io, const EgclParams<T>& p) {
  detail::check_params(p, "sconv_forward");
  detail::check_io(io, p, true, false, "sconv_forward");
  for (auto v : io.confidence.values())
    if (v != T{0} && v != T{1})
      throw std::invalid_argument("sconv_forward: confidence must be a binary mask");
  const std::size_t C = p.in_channels(), O = p.out_channels();
  const std::size_t K = p.kernel_size();
  const detail::Window win{static_cast<long>(io.data.height()),
                           static_cast<long>(io.data.width()), static_cast<long>(K),
                           static_cast<long>(K / 2)};
  LayerIO<T> out{Grid<T>(io.data.height(), io.data.width(), O),
                 Grid<T>(io.data.height(), io.data.width(), O), io.edge_dist};
  std::vector<double> num(O);
  for (long i = 0; i < win.H; ++i)
    for (long j = 0; j < win.W; ++j) {
      std::fill(num.begin(), num.end(), 0.0);
      double count = 0.0;
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            if (io.confidence[q0 + c] == T{0}) continue;
            count += 1.0;
            const double zv = io.data[q0 + c];
            const T* wk = &p.w(m, n, c, 0);
            for (std::size_t o = 0; o < O; ++o) num[o] += zv * static_cast<double>(wk[o]);
          }
        }
      for (std::size_t o = 0; o < O; ++o) {
        out.data(i, j, o) =
            static_cast<T>(num[o] / (count + p.epsilon) + static_cast<double>(p.b[o]));
        out.confidence(i, j, o) = count > 0.0 ? T{1} : T{0};
      }
    }
  return out;
}

/// Ordinary same-size convolution with optional ReLU; confidence and edge-dist pass through.
template <typename T>
LayerIO<T> plain_conv_forward(const LayerIO<T>& io, const EgclParams<T>& p, Activation act) {
  detail::check_params(p, "plain_conv_forward");
  detail::check_io(io, p, false, false, "plain_conv_forward");
  Grid<T> z = correlate(io.data, p.w);
  for (std::size_t k = 0; k < z.size(); ++k) {
    double v = static_cast<double>(z[k]) + static_cast<double>(p.b[k % p.out_channels()]);
    if (act == Activation::relu && v < 0.0) v = 0.0;
    z[k] = static_cast<T>(v);
  }
  return {std::move(z), io.confidence, io.edge_dist};
}

/// Adjoints of the guided layer with respect to W (through the applicability transform),
/// b, data and confidence. The edge-dist field is treated as a constant.
template <typename T>
LayerGrads egcl_backward(const LayerIO<T>& io, const EgclParams<T>& p, const GridD& up_data,
                         const GridD& up_conf = {}) {
  detail::check_params(p, "egcl_backward");
  detail::check_io(io, p, true, true, "egcl_backward");
  detail::check_upstream(up_data, io.data, p.out_channels(), "egcl_backward");
  detail::check_upstream(up_conf, io.data, p.out_channels(), "egcl_backward");
  return detail::normalized_backward(io, p, &io.edge_dist, up_data, up_conf);
}

template <typename T>
LayerGrads nconv_backward(const LayerIO<T>& io, const EgclParams<T>& p, const GridD& up_data,
                          const GridD& up_conf = {}) {
  detail::check_params(p, "nconv_backward");
  detail::check_io(io, p, true, false, "nconv_backward");
  detail::check_upstream(up_data, io.data, p.out_channels(), "nconv_backward");
  detail::check_upstream(up_conf, io.data, p.out_channels(), "nconv_backward");
  return detail::normalized_backward<T>(io, p, nullptr, up_data, up_conf);
}

/// The mask is not differentiable; confidence gradient is returned as zeros.
template <typename T>
LayerGrads sconv_backward(const LayerIO<T>& io, const EgclParams<T>& p, const GridD& up_data) {
  detail::check_params(p, "sconv_backward");
  detail::check_io(io, p, true, false, "sconv_backward");
  detail::check_upstream(up_data, io.data, p.out_channels(), "sconv_backward");
  const std::size_t C = p.in_channels(), O = p.out_channels();
  const std::size_t K = p.kernel_size();
  const detail::Window win{static_cast<long>(io.data.height()),
                           static_cast<long>(io.data.width()), static_cast<long>(K),
                           static_cast<long>(K / 2)};
  LayerGrads grads{std::vector<double>(p.w.size(), 0.0), std::vector<double>(O, 0.0),
                   GridD(io.data.height(), io.data.width(), C),
                   GridD(io.data.height(), io.data.width(), C)};
  if (up_data.empty()) return grads;
  for (long i = 0; i < win.H; ++i)
    for (long j = 0; j < win.W; ++j) {
      const std::size_t p0 = (i * win.W + j) * O;
      double count = 0.0;
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          for (std::size_t c = 0; c < C; ++c) count += io.confidence[q0 + c] != T{0} ? 1.0 : 0.0;
        }
      const double d = count + p.epsilon;
      for (std::size_t o = 0; o < O; ++o) grads.b[o] += up_data[p0 + o];
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            if (io.confidence[q0 + c] == T{0}) continue;
            const std::size_t k0 = p.w.index(m, n, c, 0);
            const double zq = io.data[q0 + c];
            double dz = 0.0;
            for (std::size_t o = 0; o < O; ++o) {
              const double gy = up_data[p0 + o] / d;
              grads.w[k0 + o] += gy * zq;
              dz += gy * static_cast<double>(p.w[k0 + o]);
            }
            grads.data[q0 + c] += dz;
          }
        }
    }
  return grads;
}

template <typename T>
LayerGrads plain_conv_backward(const LayerIO<T>& io, const EgclParams<T>& p, Activation act,
                               const LayerIO<T>& out, const GridD& up_data) {
  detail::check_params(p, "plain_conv_backward");
  detail::check_io(io, p, false, false, "plain_conv_backward");
  detail::check_upstream(up_data, io.data, p.out_channels(), "plain_conv_backward");
  const std::size_t C = p.in_channels(), O = p.out_channels();
  const std::size_t K = p.kernel_size();
  const detail::Window win{static_cast<long>(io.data.height()),
                           static_cast<long>(io.data.width()), static_cast<long>(K),
                           static_cast<long>(K / 2)};
  LayerGrads grads{std::vector<double>(p.w.size(), 0.0), std::vector<double>(O, 0.0),
                   GridD(io.data.height(), io.data.width(), C), GridD{}};
  if (up_data.empty()) return grads;
  std::vector<double> gy(O);
  for (long i = 0; i < win.H; ++i)
    for (long j = 0; j < win.W; ++j) {
      const std::size_t p0 = (i * win.W + j) * O;
      bool any = false;
      for (std::size_t o = 0; o < O; ++o) {
        gy[o] = up_data[p0 + o];
        if (act == Activation::relu && !(out.data[p0 + o] > T{0})) gy[o] = 0.0;
        grads.b[o] += gy[o];
        any = any || gy[o] != 0.0;
      }
      if (!any) continue;
      for (long m = win.lo(i); m < win.hi_h(i); ++m)
        for (long n = win.lo(j); n < win.hi_w(j); ++n) {
          const std::size_t q0 = ((i + m - win.r) * win.W + (j + n - win.r)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t k0 = p.w.index(m, n, c, 0);
            const double zq = io.data[q0 + c];
            double dz = 0.0;
            for (std::size_t o = 0; o < O; ++o) {
              grads.w[k0 + o] += gy[o] * zq;
              dz += gy[o] * static_cast<double>(p.w[k0 + o]);
            }
            grads.data[q0 + c] += dz;
          }
        }
    }
  return grads;
}

}  // namespace egcnn
