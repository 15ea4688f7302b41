#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>

#include "egcnn/grid.hpp"

namespace egcnn {

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double imae = 0.0;
  double irmse = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;

  static constexpr const char* csv_header = "mae,rmse,imae,irmse,delta1,delta2,delta3";

  friend std::ostream& operator<<(std::ostream& os, const MetricReport& r) {
    const auto old = os.precision(9);
    os << r.mae << ',' << r.rmse << ',' << r.imae << ',' << r.irmse << ',' << r.delta1 << ','
       << r.delta2 << ',' << r.delta3;
    os.precision(old);
    return os;
  }
};

namespace detail {

template <typename F>
double masked_mean(const GridF& z, const GridF& t, const GridF* mask, const char* who, F&& term) {
  if (!z.same_shape(t)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
  if (mask && !mask->same_shape(z))
    throw std::invalid_argument(std::string(who) + ": mask shape mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (mask && (*mask)[k] == 0.0f) continue;
    sum += term(static_cast<double>(z[k]), static_cast<double>(t[k]));
    ++n;
  }
  if (n == 0) throw std::invalid_argument(std::string(who) + ": empty mask");
  return sum / static_cast<double>(n);
}

inline double inverse(double v, const char* who) {
  if (!(v > 0.0)) throw std::invalid_argument(std::string(who) + ": nonpositive depth");
  return 1.0 / v;
}

}  // namespace detail

/// Mean absolute error over the masked (nonzero mask) or all pixels.
inline double mae(const GridF& z, const GridF& t, const GridF* mask = nullptr) {
  return detail::masked_mean(z, t, mask, "mae", [](double a, double b) { return std::abs(a - b); });
}

inline double rmse(const GridF& z, const GridF& t, const GridF* mask = nullptr) {
  return std::sqrt(detail::masked_mean(z, t, mask, "rmse", [](double a, double b) {
    return (a - b) * (a - b);
  }));
}

/// MAE on inverse depth (proportionality constant 1).
inline double imae(const GridF& z, const GridF& t, const GridF* mask = nullptr) {
  return detail::masked_mean(z, t, mask, "imae", [](double a, double b) {
    return std::abs(detail::inverse(a, "imae") - detail::inverse(b, "imae"));
  });
}

inline double irmse(const GridF& z, const GridF& t, const GridF* mask = nullptr) {
  return std::sqrt(detail::masked_mean(z, t, mask, "irmse", [](double a, double b) {
    const double d = detail::inverse(a, "irmse") - detail::inverse(b, "irmse");
    return d * d;
  }));
}

/// Fraction of pixels with max(z/t, t/z) < 1.25^n.
inline double delta_n(const GridF& z, const GridF& t, int n) {
  if (n < 1 || n > 3) throw std::invalid_argument("delta_n: n must be 1, 2 or 3");
  const double threshold = std::pow(1.25, n);
  return detail::masked_mean(z, t, nullptr, "delta_n", [threshold](double a, double b) {
    if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("delta_n: nonpositive value");
    return std::max(a / b, b / a) < threshold ? 1.0 : 0.0;
  });
}

/// Predictions below this are raised to it before the inverse-depth and ratio metrics.
inline constexpr float kMinPredictedDepth = 1e-3f;

/// All seven metrics over every pixel. Ground truth must be strictly positive.
inline MetricReport evaluate(const GridF& prediction, const GridF& truth) {
  if (!prediction.same_shape(truth)) throw std::invalid_argument("evaluate: shape mismatch");
  for (auto v : truth.values())
    if (!(v > 0.0f)) throw std::invalid_argument("evaluate: ground truth must be positive");
  GridF z = prediction;
  for (auto& v : z.values()) v = std::max(v, kMinPredictedDepth);
  MetricReport r;
  r.mae = mae(prediction, truth);
  r.rmse = rmse(prediction, truth);
  r.imae = imae(z, truth);
  r.irmse = irmse(z, truth);
  r.delta1 = delta_n(z, truth, 1);
  r.delta2 = delta_n(z, truth, 2);
  r.delta3 = delta_n(z, truth, 3);
  return r;
}

inline MetricReport mean_report(std::span<const MetricReport> reports) {
  if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
  MetricReport m;
  for (const auto& r : reports) {
    m.mae += r.mae;
    m.rmse += r.rmse;
    m.imae += r.imae;
    m.irmse += r.irmse;
    m.delta1 += r.delta1;
    m.delta2 += r.delta2;
    m.delta3 += r.delta3;
  }
  const double n = static_cast<double>(reports.size());
  m.mae /= n;
  m.rmse /= n;
  m.imae /= n;
  m.irmse /= n;
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

}  // namespace egcnn
