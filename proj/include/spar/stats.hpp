#pragma once

// Small statistical helpers shared by the inference, diagnostics and
// bootstrap modules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "spar/error.hpp"

namespace spar::stats {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw DomainError("mean: empty input");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Unbiased (n-1) sample standard deviation.
inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) throw DomainError("sample_sd: need at least two values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Type-7 (linear interpolation of order statistics) quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile: q must lie in [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Type-7 quantile; copies and sorts.
inline double quantile(std::span<const double> values, double q) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, q);
}

/// Weighted sample: values with nonnegative weights summing to a positive total.
/// Quantiles interpolate linearly between the mid-points of each value's
/// weight interval (reduces to the type-5 rule for equal weights).
class WeightedSample {
 public:
  WeightedSample() = default;

  void add(double value, double weight) { items_.push_back({value, weight}); sorted_ = false; }
  void reserve(std::size_t n) { items_.reserve(n); }
  [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }

  /// Value x with weighted P(X <= x) = q.
  [[nodiscard]] double quantile(double q) {
    prepare();
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("weighted quantile: q must lie in [0,1]");
    const double target = q * total_;
    if (target <= mid_.front()) return items_.front().value;
    if (target >= mid_.back()) return items_.back().value;
    const auto it = std::upper_bound(mid_.begin(), mid_.end(), target);
    const std::size_t k = static_cast<std::size_t>(it - mid_.begin());
    const double a = mid_[k - 1], b = mid_[k];
    const double f = b > a ? (target - a) / (b - a) : 0.0;
    return items_[k - 1].value + f * (items_[k].value - items_[k - 1].value);
  }

  /// Smallest and largest values.
  [[nodiscard]] double min() { prepare(); return items_.front().value; }
  [[nodiscard]] double max() { prepare(); return items_.back().value; }

 private:
  struct Item {
    double value;
    double weight;
  };

  void prepare() {
    if (sorted_) return;
    if (items_.empty()) throw DomainError("weighted quantile: empty sample");
    std::sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) { return a.value < b.value; });
    mid_.resize(items_.size());
    double c = 0.0;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      mid_[i] = c + 0.5 * items_[i].weight;
      c += items_[i].weight;
    }
    total_ = c;
    if (!(total_ > 0.0)) throw DomainError("weighted quantile: total weight must be positive");
    sorted_ = true;
  }

  std::vector<Item> items_;
  std::vector<double> mid_;
  double total_ = 0.0;
  bool sorted_ = false;
};

/// One-sample Kolmogorov-Smirnov statistic sup |F_n - F|.
inline double ks_statistic(std::span<const double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw DomainError("ks_statistic: empty sample");
  std::vector<double> v(sample.begin(), sample.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = cdf(v[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Kolmogorov limiting survival function Q(t) = 2 sum (-1)^(k-1) exp(-2 k^2 t^2).
inline double kolmogorov_sf(double t) {
  if (t <= 0.0) return 1.0;
  if (t < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

/// Asymptotic p-value with Stephens' small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  return kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
}

inline double std_exponential_cdf(double x) { return x <= 0.0 ? 0.0 : -std::expm1(-x); }

}  // namespace spar::stats
