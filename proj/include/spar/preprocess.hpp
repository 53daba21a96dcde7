#pragma once

// Marginal pre-processing of positive data onto a star-shaped domain centred
// at the origin, and the angular-radial coordinate change.
//
//   forward:  x_i = ln(exp(raw_i / nu_i) - 1) - m*_i
//   inverse:  raw_i = nu_i * ln(1 + exp(x_i + m*_i))
//
// nu_i is the (n-1) sample standard deviation of margin i and m* the
// geometric median of the transformed rows, found by Weiszfeld iteration.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "spar/error.hpp"
#include "spar/observation.hpp"
#include "spar/types.hpp"

namespace spar {

/// ln(exp(z) - 1) for z > 0, written as z + ln(1 - exp(-z)) so it neither
/// overflows for large z nor loses precision for small z.
inline double log_expm1(double z) {
  if (!(z > 0.0)) throw NonPositiveDataError("log_expm1: argument must be strictly positive");
  if (z > 30.0) return z + std::log1p(-std::exp(-z));
  return std::log(std::expm1(z));
}

/// ln(1 + exp(x)), overflow-safe.
inline double softplus(double x) noexcept {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

class MarginalTransform {
 public:
  MarginalTransform() = default;

  MarginalTransform(Vector nu, Vector star_centre) : nu_(std::move(nu)), centre_(std::move(star_centre)) {
    if (nu_.size() != centre_.size() || nu_.size() == 0)
      throw ShapeError("MarginalTransform: nu and star_centre must have the same positive length");
    for (Eigen::Index i = 0; i < nu_.size(); ++i) {
      if (!(nu_[i] > 0.0) || !std::isfinite(nu_[i])) throw DegenerateMarginError("MarginalTransform: nu must be positive");
      if (!std::isfinite(centre_[i])) throw DomainError("MarginalTransform: star_centre must be finite");
    }
  }

  /// Scale nu = 1 and centre 0 in every margin.
  static MarginalTransform unit(Eigen::Index d) { return {Vector::Ones(d), Vector::Zero(d)}; }

  [[nodiscard]] Eigen::Index dim() const noexcept { return nu_.size(); }
  [[nodiscard]] const Vector& nu() const noexcept { return nu_; }
  [[nodiscard]] const Vector& star_centre() const noexcept { return centre_; }

  /// Raw positive row -> centred row.
  [[nodiscard]] Vector forward(std::span<const double> raw) const {
    check_len(raw.size());
    Vector out(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) out[i] = forward_margin(i, raw[static_cast<std::size_t>(i)]);
    return out;
  }
  [[nodiscard]] Vector forward(const Vector& raw) const { return forward(std::span<const double>(raw.data(), raw.size())); }

  /// Centred row -> raw positive row.
  [[nodiscard]] Vector inverse(std::span<const double> x) const {
    check_len(x.size());
    Vector out(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) out[i] = inverse_margin(i, x[static_cast<std::size_t>(i)]);
    return out;
  }
  [[nodiscard]] Vector inverse(const Vector& x) const { return inverse(std::span<const double>(x.data(), x.size())); }

  [[nodiscard]] double forward_margin(Eigen::Index i, double raw) const {
    if (!(raw > 0.0) || !std::isfinite(raw)) {
      std::ostringstream os;
      os << "forward: margin " << i << " value " << raw << " is not strictly positive";
      throw NonPositiveDataError(os.str());
    }
    return log_expm1(raw / nu_[i]) - centre_[i];
  }

  [[nodiscard]] double inverse_margin(Eigen::Index i, double x) const { return nu_[i] * softplus(x + centre_[i]); }

  /// Row-wise forward over an n x d matrix.
  [[nodiscard]] Matrix forward_rows(const Matrix& raw) const {
    if (raw.cols() != dim()) throw ShapeError("forward_rows: column count does not match transform dimension");
    Matrix out(raw.rows(), raw.cols());
    for (Eigen::Index t = 0; t < raw.rows(); ++t)
      for (Eigen::Index i = 0; i < dim(); ++i) out(t, i) = forward_margin(i, raw(t, i));
    return out;
  }

  [[nodiscard]] Matrix inverse_rows(const Matrix& x) const {
    if (x.cols() != dim()) throw ShapeError("inverse_rows: column count does not match transform dimension");
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      for (Eigen::Index i = 0; i < dim(); ++i) out(t, i) = inverse_margin(i, x(t, i));
    return out;
  }

  friend bool operator==(const MarginalTransform& a, const MarginalTransform& b) {
    return a.nu_ == b.nu_ && a.centre_ == b.centre_;
  }

 private:
  void check_len(std::size_t n) const {
    if (static_cast<Eigen::Index>(n) != dim()) throw ShapeError("MarginalTransform: row length does not match dimension");
  }

  Vector nu_;
  Vector centre_;
};

struct WeiszfeldOptions {
  double tol = 1e-8;             // step-norm stopping rule
  std::size_t max_iter = 10000;
  double coincidence_eps = 1e-12;
};

struct GeometricMedian {
  Vector point;
  std::size_t iterations = 0;
  bool converged = false;               // false: max_iter exhausted (a warning, not a failure)
  std::vector<double> objective_trace;  // sum of distances at each iterate, starting point first
};

/// Sum of Euclidean distances from `y` to every row of `points`.
inline double distance_sum(const Matrix& points, const Vector& y) {
  return (points.rowwise() - y.transpose()).rowwise().norm().sum();
}

/// Weiszfeld iteration for the geometric median, started at the componentwise mean.
inline GeometricMedian geometric_median(const Matrix& points, const WeiszfeldOptions& opt = {}) {
  if (points.rows() < 1) throw DomainError("geometric_median: need at least one point");
  if (!(opt.tol > 0.0) || opt.max_iter < 1) throw DomainError("geometric_median: tol and max_iter must be positive");
  GeometricMedian res;
  Vector y = points.colwise().mean().transpose();
  res.objective_trace.push_back(distance_sum(points, y));
  const Eigen::Index d = points.cols();
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    Vector num = Vector::Zero(d);
    double den = 0.0;
    for (Eigen::Index t = 0; t < points.rows(); ++t) {
      double dist = (points.row(t).transpose() - y).norm();
      if (dist < opt.coincidence_eps) dist = opt.coincidence_eps;
      num += points.row(t).transpose() / dist;
      den += 1.0 / dist;
    }
    Vector next = num / den;
    const double step = (next - y).norm();
    y = std::move(next);
    res.iterations = it + 1;
    res.objective_trace.push_back(distance_sum(points, y));
    if (step < opt.tol) {
      res.converged = true;
      break;
    }
  }
  // The minimiser may sit on a data point, which Weiszfeld only approaches
  // slowly; snap to the nearest point when it is at least as good.
  Eigen::Index nearest = 0;
  (points.rowwise() - y.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
  const Vector candidate = points.row(nearest).transpose();
  if (distance_sum(points, candidate) <= res.objective_trace.back()) {
    y = candidate;
    res.objective_trace.push_back(distance_sum(points, y));
  }
  res.point = std::move(y);
  return res;
}

/// Fits nu (unbiased sample sd per margin) and the geometric-median star centre.
inline MarginalTransform fit_transform(const ObservationMatrix& raw, const WeiszfeldOptions& opt = {}) {
  const Matrix& v = raw.values();
  const Eigen::Index n = v.rows(), d = v.cols();
  if (n < d + 1) {
    std::ostringstream os;
    os << "fit_transform: need at least d+1 = " << d + 1 << " rows, got " << n;
    throw InsufficientDataError(os.str());
  }
  Vector nu(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double m = v.col(i).mean();
    const double ss = (v.col(i).array() - m).square().sum();
    nu[i] = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(nu[i] > 0.0)) {
      std::ostringstream os;
      os << "fit_transform: margin " << i << " (" << raw.site_names()[static_cast<std::size_t>(i)]
         << ") has zero variance";
      throw DegenerateMarginError(os.str());
    }
  }
  const MarginalTransform scale_only(nu, Vector::Zero(d));
  const Matrix star = scale_only.forward_rows(v);
  return {nu, geometric_median(star, opt).point};
}

/// Radii and unit-norm angles of centred rows.
struct PolarSample {
  Vector r;  // n radii, all > 0
  Matrix w;  // n x d, unit rows

  [[nodiscard]] Eigen::Index size() const noexcept { return r.size(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return w.cols(); }
};

inline PolarSample to_polar(const Matrix& x) {
  PolarSample p{Vector(x.rows()), Matrix(x.rows(), x.cols())};
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double r = x.row(t).norm();
    if (!(r > 0.0) || !std::isfinite(r)) {
      std::ostringstream os;
      os << "to_polar: row " << t << " has radius " << r << " (point at the star centre or non-finite)";
      throw DegeneratePointError(os.str());
    }
    p.r[t] = r;
    p.w.row(t) = x.row(t) / r;
  }
  return p;
}

inline Matrix from_polar(const PolarSample& p) {
  if (p.r.size() != p.w.rows()) throw ShapeError("from_polar: radius and angle counts differ");
  return p.w.array().colwise() * p.r.array();
}

}  // namespace spar
