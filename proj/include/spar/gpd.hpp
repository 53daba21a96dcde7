#pragma once

// Generalized Pareto distribution: H(y) = 1 - (1 + xi*y/sigma)_+^(-1/xi), y >= 0.

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <vector>

#include "spar/error.hpp"

namespace spar {

/// Below this |xi| the exponential limit is used.
inline constexpr double kGpdXiSwitch = 1e-6;

struct GpdParams {
  double sigma = 1.0;  // scale, data units
  double xi = 0.0;     // shape

  /// Finite upper endpoint -sigma/xi when xi < 0, otherwise +inf.
  [[nodiscard]] double upper_endpoint() const noexcept {
    return xi < 0.0 ? -sigma / xi : std::numeric_limits<double>::infinity();
  }
  /// Inside the range the fitted networks can produce (regular likelihood).
  [[nodiscard]] bool is_regular() const noexcept { return xi > -0.5 && xi < 0.5; }

  friend bool operator==(const GpdParams&, const GpdParams&) = default;
};

namespace detail {

inline void check_params(const GpdParams& p, const char* fn) {
  if (!(p.sigma > 0.0) || !std::isfinite(p.sigma) || !std::isfinite(p.xi)) {
    std::ostringstream os;
    os << fn << ": invalid GPD parameters (sigma=" << p.sigma << ", xi=" << p.xi << ")";
    throw DomainError(os.str());
  }
}

inline void check_y(double y, const char* fn) {
  if (!std::isfinite(y) || y < 0.0) {
    std::ostringstream os;
    os << fn << ": argument must be finite and nonnegative, got " << y;
    throw DomainError(os.str());
  }
}

/// ln(1 + xi*y/sigma) / xi, the cumulative hazard. Caller guarantees y is
/// strictly inside the support. Near xi = 0 a Taylor expansion in xi keeps
/// the branch continuous with the exact formula.
inline double cumulative_hazard(double y, const GpdParams& p) {
  const double t = y / p.sigma;
  const double xt = p.xi * t;
  if (std::abs(p.xi) < kGpdXiSwitch && std::abs(xt) < 1e-2)
    return t * (1.0 - xt / 2.0 + xt * xt / 3.0 - xt * xt * xt / 4.0);
  return std::log1p(xt) / p.xi;
}

}  // namespace detail

/// Distribution function. Returns exactly 1 at and beyond a finite endpoint.
inline double gpd_cdf(double y, const GpdParams& p) {
  detail::check_params(p, "gpd_cdf");
  detail::check_y(y, "gpd_cdf");
  if (y >= p.upper_endpoint()) return 1.0;
  return -std::expm1(-detail::cumulative_hazard(y, p));
}

/// Survival function 1 - H(y), computed without cancellation.
inline double gpd_sf(double y, const GpdParams& p) {
  detail::check_params(p, "gpd_sf");
  detail::check_y(y, "gpd_sf");
  if (y >= p.upper_endpoint()) return 0.0;
  return std::exp(-detail::cumulative_hazard(y, p));
}

/// Log-density; -inf outside the support (including the endpoint itself).
inline double gpd_logpdf(double y, const GpdParams& p) {
  detail::check_params(p, "gpd_logpdf");
  if (std::isnan(y)) throw DomainError("gpd_logpdf: NaN argument");
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (y < 0.0 || y >= p.upper_endpoint()) return ninf;
  return -std::log(p.sigma) - (1.0 + p.xi) * detail::cumulative_hazard(y, p);
}

inline double gpd_pdf(double y, const GpdParams& p) { return std::exp(gpd_logpdf(y, p)); }

/// Inverse of gpd_cdf on [0, 1).
inline double gpd_quantile(double q, const GpdParams& p) {
  detail::check_params(p, "gpd_quantile");
  if (!(q >= 0.0 && q < 1.0)) {
    std::ostringstream os;
    os << "gpd_quantile: probability must lie in [0,1), got " << q;
    throw DomainError(os.str());
  }
  const double l = -std::log1p(-q);  // standard exponential quantile
  const double xl = p.xi * l;
  if (std::abs(p.xi) < kGpdXiSwitch && std::abs(xl) < 1e-2)
    return p.sigma * l * (1.0 + xl / 2.0 + xl * xl / 6.0 + xl * xl * xl / 24.0);
  return p.sigma * std::expm1(xl) / p.xi;
}

/// Probability-integral transform to the standard exponential scale,
/// -ln(1 - H(y)). Infinite at a finite endpoint; DomainError beyond it.
inline double to_std_exponential(double y, const GpdParams& p) {
  detail::check_params(p, "to_std_exponential");
  detail::check_y(y, "to_std_exponential");
  const double end = p.upper_endpoint();
  if (y > end) {
    std::ostringstream os;
    os << "to_std_exponential: y=" << y << " beyond the upper endpoint " << end;
    throw DomainError(os.str());
  }
  if (y == end) return std::numeric_limits<double>::infinity();
  return detail::cumulative_hazard(y, p);
}

/// Inverse-transform sample of size `count`. `Source` provides uniform() on [0,1).
template <class Source>
std::vector<double> gpd_sample(std::size_t count, const GpdParams& p, Source& src) {
  detail::check_params(p, "gpd_sample");
  if (count == 0) throw DomainError("gpd_sample: count must be positive");
  std::vector<double> out(count);
  for (auto& y : out) y = gpd_quantile(src.uniform(), p);
  return out;
}

/// Draw one value.
template <class Source>
double gpd_draw(const GpdParams& p, Source& src) {
  return gpd_quantile(src.uniform(), p);
}

}  // namespace spar
