#pragma once

// Goodness-of-fit data for a fitted SPAR model: radial GPD QQ on the
// standard-exponential scale, marginal QQ inside the joint tail, pairwise
// chi(u) curves and return-level curves. Everything here produces numbers
// and tidy CSV; plotting is left to external tools.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spar/error.hpp"
#include "spar/gpd.hpp"
#include "spar/inference.hpp"
#include "spar/observation.hpp"
#include "spar/preprocess.hpp"
#include "spar/spar_fit.hpp"
#include "spar/stats.hpp"
#include "spar/types.hpp"

namespace spar {

struct QqData {
  std::string label;
  std::vector<double> empirical;  // sorted
  std::vector<double> model;      // sorted, same length
};

inline constexpr std::size_t kMinQqPoints = 20;

/// -ln(1 - k/(n+1)), k = 1..n.
inline std::vector<double> exponential_plotting_positions(std::size_t n) {
  std::vector<double> q(n);
  for (std::size_t k = 1; k <= n; ++k) q[k - 1] = -std::log1p(-static_cast<double>(k) / static_cast<double>(n + 1));
  return q;
}

/// Exceedances of `polar` mapped to the standard-exponential scale through
/// the fitted angle-dependent GPD, in sample order.
inline std::vector<double> gpd_exponential_residuals(const SparModel& model, const PolarSample& polar) {
  if (polar.dim() != model.dim()) throw ShapeError("gpd_qq: sample dimension does not match model");
  const Vector u = model.thresholds(polar.w);
  std::vector<Eigen::Index> idx;
  for (Eigen::Index t = 0; t < polar.size(); ++t)
    if (polar.r[t] > u[t]) idx.push_back(t);
  Matrix w(static_cast<Eigen::Index>(idx.size()), polar.dim());
  for (std::size_t k = 0; k < idx.size(); ++k) w.row(static_cast<Eigen::Index>(k)) = polar.w.row(idx[k]);
  const std::vector<GpdParams> ps = idx.empty() ? std::vector<GpdParams>{} : model.gpd_params(w);
  std::vector<double> e(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const GpdParams& p = ps[k];
    const double y = polar.r[idx[k]] - u[idx[k]];
    // An excess beyond a finite endpoint has zero model density; report it as +inf.
    e[k] = y >= p.upper_endpoint() ? std::numeric_limits<double>::infinity() : to_std_exponential(y, p);
  }
  return e;
}

/// Radial QQ: sorted exponential residuals against exponential plotting positions.
inline QqData gpd_qq(const SparModel& model, const PolarSample& polar) {
  std::vector<double> e = gpd_exponential_residuals(model, polar);
  if (e.size() < kMinQqPoints) {
    std::ostringstream os;
    os << "gpd_qq: need at least " << kMinQqPoints << " exceedances, got " << e.size();
    throw DataError(os.str());
  }
  std::sort(e.begin(), e.end());
  std::vector<double> q = exponential_plotting_positions(e.size());
  return {"radial", std::move(e), std::move(q)};
}

// ---------------------------------------------------------------------------
// chi(u)

struct ChiCurve {
  std::string label_x, label_y;
  std::vector<double> u_grid;
  std::vector<double> chi;      // NaN where undefined
  std::vector<char> defined;    // 0 where the conditioning set is empty
  Side side = Side::upper;
};

/// {0.80, 0.81, ..., 0.99}.
inline std::vector<double> default_u_grid() {
  std::vector<double> g;
  for (int k = 80; k <= 99; ++k) g.push_back(k / 100.0);
  return g;
}

/// Pseudo-uniform ranks k/(n+1); tied values share their average rank.
inline std::vector<double> pseudo_uniforms(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) u[order[k]] = rank / static_cast<double>(n + 1);
    i = j;
  }
  return u;
}

inline constexpr std::size_t kMinChiPoints = 100;

/// chi(u) = #{both ranks > u} / #{first rank > u}.
inline ChiCurve chi_curve(std::span<const double> x, std::span<const double> y,
                          const std::vector<double>& u_grid = default_u_grid()) {
  if (x.size() != y.size()) throw ShapeError("chi_curve: series lengths differ");
  if (x.size() < kMinChiPoints) {
    std::ostringstream os;
    os << "chi_curve: need at least " << kMinChiPoints << " pairs, got " << x.size();
    throw DataError(os.str());
  }
  if (u_grid.empty()) throw DomainError("chi_curve: empty u grid");
  for (std::size_t k = 0; k < u_grid.size(); ++k) {
    if (!(u_grid[k] > 0.0 && u_grid[k] < 1.0)) throw DomainError("chi_curve: u values must lie in (0,1)");
    if (k > 0 && !(u_grid[k] > u_grid[k - 1])) throw DomainError("chi_curve: u grid must be strictly increasing");
  }
  const std::vector<double> ux = pseudo_uniforms(x), uy = pseudo_uniforms(y);
  ChiCurve c;
  c.u_grid = u_grid;
  for (const double u : u_grid) {
    std::size_t den = 0, num = 0;
    for (std::size_t t = 0; t < ux.size(); ++t)
      if (ux[t] > u) {
        ++den;
        if (uy[t] > u) ++num;
      }
    c.defined.push_back(den > 0 ? 1 : 0);
    c.chi.push_back(den > 0 ? static_cast<double>(num) / static_cast<double>(den)
                            : std::numeric_limits<double>::quiet_NaN());
  }
  return c;
}

/// Lower-tail chi: the upper-tail estimator applied to the negated series.
inline ChiCurve chi_curve_lower(std::span<const double> x, std::span<const double> y,
                                const std::vector<double>& u_grid = default_u_grid()) {
  std::vector<double> nx(x.begin(), x.end()), ny(y.begin(), y.end());
  for (auto& v : nx) v = -v;
  for (auto& v : ny) v = -v;
  ChiCurve c = chi_curve(nx, ny, u_grid);
  c.side = Side::lower;
  return c;
}

enum class ChiMode { tail_region, full };

/// chi for margins (i, j) of raw observations. In tail_region mode only the
/// rows the model places in Q^c_u enter the ranks.
inline ChiCurve chi_pair(const SparModel& model, const Matrix& raw, Eigen::Index i, Eigen::Index j, Side side,
                         ChiMode mode = ChiMode::tail_region, const std::vector<double>& u_grid = default_u_grid()) {
  if (raw.cols() != model.dim()) throw ShapeError("chi_pair: data dimension does not match model");
  if (i < 0 || j < 0 || i >= raw.cols() || j >= raw.cols() || i == j)
    throw DomainError("chi_pair: margin indices must be distinct and in range");
  std::vector<double> x, y;
  if (mode == ChiMode::tail_region) {
    const std::vector<bool> tail = model.in_tail(model.transform().forward_rows(raw));
    for (Eigen::Index t = 0; t < raw.rows(); ++t)
      if (tail[static_cast<std::size_t>(t)]) {
        x.push_back(raw(t, i));
        y.push_back(raw(t, j));
      }
  } else {
    x.assign(raw.col(i).data(), raw.col(i).data() + raw.rows());
    y.assign(raw.col(j).data(), raw.col(j).data() + raw.rows());
  }
  ChiCurve c = side == Side::upper ? chi_curve(x, y, u_grid) : chi_curve_lower(x, y, u_grid);
  return c;
}

// ---------------------------------------------------------------------------
// Marginal QQ inside the joint tail

/// Observed raw values of one margin for rows in Q^c_u against the same
/// plotting-position quantiles of m_tail simulated tail points.
inline QqData marginal_qq_tail(const SparModel& model, const ObservationMatrix& observed, Eigen::Index margin,
                               std::size_t m_tail, Rng& rng, const SimulationOptions& sim = {}) {
  if (observed.dim() != model.dim()) throw ShapeError("marginal_qq_tail: data dimension does not match model");
  if (margin < 0 || margin >= model.dim()) throw DomainError("marginal_qq_tail: margin index out of range");
  const Matrix& raw = observed.values();
  const std::vector<bool> tail = model.in_tail(model.transform().forward_rows(raw));
  std::vector<double> obs;
  for (Eigen::Index t = 0; t < raw.rows(); ++t)
    if (tail[static_cast<std::size_t>(t)]) obs.push_back(raw(t, margin));
  if (obs.size() < kMinQqPoints) {
    std::ostringstream os;
    os << "marginal_qq_tail: need at least " << kMinQqPoints << " observed tail rows, got " << obs.size();
    throw DataError(os.str());
  }
  std::sort(obs.begin(), obs.end());
  const Matrix sim_raw = model.transform().inverse_rows(simulate_tail(model, m_tail, rng, sim));
  std::vector<double> s(sim_raw.col(margin).data(), sim_raw.col(margin).data() + sim_raw.rows());
  std::sort(s.begin(), s.end());
  QqData q;
  q.label = observed.site_names()[static_cast<std::size_t>(margin)];
  q.empirical = std::move(obs);
  q.model.resize(q.empirical.size());
  const double n1 = static_cast<double>(q.empirical.size() + 1);
  for (std::size_t k = 0; k < q.empirical.size(); ++k)
    q.model[k] = stats::quantile_sorted(s, static_cast<double>(k + 1) / n1);
  return q;
}

// ---------------------------------------------------------------------------
// Return-level curves

struct ReturnLevelCurve {
  std::string label;
  Side side = Side::upper;
  std::vector<double> periods;
  std::vector<double> model;      // model levels, raw scale
  std::vector<double> empirical;  // NaN when unresolvable
  std::vector<char> empirical_resolved;
};

/// Model and empirical N-year levels for every margin. The empirical level
/// needs at least one block per exceedance, i.e. N <= n / blocks_per_year.
inline std::vector<ReturnLevelCurve> return_level_curve(const SparModel& model, const ObservationMatrix& observed,
                                                        const std::vector<double>& periods, Side side,
                                                        std::size_t m_tail, Rng& rng,
                                                        const ReturnLevelOptions& opt = {},
                                                        const SimulationOptions& sim = {}) {
  if (observed.dim() != model.dim()) throw ShapeError("return_level_curve: data dimension does not match model");
  if (periods.empty()) throw DomainError("return_level_curve: no periods");
  for (std::size_t k = 0; k < periods.size(); ++k) {
    if (!(periods[k] > 0.0)) throw DomainError("return_level_curve: periods must be positive");
    if (k > 0 && !(periods[k] > periods[k - 1])) throw DomainError("return_level_curve: periods must be sorted");
  }
  const CombinedSample c = combined_sample(model, m_tail, rng, sim);
  const Matrix levels = return_levels_from_sample(c, periods, side, opt);
  const Matrix& raw = observed.values();
  const auto n = static_cast<double>(raw.rows());
  std::vector<ReturnLevelCurve> out;
  for (Eigen::Index i = 0; i < model.dim(); ++i) {
    ReturnLevelCurve rc;
    rc.label = observed.site_names()[static_cast<std::size_t>(i)];
    rc.side = side;
    rc.periods = periods;
    std::vector<double> col(raw.col(i).data(), raw.col(i).data() + raw.rows());
    std::sort(col.begin(), col.end());
    for (std::size_t k = 0; k < periods.size(); ++k) {
      rc.model.push_back(levels(static_cast<Eigen::Index>(k), i));
      const double p = block_exceedance_probability(periods[k], opt.blocks_per_year);
      const bool ok = p * n >= 1.0;
      rc.empirical_resolved.push_back(ok ? 1 : 0);
      rc.empirical.push_back(ok ? stats::quantile_sorted(col, side == Side::upper ? 1.0 - p : p)
                                : std::numeric_limits<double>::quiet_NaN());
    }
    out.push_back(std::move(rc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output (one row per point)

namespace detail {
inline void csv_number(std::ostream& os, double v) {
  if (std::isnan(v)) {
    os << "NA";
  } else {
    os << std::setprecision(17) << v;
  }
}
}  // namespace detail

inline void write_qq_csv(std::ostream& os, const QqData& q) {
  os << "label,k,empirical,model\n";
  for (std::size_t k = 0; k < q.empirical.size(); ++k) {
    os << q.label << ',' << k + 1 << ',';
    detail::csv_number(os, q.empirical[k]);
    os << ',';
    detail::csv_number(os, q.model[k]);
    os << '\n';
  }
}

/// Several curves (typically the upper and lower curve of one pair) in one table.
inline void write_chi_csv(std::ostream& os, const std::vector<ChiCurve>& curves) {
  os << "x,y,side,u,chi,defined\n";
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.u_grid.size(); ++k) {
      os << c.label_x << ',' << c.label_y << ',' << to_string(c.side) << ',';
      detail::csv_number(os, c.u_grid[k]);
      os << ',';
      detail::csv_number(os, c.chi[k]);
      os << ',' << int(c.defined[k]) << '\n';
    }
}

inline void write_return_level_csv(std::ostream& os, const std::vector<ReturnLevelCurve>& curves) {
  os << "label,side,period_years,model_level,empirical_level,empirical_resolved\n";
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.periods.size(); ++k) {
      os << c.label << ',' << to_string(c.side) << ',';
      detail::csv_number(os, c.periods[k]);
      os << ',';
      detail::csv_number(os, c.model[k]);
      os << ',';
      detail::csv_number(os, c.empirical[k]);
      os << ',' << int(c.empirical_resolved[k]) << '\n';
    }
}

}  // namespace spar
