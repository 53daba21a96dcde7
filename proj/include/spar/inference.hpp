#pragma once

// Simulation from a fitted SPAR model and Monte Carlo estimation of tail
// probabilities and marginal return levels.
//
// For a region A the law of total probability gives
//   P(X in A) = (1 - alpha) P(X in A | Q_u) + alpha P(X in A | Q^c_u).
// The body term is enumerated exactly over the stored body points, the tail
// term is the hit fraction of points simulated from the SPAR density.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spar/error.hpp"
#include "spar/gpd.hpp"
#include "spar/neural.hpp"
#include "spar/parallel.hpp"
#include "spar/rng.hpp"
#include "spar/spar_fit.hpp"
#include "spar/stats.hpp"
#include "spar/types.hpp"

namespace spar {

/// Weekly blocks per year.
inline constexpr double kBlocksPerYear = 365.25 / 7.0;
/// Tail sample size used for probabilities and return levels unless overridden.
inline constexpr std::size_t kDefaultTailSamples = 2'000'000;

enum class Side { upper, lower };
enum class Scale { centred, raw };

inline std::string to_string(Side s) { return s == Side::upper ? "upper" : "lower"; }
inline Side side_from_string(const std::string& s) {
  if (s == "upper") return Side::upper;
  if (s == "lower") return Side::lower;
  throw FormatError("unknown side '" + s + "'");
}

struct SimulationOptions {
  unsigned workers = 1;             // 0: hardware concurrency
  std::size_t chunk = 1u << 15;     // rows per independently seeded chunk
};

// ---------------------------------------------------------------------------
// Regions

/// Membership test over points, on the centred or raw scale. Raw-scale
/// predicates are evaluated on inverse-transformed points.
class RegionPredicate {
 public:
  enum class Kind { everything, joint_tail, above, below, box_above, box_below, sum_above, sum_below, custom };
  using Custom = std::function<bool(const Vector&)>;

  static RegionPredicate everything() { return RegionPredicate(Kind::everything, Scale::centred, "everything"); }

  /// Q^c_u of the model the predicate is evaluated against.
  static RegionPredicate joint_tail() { return RegionPredicate(Kind::joint_tail, Scale::centred, "joint tail Q^c_u"); }

  /// {x_i > h}.
  static RegionPredicate marginal_above(Eigen::Index i, double h, Scale scale = Scale::raw) {
    RegionPredicate r(Kind::above, scale, describe("x", i, ">", h, scale));
    r.index_ = i;
    r.levels_ = Vector::Constant(1, h);
    return r;
  }
  /// {x_i < l}.
  static RegionPredicate marginal_below(Eigen::Index i, double l, Scale scale = Scale::raw) {
    RegionPredicate r(Kind::below, scale, describe("x", i, "<", l, scale));
    r.index_ = i;
    r.levels_ = Vector::Constant(1, l);
    return r;
  }
  /// {x_i > levels_i for all i}.
  static RegionPredicate joint_above(Vector levels, Scale scale = Scale::raw) {
    RegionPredicate r(Kind::box_above, scale, "all margins above levels");
    r.levels_ = std::move(levels);
    return r;
  }
  /// {x_i < levels_i for all i}.
  static RegionPredicate joint_below(Vector levels, Scale scale = Scale::raw) {
    RegionPredicate r(Kind::box_below, scale, "all margins below levels");
    r.levels_ = std::move(levels);
    return r;
  }
  /// {sum_i raw_i > s}.
  static RegionPredicate sum_above(double s) {
    RegionPredicate r(Kind::sum_above, Scale::raw, "sum > " + fmt(s));
    r.levels_ = Vector::Constant(1, s);
    return r;
  }
  /// {sum_i raw_i < s}.
  static RegionPredicate sum_below(double s) {
    RegionPredicate r(Kind::sum_below, Scale::raw, "sum < " + fmt(s));
    r.levels_ = Vector::Constant(1, s);
    return r;
  }
  static RegionPredicate custom(Custom fn, Scale scale, std::string description) {
    RegionPredicate r(Kind::custom, scale, std::move(description));
    r.custom_ = std::move(fn);
    return r;
  }

  [[nodiscard]] RegionPredicate complement() const {
    RegionPredicate r = *this;
    r.negated_ = !negated_;
    r.description_ = negated_ ? description_.substr(4) : "not " + description_;
    return r;
  }

  [[nodiscard]] Kind kind() const noexcept { return kind_; }
  [[nodiscard]] Scale scale() const noexcept { return scale_; }
  [[nodiscard]] bool negated() const noexcept { return negated_; }
  [[nodiscard]] Eigen::Index index() const noexcept { return index_; }
  [[nodiscard]] const Vector& levels() const noexcept { return levels_; }
  [[nodiscard]] const std::string& description() const noexcept { return description_; }

  /// Membership of each row of `centred`. `raw`, when given, must equal
  /// model.transform().inverse_rows(centred); it saves recomputing the map
  /// when several regions are evaluated on the same points.
  [[nodiscard]] std::vector<char> contains(const Matrix& centred, const SparModel& model,
                                           const Matrix* raw = nullptr) const {
    if (centred.cols() != model.dim()) throw ShapeError("RegionPredicate: point dimension does not match model");
    check_levels(model.dim());
    std::vector<char> out(static_cast<std::size_t>(centred.rows()));
    if (kind_ == Kind::everything) {
      std::fill(out.begin(), out.end(), char{1});
    } else if (kind_ == Kind::joint_tail) {
      const std::vector<bool> t = model.in_tail(centred);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = t[k] ? 1 : 0;
    } else {
      Matrix owned;
      const Matrix* pts = &centred;
      if (scale_ == Scale::raw) {
        if (raw == nullptr) {
          owned = model.transform().inverse_rows(centred);
          raw = &owned;
        }
        if (raw->rows() != centred.rows() || raw->cols() != centred.cols())
          throw ShapeError("RegionPredicate: raw matrix shape mismatch");
        pts = raw;
      }
      for (Eigen::Index t = 0; t < pts->rows(); ++t) out[static_cast<std::size_t>(t)] = test_row(pts->row(t)) ? 1 : 0;
    }
    if (negated_)
      for (auto& c : out) c = c ? 0 : 1;
    return out;
  }

  /// Single-point convenience; `centred` is one centred-scale point.
  [[nodiscard]] bool contains_point(const Vector& centred, const SparModel& model) const {
    return contains(centred.transpose(), model).front() != 0;
  }

 private:
  RegionPredicate(Kind k, Scale s, std::string desc) : kind_(k), scale_(s), description_(std::move(desc)) {}

  static std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  }
  static std::string describe(const char* sym, Eigen::Index i, const char* op, double v, Scale s) {
    std::ostringstream os;
    os << sym << i << " " << op << " " << fmt(v) << (s == Scale::raw ? " (raw)" : " (centred)");
    return os.str();
  }

  void check_levels(Eigen::Index d) const {
    if ((kind_ == Kind::above || kind_ == Kind::below) && (index_ < 0 || index_ >= d))
      throw DomainError("RegionPredicate: margin index out of range");
    if ((kind_ == Kind::box_above || kind_ == Kind::box_below) && levels_.size() != d)
      throw ShapeError("RegionPredicate: box levels must have one entry per margin");
  }

  template <class Row>
  bool test_row(const Row& x) const {
    switch (kind_) {
      case Kind::above: return x[index_] > levels_[0];
      case Kind::below: return x[index_] < levels_[0];
      case Kind::box_above: return (x.transpose().array() > levels_.array()).all();
      case Kind::box_below: return (x.transpose().array() < levels_.array()).all();
      case Kind::sum_above: return x.sum() > levels_[0];
      case Kind::sum_below: return x.sum() < levels_[0];
      case Kind::custom: return custom_(x.transpose());
      default: return true;
    }
  }

  Kind kind_;
  Scale scale_;
  std::string description_;
  Eigen::Index index_ = 0;
  Vector levels_;
  Custom custom_;
  bool negated_ = false;
};

// ---------------------------------------------------------------------------
// Simulation

namespace detail {

/// Fills `out` (rows = tail draws) using one chunk-local stream.
inline void simulate_tail_chunk(const SparModel& model, Rng& rng, Eigen::Ref<Matrix> out) {
  const Matrix& angles = model.exceedance_angles();
  const auto n_angles = static_cast<std::size_t>(angles.rows());
  const Eigen::Index c = out.rows(), d = model.dim();
  Matrix w(d, c);
  for (Eigen::Index j = 0; j < c; ++j) w.col(j) = angles.row(static_cast<Eigen::Index>(rng.index(n_angles))).transpose();
  const Matrix u = mlp_forward_batch(model.threshold_net(), w);
  const Matrix g = mlp_forward_batch(model.gpd_net(), w);
  std::vector<GpdParams> ps(static_cast<std::size_t>(c));
  for (Eigen::Index j = 0; j < c; ++j) {
    ps[static_cast<std::size_t>(j)] = gpd_from_outputs(g(0, j), g(1, j), model.reparam());
    const double y = gpd_quantile(rng.uniform_open(), ps[static_cast<std::size_t>(j)]);
    out.row(j) = (u(0, j) + y) * w.col(j).transpose();
  }
  // Rounding in x / |x| can, for a vanishing excess, put a draw back on the
  // threshold surface; redraw those so every output lies strictly in Q^c_u.
  for (int pass = 0; pass < 64; ++pass) {
    const std::vector<bool> ok = model.in_tail(out);
    bool all = true;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (ok[static_cast<std::size_t>(j)]) continue;
      all = false;
      const double y = gpd_quantile(rng.uniform_open(), ps[static_cast<std::size_t>(j)]);
      out.row(j) = (u(0, j) + y) * w.col(j).transpose();
    }
    if (all) return;
  }
  throw StateError("simulate_tail: could not place draws strictly beyond the threshold");
}

template <class ChunkFn>
void for_each_chunk(std::size_t m, std::uint64_t base_seed, const SimulationOptions& opt, ChunkFn&& fn) {
  const std::size_t chunk = std::max<std::size_t>(opt.chunk, 1);
  const std::size_t n_chunks = (m + chunk - 1) / chunk;
  parallel_for(n_chunks, opt.workers, [&](std::size_t k) {
    Rng rng(derive_seed(base_seed, k));
    const std::size_t lo = k * chunk, len = std::min(chunk, m - lo);
    fn(rng, lo, len);
  });
}

}  // namespace detail

/// m draws from the SPAR tail density (centred scale): an angle resampled
/// from the stored exceedance angles, a GPD excess, r = u(w) + y.
/// Output depends on the seed drawn from `rng` and the chunk size only, not
/// on the worker count.
inline Matrix simulate_tail(const SparModel& model, std::size_t m, Rng& rng, const SimulationOptions& opt = {}) {
  if (m == 0) throw DomainError("simulate_tail: m must be positive");
  Matrix out(static_cast<Eigen::Index>(m), model.dim());
  const std::uint64_t base = rng.engine()();
  detail::for_each_chunk(m, base, opt, [&](Rng& r, std::size_t lo, std::size_t len) {
    detail::simulate_tail_chunk(model, r,
                                out.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(len)));
  });
  return out;
}

/// Uniform resample with replacement from the stored body points.
template <class Source>
Matrix sample_body(const SparModel& model, std::size_t m, Source& src) {
  const Matrix& body = model.body_points();
  if (body.rows() == 0) throw StateError("sample_body: model has no stored body points");
  if (m == 0) throw DomainError("sample_body: m must be positive");
  Matrix out(static_cast<Eigen::Index>(m), model.dim());
  for (std::size_t k = 0; k < m; ++k)
    out.row(static_cast<Eigen::Index>(k)) = body.row(static_cast<Eigen::Index>(draw_index(src, static_cast<std::size_t>(body.rows()))));
  return out;
}

/// n draws from the full fitted distribution on the centred scale. Each draw
/// is a tail point with probability alpha and a stored body point otherwise.
inline Matrix simulate_model(const SparModel& model, std::size_t n, Rng& rng, const SimulationOptions& opt = {}) {
  if (n == 0) throw DomainError("simulate_model: n must be positive");
  std::vector<char> from_tail(n);
  std::size_t n_tail = 0;
  for (auto& t : from_tail) {
    t = rng.uniform() < model.alpha() ? 1 : 0;
    n_tail += static_cast<std::size_t>(t);
  }
  Matrix tail, body;
  if (n_tail > 0) tail = simulate_tail(model, n_tail, rng, opt);
  if (n_tail < n) body = sample_body(model, n - n_tail, rng);
  Matrix out(static_cast<Eigen::Index>(n), model.dim());
  Eigen::Index it = 0, ib = 0;
  for (std::size_t k = 0; k < n; ++k)
    out.row(static_cast<Eigen::Index>(k)) = from_tail[k] ? tail.row(it++) : body.row(ib++);
  return out;
}

// ---------------------------------------------------------------------------
// Quantile-set extremes

struct QuantileSetBounds {
  Vector upper;  // q^M_i = max over probes of w_i u(w)
  Vector lower;  // q^m_i = min over probes
};

/// Stored exceedance angles plus `n_uniform` uniform directions on the sphere.
inline Matrix probe_angles(const SparModel& model, std::size_t n_uniform, Rng& rng) {
  const Matrix& stored = model.exceedance_angles();
  const Eigen::Index d = model.dim();
  Matrix p(stored.rows() + static_cast<Eigen::Index>(n_uniform), d);
  p.topRows(stored.rows()) = stored;
  for (Eigen::Index k = stored.rows(); k < p.rows(); ++k) {
    Vector z(d);
    do {
      for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
    } while (z.norm() == 0.0);
    p.row(k) = z.transpose() / z.norm();
  }
  return p;
}

/// Coordinate-wise extremes of the quantile set {u(w) w} over the probes.
inline QuantileSetBounds quantile_set_extremes(const SparModel& model, const Matrix& probes) {
  if (probes.rows() == 0) throw DomainError("quantile_set_extremes: empty probe set");
  const Vector u = model.thresholds(probes);
  const Matrix pts = probes.array().colwise() * u.array();
  return {pts.colwise().maxCoeff().transpose(), pts.colwise().minCoeff().transpose()};
}

/// True when the region lies beyond the quantile-set box, so no body point can belong to it.
inline bool is_body_disjoint(const RegionPredicate& region, const QuantileSetBounds& b, const SparModel& model) {
  using K = RegionPredicate::Kind;
  if (region.negated()) return false;
  if (region.kind() == K::joint_tail) return true;
  const MarginalTransform& tf = model.transform();
  auto hi = [&](Eigen::Index i) { return region.scale() == Scale::raw ? tf.inverse_margin(i, b.upper[i]) : b.upper[i]; };
  auto lo = [&](Eigen::Index i) { return region.scale() == Scale::raw ? tf.inverse_margin(i, b.lower[i]) : b.lower[i]; };
  const Vector& lv = region.levels();
  switch (region.kind()) {
    case K::above: return lv[0] >= hi(region.index());
    case K::below: return lv[0] <= lo(region.index());
    case K::box_above:
      for (Eigen::Index i = 0; i < lv.size(); ++i)
        if (lv[i] >= hi(i)) return true;
      return false;
    case K::box_below:
      for (Eigen::Index i = 0; i < lv.size(); ++i)
        if (lv[i] <= lo(i)) return true;
      return false;
    case K::sum_above: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < model.dim(); ++i) s += tf.inverse_margin(i, b.upper[i]);
      return lv[0] >= s;
    }
    case K::sum_below: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < model.dim(); ++i) s += tf.inverse_margin(i, b.lower[i]);
      return lv[0] <= s;
    }
    default: return false;
  }
}

// ---------------------------------------------------------------------------
// Probabilities

struct TailProbabilityReport {
  std::string region;
  double probability = 0.0;
  double return_period_years = std::numeric_limits<double>::infinity();
  double blocks_per_year = kBlocksPerYear;
  double alpha = 0.0;
  double body_fraction = 0.0;  // over stored body points
  double tail_fraction = 0.0;  // over simulated tail points
  double standard_error = 0.0;  // Monte Carlo part only
  std::size_t m_body = 0;       // body points enumerated (0 when skipped)
  std::size_t m_tail = 0;
  std::size_t tail_hits = 0;
  bool body_skipped = false;
  bool sub_resolution = false;  // fewer than 10 simulated tail hits
};

inline double return_period_years(double probability, double blocks_per_year) {
  return probability > 0.0 ? 1.0 / (probability * blocks_per_year) : std::numeric_limits<double>::infinity();
}

/// Tail sample shared between several probability estimates.
struct TailSample {
  Matrix centred;
  Matrix raw;
};

inline TailSample make_tail_sample(const SparModel& model, std::size_t m_tail, Rng& rng,
                                   const SimulationOptions& opt = {}) {
  TailSample s;
  s.centred = simulate_tail(model, m_tail, rng, opt);
  s.raw = model.transform().inverse_rows(s.centred);
  return s;
}

struct EstimateOptions {
  double blocks_per_year = kBlocksPerYear;
  /// When set, regions certified disjoint from the body skip the body term.
  std::optional<QuantileSetBounds> bounds;
  std::size_t min_resolved_hits = 10;
};

/// Estimate for one region on an existing tail sample.
inline TailProbabilityReport estimate_on_sample(const SparModel& model, const RegionPredicate& region,
                                                const TailSample& tail, const EstimateOptions& opt = {}) {
  if (tail.centred.rows() == 0) throw DomainError("estimate_probability: empty tail sample");
  TailProbabilityReport rep;
  rep.region = region.description();
  rep.alpha = model.alpha();
  rep.blocks_per_year = opt.blocks_per_year;
  rep.m_tail = static_cast<std::size_t>(tail.centred.rows());

  const std::vector<char> hit = region.contains(tail.centred, model, &tail.raw);
  rep.tail_hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), char{1}));
  rep.tail_fraction = static_cast<double>(rep.tail_hits) / static_cast<double>(rep.m_tail);

  rep.body_skipped = opt.bounds.has_value() && is_body_disjoint(region, *opt.bounds, model);
  if (!rep.body_skipped) {
    const Matrix& body = model.body_points();
    if (body.rows() == 0) throw StateError("estimate_probability: model has no stored body points");
    const std::vector<char> in = region.contains(body, model);
    rep.m_body = in.size();
    rep.body_fraction = static_cast<double>(std::count(in.begin(), in.end(), char{1})) / static_cast<double>(rep.m_body);
  }
  const double a = model.alpha();
  // bf + a (tf - bf) keeps the two trivial regions exact: everything -> 1, Q^c_u -> alpha.
  rep.probability = std::clamp(rep.body_fraction + a * (rep.tail_fraction - rep.body_fraction), 0.0, 1.0);
  rep.standard_error = a * std::sqrt(rep.tail_fraction * (1.0 - rep.tail_fraction) / static_cast<double>(rep.m_tail));
  rep.return_period_years = return_period_years(rep.probability, opt.blocks_per_year);
  rep.sub_resolution = rep.tail_hits < opt.min_resolved_hits && rep.body_fraction == 0.0;
  return rep;
}

inline TailProbabilityReport estimate_probability(const SparModel& model, const RegionPredicate& region,
                                                  std::size_t m_tail, Rng& rng, const EstimateOptions& opt = {},
                                                  const SimulationOptions& sim = {}) {
  const TailSample tail = make_tail_sample(model, m_tail, rng, sim);
  return estimate_on_sample(model, region, tail, opt);
}

/// Several regions on one shared tail sample.
inline std::vector<TailProbabilityReport> estimate_probabilities(const SparModel& model,
                                                                 const std::vector<RegionPredicate>& regions,
                                                                 std::size_t m_tail, Rng& rng,
                                                                 const EstimateOptions& opt = {},
                                                                 const SimulationOptions& sim = {}) {
  const TailSample tail = make_tail_sample(model, m_tail, rng, sim);
  std::vector<TailProbabilityReport> out;
  out.reserve(regions.size());
  for (const auto& r : regions) out.push_back(estimate_on_sample(model, r, tail, opt));
  return out;
}

// ---------------------------------------------------------------------------
// Return levels

/// Raw-scale combined sample: ceil(m/(1-alpha)) body resamples and m tail
/// draws, weighted so the body carries mass 1 - alpha and the tail alpha.
struct CombinedSample {
  Matrix raw;
  Vector weights;
  std::size_t m_body = 0;
  std::size_t m_tail = 0;
  double alpha = 0.0;
};

inline CombinedSample combined_sample(const SparModel& model, std::size_t m_tail, Rng& rng,
                                      const SimulationOptions& opt = {}) {
  if (m_tail == 0) throw DomainError("combined_sample: m_tail must be positive");
  const double a = model.alpha();
  CombinedSample c;
  c.alpha = a;
  c.m_tail = m_tail;
  c.m_body = static_cast<std::size_t>(std::ceil(static_cast<double>(m_tail) / (1.0 - a)));
  const Matrix body = sample_body(model, c.m_body, rng);
  const Matrix tail = simulate_tail(model, m_tail, rng, opt);
  Matrix centred(body.rows() + tail.rows(), model.dim());
  centred << body, tail;
  c.raw = model.transform().inverse_rows(centred);
  c.weights.resize(centred.rows());
  c.weights.head(body.rows()).setConstant((1.0 - a) / static_cast<double>(c.m_body));
  c.weights.tail(tail.rows()).setConstant(a / static_cast<double>(m_tail));
  return c;
}

struct ReturnLevelOptions {
  double blocks_per_year = kBlocksPerYear;
  /// Expected number of tail draws beyond the level needed to resolve it.
  double min_tail_count = 10.0;
};

/// Exceedance probability per block of the N-year level.
inline double block_exceedance_probability(double n_years, double blocks_per_year) {
  if (!(n_years > 0.0) || !(blocks_per_year > 0.0))
    throw DomainError("return level: period and blocks per year must be positive");
  return 1.0 / (n_years * blocks_per_year);
}

inline void check_resolvable(double p_exc, std::size_t m_tail, double alpha, const ReturnLevelOptions& opt) {
  if (!(p_exc < 1.0)) throw ResolutionError("return level: period shorter than one block");
  const double expected = p_exc * static_cast<double>(m_tail) / alpha;
  if (expected < opt.min_tail_count) {
    const double need = std::ceil(opt.min_tail_count * alpha / p_exc);
    std::ostringstream os;
    os << "return level: exceedance probability " << p_exc << " is not resolvable with m_tail = " << m_tail
       << "; need m_tail >= " << static_cast<std::uint64_t>(need);
    throw ResolutionError(os.str());
  }
}

/// Per-margin N-year levels from a combined sample, for several periods.
inline Matrix return_levels_from_sample(const CombinedSample& c, const std::vector<double>& n_years, Side side,
                                        const ReturnLevelOptions& opt = {}) {
  const Eigen::Index d = c.raw.cols();
  Matrix out(static_cast<Eigen::Index>(n_years.size()), d);
  std::vector<double> probs;
  for (const double n : n_years) {
    const double p = block_exceedance_probability(n, opt.blocks_per_year);
    check_resolvable(p, c.m_tail, c.alpha, opt);
    probs.push_back(side == Side::upper ? 1.0 - p : p);
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    stats::WeightedSample ws;
    ws.reserve(static_cast<std::size_t>(c.raw.rows()));
    for (Eigen::Index t = 0; t < c.raw.rows(); ++t) ws.add(c.raw(t, i), c.weights[t]);
    for (std::size_t k = 0; k < probs.size(); ++k) out(static_cast<Eigen::Index>(k), i) = ws.quantile(probs[k]);
  }
  return out;
}

/// Raw-scale N-year return level in each margin.
inline Vector marginal_return_level(const SparModel& model, double n_years, Side side, std::size_t m_tail, Rng& rng,
                                    const ReturnLevelOptions& opt = {}, const SimulationOptions& sim = {}) {
  check_resolvable(block_exceedance_probability(n_years, opt.blocks_per_year), m_tail, model.alpha(), opt);
  const CombinedSample c = combined_sample(model, m_tail, rng, sim);
  return return_levels_from_sample(c, {n_years}, side, opt).row(0).transpose();
}

/// P(X_i > x_i^N for all i) (upper) or P(X_i < x_i^N for all i) (lower) at the N-year marginal levels.
inline TailProbabilityReport joint_tail_probability(const SparModel& model, double n_years, Side side,
                                                    std::size_t m_tail, Rng& rng, const EstimateOptions& opt = {},
                                                    const SimulationOptions& sim = {}) {
  ReturnLevelOptions rl;
  rl.blocks_per_year = opt.blocks_per_year;
  const Vector levels = marginal_return_level(model, n_years, side, m_tail, rng, rl, sim);
  const RegionPredicate region =
      side == Side::upper ? RegionPredicate::joint_above(levels) : RegionPredicate::joint_below(levels);
  return estimate_probability(model, region, m_tail, rng, opt, sim);
}

/// P(sum of raw margins > s) or < s.
inline TailProbabilityReport sum_tail_probability(const SparModel& model, double s, Side side, std::size_t m_tail,
                                                  Rng& rng, const EstimateOptions& opt = {},
                                                  const SimulationOptions& sim = {}) {
  const RegionPredicate region = side == Side::upper ? RegionPredicate::sum_above(s) : RegionPredicate::sum_below(s);
  return estimate_probability(model, region, m_tail, rng, opt, sim);
}

// ---------------------------------------------------------------------------
// Event sets

struct EventSetOptions {
  double min_acceptance = 1e-6;
  std::size_t min_trials = 10'000'000;  // trials before the acceptance rate is judged
  std::size_t max_trials = 2'000'000'000;
  SimulationOptions sim;
};

struct EventSet {
  Matrix raw;
  std::size_t trials = 0;
  [[nodiscard]] double acceptance_rate() const {
    return trials ? static_cast<double>(raw.rows()) / static_cast<double>(trials) : 0.0;
  }
};

/// m raw-scale tail events, optionally conditioned on a region by rejection.
inline EventSet generate_event_set(const SparModel& model, std::size_t m, const std::optional<RegionPredicate>& region,
                                   Rng& rng, const EventSetOptions& opt = {}) {
  if (m == 0) throw DomainError("generate_event_set: m must be positive");
  EventSet es;
  if (!region) {
    es.raw = model.transform().inverse_rows(simulate_tail(model, m, rng, opt.sim));
    es.trials = m;
    return es;
  }
  std::vector<Vector> kept;
  kept.reserve(m);
  std::size_t batch = std::max<std::size_t>(m, 1u << 14);
  while (kept.size() < m) {
    const TailSample s = make_tail_sample(model, batch, rng, opt.sim);
    const std::vector<char> in = region->contains(s.centred, model, &s.raw);
    std::size_t used = 0;
    for (; used < in.size() && kept.size() < m; ++used)
      if (in[used]) kept.push_back(s.raw.row(static_cast<Eigen::Index>(used)).transpose());
    es.trials += used;
    const double rate = static_cast<double>(kept.size()) / static_cast<double>(es.trials);
    if ((es.trials >= opt.min_trials && rate < opt.min_acceptance) || (kept.size() < m && es.trials >= opt.max_trials)) {
      std::ostringstream os;
      os << "generate_event_set: acceptance rate " << rate << " after " << es.trials << " trials for region '"
         << region->description() << "'";
      throw InfeasibleRegionError(os.str());
    }
    batch = std::min<std::size_t>(batch * 2, 1u << 22);
  }
  es.raw.resize(static_cast<Eigen::Index>(m), model.dim());
  for (std::size_t k = 0; k < m; ++k) es.raw.row(static_cast<Eigen::Index>(k)) = kept[k].transpose();
  return es;
}

}  // namespace spar
