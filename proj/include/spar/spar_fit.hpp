#pragma once

// Two-stage deep SPAR fit.
//
// Stage 1 trains u(w), the conditional (1-alpha)-quantile of the radius given
// the angle, by minimising the tilted loss. Stage 2 trains one shared-trunk
// network with a scale head and a shape head on the threshold excesses
// r_t - u(w_t) by GPD maximum likelihood. Under the orthogonal
// reparametrisation the scale head emits nu(w) = sigma(w) (1 + xi(w)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spar/error.hpp"
#include "spar/gpd.hpp"
#include "spar/neural.hpp"
#include "spar/observation.hpp"
#include "spar/preprocess.hpp"
#include "spar/rng.hpp"
#include "spar/stats.hpp"
#include "spar/types.hpp"

namespace spar {

enum class Reparam { orthogonal, direct };

inline std::string_view to_string(Reparam r) { return r == Reparam::orthogonal ? "orthogonal" : "direct"; }

inline Reparam reparam_from_string(std::string_view s) {
  if (s == "orthogonal") return Reparam::orthogonal;
  if (s == "direct") return Reparam::direct;
  throw FormatError("unknown reparametrisation '" + std::string(s) + "'");
}

inline TrainSchedule default_threshold_schedule() {
  TrainSchedule s;
  s.max_epochs = 500;
  s.batch_size = 1024;
  return s;
}

inline TrainSchedule default_gpd_schedule() {
  TrainSchedule s;
  s.max_epochs = 750;
  s.batch_size = 0;
  return s;
}

struct SparConfig {
  SparConfig() : threshold_schedule(default_threshold_schedule()), gpd_schedule(default_gpd_schedule()) {}

  double alpha = 0.15;
  std::vector<Eigen::Index> threshold_hidden{32, 32, 32};
  std::vector<Eigen::Index> gpd_hidden{32, 32, 32};
  TrainSchedule threshold_schedule;
  TrainSchedule gpd_schedule;
  Reparam reparam = Reparam::orthogonal;
  std::uint64_t seed = 0;

  // Data guardrails.
  std::size_t min_points = 500;
  std::size_t min_exceedances = 200;
  // Training exceedance fraction must be within this of alpha once n >= calibration_min_n.
  double calibration_tolerance = 0.02;
  std::size_t calibration_min_n = 10000;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 0.5)) throw DomainError("SparConfig: alpha must lie in (0, 0.5)");
    threshold_schedule.validate();
    gpd_schedule.validate();
  }
};

// ---------------------------------------------------------------------------
// Losses

/// rho_{1-alpha}(r - u) = t (1 - alpha - 1{t < 0}).
inline double tilted_loss(double r, double u, double alpha) {
  const double t = r - u;
  return t * (1.0 - alpha - (t < 0.0 ? 1.0 : 0.0));
}

/// d/du of tilted_loss; r == u takes the r < u branch.
inline double tilted_loss_grad_u(double r, double u, double alpha) { return r > u ? alpha - 1.0 : alpha; }

struct NllTerms {
  double value = 0.0;    // -log h(y; sigma, xi), +inf outside the support
  double d_sigma = 0.0;  // partial derivatives in (sigma, xi)
  double d_xi = 0.0;
};

/// GPD negative log-likelihood of one excess, with its gradient in (sigma, xi).
inline NllTerms gpd_nll(double excess, const GpdParams& p) {
  NllTerms out;
  const double lp = gpd_logpdf(excess, p);
  if (!std::isfinite(lp)) {
    out.value = std::numeric_limits<double>::infinity();
    out.d_sigma = out.d_xi = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.value = -lp;
  const double s = p.sigma, xi = p.xi;
  const double t = excess / s;
  const double z = xi * t;
  out.d_sigma = (1.0 - (1.0 + xi) * t / (1.0 + z)) / s;
  if (std::abs(xi) < 1e-4) {
    // d/dxi of sum_j xi^j (-1)^j [t^(j+1)/(j+1) - t^j/j]
    double d = 0.0, tj = t, xpow = 1.0;
    for (int j = 1; j <= 8; ++j) {
      const double c = (j % 2 == 0 ? 1.0 : -1.0) * (tj * t / (j + 1) - tj / j);
      d += j * xpow * c;
      xpow *= xi;
      tj *= t;
    }
    out.d_xi = d;
  } else {
    out.d_xi = -std::log1p(z) / (xi * xi) + (1.0 + 1.0 / xi) * t / (1.0 + z);
  }
  return out;
}

/// GPD parameters from the two head outputs (scale head, shape head).
inline GpdParams gpd_from_outputs(double scale_out, double xi, Reparam reparam) {
  return reparam == Reparam::orthogonal ? GpdParams{scale_out / (1.0 + xi), xi} : GpdParams{scale_out, xi};
}

/// Head-output value of the scale head for given (sigma, xi).
inline double scale_output_for(const GpdParams& p, Reparam reparam) {
  return reparam == Reparam::orthogonal ? p.sigma * (1.0 + p.xi) : p.sigma;
}

/// NLL and gradient with respect to the head outputs (scale_out, xi).
inline NllTerms gpd_nll_outputs(double excess, double scale_out, double xi, Reparam reparam) {
  const GpdParams p = gpd_from_outputs(scale_out, xi, reparam);
  if (!(p.sigma > 0.0) || !std::isfinite(p.sigma) || !std::isfinite(xi))
    return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::quiet_NaN(),
            std::numeric_limits<double>::quiet_NaN()};
  NllTerms t = gpd_nll(excess, p);
  if (!std::isfinite(t.value) || reparam == Reparam::direct) return t;
  // sigma = nu / (1 + xi)
  const double inv = 1.0 / (1.0 + xi);
  NllTerms o;
  o.value = t.value;
  o.d_sigma = t.d_sigma * inv;             // d/d nu
  o.d_xi = t.d_xi - t.d_sigma * p.sigma * inv;  // d/d xi at fixed nu
  return o;
}

class TiltedLossAdapter final : public LossAdapter {
 public:
  explicit TiltedLossAdapter(double alpha) : alpha_(alpha) {}
  double evaluate(const Matrix& outputs, const Matrix& targets, Matrix* grad) override {
    const Eigen::Index b = outputs.cols();
    const double inv = 1.0 / static_cast<double>(b);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const double u = outputs(0, j), r = targets(0, j);
      sum += tilted_loss(r, u, alpha_);
      if (grad) (*grad)(0, j) = tilted_loss_grad_u(r, u, alpha_) * inv;
    }
    return sum * inv;
  }

 private:
  double alpha_;
};

class GpdNllAdapter final : public LossAdapter {
 public:
  explicit GpdNllAdapter(Reparam reparam) : reparam_(reparam) {}
  double evaluate(const Matrix& outputs, const Matrix& targets, Matrix* grad) override {
    const Eigen::Index b = outputs.cols();
    const double inv = 1.0 / static_cast<double>(b);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const NllTerms t = gpd_nll_outputs(targets(0, j), outputs(0, j), outputs(1, j), reparam_);
      if (!std::isfinite(t.value)) return std::numeric_limits<double>::infinity();
      sum += t.value;
      if (grad) {
        (*grad)(0, j) = t.d_sigma * inv;
        (*grad)(1, j) = t.d_xi * inv;
      }
    }
    return sum * inv;
  }

 private:
  Reparam reparam_;
};

// ---------------------------------------------------------------------------
// Model

struct StageSummary {
  std::size_t epochs = 0;
  std::size_t restarts = 0;
  std::size_t stages = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

struct FitSummary {
  std::size_t n = 0;
  std::size_t exceedances = 0;
  double exceedance_fraction = 0.0;
  StageSummary threshold;
  StageSummary gpd;
};

/// Everything needed for simulation and inference: the marginal transform,
/// both networks, alpha, the empirical angular sample of the joint tail and
/// the stored body points (centred scale).
class SparModel {
 public:
  SparModel() = default;

  SparModel(MarginalTransform transform, MlpParams threshold_net, MlpParams gpd_net, double alpha, Reparam reparam,
            Matrix exceedance_angles, Matrix body_points)
      : transform_(std::move(transform)),
        threshold_net_(std::move(threshold_net)),
        gpd_net_(std::move(gpd_net)),
        alpha_(alpha),
        reparam_(reparam),
        angles_(std::move(exceedance_angles)),
        body_(std::move(body_points)) {
    validate();
  }

  [[nodiscard]] Eigen::Index dim() const noexcept { return transform_.dim(); }
  [[nodiscard]] double alpha() const noexcept { return alpha_; }
  [[nodiscard]] Reparam reparam() const noexcept { return reparam_; }
  [[nodiscard]] const MarginalTransform& transform() const noexcept { return transform_; }
  [[nodiscard]] const MlpParams& threshold_net() const noexcept { return threshold_net_; }
  [[nodiscard]] const MlpParams& gpd_net() const noexcept { return gpd_net_; }
  [[nodiscard]] const Matrix& exceedance_angles() const noexcept { return angles_; }
  [[nodiscard]] const Matrix& body_points() const noexcept { return body_; }
  [[nodiscard]] const FitSummary& summary() const noexcept { return summary_; }
  void set_summary(FitSummary s) { summary_ = std::move(s); }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  void set_seed(std::uint64_t s) noexcept { seed_ = s; }

  /// u(w) for each row of `w` (n x d unit rows).
  [[nodiscard]] Vector thresholds(const Matrix& w) const {
    check_cols(w);
    return mlp_forward_batch(threshold_net_, w.transpose()).row(0).transpose();
  }
  [[nodiscard]] double threshold(const Vector& w) const { return mlp_forward(threshold_net_, w)[0]; }

  /// (sigma(w), xi(w)) for each row of `w`.
  [[nodiscard]] std::vector<GpdParams> gpd_params(const Matrix& w) const {
    check_cols(w);
    const Matrix out = mlp_forward_batch(gpd_net_, w.transpose());
    std::vector<GpdParams> ps(static_cast<std::size_t>(out.cols()));
    for (Eigen::Index j = 0; j < out.cols(); ++j) ps[static_cast<std::size_t>(j)] = gpd_from_outputs(out(0, j), out(1, j), reparam_);
    return ps;
  }
  [[nodiscard]] GpdParams gpd_params(const Vector& w) const {
    const Vector o = mlp_forward(gpd_net_, w);
    return gpd_from_outputs(o[0], o[1], reparam_);
  }

  /// Q^c_u membership, ||x|| > u(x / ||x||), for each centred row.
  [[nodiscard]] std::vector<bool> in_tail(const Matrix& x) const {
    check_cols(x);
    const Vector r = x.rowwise().norm();
    Matrix w = x;
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      if (r[t] > 0.0) w.row(t) /= r[t];
    const Vector u = thresholds(w);
    std::vector<bool> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index t = 0; t < x.rows(); ++t) out[static_cast<std::size_t>(t)] = r[t] > 0.0 && r[t] > u[t];
    return out;
  }

  void validate() const {
    const Eigen::Index d = transform_.dim();
    if (d < 1) throw ShapeError("SparModel: empty transform");
    threshold_net_.validate();
    gpd_net_.validate();
    if (threshold_net_.input_dim() != d || threshold_net_.output_dim() != 1 ||
        threshold_net_.heads[0] != Head::exponential)
      throw ShapeError("SparModel: threshold network must map d inputs to one exponential output");
    if (gpd_net_.input_dim() != d || gpd_net_.output_dim() != 2 || gpd_net_.heads[0] != Head::exponential ||
        gpd_net_.heads[1] != Head::scaled_tangent)
      throw ShapeError("SparModel: GPD network must map d inputs to (exponential, scaled_tangent) outputs");
    if (!(alpha_ > 0.0 && alpha_ < 0.5)) throw DomainError("SparModel: alpha must lie in (0, 0.5)");
    if (angles_.cols() != d || body_.cols() != d) throw ShapeError("SparModel: stored sample dimension mismatch");
    if (angles_.rows() < 1) throw StateError("SparModel: no stored exceedance angles");
    for (Eigen::Index t = 0; t < angles_.rows(); ++t)
      if (std::abs(angles_.row(t).norm() - 1.0) > 1e-9) throw DomainError("SparModel: stored angle is not unit norm");
  }

 private:
  void check_cols(const Matrix& m) const {
    if (m.cols() != dim()) throw ShapeError("SparModel: input dimension does not match model dimension");
  }

  MarginalTransform transform_;
  MlpParams threshold_net_;
  MlpParams gpd_net_;
  double alpha_ = 0.15;
  Reparam reparam_ = Reparam::orthogonal;
  Matrix angles_;
  Matrix body_;
  FitSummary summary_;
  std::uint64_t seed_ = 0;
};

// ---------------------------------------------------------------------------
// Fitting

namespace seed_stream {
inline constexpr std::uint64_t threshold_init = 1;
inline constexpr std::uint64_t threshold_train = 2;
inline constexpr std::uint64_t gpd_init = 3;
inline constexpr std::uint64_t gpd_train = 4;
}  // namespace seed_stream

struct ThresholdFit {
  MlpParams net;
  TrainResult training;
};

/// Quantile-regression network for u(w), started at the unconditional (1-alpha) radial quantile.
inline ThresholdFit fit_threshold(const PolarSample& polar, const SparConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(polar.size());
  if (n < cfg.min_points) {
    std::ostringstream os;
    os << "fit_threshold: need at least " << cfg.min_points << " points, got " << n;
    throw InsufficientDataError(os.str());
  }
  std::vector<double> r(polar.r.data(), polar.r.data() + polar.r.size());
  const double q0 = stats::quantile(r, 1.0 - cfg.alpha);

  Architecture arch{polar.dim(), cfg.threshold_hidden, {Head::exponential}};
  InitOptions init;
  init.head_output_init = {q0};
  MlpParams net = mlp_init(arch, derive_seed(cfg.seed, seed_stream::threshold_init), init);

  TrainingData data{polar.w.transpose(), polar.r.transpose()};
  TiltedLossAdapter loss(cfg.alpha);
  TrainSchedule sched = cfg.threshold_schedule;
  sched.seed = derive_seed(cfg.seed, seed_stream::threshold_train);
  TrainResult tr = train(std::move(net), data, loss, sched);
  return {tr.params, std::move(tr)};
}

struct GpdFit {
  MlpParams net;
  TrainResult training;
  std::vector<Eigen::Index> exceedance_index;
};

/// Shared-trunk GPD regression on the threshold excesses.
inline GpdFit fit_gpd(const PolarSample& polar, const MlpParams& threshold_net, const SparConfig& cfg) {
  cfg.validate();
  const Vector u = mlp_forward_batch(threshold_net, polar.w.transpose()).row(0).transpose();
  GpdFit fit;
  for (Eigen::Index t = 0; t < polar.size(); ++t)
    if (polar.r[t] > u[t]) fit.exceedance_index.push_back(t);
  const std::size_t m = fit.exceedance_index.size();
  if (m < cfg.min_exceedances) {
    std::ostringstream os;
    os << "fit_gpd: need at least " << cfg.min_exceedances << " threshold exceedances, got " << m;
    throw InsufficientDataError(os.str());
  }
  TrainingData data{Matrix(polar.dim(), static_cast<Eigen::Index>(m)), Matrix(1, static_cast<Eigen::Index>(m))};
  double excess_sum = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const Eigen::Index t = fit.exceedance_index[k];
    data.inputs.col(static_cast<Eigen::Index>(k)) = polar.w.row(t).transpose();
    data.targets(0, static_cast<Eigen::Index>(k)) = polar.r[t] - u[t];
    excess_sum += polar.r[t] - u[t];
  }
  const double mean_excess = excess_sum / static_cast<double>(m);

  InitOptions init;
  init.shape_head_nonneg = true;
  const double xi0 = head::apply(Head::scaled_tangent, init.shape_head_bias);
  // GPD mean sigma / (1 - xi) matched to the mean excess.
  const GpdParams start{mean_excess * (1.0 - xi0), xi0};
  init.head_output_init = {scale_output_for(start, cfg.reparam), std::nullopt};
  Architecture arch{polar.dim(), cfg.gpd_hidden, {Head::exponential, Head::scaled_tangent}};
  MlpParams net = mlp_init(arch, derive_seed(cfg.seed, seed_stream::gpd_init), init);

  GpdNllAdapter loss(cfg.reparam);
  TrainSchedule sched = cfg.gpd_schedule;
  sched.seed = derive_seed(cfg.seed, seed_stream::gpd_train);
  TrainResult tr = train(std::move(net), data, loss, sched);
  fit.net = tr.params;
  fit.training = std::move(tr);
  return fit;
}

namespace detail {
inline StageSummary summarize(const TrainResult& tr) {
  return {tr.epochs_run, tr.restarts, tr.stages, tr.best_val_loss, tr.history};
}
}  // namespace detail

/// Fits both stages on already-centred data and assembles the model.
inline SparModel fit_centred(const Matrix& centred, MarginalTransform transform, const SparConfig& cfg) {
  cfg.validate();
  if (centred.cols() < 2) throw DataError("spar_fit: need at least two margins");
  if (centred.cols() != transform.dim()) throw ShapeError("spar_fit: transform dimension mismatch");
  if (static_cast<std::size_t>(centred.rows()) < cfg.min_points) {
    std::ostringstream os;
    os << "spar_fit: need at least " << cfg.min_points << " observations, got " << centred.rows();
    throw InsufficientDataError(os.str());
  }
  const PolarSample polar = to_polar(centred);
  ThresholdFit thr = fit_threshold(polar, cfg);
  GpdFit gpd = fit_gpd(polar, thr.net, cfg);

  const Vector u = mlp_forward_batch(thr.net, polar.w.transpose()).row(0).transpose();
  std::vector<Eigen::Index> tail, body;
  for (Eigen::Index t = 0; t < polar.size(); ++t) (polar.r[t] > u[t] ? tail : body).push_back(t);
  Matrix angles(static_cast<Eigen::Index>(tail.size()), centred.cols());
  for (std::size_t k = 0; k < tail.size(); ++k) angles.row(static_cast<Eigen::Index>(k)) = polar.w.row(tail[k]);
  Matrix body_pts(static_cast<Eigen::Index>(body.size()), centred.cols());
  for (std::size_t k = 0; k < body.size(); ++k) body_pts.row(static_cast<Eigen::Index>(k)) = centred.row(body[k]);

  FitSummary summary;
  summary.n = static_cast<std::size_t>(polar.size());
  summary.exceedances = tail.size();
  summary.exceedance_fraction = static_cast<double>(tail.size()) / static_cast<double>(summary.n);
  summary.threshold = detail::summarize(thr.training);
  summary.gpd = detail::summarize(gpd.training);
  if (summary.n >= cfg.calibration_min_n &&
      std::abs(summary.exceedance_fraction - cfg.alpha) > cfg.calibration_tolerance) {
    std::ostringstream os;
    os << "spar_fit: training exceedance fraction " << summary.exceedance_fraction << " is not within "
       << cfg.calibration_tolerance << " of alpha = " << cfg.alpha;
    throw CalibrationError(os.str());
  }
  if (body.empty()) throw StateError("spar_fit: no observations below the threshold");

  SparModel model(std::move(transform), std::move(thr.net), std::move(gpd.net), cfg.alpha, cfg.reparam,
                  std::move(angles), std::move(body_pts));
  model.set_summary(std::move(summary));
  model.set_seed(cfg.seed);
  return model;
}

/// Full pipeline: marginal transform, polar decomposition, threshold and GPD stages.
inline SparModel spar_fit(const ObservationMatrix& raw, const SparConfig& cfg) {
  cfg.validate();
  if (raw.dim() < 2) throw DataError("spar_fit: need at least two margins");
  if (static_cast<std::size_t>(raw.rows()) < cfg.min_points) {
    std::ostringstream os;
    os << "spar_fit: need at least " << cfg.min_points << " observations, got " << raw.rows();
    throw InsufficientDataError(os.str());
  }
  MarginalTransform tf = fit_transform(raw);
  const Matrix centred = tf.forward_rows(raw.values());
  return fit_centred(centred, std::move(tf), cfg);
}

}  // namespace spar
