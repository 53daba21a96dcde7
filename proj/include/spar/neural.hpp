#pragma once

// Minimal feed-forward network engine: dense ReLU layers, per-output heads,
// reverse-mode gradients, Adam, and a training loop with early stopping,
// learning-rate decay and restart-on-divergence.
//
// Samples are stored column-wise: a batch of B inputs is an input_dim x B
// matrix, and network outputs are output_dim x B.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spar/error.hpp"
#include "spar/rng.hpp"
#include "spar/types.hpp"

namespace spar {

enum class Head { exponential, scaled_tangent, identity };

inline std::string_view to_string(Head h) {
  switch (h) {
    case Head::exponential: return "exponential";
    case Head::scaled_tangent: return "scaled_tangent";
    case Head::identity: return "identity";
  }
  return "identity";
}

inline Head head_from_string(std::string_view s) {
  if (s == "exponential") return Head::exponential;
  if (s == "scaled_tangent") return Head::scaled_tangent;
  if (s == "identity") return Head::identity;
  throw FormatError("unknown head tag '" + std::string(s) + "'");
}

namespace head {

/// Pre-activation clamp for tan(z)/pi. atan(pi/2) is where tan(z)/pi reaches 1/2.
inline constexpr double kTangentDelta = 1e-3;
inline const double kTangentLimit = std::atan(std::numbers::pi / 2.0) - kTangentDelta;
/// exp() argument clamp keeping exponential outputs finite and strictly positive.
inline constexpr double kExpLimit = 700.0;

inline double apply(Head h, double z) {
  switch (h) {
    case Head::exponential: return std::exp(std::clamp(z, -kExpLimit, kExpLimit));
    case Head::scaled_tangent: return std::tan(std::clamp(z, -kTangentLimit, kTangentLimit)) / std::numbers::pi;
    case Head::identity: return z;
  }
  return z;
}

/// d output / d pre-activation, evaluated at the clamped pre-activation.
inline double derivative(Head h, double z, double out) {
  switch (h) {
    case Head::exponential: return out;
    case Head::scaled_tangent: {
      const double t = std::tan(std::clamp(z, -kTangentLimit, kTangentLimit));
      return (1.0 + t * t) / std::numbers::pi;
    }
    case Head::identity: return 1.0;
  }
  return 1.0;
}

/// Pre-activation producing `out` (used to place initial biases).
inline double inverse(Head h, double out) {
  switch (h) {
    case Head::exponential:
      if (!(out > 0.0)) throw DomainError("exponential head: target output must be positive");
      return std::log(out);
    case Head::scaled_tangent:
      if (!(std::abs(out) < 0.5)) throw DomainError("scaled_tangent head: target output must lie in (-0.5,0.5)");
      return std::atan(std::numbers::pi * out);
    case Head::identity: return out;
  }
  return out;
}

}  // namespace head

struct Architecture {
  Eigen::Index input_dim = 1;
  std::vector<Eigen::Index> hidden{32, 32, 32};
  std::vector<Head> heads{Head::identity};

  [[nodiscard]] Eigen::Index output_dim() const noexcept { return static_cast<Eigen::Index>(heads.size()); }
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() && a.weight == b.weight &&
           a.bias.size() == b.bias.size() && a.bias == b.bias;
  }
};

/// Network parameters. Hidden layers use ReLU; the last layer feeds one head per output.
struct MlpParams {
  std::vector<DenseLayer> layers;
  std::vector<Head> heads;

  [[nodiscard]] Eigen::Index input_dim() const { return layers.front().weight.cols(); }
  [[nodiscard]] Eigen::Index output_dim() const { return layers.back().weight.rows(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("MlpParams: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].bias.size() != layers[l].weight.rows()) throw ShapeError("MlpParams: bias length mismatch");
      if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
        throw ShapeError("MlpParams: layer dimensions do not chain");
    }
    if (static_cast<Eigen::Index>(heads.size()) != output_dim()) throw ShapeError("MlpParams: head count != output_dim");
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(layers.begin(), layers.end(),
                       [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Gradient with the same layout as MlpParams::layers.
struct MlpGradient {
  std::vector<DenseLayer> layers;

  static MlpGradient zeros_like(const MlpParams& p) {
    MlpGradient g;
    for (const auto& l : p.layers)
      g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return g;
  }
  [[nodiscard]] bool all_finite() const {
    return std::all_of(layers.begin(), layers.end(),
                       [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
  }
};

struct InitOptions {
  /// Zero the scaled_tangent head's final weights and set its bias so the
  /// initial shape output is tan(0.1)/pi > 0 for every input.
  bool shape_head_nonneg = false;
  double shape_head_bias = 0.1;
  /// Optional initial head outputs (constant-in-input starting point); one entry per head.
  std::vector<std::optional<double>> head_output_init;
  /// Std multiplier for output-layer weights relative to 1/sqrt(fan_in).
  double output_weight_scale = 0.1;
};

/// Hidden weights ~ N(0, 2/fan_in) (He), hidden biases 0; output weights
/// ~ N(0, (scale^2)/fan_in), output biases 0 unless an initial output is given.
inline MlpParams mlp_init(const Architecture& arch, std::uint64_t seed, const InitOptions& opt = {}) {
  if (arch.input_dim < 1 || arch.heads.empty()) throw ShapeError("mlp_init: invalid architecture");
  for (auto h : arch.hidden)
    if (h < 1) throw ShapeError("mlp_init: hidden layer widths must be positive");
  Rng rng(seed);
  MlpParams p;
  p.heads = arch.heads;
  Eigen::Index fan_in = arch.input_dim;
  for (auto width : arch.hidden) {
    DenseLayer l{Matrix(width, fan_in), Vector::Zero(width)};
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = sd * rng.normal();
    p.layers.push_back(std::move(l));
    fan_in = width;
  }
  const Eigen::Index out = arch.output_dim();
  DenseLayer last{Matrix(out, fan_in), Vector::Zero(out)};
  const double sd = opt.output_weight_scale / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < last.weight.cols(); ++j)
    for (Eigen::Index i = 0; i < last.weight.rows(); ++i) last.weight(i, j) = sd * rng.normal();
  for (Eigen::Index k = 0; k < out; ++k) {
    const auto h = arch.heads[static_cast<std::size_t>(k)];
    if (static_cast<std::size_t>(k) < opt.head_output_init.size() && opt.head_output_init[static_cast<std::size_t>(k)])
      last.bias[k] = head::inverse(h, *opt.head_output_init[static_cast<std::size_t>(k)]);
    if (h == Head::scaled_tangent && opt.shape_head_nonneg) {
      last.weight.row(k).setZero();
      last.bias[k] = opt.shape_head_bias;
    }
  }
  p.layers.push_back(std::move(last));
  return p;
}

/// Activations kept from a batched forward pass for backpropagation.
struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activation of every layer
  std::vector<Matrix> post;  // post[0] = input, post[l+1] = activation of layer l (head output for the last)
};

inline void apply_heads(const MlpParams& p, const Matrix& z, Matrix& out) {
  out.resize(z.rows(), z.cols());
  for (Eigen::Index k = 0; k < z.rows(); ++k) {
    const Head h = p.heads[static_cast<std::size_t>(k)];
    for (Eigen::Index b = 0; b < z.cols(); ++b) out(k, b) = head::apply(h, z(k, b));
  }
}

/// Batched forward pass; inputs are input_dim x B.
inline Matrix mlp_forward_batch(const MlpParams& p, const Matrix& inputs, ForwardCache* cache = nullptr) {
  if (inputs.rows() != p.input_dim()) {
    std::ostringstream os;
    os << "mlp_forward: input has " << inputs.rows() << " rows, network expects " << p.input_dim();
    throw ShapeError(os.str());
  }
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(inputs);
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Matrix z = p.layers[l].weight * a;
    z.colwise() += p.layers[l].bias;
    if (l + 1 < p.layers.size()) {
      a = z.cwiseMax(0.0);
    } else {
      apply_heads(p, z, a);
    }
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
  }
  return a;
}

inline Vector mlp_forward(const MlpParams& p, const Vector& input) {
  if (input.size() != p.input_dim()) throw ShapeError("mlp_forward: input length does not match input_dim");
  return mlp_forward_batch(p, Matrix(input)).col(0);
}

/// Accumulates into `grad` the parameter gradient of sum_b <output_gradient_b, f(x_b)>.
inline void mlp_backward_batch(const MlpParams& p, const ForwardCache& cache, const Matrix& output_gradient,
                               MlpGradient& grad) {
  const std::size_t L = p.layers.size();
  if (output_gradient.rows() != p.output_dim() || output_gradient.cols() != cache.post.front().cols())
    throw ShapeError("mlp_backward: output gradient shape mismatch");
  if (grad.layers.size() != L) grad = MlpGradient::zeros_like(p);
  Matrix delta(output_gradient.rows(), output_gradient.cols());
  const Matrix& zl = cache.pre.back();
  const Matrix& yl = cache.post.back();
  for (Eigen::Index k = 0; k < delta.rows(); ++k) {
    const Head h = p.heads[static_cast<std::size_t>(k)];
    for (Eigen::Index b = 0; b < delta.cols(); ++b)
      delta(k, b) = output_gradient(k, b) * head::derivative(h, zl(k, b), yl(k, b));
  }
  for (std::size_t l = L; l-- > 0;) {
    grad.layers[l].weight.noalias() += delta * cache.post[l].transpose();
    grad.layers[l].bias += delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = p.layers[l].weight.transpose() * delta;
    delta = back.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
}

/// Gradient for one input given dLoss/dOutput.
inline MlpGradient mlp_backward(const MlpParams& p, const Vector& input, const Vector& output_gradient) {
  ForwardCache cache;
  mlp_forward_batch(p, Matrix(input), &cache);
  MlpGradient g = MlpGradient::zeros_like(p);
  mlp_backward_batch(p, cache, Matrix(output_gradient), g);
  return g;
}

struct AdamState {
  std::vector<DenseLayer> first_moment;
  std::vector<DenseLayer> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const MlpParams& p) {
    AdamState s;
    const auto z = MlpGradient::zeros_like(p);
    s.first_moment = z.layers;
    s.second_moment = z.layers;
    return s;
  }
};

enum class StepStatus { ok, non_finite };

/// Bias-corrected Adam update. Non-finite gradients leave params and state untouched.
inline StepStatus adam_step(MlpParams& p, const MlpGradient& g, AdamState& s, double lr) {
  if (g.layers.size() != p.layers.size() || s.first_moment.size() != p.layers.size())
    throw ShapeError("adam_step: gradient/state layout does not match params");
  if (!g.all_finite()) return StepStatus::non_finite;
  s.step_count += 1;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    update(p.layers[l].weight, g.layers[l].weight, s.first_moment[l].weight, s.second_moment[l].weight);
    update(p.layers[l].bias, g.layers[l].bias, s.first_moment[l].bias, s.second_moment[l].bias);
  }
  return StepStatus::ok;
}

struct TrainSchedule {
  double initial_lr = 1e-3;
  double min_lr = 5e-5;
  double lr_decay_factor = 0.5;
  std::size_t max_epochs = 500;              // total budget over all learning-rate stages
  std::size_t batch_size = 1024;  // 0: full batch
  std::size_t patience = 5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(initial_lr > 0.0) || !(min_lr > 0.0) || min_lr > initial_lr)
      throw DomainError("TrainSchedule: need 0 < min_lr <= initial_lr");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw DomainError("TrainSchedule: decay factor in (0,1)");
    if (max_epochs < 1 || patience < 1) throw DomainError("TrainSchedule: max_epochs and patience must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw DomainError("TrainSchedule: validation_fraction in (0,1)");
  }
};

/// Loss over a batch. `evaluate` returns the mean loss over the columns and,
/// when `grad` is non-null, writes d(mean loss)/d(outputs) into it.
/// Non-finite return values are a legal signal that triggers a restart.
class LossAdapter {
 public:
  virtual ~LossAdapter() = default;
  virtual double evaluate(const Matrix& outputs, const Matrix& targets, Matrix* grad) = 0;
};

/// Columns are samples: inputs input_dim x n, targets k x n.
struct TrainingData {
  Matrix inputs;
  Matrix targets;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t stage = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct TrainResult {
  MlpParams params;
  std::vector<EpochRecord> history;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;
  std::size_t restarts = 0;
  std::size_t stages = 0;
  double final_lr = 0.0;
};

namespace detail {

inline Matrix gather_cols(const Matrix& m, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) out.col(static_cast<Eigen::Index>(i - begin)) = m.col(idx[i]);
  return out;
}

inline double full_loss(const MlpParams& p, const Matrix& x, const Matrix& y, LossAdapter& loss) {
  return loss.evaluate(mlp_forward_batch(p, x), y, nullptr);
}

}  // namespace detail

/// Trains `init` on `data`.
///
/// Data are split by a seeded shuffle into training and validation parts,
/// redrawn at the start of every learning-rate stage.
/// Each learning-rate stage runs shuffled mini-batch epochs until the
/// validation loss fails to improve for `patience` consecutive epochs; the
/// best parameters are then restored and the learning rate multiplied by
/// `lr_decay_factor`. Training ends when the rate drops below `min_lr` or the
/// epoch budget is spent. A non-finite batch or validation loss restores the
/// last end-of-epoch checkpoint and decays the rate without ending the stage.
inline TrainResult train(MlpParams init, const TrainingData& data, LossAdapter& loss, const TrainSchedule& sched) {
  sched.validate();
  init.validate();
  const Eigen::Index n = data.inputs.cols();
  if (n < 2) throw InsufficientDataError("train: need at least two samples");
  if (data.targets.cols() != n) throw ShapeError("train: inputs and targets have different sample counts");

  auto n_val = static_cast<std::size_t>(std::llround(sched.validation_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, static_cast<std::size_t>(n) - 1);
  const std::size_t n_train = static_cast<std::size_t>(n) - n_val;
  const std::size_t batch = sched.batch_size > 0 ? std::min(sched.batch_size, n_train) : n_train;
  const bool full_batch = batch == n_train;

  // The 90/10 split is redrawn at the start of every learning-rate stage.
  Rng rng(derive_seed(sched.seed, 0x7261696EULL));
  std::vector<Eigen::Index> train_idx;
  Matrix val_x, val_y, full_x, full_y;
  auto draw_split = [&](std::size_t stage) {
    Rng split_rng(derive_seed(sched.seed, 0x73706C6900ULL + stage));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    shuffle_in_place(perm, split_rng);
    const std::vector<Eigen::Index> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    val_x = detail::gather_cols(data.inputs, val_idx, 0, val_idx.size());
    val_y = detail::gather_cols(data.targets, val_idx, 0, val_idx.size());
    if (full_batch) {
      full_x = detail::gather_cols(data.inputs, train_idx, 0, n_train);
      full_y = detail::gather_cols(data.targets, train_idx, 0, n_train);
    }
  };
  draw_split(0);

  TrainResult res;
  MlpParams params = std::move(init);
  double best_val = detail::full_loss(params, val_x, val_y, loss);
  if (!std::isfinite(best_val)) throw InitializationError("train: validation loss is not finite at initialization");
  MlpParams best = params;
  MlpParams checkpoint = params;
  AdamState adam = AdamState::for_params(params);
  AdamState adam_checkpoint = adam;

  double lr = sched.initial_lr;
  std::size_t epoch = 0;
  ForwardCache cache;
  Matrix grad_out;
  MlpGradient grad = MlpGradient::zeros_like(params);

  while (lr >= sched.min_lr && epoch < sched.max_epochs) {
    std::size_t stale = 0;
    while (stale < sched.patience && epoch < sched.max_epochs && lr >= sched.min_lr) {
      ++epoch;
      if (!full_batch) shuffle_in_place(train_idx, rng);
      bool diverged = false;
      double loss_sum = 0.0;
      for (std::size_t b0 = 0; b0 < n_train && !diverged; b0 += batch) {
        const std::size_t b1 = std::min(b0 + batch, n_train);
        Matrix bx_store, by_store;
        const Matrix* bx = &full_x;
        const Matrix* by = &full_y;
        if (!full_batch) {
          bx_store = detail::gather_cols(data.inputs, train_idx, b0, b1);
          by_store = detail::gather_cols(data.targets, train_idx, b0, b1);
          bx = &bx_store;
          by = &by_store;
        }
        const Matrix out = mlp_forward_batch(params, *bx, &cache);
        grad_out.resize(out.rows(), out.cols());
        const double l = loss.evaluate(out, *by, &grad_out);
        if (!std::isfinite(l) || !grad_out.allFinite()) {
          diverged = true;
          break;
        }
        for (auto& layer : grad.layers) {
          layer.weight.setZero();
          layer.bias.setZero();
        }
        mlp_backward_batch(params, cache, grad_out, grad);
        if (adam_step(params, grad, adam, lr) != StepStatus::ok || !params.all_finite()) {
          diverged = true;
          break;
        }
        loss_sum += l * static_cast<double>(b1 - b0);
      }
      double val = std::numeric_limits<double>::quiet_NaN();
      if (!diverged) {
        val = detail::full_loss(params, val_x, val_y, loss);
        diverged = !std::isfinite(val) || !std::isfinite(loss_sum);
      }
      if (diverged) {
        params = checkpoint;
        adam = adam_checkpoint;
        lr *= sched.lr_decay_factor;
        ++res.restarts;
        continue;
      }
      EpochRecord rec{epoch, res.stages, lr, loss_sum / static_cast<double>(n_train), val, false};
      if (val < best_val) {
        best_val = val;
        best = params;
        stale = 0;
        rec.improved = true;
      } else {
        ++stale;
      }
      res.history.push_back(rec);
      checkpoint = params;
      adam_checkpoint = adam;
    }
    ++res.stages;
    params = best;
    checkpoint = best;
    adam = AdamState::for_params(params);
    adam_checkpoint = adam;
    lr *= sched.lr_decay_factor;
    if (lr >= sched.min_lr && epoch < sched.max_epochs) {
      draw_split(res.stages);
      // Scores on the new validation set are not comparable with the old ones.
      best_val = detail::full_loss(best, val_x, val_y, loss);
    }
  }
  res.params = std::move(best);
  res.best_val_loss = best_val;
  res.epochs_run = epoch;
  res.final_lr = lr;
  return res;
}

}  // namespace spar
