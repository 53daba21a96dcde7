#pragma once

// Non-parametric bootstrap over observation rows with end-to-end refits
// (marginal transform included), and percentile confidence intervals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spar/error.hpp"
#include "spar/observation.hpp"
#include "spar/parallel.hpp"
#include "spar/rng.hpp"
#include "spar/spar_fit.hpp"
#include "spar/stats.hpp"

namespace spar {

/// Row indices of one resample of n rows.
using Resampler = std::function<std::vector<Eigen::Index>(std::size_t n, Rng& rng)>;

/// Uniform resampling with replacement.
inline std::vector<Eigen::Index> resample_with_replacement(std::size_t n, Rng& rng) {
  std::vector<Eigen::Index> idx(n);
  for (auto& i : idx) i = static_cast<Eigen::Index>(rng.index(n));
  return idx;
}

struct BootstrapOptions {
  unsigned workers = 1;  // 0: hardware concurrency
  double min_success_fraction = 0.9;
  Resampler resampler = resample_with_replacement;
};

struct ReplicateFailure {
  std::size_t replicate = 0;
  std::string kind;
  std::string message;
};

struct BootstrapEnsemble {
  std::size_t B = 0;
  std::vector<SparModel> models;            // successful replicates, in replicate order
  std::vector<std::uint64_t> replicate_seeds;  // seed of each successful model
  std::vector<std::size_t> replicate_index;    // replicate number of each successful model
  std::vector<ReplicateFailure> failures;
};

namespace seed_stream {
inline constexpr std::uint64_t bootstrap_replicate = 0x100;
inline constexpr std::uint64_t bootstrap_resample = 0x200;
}  // namespace seed_stream

/// Seed used by replicate k for both its resample and its refit.
inline std::uint64_t replicate_seed(std::uint64_t master_seed, std::size_t k) {
  return derive_seed(master_seed, seed_stream::bootstrap_replicate + k);
}

/// B row-resamples, each refitted end to end. Replicate failures are
/// recorded; the ensemble is returned when at least
/// ceil(min_success_fraction * B) succeed.
inline BootstrapEnsemble bootstrap_fit(const ObservationMatrix& raw, const SparConfig& cfg, std::size_t B,
                                       std::uint64_t master_seed, const BootstrapOptions& opt = {}) {
  if (B == 0) throw DomainError("bootstrap_fit: B must be positive");
  cfg.validate();
  const auto n = static_cast<std::size_t>(raw.rows());
  std::vector<std::optional<SparModel>> slots(B);
  std::vector<std::optional<ReplicateFailure>> errors(B);
  parallel_for(B, opt.workers, [&](std::size_t k) {
    const std::uint64_t seed = replicate_seed(master_seed, k);
    try {
      Rng rng(derive_seed(seed, seed_stream::bootstrap_resample));
      const std::vector<Eigen::Index> idx = opt.resampler(n, rng);
      SparConfig c = cfg;
      c.seed = seed;
      slots[k] = spar_fit(raw.select_rows(idx), c);
    } catch (const Error& e) {
      errors[k] = ReplicateFailure{k, e.kind(), e.what()};
    } catch (const std::exception& e) {
      errors[k] = ReplicateFailure{k, "internal", e.what()};
    }
  });
  BootstrapEnsemble ens;
  ens.B = B;
  for (std::size_t k = 0; k < B; ++k) {
    if (slots[k]) {
      ens.models.push_back(std::move(*slots[k]));
      ens.replicate_seeds.push_back(replicate_seed(master_seed, k));
      ens.replicate_index.push_back(k);
    } else if (errors[k]) {
      ens.failures.push_back(std::move(*errors[k]));
    }
  }
  const auto needed = static_cast<std::size_t>(std::ceil(opt.min_success_fraction * static_cast<double>(B) - 1e-9));
  if (ens.models.size() < needed) {
    std::ostringstream os;
    os << "bootstrap_fit: only " << ens.models.size() << " of " << B << " replicates succeeded (need " << needed << ")";
    if (!ens.failures.empty()) os << "; first failure: [" << ens.failures.front().kind << "] " << ens.failures.front().message;
    throw BootstrapError(os.str());
  }
  return ens;
}

/// Evaluates `stat` on every model of the ensemble; index order matches ens.models.
template <class Stat>
auto ensemble_map(const BootstrapEnsemble& ens, Stat&& stat, unsigned workers = 1) {
  using R = decltype(stat(ens.models.front(), std::size_t{0}));
  std::vector<R> out(ens.models.size());
  parallel_for(ens.models.size(), workers, [&](std::size_t k) { out[k] = stat(ens.models[k], k); });
  return out;
}

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  std::size_t B = 0;
  bool precision_warning = false;  // fewer than 20 values
};

/// Empirical (1-level)/2 and (1+level)/2 quantiles (type-7 interpolation).
inline ConfidenceInterval percentile_ci(std::span<const double> values, double level = 0.95) {
  if (values.empty()) throw DomainError("percentile_ci: no values");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("percentile_ci: level must lie in (0,1)");
  std::vector<double> v(values.begin(), values.end());
  for (const double x : v)
    if (std::isnan(x)) throw DomainError("percentile_ci: NaN value");
  std::sort(v.begin(), v.end());
  ConfidenceInterval ci;
  ci.level = level;
  ci.B = v.size();
  ci.lo = stats::quantile_sorted(v, 0.5 * (1.0 - level));
  ci.hi = stats::quantile_sorted(v, 1.0 - 0.5 * (1.0 - level));
  ci.precision_warning = v.size() < 20;
  return ci;
}

}  // namespace spar
