#pragma once

// Shared fixtures for the unit tests: synthetic data and hand-built models
// whose threshold and GPD parameters do not depend on the angle.

#include <cmath>
#include <cstdint>
#include <vector>

#include "spar/neural.hpp"
#include "spar/rng.hpp"
#include "spar/spar_fit.hpp"
#include "spar/types.hpp"

namespace spar::testing {

/// n rows of independent standard normals.
inline Matrix gaussian_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

/// Uniform directions on the unit sphere.
inline Matrix sphere_directions(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Matrix w = gaussian_rows(n, d, seed);
  for (Eigen::Index i = 0; i < n; ++i) w.row(i).normalize();
  return w;
}

/// Network whose outputs equal `values` for every input.
inline MlpParams constant_net(Eigen::Index d, std::vector<Head> heads, const std::vector<double>& values) {
  Architecture arch{d, {8, 8}, std::move(heads)};
  InitOptions init;
  init.output_weight_scale = 0.0;
  for (double v : values) init.head_output_init.emplace_back(v);
  return mlp_init(arch, 1, init);
}

/// Model with constant threshold u and constant GPD(sigma, xi), identity
/// marginal transform, `n_angles` uniform stored angles and body points
/// spread uniformly in radius inside the threshold ball.
inline SparModel constant_model(Eigen::Index d, double u, GpdParams p, double alpha = 0.15,
                                Eigen::Index n_angles = 2000, Eigen::Index n_body = 5000,
                                Reparam reparam = Reparam::orthogonal, std::uint64_t seed = 11) {
  MlpParams thr = constant_net(d, {Head::exponential}, {u});
  MlpParams gpd = constant_net(d, {Head::exponential, Head::scaled_tangent}, {scale_output_for(p, reparam), p.xi});
  Matrix angles = sphere_directions(n_angles, d, seed);
  Matrix body = sphere_directions(n_body, d, seed + 1);
  Rng rng(seed + 2);
  for (Eigen::Index i = 0; i < n_body; ++i) body.row(i) *= 0.98 * u * rng.uniform_open();
  return SparModel(MarginalTransform::unit(d), std::move(thr), std::move(gpd), alpha, reparam, std::move(angles),
                   std::move(body));
}

/// Lightweight schedules for tests that only need a working fit.
inline SparConfig quick_config(std::uint64_t seed, double alpha = 0.15) {
  SparConfig cfg;
  cfg.alpha = alpha;
  cfg.seed = seed;
  cfg.threshold_hidden = {16, 16};
  cfg.gpd_hidden = {16, 16};
  return cfg;
}

}  // namespace spar::testing
