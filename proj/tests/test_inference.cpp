#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "spar/inference.hpp"
#include "spar/stats.hpp"
#include "test_support.hpp"

using namespace spar;
using spar::testing::constant_model;
using spar::testing::gaussian_rows;
using spar::testing::quick_config;

namespace {

struct FixedUniform {
  double value;
  double uniform() const { return value; }
};

const GpdParams kTail{0.6, 0.1};
constexpr double kU = 2.0;

const SparModel& const_model() {
  static const SparModel m = constant_model(2, kU, kTail);
  return m;
}

// P(x_i > h) under a constant model with an empty body beyond h: the tail
// term averaged exactly over the stored angles.
double const_model_upper(const SparModel& m, Eigen::Index i, double h) {
  const Matrix& w = m.exceedance_angles();
  double s = 0.0;
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    if (w(k, i) <= 0.0) continue;
    const double r_star = h / w(k, i);
    s += r_star <= kU ? 1.0 : gpd_sf(r_star - kU, kTail);
  }
  return m.alpha() * s / static_cast<double>(w.rows());
}

}  // namespace

TEST(SimulateTail, EveryDrawLiesInTheJointTail) {
  Rng rng(1);
  const Matrix x = simulate_tail(const_model(), 1'000'000, rng);
  const std::vector<bool> in = const_model().in_tail(x);
  EXPECT_EQ(std::count(in.begin(), in.end(), true), 1'000'000);
}

TEST(SimulateTail, FittedModelDrawsLieInTheJointTail) {
  const SparModel m = fit_centred(gaussian_rows(10000, 2, 4), MarginalTransform::unit(2), quick_config(4));
  Rng rng(2);
  const Matrix x = simulate_tail(m, 1'000'000, rng);
  const std::vector<bool> in = m.in_tail(x);
  EXPECT_EQ(std::count(in.begin(), in.end(), true), 1'000'000);
}

TEST(SimulateTail, AnglesComeFromTheStoredSet) {
  const SparModel base = constant_model(3, kU, kTail, 0.15, 5);
  Rng rng(3);
  const Matrix x = simulate_tail(base, 5000, rng);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const Vector w = x.row(t).transpose() / x.row(t).norm();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < 5; ++k) best = std::min(best, (base.exceedance_angles().row(k).transpose() - w).norm());
    EXPECT_LT(best, 1e-12);
  }
}

TEST(SimulateTail, RadialExcessesFollowTheGpd) {
  Rng rng(4);
  const Matrix x = simulate_tail(const_model(), 100000, rng);
  std::vector<double> y(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index t = 0; t < x.rows(); ++t) y[static_cast<std::size_t>(t)] = x.row(t).norm() - kU;
  const double d = stats::ks_statistic(y, [](double v) { return gpd_cdf(std::max(v, 0.0), kTail); });
  EXPECT_GT(stats::ks_pvalue(d, y.size()), 0.01);
}

TEST(SimulateTail, IndependentOfWorkerCount) {
  Rng a(9), b(9);
  SimulationOptions one, three;
  one.chunk = three.chunk = 1000;
  three.workers = 3;
  EXPECT_TRUE(simulate_tail(const_model(), 10000, a, one) == simulate_tail(const_model(), 10000, b, three));
}

TEST(SampleBody, ForcedIndexAndMembership) {
  FixedUniform zero{0.0};
  const Matrix one = sample_body(const_model(), 1, zero);
  EXPECT_TRUE(one.row(0) == const_model().body_points().row(0));
  Rng rng(5);
  const Matrix b = sample_body(const_model(), 20000, rng);
  const std::vector<bool> in = const_model().in_tail(b);
  EXPECT_EQ(std::count(in.begin(), in.end(), true), 0);
}

TEST(SampleBody, MeanWithinThreeStandardErrors) {
  const Matrix& body = const_model().body_points();
  Rng rng(6);
  const std::size_t m = 200000;
  const Matrix b = sample_body(const_model(), m, rng);
  for (Eigen::Index i = 0; i < 2; ++i) {
    const Vector c = body.col(i);
    const double mu = c.mean();
    const double sd = std::sqrt((c.array() - mu).square().sum() / static_cast<double>(c.size()));
    EXPECT_NEAR(b.col(i).mean(), mu, 3.0 * sd / std::sqrt(static_cast<double>(m)));
  }
}

TEST(SampleBody, EmptyBodyIsAStateError) {
  const SparModel& c = const_model();
  SparModel m(c.transform(), c.threshold_net(), c.gpd_net(), c.alpha(), c.reparam(), c.exceedance_angles(),
              Matrix(0, 2));
  Rng rng(1);
  EXPECT_THROW(sample_body(m, 10, rng), StateError);
}

TEST(SimulateModel, TailShareIsAlphaAndBodyRowsAreStored) {
  const SparModel& m = const_model();
  Rng rng(6);
  const std::size_t n = 200000;
  const Matrix x = simulate_model(m, n, rng);
  ASSERT_EQ(x.rows(), static_cast<Eigen::Index>(n));
  const std::vector<bool> in = m.in_tail(x);
  const double share = static_cast<double>(std::count(in.begin(), in.end(), true)) / n;
  EXPECT_NEAR(share, m.alpha(), 4.0 * std::sqrt(m.alpha() * (1.0 - m.alpha()) / n));
  // Rows outside the tail are copies of stored body points.
  const Matrix& body = m.body_points();
  for (Eigen::Index k = 0; k < 200; ++k) {
    if (in[static_cast<std::size_t>(k)]) continue;
    bool found = false;
    for (Eigen::Index j = 0; j < body.rows() && !found; ++j) found = body.row(j) == x.row(k);
    EXPECT_TRUE(found) << "row " << k;
  }
  EXPECT_THROW(simulate_model(m, 0, rng), DomainError);
}

TEST(EstimateProbability, TrivialRegionsAreExact) {
  Rng rng(7);
  const TailSample s = make_tail_sample(const_model(), 50000, rng);
  EXPECT_EQ(estimate_on_sample(const_model(), RegionPredicate::joint_tail(), s).probability, 0.15);
  EXPECT_EQ(estimate_on_sample(const_model(), RegionPredicate::everything(), s).probability, 1.0);
}

TEST(EstimateProbability, ComplementsSumToOne) {
  Rng rng(8);
  const TailSample s = make_tail_sample(const_model(), 50000, rng);
  for (const RegionPredicate& r :
       {RegionPredicate::marginal_above(0, 2.1, Scale::centred), RegionPredicate::sum_above(3.0),
        RegionPredicate::joint_below((Vector(2) << 0.5, 0.4).finished()), RegionPredicate::joint_tail()}) {
    const double p = estimate_on_sample(const_model(), r, s).probability;
    const double q = estimate_on_sample(const_model(), r.complement(), s).probability;
    EXPECT_NEAR(p + q, 1.0, 4.0 * std::numeric_limits<double>::epsilon()) << r.description();
  }
}

TEST(EstimateProbability, MarginalHalfSpaceMatchesExactTailAverage) {
  Rng rng(10);
  for (const double h : {2.5, 3.5}) {
    const auto rep = estimate_probability(const_model(), RegionPredicate::marginal_above(0, h, Scale::centred), 2'000'000, rng);
    const double truth = const_model_upper(const_model(), 0, h);
    EXPECT_EQ(rep.body_fraction, 0.0);
    EXPECT_NEAR(rep.probability, truth, 3.5 * rep.standard_error) << h;
  }
}

TEST(EstimateProbability, ReturnPeriodArithmetic) {
  Rng rng(11);
  const auto rep = estimate_probability(const_model(), RegionPredicate::marginal_above(0, 2.5, Scale::centred), 100000, rng);
  EXPECT_NEAR(rep.return_period_years * rep.probability * rep.blocks_per_year, 1.0, 1e-15);
  EXPECT_EQ(return_period_years(0.0, kBlocksPerYear), std::numeric_limits<double>::infinity());
  EXPECT_DOUBLE_EQ(kBlocksPerYear, 365.25 / 7.0);
}

TEST(EstimateProbability, SharedSampleMatchesSingleEstimates) {
  const std::vector<RegionPredicate> regions{RegionPredicate::marginal_above(0, 2.5, Scale::centred),
                                             RegionPredicate::marginal_below(1, -2.5, Scale::centred)};
  Rng a(12), b(12);
  const auto many = estimate_probabilities(const_model(), regions, 100000, a);
  const TailSample s = make_tail_sample(const_model(), 100000, b);
  for (std::size_t k = 0; k < regions.size(); ++k)
    EXPECT_EQ(many[k].probability, estimate_on_sample(const_model(), regions[k], s).probability);
}

TEST(QuantileSet, IsotropicConstantThreshold) {
  Rng rng(13);
  const Matrix probes = probe_angles(const_model(), 100000, rng);
  const QuantileSetBounds b = quantile_set_extremes(const_model(), probes);
  for (Eigen::Index i = 0; i < 2; ++i) {
    EXPECT_NEAR(b.upper[i], kU, 1e-3 * kU);
    EXPECT_NEAR(b.lower[i], -kU, 1e-3 * kU);
  }
}

TEST(QuantileSet, EnlargingProbesIsMonotone) {
  const SparModel m = fit_centred(gaussian_rows(8000, 2, 14), MarginalTransform::unit(2), quick_config(14));
  Rng rng(15);
  const Matrix big = probe_angles(m, 20000, rng);
  const Matrix small = big.topRows(m.exceedance_angles().rows() + 100);
  const auto bs = quantile_set_extremes(m, small), bb = quantile_set_extremes(m, big);
  EXPECT_TRUE((bb.upper.array() >= bs.upper.array()).all());
  EXPECT_TRUE((bb.lower.array() <= bs.lower.array()).all());

  // Dense-grid oracle on the circle.
  Matrix grid(10000, 2);
  for (Eigen::Index k = 0; k < grid.rows(); ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(grid.rows());
    grid.row(k) << std::cos(a), std::sin(a);
  }
  Rng rng2(16);
  const auto bg = quantile_set_extremes(m, grid), bp = quantile_set_extremes(m, probe_angles(m, 100000, rng2));
  for (Eigen::Index i = 0; i < 2; ++i) {
    EXPECT_NEAR(bp.upper[i], bg.upper[i], 1e-2 * std::abs(bg.upper[i]));
    EXPECT_NEAR(bp.lower[i], bg.lower[i], 1e-2 * std::abs(bg.lower[i]));
  }
}

TEST(QuantileSet, CertifiedRegionsSkipTheBodyWithoutChangingTheAnswer) {
  Rng rng(17);
  const QuantileSetBounds b = quantile_set_extremes(const_model(), probe_angles(const_model(), 100000, rng));
  const RegionPredicate far = RegionPredicate::marginal_above(0, 2.3, Scale::centred);
  const RegionPredicate near = RegionPredicate::marginal_above(0, 1.0, Scale::centred);
  EXPECT_TRUE(is_body_disjoint(far, b, const_model()));
  EXPECT_FALSE(is_body_disjoint(near, b, const_model()));
  EXPECT_FALSE(is_body_disjoint(far.complement(), b, const_model()));
  EXPECT_TRUE(is_body_disjoint(RegionPredicate::joint_tail(), b, const_model()));
  Rng s(18);
  const TailSample tail = make_tail_sample(const_model(), 100000, s);
  EstimateOptions with;
  with.bounds = b;
  const auto skipped = estimate_on_sample(const_model(), far, tail, with);
  const auto full = estimate_on_sample(const_model(), far, tail);
  EXPECT_TRUE(skipped.body_skipped);
  EXPECT_EQ(skipped.m_body, 0u);
  EXPECT_EQ(skipped.probability, full.probability);
}

TEST(ReturnLevel, MatchesConstantModelOracle) {
  // Unit transform: raw = softplus(centred), so the raw level maps back exactly.
  Rng rng(19);
  const Vector lv = marginal_return_level(const_model(), 10.0, Side::upper, 500000, rng);
  const double p = 1.0 / (10.0 * kBlocksPerYear);
  for (Eigen::Index i = 0; i < 2; ++i) {
    double lo = kU, hi = 50.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (const_model_upper(const_model(), i, mid) > p ? lo : hi) = mid;
    }
    const double truth = softplus(0.5 * (lo + hi));
    EXPECT_NEAR(lv[i], truth, 0.02 * truth) << "margin " << i;
  }
}

TEST(ReturnLevel, NondecreasingInPeriodAndOrderedAcrossSides) {
  Rng rng(20);
  const CombinedSample c = combined_sample(const_model(), 400000, rng);
  EXPECT_EQ(c.m_body, static_cast<std::size_t>(std::ceil(400000 / 0.85)));
  EXPECT_NEAR(c.weights.sum(), 1.0, 1e-9);
  const std::vector<double> periods{1.0 / kBlocksPerYear * 1.01, 1.0, 5.0, 10.0, 50.0};
  const Matrix up = return_levels_from_sample(c, periods, Side::upper);
  const Matrix dn = return_levels_from_sample(c, periods, Side::lower);
  for (Eigen::Index k = 1; k < up.rows(); ++k) {
    EXPECT_TRUE((up.row(k).array() >= up.row(k - 1).array()).all());
    EXPECT_TRUE((dn.row(k).array() <= dn.row(k - 1).array()).all());
  }
  EXPECT_TRUE(up.allFinite());
  EXPECT_TRUE((up.row(0).array() < up.row(3).array()).all());
}

TEST(ReturnLevel, UnresolvablePeriodNamesTheRequiredSampleSize) {
  Rng rng(21);
  try {
    (void)marginal_return_level(const_model(), 1e6, Side::upper, 1000, rng);
    FAIL() << "expected a resolution error";
  } catch (const ResolutionError& e) {
    EXPECT_NE(std::string(e.what()).find("need m_tail >="), std::string::npos);
  }
  EXPECT_THROW((void)marginal_return_level(const_model(), 0.5 / kBlocksPerYear, Side::upper, 1000, rng), ResolutionError);
}

TEST(JointAndSum, ProbabilitiesInRangeAndMonotone) {
  Rng rng(22);
  const auto up = joint_tail_probability(const_model(), 10.0, Side::upper, 200000, rng);
  EXPECT_GE(up.probability, 0.0);
  EXPECT_LE(up.probability, 1.0);
  Rng a(23), b(23);
  const double p1 = sum_tail_probability(const_model(), 4.0, Side::upper, 200000, a).probability;
  const double p2 = sum_tail_probability(const_model(), 4.5, Side::upper, 200000, b).probability;
  EXPECT_GE(p1, p2);
  Rng c(24);
  EXPECT_EQ(sum_tail_probability(const_model(), 0.0, Side::lower, 10000, c).probability, 0.0);
}

TEST(JointAndSum, IndependentMarginsAreSubResolution) {
  // Uniform angles in d = 4 put almost no tail mass in the joint upper box.
  const SparModel m = constant_model(4, kU, kTail);
  Rng rng(25);
  const auto rep = joint_tail_probability(m, 10.0, Side::upper, 100000, rng);
  EXPECT_TRUE(rep.sub_resolution);
  EXPECT_LT(rep.probability, 1e-4);
}

TEST(EventSet, UnconditionedAndConditioned) {
  Rng rng(26);
  const EventSet all = generate_event_set(const_model(), 2000, std::nullopt, rng);
  EXPECT_TRUE((all.raw.array() > 0.0).all());
  const std::vector<bool> in = const_model().in_tail(const_model().transform().forward_rows(all.raw));
  EXPECT_EQ(std::count(in.begin(), in.end(), true), 2000);

  const Vector levels = (Vector(2) << 1.5, 1.5).finished();
  const RegionPredicate box = RegionPredicate::joint_above(levels);
  const EventSet hits = generate_event_set(const_model(), 3000, box, rng);
  EXPECT_TRUE((hits.raw.array() > 1.5).all());
  Rng r2(27);
  const auto rep = estimate_probability(const_model(), box, 1'000'000, r2);
  const double expect = rep.tail_fraction;
  const double se = std::sqrt(expect * (1.0 - expect) / static_cast<double>(hits.trials));
  EXPECT_NEAR(hits.acceptance_rate(), expect, 3.0 * se + 3.0 * rep.standard_error / const_model().alpha());
  EXPECT_GT(rep.body_fraction, 0.0);
}

TEST(EventSet, InfeasibleRegion) {
  Rng rng(28);
  EventSetOptions opt;
  opt.min_trials = 100000;
  EXPECT_THROW(generate_event_set(const_model(), 10, RegionPredicate::marginal_above(0, 1e6), rng, opt),
               InfeasibleRegionError);
}

TEST(Region, ScalesAndDescriptions) {
  const SparModel& m = const_model();
  const Vector x = (Vector(2) << 0.0, 3.0).finished();  // raw = (ln 2, softplus 3)
  EXPECT_TRUE(RegionPredicate::marginal_above(1, 2.9, Scale::centred).contains_point(x, m));
  EXPECT_TRUE(RegionPredicate::marginal_above(1, 3.04, Scale::raw).contains_point(x, m));
  EXPECT_FALSE(RegionPredicate::marginal_above(1, 3.05, Scale::raw).contains_point(x, m));
  EXPECT_TRUE(RegionPredicate::sum_above(3.7).contains_point(x, m));
  EXPECT_FALSE(RegionPredicate::sum_above(3.8).contains_point(x, m));
  const auto r = RegionPredicate::sum_above(5.0);
  EXPECT_EQ(r.complement().description(), "not " + r.description());
  EXPECT_EQ(r.complement().complement().description(), r.description());
  EXPECT_THROW((void)RegionPredicate::marginal_above(2, 1.0).contains_point(x, m), DomainError);
  const auto custom = RegionPredicate::custom([](const Vector& v) { return v[0] < v[1]; }, Scale::centred, "x0 < x1");
  EXPECT_TRUE(custom.contains_point(x, m));
}
