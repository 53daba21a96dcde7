#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "spar/diagnostics.hpp"
#include "spar/stats.hpp"
#include "test_support.hpp"

using namespace spar;
using spar::testing::constant_model;

namespace {

const GpdParams kTail{0.5, 0.15};
constexpr double kU = 1.5;

const SparModel& model() {
  static const SparModel m = constant_model(2, kU, kTail);
  return m;
}

// P(X > a, Y > a) for a standard bivariate normal with correlation rho,
// by Simpson's rule over x.
double bvn_upper_orthant(double a, double rho) {
  const double s = std::sqrt(1.0 - rho * rho);
  const int n = 20000;
  const double hi = 9.0, h = (hi - a) / n;
  auto f = [&](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi) * (1.0 - stats::normal_cdf((a - rho * x) / s)); };
  double acc = f(a) + f(hi);
  for (int k = 1; k < n; ++k) acc += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return acc * h / 3.0;
}

std::vector<double> column(const Matrix& m, Eigen::Index j) {
  return {m.col(j).data(), m.col(j).data() + m.rows()};
}

}  // namespace

TEST(GpdQq, PlottingPositionsClosedForm) {
  const auto q = exponential_plotting_positions(4);
  ASSERT_EQ(q.size(), 4u);
  for (int k = 1; k <= 4; ++k) EXPECT_DOUBLE_EQ(q[k - 1], -std::log(1.0 - k / 5.0));
}

TEST(GpdQq, ResidualOfAHandPlacedPoint) {
  Matrix x(1, 2);
  const double y = 0.8;
  x << (kU + y) / std::sqrt(2.0), (kU + y) / std::sqrt(2.0);
  const auto e = gpd_exponential_residuals(model(), to_polar(x));
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NEAR(e[0], std::log1p(kTail.xi * y / kTail.sigma) / kTail.xi, 1e-12);
}

TEST(GpdQq, ResidualsOfModelDrawsAreStandardExponential) {
  Rng rng(1);
  const Matrix x = simulate_tail(model(), 20000, rng);
  const auto e = gpd_exponential_residuals(model(), to_polar(x));
  ASSERT_EQ(e.size(), 20000u);
  EXPECT_GT(stats::ks_pvalue(stats::ks_statistic(e, stats::std_exponential_cdf), e.size()), 0.01);
}

TEST(GpdQq, SortedAndSized) {
  Rng rng(2);
  Matrix x(600, 2);
  x.topRows(300) = simulate_tail(model(), 300, rng);
  x.bottomRows(300) = sample_body(model(), 300, rng);
  const QqData q = gpd_qq(model(), to_polar(x));
  EXPECT_EQ(q.empirical.size(), 300u);
  EXPECT_EQ(q.model.size(), 300u);
  EXPECT_TRUE(std::is_sorted(q.empirical.begin(), q.empirical.end()));
  EXPECT_TRUE(std::is_sorted(q.model.begin(), q.model.end()));
  EXPECT_THROW(gpd_qq(model(), to_polar(x.topRows(19))), DataError);
}

TEST(Chi, PseudoUniformsUseAverageRanks) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  const auto u = pseudo_uniforms(v);
  EXPECT_DOUBLE_EQ(u[0], 3.5 / 5.0);
  EXPECT_DOUBLE_EQ(u[1], 1.0 / 5.0);
  EXPECT_DOUBLE_EQ(u[2], 3.5 / 5.0);
  EXPECT_DOUBLE_EQ(u[3], 2.0 / 5.0);
}

TEST(Chi, ComonotoneAndCountermonotone) {
  std::vector<double> x(1000), y(1000), z(1000);
  for (std::size_t t = 0; t < x.size(); ++t) {
    x[t] = static_cast<double>(t);
    y[t] = std::exp(0.01 * static_cast<double>(t));
    z[t] = -x[t];
  }
  const ChiCurve co = chi_curve(x, y), counter = chi_curve(x, z);
  for (std::size_t k = 0; k < co.u_grid.size(); ++k) {
    EXPECT_DOUBLE_EQ(co.chi[k], 1.0);
    EXPECT_DOUBLE_EQ(counter.chi[k], 0.0);
  }
}

TEST(Chi, GaussianPairMatchesOrthantIntegral) {
  const double rho = 0.5;
  const std::size_t n = 200000;
  Rng rng(3);
  std::vector<double> x(n), y(n);
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = rng.normal();
    y[t] = rho * x[t] + std::sqrt(1.0 - rho * rho) * rng.normal();
  }
  const std::vector<double> grid{0.8, 0.9, 0.95};
  const ChiCurve c = chi_curve(x, y, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double u = grid[k];
    const double truth = bvn_upper_orthant(stats::normal_quantile(u), rho) / (1.0 - u);
    const double se = std::sqrt(truth * (1.0 - truth) / (n * (1.0 - u)));
    EXPECT_NEAR(c.chi[k], truth, 4.0 * se) << "u = " << u;
  }
}

TEST(Chi, IndependencePullsTowardOneMinusU) {
  Rng rng(4);
  std::vector<double> x(100000), y(100000);
  for (std::size_t t = 0; t < x.size(); ++t) {
    x[t] = rng.normal();
    y[t] = rng.normal();
  }
  const ChiCurve c = chi_curve(x, y);
  for (std::size_t k = 0; k < c.u_grid.size(); ++k) {
    const double u = c.u_grid[k];
    EXPECT_NEAR(c.chi[k], 1.0 - u, 4.0 * std::sqrt((1.0 - u) * u / (1e5 * (1.0 - u))));
  }
}

TEST(Chi, LowerTailIsUpperTailOfNegation) {
  Rng rng(5);
  std::vector<double> x(500), y(500), nx(500), ny(500);
  for (std::size_t t = 0; t < x.size(); ++t) {
    x[t] = rng.normal();
    y[t] = x[t] + rng.normal();
    nx[t] = -x[t];
    ny[t] = -y[t];
  }
  EXPECT_EQ(chi_curve_lower(x, y).chi, chi_curve(nx, ny).chi);
  EXPECT_EQ(chi_curve_lower(x, y).side, Side::lower);
}

TEST(Chi, InputValidation) {
  const std::vector<double> small(99, 1.0), a(200, 0.0), b(201, 0.0);
  EXPECT_THROW(chi_curve(small, small), DataError);
  EXPECT_THROW(chi_curve(a, b), ShapeError);
  EXPECT_THROW(chi_curve(a, a, {0.9, 0.9}), DomainError);
  EXPECT_THROW(chi_curve(a, a, {0.5, 1.0}), DomainError);
  EXPECT_THROW(chi_curve(a, a, {}), DomainError);
}

TEST(Chi, EmptyConditioningSetIsUndefined) {
  // Heavy ties: every pseudo-uniform is 0.5, so none exceed 0.9.
  const std::vector<double> a(200, 1.0);
  const ChiCurve c = chi_curve(a, a, {0.4, 0.9});
  EXPECT_EQ(c.defined[0], 1);
  EXPECT_EQ(c.defined[1], 0);
  EXPECT_TRUE(std::isnan(c.chi[1]));
}

TEST(Chi, PairModesSelectRows) {
  Rng rng(6);
  Matrix centred(4000, 2);
  centred.topRows(1000) = simulate_tail(model(), 1000, rng);
  centred.bottomRows(3000) = sample_body(model(), 3000, rng);
  const Matrix raw = model().transform().inverse_rows(centred);
  const ChiCurve full = chi_pair(model(), raw, 0, 1, Side::upper, ChiMode::full);
  EXPECT_EQ(full.chi, chi_curve(column(raw, 0), column(raw, 1)).chi);
  const ChiCurve tail = chi_pair(model(), raw, 0, 1, Side::upper);
  const Matrix tr = model().transform().inverse_rows(centred.topRows(1000));
  EXPECT_EQ(tail.chi, chi_curve(column(tr, 0), column(tr, 1)).chi);
  EXPECT_THROW(chi_pair(model(), raw, 0, 0, Side::upper), DomainError);
}

TEST(MarginalQq, ModelAgainstItsOwnDraws) {
  Rng rng(7);
  const Matrix raw = model().transform().inverse_rows(simulate_tail(model(), 4000, rng));
  const ObservationMatrix obs(raw, {"a", "b"});
  const QqData q = marginal_qq_tail(model(), obs, 1, 400000, rng);
  EXPECT_EQ(q.label, "b");
  ASSERT_EQ(q.empirical.size(), 4000u);
  // Middle 90% of the plot lies near the diagonal.
  for (std::size_t k = 200; k < 3800; k += 100) EXPECT_NEAR(q.empirical[k], q.model[k], 0.1) << k;
  EXPECT_THROW(marginal_qq_tail(model(), obs, 2, 1000, rng), DomainError);
}

TEST(ReturnLevelCurve, ResolutionFlagsAndModelLevels) {
  Rng data_rng(8);
  Matrix centred(2000, 2);
  centred.topRows(300) = simulate_tail(model(), 300, data_rng);
  centred.bottomRows(1700) = sample_body(model(), 1700, data_rng);
  const ObservationMatrix obs(model().transform().inverse_rows(centred), {"a", "b"});
  const std::vector<double> periods{1.0, 10.0, 100.0};
  Rng a(9), b(9);
  const auto curves = return_level_curve(model(), obs, periods, Side::upper, 200000, a);
  const Matrix direct = return_levels_from_sample(combined_sample(model(), 200000, b), periods, Side::upper);
  ASSERT_EQ(curves.size(), 2u);
  // n / blocks_per_year = 38.3 years of weekly blocks.
  EXPECT_EQ(curves[0].empirical_resolved, (std::vector<char>{1, 1, 0}));
  EXPECT_TRUE(std::isnan(curves[0].empirical[2]));
  for (std::size_t k = 0; k < periods.size(); ++k) EXPECT_EQ(curves[1].model[k], direct(static_cast<Eigen::Index>(k), 1));
  EXPECT_THROW(return_level_curve(model(), obs, {10.0, 1.0}, Side::upper, 1000, a), DomainError);
}

TEST(DiagnosticCsv, LayoutAndRoundTrip) {
  QqData q{"s", {0.1, 1.0 / 3.0}, {0.2, std::numeric_limits<double>::quiet_NaN()}};
  std::ostringstream os;
  write_qq_csv(os, q);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "label,k,empirical,model");
  std::getline(in, line);
  EXPECT_EQ(line, "s,1,0.10000000000000001,0.20000000000000001");
  std::getline(in, line);
  EXPECT_EQ(std::stod(line.substr(4, line.rfind(',') - 4)), 1.0 / 3.0);
  EXPECT_EQ(line.substr(line.rfind(',') + 1), "NA");

  ChiCurve c{"a", "b", {0.9}, {std::numeric_limits<double>::quiet_NaN()}, {0}, Side::lower};
  std::ostringstream oc;
  write_chi_csv(oc, {c});
  EXPECT_EQ(oc.str(), "x,y,side,u,chi,defined\na,b,lower,0.90000000000000002,NA,0\n");
}
