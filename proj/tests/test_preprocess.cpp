#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "spar/preprocess.hpp"
#include "spar/rng.hpp"

using namespace spar;

namespace {

Matrix random_points(Rng& rng, Eigen::Index n, Eigen::Index d, double scale = 1.0) {
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = scale * rng.normal() + (j % 2 ? 0.5 * rng.uniform() : 0.0);
  return m;
}

// Brute-force minimiser of the distance sum over a grid (2-d).
Vector grid_minimiser(const Matrix& pts, double lo, double hi, double step) {
  Vector best(2), y(2);
  double best_val = std::numeric_limits<double>::infinity();
  for (double a = lo; a <= hi; a += step)
    for (double b = lo; b <= hi; b += step) {
      y << a, b;
      const double v = distance_sum(pts, y);
      if (v < best_val) {
        best_val = v;
        best = y;
      }
    }
  return best;
}

}  // namespace

TEST(FitTransform, ConstantColumnIsDegenerate) {
  Matrix v(5, 1);
  v << 2.0, 2.0, 2.0, 2.0, 2.0;
  EXPECT_THROW(fit_transform(ObservationMatrix(v)), DegenerateMarginError);
}

TEST(FitTransform, NonPositiveDataRejected) {
  Matrix v(4, 2);
  v << 1, 2, 3, 4, 0, 1, 2, 5;
  EXPECT_THROW(ObservationMatrix{v}, NonPositiveDataError);
}

TEST(FitTransform, TooFewRows) {
  Matrix v(2, 2);
  v << 1, 2, 3, 4;
  EXPECT_THROW(fit_transform(ObservationMatrix(v)), InsufficientDataError);
}

TEST(FitTransform, ScaleIsUnbiasedSdAndCentreIsMedianOfTransformed) {
  Rng rng(3);
  Matrix v(200, 2);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    v(i, 0) = std::exp(rng.normal());
    v(i, 1) = 5.0 * std::exp(0.5 * rng.normal());
  }
  const MarginalTransform t = fit_transform(ObservationMatrix(v));
  for (Eigen::Index j = 0; j < 2; ++j) {
    const double m = v.col(j).mean();
    const double sd = std::sqrt((v.col(j).array() - m).square().sum() / 199.0);
    EXPECT_NEAR(t.nu()[j], sd, 1e-12);
  }
  const Matrix star = MarginalTransform(t.nu(), Vector::Zero(2)).forward_rows(v);
  EXPECT_LT((t.star_centre() - geometric_median(star).point).norm(), 1e-12);
}

TEST(Forward, ClosedFormValues) {
  const MarginalTransform unit = MarginalTransform::unit(1);
  const double ln2 = std::log(2.0);
  EXPECT_NEAR(unit.forward_margin(0, ln2), 0.0, 1e-15);
  EXPECT_NEAR(unit.forward_margin(0, 100.0), 100.0, 1e-13);
  const MarginalTransform shifted(Vector::Constant(1, 3.0), Vector::Constant(1, 1.0));
  EXPECT_NEAR(shifted.forward_margin(0, 3.0 * std::log1p(std::exp(1.0))), 0.0, 1e-14);
  EXPECT_THROW((void)unit.forward_margin(0, 0.0), NonPositiveDataError);
  EXPECT_THROW((void)unit.forward_margin(0, -1.0), NonPositiveDataError);
}

TEST(Forward, OverflowGuardMatchesExactFormula) {
  for (double z = 20.0; z < 40.0; z += 0.37) {
    const double exact = std::log(std::expm1(z));
    EXPECT_NEAR(log_expm1(z), exact, 1e-13 * z);
    EXPECT_NEAR(softplus(z), std::log1p(std::exp(z)), 1e-13 * z);
  }
  EXPECT_TRUE(std::isfinite(log_expm1(1e6)));
  EXPECT_TRUE(std::isfinite(softplus(1e6)));
}

TEST(Forward, StrictlyIncreasing) {
  const MarginalTransform t(Vector::Constant(1, 2.5), Vector::Constant(1, -0.3));
  double prev = -std::numeric_limits<double>::infinity();
  for (double x = 1e-6; x < 500.0; x *= 1.1) {
    const double y = t.forward_margin(0, x);
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(Inverse, ClosedFormValues) {
  const MarginalTransform unit = MarginalTransform::unit(1);
  EXPECT_DOUBLE_EQ(unit.inverse_margin(0, 0.0), std::log(2.0));
  const double tiny = unit.inverse_margin(0, -50.0);
  EXPECT_GT(tiny, 0.0);
  EXPECT_NEAR(tiny, std::exp(-50.0), 1e-30);
}

TEST(Inverse, RoundTripOnRandomPositiveVectors) {
  Rng rng(17);
  const MarginalTransform t((Vector(3) << 0.7, 12.0, 300.0).finished(), (Vector(3) << 0.1, -2.0, 0.5).finished());
  for (int k = 0; k < 10000; ++k) {
    Vector raw(3);
    for (int j = 0; j < 3; ++j) raw[j] = std::exp(6.0 * rng.normal());
    const Vector back = t.inverse(t.forward(raw));
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(back[j], raw[j], 1e-9 * raw[j]);
  }
}

TEST(FitTransform, RoundTripOnLognormalSet) {
  Rng rng(5);
  Matrix v(10000, 2);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double z = rng.normal();
    v(i, 0) = std::exp(z);
    v(i, 1) = 20.0 * std::exp(0.6 * z + 0.8 * rng.normal());
  }
  const MarginalTransform t = fit_transform(ObservationMatrix(v));
  const Matrix back = t.inverse_rows(t.forward_rows(v));
  EXPECT_LT(((back - v).array() / v.array()).abs().maxCoeff(), 1e-9);
}

TEST(GeometricMedian, SquareCentre) {
  Matrix sq(4, 2);
  sq << 0, 0, 2, 0, 2, 2, 0, 2;
  const auto g = geometric_median(sq);
  EXPECT_TRUE(g.converged);
  EXPECT_NEAR(g.point[0], 1.0, 1e-9);
  EXPECT_NEAR(g.point[1], 1.0, 1e-9);
}

TEST(GeometricMedian, CollinearReducesToMedian) {
  Matrix pts(3, 2);
  pts << 0, 0, 1, 0, 10, 0;
  const auto g = geometric_median(pts);
  EXPECT_NEAR(g.point[0], 1.0, 1e-6);
  EXPECT_NEAR(g.point[1], 0.0, 1e-12);
}

TEST(GeometricMedian, TriangleMatchesGridOracle) {
  Matrix pts(3, 2);
  pts << 0, 0, 0, 1, 1, 0;
  const Vector oracle = grid_minimiser(pts, 0.15, 0.27, 1e-4);
  const auto g = geometric_median(pts);
  EXPECT_NEAR(g.point[0], oracle[0], 2e-4);
  EXPECT_NEAR(g.point[1], oracle[1], 2e-4);
  EXPECT_NEAR(g.point[0], 0.2113, 1e-4);
}

TEST(GeometricMedian, NotWorseThanDataPointsOrMean) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = trial % 2 ? 4 : 2;
    const Eigen::Index n = trial % 3 ? 10 : 1000;
    const Matrix pts = random_points(rng, n, d, 1.0 + trial % 5);
    const auto g = geometric_median(pts);
    const double obj = distance_sum(pts, g.point);
    const Vector mean = pts.colwise().mean().transpose();
    EXPECT_LE(obj, distance_sum(pts, mean) + 1e-9);
    for (Eigen::Index t = 0; t < n; ++t) EXPECT_LE(obj, distance_sum(pts, pts.row(t).transpose()) + 1e-9);
    for (std::size_t k = 1; k < g.objective_trace.size(); ++k)
      EXPECT_LE(g.objective_trace[k], g.objective_trace[k - 1] * (1.0 + 1e-12));
  }
}

TEST(GeometricMedian, MaxIterExhaustionIsAWarning) {
  Rng rng(1);
  const Matrix pts = random_points(rng, 50, 3);
  WeiszfeldOptions opt;
  opt.max_iter = 2;
  opt.tol = 1e-300;
  const auto g = geometric_median(pts, opt);
  EXPECT_FALSE(g.converged);
  EXPECT_EQ(g.iterations, 2u);
  EXPECT_EQ(g.point.size(), 3);
}

TEST(Polar, ClosedFormValues) {
  Matrix x(2, 4);
  x << 3, 4, 0, 0, -1, 0, 0, 0;
  Matrix x2 = x.leftCols(2);
  x2.row(1) << -1, 0;
  const PolarSample p = to_polar(x2);
  EXPECT_DOUBLE_EQ(p.r[0], 5.0);
  EXPECT_DOUBLE_EQ(p.w(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(p.w(0, 1), 0.8);
  const PolarSample q = to_polar(x.bottomRows(1));
  EXPECT_DOUBLE_EQ(q.r[0], 1.0);
  EXPECT_DOUBLE_EQ(q.w(0, 0), -1.0);

  PolarSample single{Vector::Constant(1, 5.0), (Matrix(1, 2) << 0.6, 0.8).finished()};
  const Matrix back = from_polar(single);
  EXPECT_NEAR(back(0, 0), 3.0, 1e-15);
  EXPECT_NEAR(back(0, 1), 4.0, 1e-15);
}

TEST(Polar, ZeroRowRejected) {
  Matrix x = Matrix::Zero(2, 3);
  x(0, 0) = 1.0;
  EXPECT_THROW(to_polar(x), DegeneratePointError);
}

TEST(Polar, RoundTripAndInvariants) {
  Rng rng(8);
  for (const Eigen::Index d : {2, 3, 4}) {
    const Matrix x = random_points(rng, 1000, d, 3.0);
    const PolarSample p = to_polar(x);
    EXPECT_TRUE((p.r.array() > 0.0).all());
    for (Eigen::Index t = 0; t < p.size(); ++t) EXPECT_NEAR(p.w.row(t).norm(), 1.0, 1e-12);
    EXPECT_LT((from_polar(p) - x).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff()));
  }
}
