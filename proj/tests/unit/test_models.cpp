#include <gtest/gtest.h>

#include <random>

#include <algorithm>

#include "clearner/datagen.hpp"
#include "clearner/models.hpp"

using namespace clearner;

namespace {

Matrix rows_to_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double auc(const Vector& score, const Vector& a) {
  double pairs = 0.0, wins = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    for (Index j = 0; j < a.size(); ++j)
      if (a[i] == 1.0 && a[j] == 0.0) {
        pairs += 1.0;
        wins += score[i] > score[j] ? 1.0 : score[i] == score[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

}  // namespace

TEST(Ols, InterceptOnlyIsMean) {
  const Vector y = vec({1.0, 4.0, 7.0, 2.0});
  const LinearModel m = fit_ols(Matrix(4, 0), y, std::nullopt, true);
  ASSERT_EQ(m.coef.size(), 1);
  EXPECT_NEAR(m.coef[0], 3.5, 1e-12);
}

TEST(Ols, MatchesFrozenNormalEquations) {
  // Normal-equation solution computed independently with numpy.
  const Matrix x = rows_to_matrix({{1.029, 1.642, 1.147},
                                   {-0.973, -1.393, 0.067},
                                   {0.861, 0.509, 1.81},
                                   {0.751, 0.64, -0.731},
                                   {-1.108, 1.484, 0.049},
                                   {0.812, -1.376, -0.436}});
  const Vector y = vec({-1.291, -0.776, 0.903, -1.481, -0.534, 0.164});
  const LinearModel m = fit_ols(x, y, std::nullopt, false);
  EXPECT_NEAR(m.coef[0], -0.09235286832360592, 1e-10);
  EXPECT_NEAR(m.coef[1], -0.3993474731801764, 1e-10);
  EXPECT_NEAR(m.coef[2], 0.4526818815503738, 1e-10);
}

TEST(Ols, WeightedMatchesGramSolve) {
  Rng rng(3);
  std::normal_distribution<double> normal;
  Matrix x(40, 3);
  Vector y(40), w(40);
  for (Index i = 0; i < 40; ++i) {
    for (Index j = 0; j < 3; ++j) x(i, j) = normal(rng);
    y[i] = normal(rng);
    w[i] = 0.1 + rng.uniform();
  }
  const LinearModel m = fit_ols(x, y, w, true);
  const Matrix d = design_matrix(x, true);
  const Vector oracle =
      (d.transpose() * w.asDiagonal() * d).ldlt().solve(d.transpose() * w.asDiagonal() * y);
  EXPECT_LT((m.coef - oracle).lpNorm<Eigen::Infinity>(), 1e-10);
  // Residual orthogonality.
  const Vector r = y - m.predict(x);
  EXPECT_LT((d.transpose() * w.asDiagonal() * r).lpNorm<Eigen::Infinity>(), 1e-8 * y.norm());
}

TEST(Ols, ProjectionIdempotence) {
  KsConfig cfg;
  cfg.n = 100;
  const Dataset d = gen_kang_schafer(cfg);
  const LinearModel m = fit_ols(d.x, d.y, std::nullopt, true);
  const LinearModel again = fit_ols(d.x, m.predict(d.x), std::nullopt, true);
  EXPECT_LT((m.coef - again.coef).lpNorm<Eigen::Infinity>(), 1e-10 * m.coef.lpNorm<Eigen::Infinity>());
}

TEST(Ols, RankDeficientReportsCondition) {
  Matrix x(5, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10;
  try {
    fit_ols(x, Vector::Ones(5), std::nullopt, false);
    FAIL();
  } catch (const SingularSystem& e) {
    EXPECT_GT(e.condition(), 1e10);
  }
}

TEST(Ols, KangSchaferCorrectCovariatesHighR2) {
  KsConfig cfg;
  cfg.n = 200;
  cfg.seed = 2;
  cfg.misspecified = false;
  const Dataset d = gen_kang_schafer(cfg);
  RowList treated;
  for (Index i = 0; i < d.n(); ++i)
    if (d.a[i] == 1.0) treated.push_back(i);
  const Matrix x = take_rows(d.x, treated);
  const Vector y = take(d.y, treated);
  const LinearModel m = fit_ols(x, y);
  const double ss_res = (y - m.predict(x)).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  EXPECT_GT(1.0 - ss_res / ss_tot, 0.97);
}

TEST(Logistic, BalancedZeroCovariates) {
  const Matrix x = Matrix::Zero(6, 1);
  const Vector a = vec({0, 1, 0, 1, 0, 1});
  // The zero column is not identifiable; the intercept alone carries the fit.
  const LogisticModel m = fit_logistic(Matrix(6, 0), a, true);
  EXPECT_NEAR(m.coef[0], 0.0, 1e-10);
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(m.predict(Matrix(6, 0))[i], 0.5, 1e-10);
  (void)x;
}

TEST(Logistic, TwoPointLassoMatchesGridOracle) {
  const Matrix x = rows_to_matrix({{-1.0}, {1.0}});
  const Vector a = vec({0.0, 1.0});
  for (double l1 : {1.0, 0.5, 0.2}) {
    const LogisticModel m = fit_logistic(x, a, false, l1);
    // Dense grid over the single coefficient.
    double best = 0.0, best_f = std::numeric_limits<double>::infinity();
    for (int k = -600000; k <= 600000; ++k) {
      const double t = k * 1e-5;
      const double f = 2.0 * std::log1p(std::exp(-t)) + l1 * std::abs(t);
      if (f < best_f) {
        best_f = f;
        best = t;
      }
    }
    EXPECT_NEAR(m.coef[0], best, 1e-4) << "l1=" << l1;
  }
  EXPECT_NEAR(fit_logistic(x, a, false, 1.0).coef[0], 0.0, 1e-6);
  EXPECT_NEAR(fit_logistic(x, a, false, 0.5).coef[0], std::log(3.0), 1e-6);
}

TEST(Logistic, LassoMatchesConvexSolver) {
  // Oracle from an interior-point conic solver on the same penalised objective.
  const Matrix x = rows_to_matrix(
      {{0.145, 1.228},  {-0.543, -0.478}, {0.885, -0.106}, {0.361, -0.729}, {0.023, 0.432},
       {-1.327, -0.695}, {0.423, 2.249},  {0.462, -0.059}, {-0.845, 0.392}, {-2.501, -0.05},
       {-0.33, -0.519},  {2.32, -2.474},  {-0.022, 0.069}, {0.467, -1.602}, {-0.467, -1.495},
       {-0.128, 0.196},  {0.164, -0.198}, {0.186, 0.177},  {0.405, 0.025},  {-1.783, -0.815},
       {0.346, -0.91},   {-0.798, 0.113}, {-0.046, 0.894}, {0.512, -0.435}, {0.114, -2.859},
       {-0.797, -0.147}, {-2.387, -0.322}, {0.252, 1.035}, {0.403, 1.884},  {1.528, -1.634}});
  const Vector a = vec({1, 0, 1, 1, 1, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0,
                        0, 1, 1, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 1});
  const LogisticModel m = fit_logistic(x, a, true, 2.0);
  EXPECT_NEAR(m.coef[0], -0.10749267429822823, 1e-6);
  EXPECT_NEAR(m.coef[1], 1.5975711746684511, 1e-6);
  EXPECT_NEAR(m.coef[2], 0.0, 1e-8);
}

TEST(Logistic, NewtonStationary) {
  KsConfig cfg;
  cfg.n = 200;
  const Dataset d = gen_kang_schafer(cfg);
  const LogisticModel m = fit_logistic(d.x, d.a, false);
  const Vector g = d.x.transpose() * (m.predict(d.x) - d.a) / 200.0;
  EXPECT_LT(g.lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_TRUE(m.diagnostics.converged);
}

TEST(Logistic, KangSchaferAucNear075) {
  double total = 0.0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    KsConfig cfg;
    cfg.n = 200;
    cfg.seed = s;
    const Dataset d = gen_kang_schafer(cfg);
    total += auc(fit_logistic(d.x, d.a, false).predict(d.x), d.a);
  }
  EXPECT_NEAR(total / 20, 0.75, 0.05);
}

TEST(Logistic, Monotone) {
  const Matrix x = rows_to_matrix({{-2}, {-1}, {0}, {0.5}, {1}, {2}});
  const Vector a = vec({0, 0, 1, 0, 1, 1});
  const LogisticModel m = fit_logistic(x, a, true);
  const Vector p = m.predict(rows_to_matrix({{-1}, {0}, {1}}));
  EXPECT_LT(p[0], p[1]);
  EXPECT_LT(p[1], p[2]);
}

TEST(Logistic, SeparationDetected) {
  const Matrix x = rows_to_matrix({{-2}, {-1}, {1}, {2}});
  const Vector a = vec({0, 0, 1, 1});
  EXPECT_THROW(fit_logistic(x, a, false), SeparationError);
  EXPECT_NO_THROW(fit_logistic(x, a, false, 0.5));
}

TEST(Logistic, SingleClassRejected) {
  EXPECT_THROW(fit_logistic(Matrix::Ones(3, 1), Vector::Ones(3), false), InvalidArgument);
}

TEST(Scaling, Formula) {
  auto [s0, t0] = scale_outcomes(vec({0.0, 10.0}), 0.0);
  EXPECT_DOUBLE_EQ(t0[0], 0.0);
  EXPECT_DOUBLE_EQ(t0[1], 1.0);
  auto [s1, t1] = scale_outcomes(vec({0.0, 10.0}), 0.1);
  EXPECT_DOUBLE_EQ(s1.y_min, 0.0);
  EXPECT_DOUBLE_EQ(s1.y_max, 11.0);
  EXPECT_DOUBLE_EQ(t1[1], 10.0 / 11.0);
  auto [s2, t2] = scale_outcomes(vec({100.0, 300.0}), 0.1);
  EXPECT_DOUBLE_EQ(s2.y_min, 90.0);
  EXPECT_DOUBLE_EQ(s2.y_max, 330.0);
}

TEST(Scaling, RoundTrip) {
  Rng rng(5);
  std::normal_distribution<double> normal(200.0, 50.0);
  Vector y(100);
  for (auto& v : y) v = normal(rng);
  auto [s, t] = scale_outcomes(y, 0.1);
  EXPECT_GE(t.minCoeff(), 0.0);
  EXPECT_LE(t.maxCoeff(), 1.0);
  EXPECT_LT((s.unscale(t) - y).lpNorm<Eigen::Infinity>(), 1e-12 * 400);
}

TEST(Scaling, ConstantRejected) {
  EXPECT_THROW(scale_outcomes(vec({0.0, 0.0}), 0.1), InvalidArgument);
}

TEST(FractionalLogistic, HalfTargetsGiveZero) {
  const LogisticModel m = fit_fractional_logistic(Matrix(4, 0), Vector::Constant(4, 0.5),
                                                  Vector::Ones(4), true);
  EXPECT_NEAR(m.coef[0], 0.0, 1e-12);
}

TEST(FractionalLogistic, BinaryTargetsMatchLogistic) {
  KsConfig cfg;
  cfg.n = 150;
  cfg.misspecified = false;
  const Dataset d = gen_kang_schafer(cfg);
  const LogisticModel a = fit_logistic(d.x, d.a, true);
  const LogisticModel b = fit_fractional_logistic(d.x, d.a, Vector::Ones(d.n()), true);
  EXPECT_LT((a.coef - b.coef).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(FractionalLogistic, MatchesFrozenOptimizerOracle) {
  // Quasi-likelihood optimum from scipy (BFGS, cross-checked with Nelder-Mead).
  const Matrix x = rows_to_matrix(
      {{-0.668, -0.252}, {-0.222, 0.418}, {-0.431, 0.272}, {0.057, 0.425},  {0.225, 1.658},
       {-0.664, 1.199},  {-0.403, -0.958}, {1.211, -0.44}, {-0.388, -1.389}, {-2.098, 0.634},
       {-1.165, 0.778},  {1.848, -0.115}, {-1.127, 0.394}, {0.762, -0.262}, {0.017, 1.335},
       {1.265, 0.71},    {-0.866, -0.054}, {0.603, -0.212}, {-0.61, -0.765}, {-0.632, -0.672}});
  const Vector t = vec({0.519, 0.598, 0.042, 0.241, 0.054, 0.008, 0.322, 0.407, 0.859, 0.013,
                        0.716, 0.457, 0.589, 0.146, 0.802, 0.379, 0.41, 0.566, 0.261, 0.436});
  const LogisticModel m = fit_fractional_logistic(x, t, Vector::Ones(20), true);
  EXPECT_NEAR(m.coef[0], -0.39368287597371876, 1e-6);
  EXPECT_NEAR(m.coef[1], 0.05880868805319885, 1e-6);
  EXPECT_NEAR(m.coef[2], -0.3500063829030245, 1e-6);
}

TEST(FractionalLogistic, RejectsOutOfRangeTargets) {
  EXPECT_THROW(fit_fractional_logistic(Matrix::Ones(2, 1), vec({0.5, 1.5}), Vector::Ones(2)),
               InvalidArgument);
}
