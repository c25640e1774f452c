#include <gtest/gtest.h>

#include <random>

#include "clearner/datagen.hpp"
#include "clearner/estimators.hpp"
#include "clearner/mlp.hpp"

using namespace clearner;

namespace {

// Straight re-evaluation of the network, written independently of mlp_forward.
double reference_forward(const MLPParams& p, const Eigen::RowVectorXd& x) {
  std::vector<double> h(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const Layer& layer = p.layers[l];
    std::vector<double> next(static_cast<std::size_t>(layer.w.rows()));
    for (Index o = 0; o < layer.w.rows(); ++o) {
      double z = layer.b[o];
      for (Index i = 0; i < layer.w.cols(); ++i) z += layer.w(o, i) * h[static_cast<std::size_t>(i)];
      if (l + 1 < p.layers.size())
        z = p.activation == Activation::tanh ? std::tanh(z) : std::log1p(std::exp(z));
      next[static_cast<std::size_t>(o)] = z;
    }
    h = next;
  }
  return h[0];
}

struct Problem {
  BoostSample batch;
  ConstraintSet eval;
};

Problem random_problem(std::uint64_t seed, Index d) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Problem p;
  p.batch.x.resize(8, d);
  p.batch.y.resize(8);
  for (Index i = 0; i < 8; ++i) {
    for (Index j = 0; j < d; ++j) p.batch.x(i, j) = normal(rng);
    p.batch.y[i] = normal(rng);
  }
  const Index n = 15;
  p.eval.x.resize(n, d);
  p.eval.a.resize(n);
  p.eval.y.resize(n);
  p.eval.pi_hat.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) p.eval.x(i, j) = normal(rng);
    p.eval.a[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    p.eval.y[i] = normal(rng);
    p.eval.pi_hat[i] = 0.2 + 0.7 * rng.uniform();
  }
  p.eval.a[0] = 1.0;
  return p;
}

MLPParams randomised(MLPParams p, std::uint64_t seed) {
  Rng rng(seed, 1);
  std::normal_distribution<double> normal(0.0, 0.5);
  Vector flat = p.flatten();
  for (auto& v : flat) v = normal(rng);
  p.unflatten(flat);
  return p;
}

}  // namespace

TEST(MlpForward, ZeroWeightsGiveBias) {
  MLPParams p = MLPParams::init({3, 4, 1}, Activation::tanh, 1);
  p.unflatten(Vector::Zero(p.parameter_count()));
  p.theta_bias() = 2.5;
  EXPECT_DOUBLE_EQ(mlp_forward(p, Eigen::RowVectorXd(Eigen::RowVectorXd::Random(3))), 2.5);
}

TEST(MlpForward, SingleLinearLayerIsDotProduct) {
  MLPParams p = MLPParams::init({3, 1}, Activation::tanh, 2);
  Eigen::RowVectorXd x(3);
  x << 0.5, -1.0, 2.0;
  EXPECT_NEAR(mlp_forward(p, x), p.layers[0].w.row(0).dot(x) + p.theta_bias(), 1e-15);
}

TEST(MlpForward, MatchesReferenceEvaluation) {
  for (Activation act : {Activation::tanh, Activation::softplus}) {
    const MLPParams p = randomised(MLPParams::init({4, 6, 5, 1}, act, 3), 4);
    const Matrix x = Matrix::Random(10, 4);
    const Vector batch = mlp_forward(p, x);
    for (Index i = 0; i < 10; ++i) {
      EXPECT_NEAR(mlp_forward(p, Eigen::RowVectorXd(x.row(i))), reference_forward(p, x.row(i)), 1e-12);
      EXPECT_NEAR(batch[i], reference_forward(p, x.row(i)), 1e-12);
    }
  }
}

TEST(MlpForward, WidthMismatchRejected) {
  const MLPParams p = MLPParams::init({3, 4, 1}, Activation::tanh, 1);
  EXPECT_THROW(mlp_forward(p, Eigen::RowVectorXd(Eigen::RowVectorXd::Zero(2))), InvalidArgument);
}

TEST(MlpGradient, MatchesCentralDifferences) {
  for (Activation act : {Activation::tanh, Activation::softplus}) {
    for (double lambda : {0.0, 3.0}) {
      const Problem prob = random_problem(11, 3);
      const MLPParams p = randomised(MLPParams::init({3, 5, 4, 1}, act, 5), 6);
      const LossGrad lg = loss_and_grad(p, prob.batch, prob.eval, lambda);
      const Vector flat = p.flatten();
      const double h = 1e-5;
      double worst = 0.0;
      for (Index k = 0; k < flat.size(); ++k) {
        MLPParams plus = p, minus = p;
        Vector fp = flat, fm = flat;
        fp[k] += h;
        fm[k] -= h;
        plus.unflatten(fp);
        minus.unflatten(fm);
        const double fd = (loss_and_grad(plus, prob.batch, prob.eval, lambda).loss -
                           loss_and_grad(minus, prob.batch, prob.eval, lambda).loss) /
                          (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(lg.gradient[k]), 1e-6});
        worst = std::max(worst, std::abs(fd - lg.gradient[k]) / denom);
      }
      EXPECT_LT(worst, 1e-4) << "lambda=" << lambda;
    }
  }
}

TEST(MlpGradient, ZeroLambdaIsPlainMse) {
  const Problem prob = random_problem(12, 2);
  const MLPParams p = randomised(MLPParams::init({2, 4, 1}, Activation::tanh, 7), 8);
  const LossGrad with_eval = loss_and_grad(p, prob.batch, prob.eval, 0.0);
  const LossGrad without = loss_and_grad(p, prob.batch, ConstraintSet{}, 0.0);
  EXPECT_EQ(with_eval.gradient, without.gradient);
  EXPECT_DOUBLE_EQ(with_eval.penalty_term, 0.0);
}

TEST(MlpGradient, PenaltyVanishesAtFeasiblePoint) {
  const Problem prob = random_problem(13, 2);
  const MLPParams p =
      bias_shift(randomised(MLPParams::init({2, 4, 1}, Activation::tanh, 9), 10), prob.eval);
  const LossGrad a = loss_and_grad(p, prob.batch, prob.eval, 0.0);
  const LossGrad b = loss_and_grad(p, prob.batch, prob.eval, 50.0);
  EXPECT_LT((a.gradient - b.gradient).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(BiasShift, ZeroResidualNoShift) {
  const Problem prob = random_problem(14, 2);
  const MLPParams p =
      bias_shift(randomised(MLPParams::init({2, 3, 1}, Activation::tanh, 1), 2), prob.eval);
  double shift = 1.0;
  bias_shift(p, prob.eval, &shift);
  EXPECT_NEAR(shift, 0.0, 1e-12);
}

TEST(BiasShift, UnitPropensityIsMeanTreatedResidual) {
  Problem prob = random_problem(15, 2);
  prob.eval.pi_hat.setOnes();
  const MLPParams p = randomised(MLPParams::init({2, 3, 1}, Activation::tanh, 3), 4);
  const Vector f = mlp_forward(p, prob.eval.x);
  double expected = 0.0;
  for (Index i = 0; i < f.size(); ++i) expected += prob.eval.a[i] * (prob.eval.y[i] - f[i]);
  expected /= prob.eval.a.sum();
  double shift = 0.0;
  bias_shift(p, prob.eval, &shift);
  EXPECT_NEAR(shift, expected, 1e-12);
}

TEST(BiasShift, ResidualZeroAfterShift) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Problem prob = random_problem(100 + s, 3);
    const MLPParams p = randomised(MLPParams::init({3, 6, 1}, Activation::softplus, s), s);
    const MLPParams q = bias_shift(p, prob.eval);
    const double scale = (prob.eval.a.array() / prob.eval.pi_hat.array() *
                          prob.eval.y.array().abs()).mean();
    EXPECT_LT(std::abs(mlp_constraint(q, prob.eval)), 1e-10 * scale);
  }
}

TEST(BiasShift, NoTreatedRowsRejected) {
  Problem prob = random_problem(16, 2);
  prob.eval.a.setZero();
  EXPECT_THROW(bias_shift(MLPParams::init({2, 3, 1}, Activation::tanh, 1), prob.eval),
               InvalidArgument);
}

namespace {

Dataset ks(Index n, std::uint64_t seed) {
  KsConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return gen_kang_schafer(cfg);
}

}  // namespace

TEST(TrainMlp, VanishingStepsLeaveInitPlusShift) {
  const Dataset d = ks(100, 1);
  TrainConfig cfg;
  cfg.lr = 1e-14;
  cfg.epochs = 1;
  cfg.seed = 5;
  cfg.hidden = {4};
  const MlpTrainResult r = train_clearner_mlp(d, d, d, *d.true_pi, cfg);
  const MLPParams init = MLPParams::init({4, 4, 1}, cfg.activation, cfg.seed);
  Vector a = r.model.params.flatten(), b = init.flatten();
  a[a.size() - 1] = b[b.size() - 1] = 0.0;  // theta_bias is last
  EXPECT_LT((a - b).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_GT(std::abs(r.model.params.theta_bias() - init.theta_bias()), 0.0);
}

TEST(TrainMlp, ReturnedSnapshotSatisfiesConstraint) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Dataset train = ks(200, s), eval = ks(200, 100 + s);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.lambda = s % 2 ? 0.0 : 4.0;
    cfg.seed = s;
    const MlpTrainResult r = train_clearner_mlp(train, eval, eval, *eval.true_pi, cfg);
    const Vector mu = r.model.predict(eval.x);
    double scale = 0.0;
    for (Index i = 0; i < eval.n(); ++i)
      scale += eval.a[i] / (*eval.true_pi)[i] * std::abs(eval.y[i]);
    scale /= static_cast<double>(eval.n());
    EXPECT_LT(std::abs(constraint_residual(eval.a, eval.y, mu, *eval.true_pi)), 1e-10 * scale);
    EXPECT_GE(r.diagnostics.best_epoch, 1);
    EXPECT_DOUBLE_EQ(r.diagnostics.best_val_mse,
                     *std::min_element(r.diagnostics.val_mse.begin(), r.diagnostics.val_mse.end()));
  }
}

TEST(TrainMlp, SeedDeterminism) {
  const Dataset d = ks(120, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 77;
  const Vector a = train_clearner_mlp(d, d, d, *d.true_pi, cfg).model.predict(d.x);
  const Vector b = train_clearner_mlp(d, d, d, *d.true_pi, cfg).model.predict(d.x);
  EXPECT_EQ(a, b);
}

TEST(TrainMlp, InvalidConfigRejected) {
  const Dataset d = ks(50, 3);
  TrainConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(train_clearner_mlp(d, d, d, *d.true_pi, cfg), InvalidArgument);
}

TEST(SelectMlp, Rules) {
  std::vector<MlpTrainResult> runs(3);
  runs[0].diagnostics.best_val_mse = 1.00;
  runs[0].diagnostics.first_epoch_shift = 5.0;
  runs[1].diagnostics.best_val_mse = 1.05;
  runs[1].diagnostics.first_epoch_shift = 1.0;
  runs[2].diagnostics.best_val_mse = 2.00;
  runs[2].diagnostics.first_epoch_shift = 0.1;
  EXPECT_EQ(select_mlp(runs, MlpSelection::best_val_mse), 0u);
  EXPECT_EQ(select_mlp(runs, MlpSelection::min_first_shift), 1u);
}

TEST(TrainMlp, PlugInBeatsRawAipwInMostPairedReplications) {
  // Cross-fitted (K=2) C-Learner MLP versus AIPW with the logistic propensity.
  int wins = 0;
  const int reps = 50;
  for (int r = 1; r <= reps; ++r) {
    const Dataset d = ks(200, static_cast<std::uint64_t>(r));
    const FoldPlan plan = make_folds(d.n(), 2, static_cast<std::uint64_t>(r));
    RecipeSettings s;
    s.outcome_intercept = s.propensity_intercept = false;
    s.seed = static_cast<std::uint64_t>(r);
    for (auto& t : s.mlp_grid) t.epochs = 30;
    const auto out = run_recipes(d, plan, s, {EstimatorId::clearner_mlp, EstimatorId::aipw});
    ASSERT_TRUE(out.at(EstimatorId::clearner_mlp).result) << out.at(EstimatorId::clearner_mlp).error;
    const double mlp = std::abs(out.at(EstimatorId::clearner_mlp).result->psi_hat - *d.truth);
    const double aipw = std::abs(out.at(EstimatorId::aipw).result->psi_hat - *d.truth);
    wins += mlp < aipw;
  }
  EXPECT_GE(wins, 30) << wins << "/" << reps;
}
