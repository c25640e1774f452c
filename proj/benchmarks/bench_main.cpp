#include <benchmark/benchmark.h>

#include "clearner/constrained.hpp"
#include "clearner/harness.hpp"

using namespace clearner;

namespace {

Dataset ks(Index n, std::uint64_t seed = 1) {
  KsConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return gen_kang_schafer(cfg);
}

}  // namespace

static void BM_FitTree(benchmark::State& state) {
  const Dataset d = ks(state.range(0));
  RowList rows(static_cast<std::size_t>(d.n()));
  for (Index i = 0; i < d.n(); ++i) rows[static_cast<std::size_t>(i)] = i;
  for (auto _ : state)
    benchmark::DoNotOptimize(fit_tree(d.x, d.y, rows, {0, 1, 2, 3}, 3, 5));
}
BENCHMARK(BM_FitTree)->Arg(200)->Arg(2000);

static void BM_BoostFit(benchmark::State& state) {
  const Dataset d = ks(400);
  const BoostSample tr = treated_sample(d);
  BoostParams p;
  p.max_trees_j = static_cast<int>(state.range(0));
  p.early_stop_rounds = p.max_trees_j;
  for (auto _ : state) benchmark::DoNotOptimize(boost_fit(tr, tr, p, squared_loss_gradient));
}
BENCHMARK(BM_BoostFit)->Arg(100)->Arg(500);

static void BM_ClearnerBoost(benchmark::State& state) {
  const Dataset d = ks(200);
  const Vector pi = d.true_pi->cwiseMax(1e-3);
  BoostParams p;
  p.max_trees_j = 100;
  for (auto _ : state) benchmark::DoNotOptimize(clearner_boost(d, d, d, pi, pi, p));
}
BENCHMARK(BM_ClearnerBoost);

static void BM_ConstrainedOls(benchmark::State& state) {
  const Dataset d = ks(state.range(0));
  const Vector h = d.true_pi->cwiseInverse();
  for (auto _ : state)
    benchmark::DoNotOptimize(solve_constrained_ols(d.x, d.y, h, d.x, d.y, h));
}
BENCHMARK(BM_ConstrainedOls)->Arg(200)->Arg(5000);

static void BM_ClearnerLogistic(benchmark::State& state) {
  const Dataset d = ks(200);
  const Vector t = (d.y.array() - d.y.minCoeff() + 10) / (d.y.maxCoeff() - d.y.minCoeff() + 20);
  const Vector h = d.a.cwiseQuotient(d.true_pi->cwiseMax(1e-3));
  for (auto _ : state) benchmark::DoNotOptimize(solve_clearner_logistic(d.x, t, d.x, t, h));
}
BENCHMARK(BM_ClearnerLogistic);

static void BM_DualPropensity(benchmark::State& state) {
  const Dataset d = ks(200);
  const Vector mu = Vector::Constant(d.n(), 210.0) + d.x.col(0);
  for (auto _ : state) benchmark::DoNotOptimize(solve_dual_propensity(d.x, d.a, mu));
}
BENCHMARK(BM_DualPropensity);

static void BM_KsReplication(benchmark::State& state) {
  const Dataset d = ks(200);
  RecipeSettings s;
  s.outcome_intercept = s.propensity_intercept = false;
  const std::vector<EstimatorId> ids = {EstimatorId::direct, EstimatorId::ipw,
                                        EstimatorId::aipw,   EstimatorId::aipw_sn,
                                        EstimatorId::tmle,   EstimatorId::clearner_linear};
  for (auto _ : state)
    benchmark::DoNotOptimize(run_recipes(d, FoldPlan::single(d.n()), s, ids));
}
BENCHMARK(BM_KsReplication);
BENCHMARK_MAIN();
