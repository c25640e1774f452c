// Acceptance checks. Each criterion prints one PASS/FAIL line; exit status is
// non-zero when any selected criterion fails.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "clearner/constrained.hpp"
#include "clearner/harness.hpp"

using namespace clearner;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checks {
 public:
  void range(const std::string& label, double v, double lo, double hi) {
    add(label, v >= lo && v <= hi, fmt("%s=%.4g in [%.4g,%.4g]", label.c_str(), v, lo, hi));
  }
  void at_least(const std::string& label, double v, double lo) {
    add(label, v >= lo, fmt("%s=%.4g >= %.4g", label.c_str(), v, lo));
  }
  void below(const std::string& label, double v, double hi) {
    add(label, v < hi, fmt("%s=%.4g < %.4g", label.c_str(), v, hi));
  }
  void above(const std::string& label, double v, double lo) {
    add(label, v > lo, fmt("%s=%.4g > %.4g", label.c_str(), v, lo));
  }
  void truth(const std::string& label, bool ok) { add(label, ok, label); }
  void note(const std::string& text) { out_.detail += (out_.detail.empty() ? "" : "; ") + text; }

  Outcome result() const { return out_; }

  static std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2))) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
  }

 private:
  void add(const std::string&, bool ok, const std::string& text) {
    out_.pass = out_.pass && ok;
    note(text + (ok ? "" : " [x]"));
  }
  Outcome out_;
};

ExperimentConfig ks_config(const std::string& name, int reps, int folds,
                           const std::vector<EstimatorId>& ids) {
  ExperimentConfig cfg;
  cfg.name = name;
  cfg.dgp = DgpKind::kang_schafer;
  cfg.n = 200;
  cfg.replications = reps;
  cfg.folds = folds;
  cfg.recipes = ids;
  cfg.settings.outcome_intercept = false;
  cfg.settings.propensity_intercept = false;
  cfg.seed = 1;
  cfg.validate();
  return cfg;
}

const RecipeSummary& find(const SimulationReport& rep, EstimatorId id) {
  for (const auto& s : rep.summary)
    if (s.recipe == to_string(id)) return s;
  throw std::runtime_error("missing recipe " + std::string(to_string(id)));
}

std::string summary_line(const RecipeSummary& s) {
  return Checks::fmt("%s bias %.2f (%.2f) mae %.2f (%.2f) cov %.3f fail %d", s.recipe.c_str(),
                     s.bias.value, s.bias.se, s.mae.value, s.mae.se, s.coverage.value, s.failures);
}

SimulationReport linear_table() {
  using E = EstimatorId;
  return run_monte_carlo(ks_config("linear", 1000, 1,
                                   {E::direct, E::ipw, E::ipw_sn, E::aipw, E::aipw_sn, E::tmle,
                                    E::clearner_linear}));
}

Outcome criterion1() {
  using E = EstimatorId;
  const SimulationReport rep = linear_table();
  Checks c;
  const auto& direct = find(rep, E::direct);
  const auto& cl = find(rep, E::clearner_linear);
  const auto& aipw = find(rep, E::aipw);
  const auto& aipw_sn = find(rep, E::aipw_sn);
  const auto& ipw = find(rep, E::ipw);
  c.range("direct_mae", direct.mae.value, 2.4, 2.8);
  c.range("clearner_bias", cl.bias.value, -2.9, -2.0);
  c.range("clearner_mae", cl.mae.value, 3.3, 3.9);
  c.at_least("aipw_mae", aipw.mae.value, 5.0);
  c.at_least("ipw_mae", ipw.mae.value, 15.0);
  c.truth(Checks::fmt("ranking clearner %.2f < aipw_sn %.2f < aipw %.2f", cl.mae.value,
                      aipw_sn.mae.value, aipw.mae.value),
          cl.mae.value < aipw_sn.mae.value && aipw_sn.mae.value < aipw.mae.value);
  return c.result();
}

Outcome criterion2() {
  using E = EstimatorId;
  const SimulationReport rep = run_monte_carlo(ks_config("logistic", 1000, 1, {E::tmle_l, E::clearner_l}));
  Checks c;
  const auto& tl = find(rep, E::tmle_l);
  const auto& cll = find(rep, E::clearner_l);
  c.range("tmle_l_mae", tl.mae.value, 2.9, 3.4);
  c.range("clearner_l_mae", cll.mae.value, 2.6, 3.2);
  c.truth(Checks::fmt("clearner_l %.3f <= tmle_l %.3f", cll.mae.value, tl.mae.value),
          cll.mae.value <= tl.mae.value);
  c.truth(Checks::fmt("failures %d/%d", tl.failures, cll.failures),
          tl.failures == 0 && cll.failures == 0);
  return c.result();
}

Outcome criterion3() {
  using E = EstimatorId;
  ExperimentConfig cfg =
      ks_config("truncated", 1000, 1, {E::aipw, E::aipw_sn, E::tmle, E::clearner_linear});
  cfg.settings.truncation = 0.05;
  const SimulationReport rep = run_monte_carlo(cfg);
  Checks c;
  for (E id : cfg.recipes) {
    const auto& s = find(rep, id);
    c.range(std::string(to_string(id)) + "_mae", s.mae.value, 3.0, 4.0);
  }
  c.below("tmle_mae", find(rep, E::tmle).mae.value, 5.0);
  return c.result();
}

Outcome criterion4() {
  using E = EstimatorId;
  const SimulationReport rep = linear_table();
  Checks c;
  c.range("direct_cov", find(rep, E::direct).coverage.value, 0.85, 0.93);
  c.range("clearner_cov", find(rep, E::clearner_linear).coverage.value, 0.87, 0.95);
  c.at_least("ipw_cov", find(rep, E::ipw).coverage.value, 0.98);
  c.at_least("ipw_sn_cov", find(rep, E::ipw_sn).coverage.value, 0.98);
  return c.result();
}

Outcome criterion5() {
  using E = EstimatorId;
  const SimulationReport rep =
      run_monte_carlo(ks_config("dual", 1000, 1, {E::dual_clearner, E::dual_clearner_sn}));
  Checks c;
  const auto& d = find(rep, E::dual_clearner);
  c.range("dual_bias", d.bias.value, -0.4, 0.4);
  c.range("dual_mae", d.mae.value, 2.3, 2.9);
  int ok = 0, total = 0;
  for (const auto& r : rep.raw) {
    if (r.recipe != to_string(E::dual_clearner)) continue;
    ++total;
    if (r.ok && r.constraint_residual && r.constraint_scale &&
        *r.constraint_residual < 1e-6 * *r.constraint_scale)
      ++ok;
  }
  c.at_least("balanced_share", static_cast<double>(ok) / total, 0.99);
  c.note("reference " + summary_line(find(rep, E::dual_clearner_sn)));
  return c.result();
}

Outcome criterion6() {
  using E = EstimatorId;
  ExperimentConfig cfg = ks_config("gbrt", 100, 2,
                                   {E::aipw, E::tmle, E::clearner_gbrt, E::lagrangian_gbrt});
  cfg.settings.outcome = OutcomeClass::gbrt;
  cfg.settings.gbrt_grid = desk_gbrt_grid();
  cfg.validate();
  const SimulationReport rep = run_monte_carlo(cfg);
  Checks c;
  const auto& cg = find(rep, E::clearner_gbrt);
  c.range("clearner_gbrt_mae", cg.mae.value, 2.5, 4.7);
  for (E id : {E::aipw, E::tmle}) {
    const auto& s = find(rep, id);
    const bool flagged = s.failures + s.extreme > 0;
    c.truth(Checks::fmt("%s mae %.2f >= 3x%.2f or flagged (fail %d, extreme %d)",
                        s.recipe.c_str(), s.mae.value, cg.mae.value, s.failures, s.extreme),
            s.mae.value >= 3.0 * cg.mae.value || flagged);
  }
  const auto& lg = find(rep, E::lagrangian_gbrt);
  c.below("lagrangian_gap", std::abs(lg.mae.value - cg.mae.value), 1.0 + 1e-12);
  return c.result();
}

Outcome criterion7() {
  HeavyTailOptions opt;
  opt.n = 500;
  opt.replications = 5000;
  opt.meta_repetitions = 20;
  opt.meta_small = 500;
  const HeavyTailReport rep = heavy_tail_diagnostic(opt);
  Checks c;
  const HeavyTailRecipe* aipw = nullptr;
  const HeavyTailRecipe* cl = nullptr;
  for (const auto& r : rep.recipes) {
    if (r.recipe == "aipw") aipw = &r;
    if (r.recipe == "clearner_linear") cl = &r;
  }
  c.at_least("aipw_meta_var_ratio_gt2", aipw->meta_above_2, 16);
  c.at_least("clearner_meta_var_ratio_lt1.5", cl->meta_below_1_5, 16);
  c.above("tail_ratio", rep.tail_ratio, 5.0);
  return c.result();
}

Dataset ks(Index n, std::uint64_t seed) {
  KsConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return gen_kang_schafer(cfg);
}

Outcome criterion8() {
  Checks c;
  const int instances = 50;
  double worst_linear = 0.0, worst_l = 0.0, worst_mlp = 0.0, worst_dual = 0.0, worst_gbrt = 0.0;
  int gbrt_fail = 0;
  for (int s = 1; s <= instances; ++s) {
    const Dataset d = ks(200, static_cast<std::uint64_t>(s));
    const FoldPlan plan = make_folds(d.n(), 2, static_cast<std::uint64_t>(s));
    RecipeSettings rs;
    rs.outcome_intercept = rs.propensity_intercept = false;
    rs.seed = static_cast<std::uint64_t>(s);
    const auto out = run_recipes(d, plan, rs,
                                 {EstimatorId::clearner_linear, EstimatorId::clearner_l,
                                  EstimatorId::dual_clearner});
    auto rel = [&](EstimatorId id) {
      const auto& o = out.at(id);
      if (!o.result) return std::numeric_limits<double>::infinity();
      return *o.result->diagnostics.constraint_residual / *o.result->diagnostics.constraint_scale;
    };
    worst_linear = std::max(worst_linear, rel(EstimatorId::clearner_linear));
    worst_l = std::max(worst_l, rel(EstimatorId::clearner_l));
    worst_dual = std::max(worst_dual, rel(EstimatorId::dual_clearner));

    // Stage-2 boosting and the MLP bias shift on one train/eval split with
    // the true propensity.
    const Dataset train = d.subset(plan.train_rows(0));
    const Dataset eval = d.subset(plan.eval_rows(0));
    const Vector pi_tr = train.true_pi->cwiseMax(1e-3);
    const Vector pi_ev = eval.true_pi->cwiseMax(1e-3);
    BoostParams bp;
    bp.max_trees_j = 100;
    bp.seed = static_cast<std::uint64_t>(s);
    const ClearnerBoostResult gb = clearner_boost(train, eval, eval, pi_tr, pi_ev, bp);
    if (!(std::abs(gb.diagnostics.final_residual) <= gb.diagnostics.tolerance)) ++gbrt_fail;
    worst_gbrt = std::max(worst_gbrt,
                          std::abs(gb.diagnostics.final_residual) / gb.diagnostics.tolerance);

    TrainConfig tc;
    tc.epochs = 10;
    tc.lambda = 1.0;
    tc.seed = static_cast<std::uint64_t>(s);
    const MlpTrainResult mr = train_clearner_mlp(train, eval, eval, pi_ev, tc);
    const Vector mu = mr.model.predict(eval.x);
    double scale = 0.0;
    for (Index i = 0; i < eval.n(); ++i) scale += eval.a[i] / pi_ev[i] * std::abs(eval.y[i]);
    scale /= static_cast<double>(eval.n());
    worst_mlp = std::max(worst_mlp, std::abs(constraint_residual(eval.a, eval.y, mu, pi_ev)) / scale);
  }
  c.at_least("instances", instances, 50);
  c.below("linear_rel", worst_linear, 1e-8);
  c.below("clearner_l_rel", worst_l, 1e-8);
  c.below("mlp_rel", worst_mlp, 1e-8);
  c.below("dual_rel", worst_dual, 1e-8);
  c.truth(Checks::fmt("gbrt within tolerance in all (worst residual/tol %.3g, misses %d)",
                      worst_gbrt, gbrt_fail),
          gbrt_fail == 0);
  return c.result();
}

Outcome criterion9() {
  Checks c;
  std::normal_distribution<double> normal;

  // Closed form vs augmented Lagrangian (eval = train, where both target the
  // same constrained least-squares problem).
  double worst_al = 0.0;
  for (int s = 0; s < 100; ++s) {
    Rng rng(static_cast<std::uint64_t>(5000 + s));
    const Index n = 30, d = 3;
    Matrix x(n, d);
    Vector y(n), h(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < d; ++j) x(i, j) = normal(rng);
      y[i] = x.row(i).sum() + normal(rng);
      h[i] = 1.0 + 3.0 * rng.uniform();
    }
    const Vector closed = solve_constrained_ols(x, y, h, x, y, h).linear().coef;
    const double cs = h.cwiseProduct(y).cwiseAbs().sum();
    SmoothFunction f = [&](const Vector& t) {
      const Vector r = x * t - y;
      return ValueGrad{0.5 * r.squaredNorm() / n, x.transpose() * r / static_cast<double>(n)};
    };
    SmoothFunction g = [&](const Vector& t) {
      return ValueGrad{h.dot(y - x * t) / cs, -(x.transpose() * h) / cs};
    };
    const Vector al = augmented_lagrangian(f, g, Vector::Zero(d)).theta;
    worst_al = std::max(worst_al, (al - closed).lpNorm<Eigen::Infinity>() /
                                      (1.0 + closed.lpNorm<Eigen::Infinity>()));
  }
  c.below("al_vs_closed", worst_al, 1e-6);

  // epsilon* vs the vertex of the 1-D quadratic through three evaluations.
  double worst_eps = 0.0;
  for (int s = 0; s < 100; ++s) {
    Rng rng(static_cast<std::uint64_t>(7000 + s));
    const Index n = 40;
    Vector a(n), y(n), mu(n), pi(n);
    for (Index i = 0; i < n; ++i) {
      a[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
      y[i] = normal(rng) * 5.0;
      mu[i] = normal(rng);
      pi[i] = 0.1 + 0.8 * rng.uniform();
    }
    a[0] = 1.0;
    auto q = [&](double e) {
      double v = 0.0;
      for (Index i = 0; i < n; ++i)
        if (a[i] == 1.0) v += std::pow(y[i] - mu[i] - e / pi[i], 2);
      return v;
    };
    const double q0 = q(0.0), qp = q(1.0), qm = q(-1.0);
    const double vertex = (qm - qp) / (2.0 * (qp + qm - 2.0 * q0));
    const double e = epsilon_star(a, y, mu, pi);
    worst_eps = std::max(worst_eps, std::abs(e - vertex) / (1.0 + std::abs(vertex)));
  }
  c.below("eps_star_vs_quadratic", worst_eps, 1e-10);

  // MLP gradient vs central differences.
  double worst_grad = 0.0;
  for (int s = 0; s < 5; ++s) {
    Rng rng(static_cast<std::uint64_t>(9000 + s));
    BoostSample batch;
    batch.x.resize(8, 3);
    batch.y.resize(8);
    ConstraintSet ev;
    ev.x.resize(12, 3);
    ev.a.resize(12);
    ev.y.resize(12);
    ev.pi_hat.resize(12);
    for (Index i = 0; i < 8; ++i) {
      for (Index j = 0; j < 3; ++j) batch.x(i, j) = normal(rng);
      batch.y[i] = normal(rng);
    }
    for (Index i = 0; i < 12; ++i) {
      for (Index j = 0; j < 3; ++j) ev.x(i, j) = normal(rng);
      ev.a[i] = i % 3 ? 1.0 : 0.0;
      ev.y[i] = normal(rng);
      ev.pi_hat[i] = 0.2 + 0.6 * rng.uniform();
    }
    MLPParams p = MLPParams::init({3, 6, 4, 1}, s % 2 ? Activation::softplus : Activation::tanh,
                                  static_cast<std::uint64_t>(s));
    Vector flat = p.flatten();
    for (auto& v : flat) v = 0.5 * normal(rng);
    p.unflatten(flat);
    const double lambda = 2.0;
    const Vector grad = loss_and_grad(p, batch, ev, lambda).gradient;
    for (Index k = 0; k < flat.size(); ++k) {
      Vector fp = flat, fm = flat;
      fp[k] += 1e-5;
      fm[k] -= 1e-5;
      MLPParams pp = p, pm = p;
      pp.unflatten(fp);
      pm.unflatten(fm);
      const double fd = (loss_and_grad(pp, batch, ev, lambda).loss -
                         loss_and_grad(pm, batch, ev, lambda).loss) / 2e-5;
      const double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
      worst_grad = std::max(worst_grad, std::abs(fd - grad[k]) / denom);
    }
  }
  c.below("mlp_grad_rel", worst_grad, 1e-4);

  // TMLE and self-normalised AIPW coincide under constant propensity.
  double worst_tmle = 0.0;
  for (int s = 1; s <= 50; ++s) {
    const Dataset d = ks(200, static_cast<std::uint64_t>(s));
    const Vector mu = d.x * Eigen::Vector4d(20, 10, 5, 1) + Vector::Constant(d.n(), 200);
    const NuisanceValues nv{Vector::Constant(d.n(), 0.3 + 0.01 * s), mu, Vector()};
    worst_tmle = std::max(worst_tmle, std::abs(estimate_tmle(d, nv).psi_hat -
                                               estimate_aipw_sn(d, nv).psi_hat));
  }
  c.below("tmle_vs_aipw_sn", worst_tmle, 1e-10);
  return c.result();
}

Outcome criterion10() {
  using E = EstimatorId;
  Checks c;
  std::map<double, SimulationReport> reps;
  for (double cc : {0.25, 1.0, 1.75}) {
    ExperimentConfig cfg = ks_config("overlap", 200, 1, {E::aipw, E::clearner_linear});
    cfg.c = cc;
    reps.emplace(cc, run_monte_carlo(cfg));
  }
  c.range("mean_min_pi_c1", reps.at(1.0).propensity.min.value, 0.004, 0.010);
  const double cl_ratio = find(reps.at(1.75), E::clearner_linear).mae.value /
                          find(reps.at(0.25), E::clearner_linear).mae.value;
  const double aipw_ratio =
      find(reps.at(1.75), E::aipw).mae.value / find(reps.at(0.25), E::aipw).mae.value;
  c.below("clearner_mae_ratio", cl_ratio, 3.0);
  c.above("aipw_mae_ratio", aipw_ratio, 5.0);
  return c.result();
}

struct Criterion {
  int id;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "criterion number(s); default all")
      ->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, 60, criterion1},    {2, 600, criterion2}, {3, 120, criterion3}, {4, 60, criterion4},
      {5, 900, criterion5},   {6, 1200, criterion6}, {7, 120, criterion7}, {8, 60, criterion8},
      {9, 60, criterion9},    {10, 300, criterion10}};
  int failed = 0;
  for (const Criterion& cr : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), cr.id) == selected.end())
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= cr.budget_s;
    const bool pass = o.pass && in_budget;
    std::printf("CRITERION %d %s: %s; runtime %.1fs (budget %.0fs)%s\n", cr.id,
                pass ? "PASS" : "FAIL", o.detail.c_str(), secs, cr.budget_s,
                in_budget ? "" : " [x]");
    std::fflush(stdout);
    failed += !pass;
  }
  return failed ? 1 : 0;
}
