#include "clearner/estimators.hpp"

#include <array>
#include <exception>

#include "clearner/constrained.hpp"

namespace clearner {

namespace {

constexpr std::array<std::pair<EstimatorId, std::string_view>, 16> kNames = {{
    {EstimatorId::direct, "direct"},
    {EstimatorId::ipw, "ipw"},
    {EstimatorId::ipw_sn, "ipw_sn"},
    {EstimatorId::aipw, "aipw"},
    {EstimatorId::aipw_sn, "aipw_sn"},
    {EstimatorId::tmle, "tmle"},
    {EstimatorId::tmle_l, "tmle_l"},
    {EstimatorId::clearner_linear, "clearner_linear"},
    {EstimatorId::clearner_l, "clearner_l"},
    {EstimatorId::clearner_gbrt, "clearner_gbrt"},
    {EstimatorId::clearner_mlp, "clearner_mlp"},
    {EstimatorId::lagrangian_gbrt, "lagrangian_gbrt"},
    {EstimatorId::dual_clearner, "dual_clearner"},
    {EstimatorId::dual_clearner_sn, "dual_clearner_sn"},
    {EstimatorId::param_fluc, "param_fluc"},
    {EstimatorId::param_fluc_sn, "param_fluc_sn"},
}};

std::uint64_t mix_seed(std::uint64_t seed, int fold, std::uint64_t salt) {
  return seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(fold + 1) * 0x632be59bd9b4e019ULL +
         salt;
}

RowList rows_where(const Vector& a, double value) {
  RowList rows;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] == value) rows.push_back(i);
  return rows;
}

// Lazily computed value that remembers a failure.
template <typename T>
class Lazy {
 public:
  template <typename F>
  const T& get(F&& make) {
    if (error_) std::rethrow_exception(error_);
    if (!value_) {
      try {
        value_ = make();
      } catch (...) {
        error_ = std::current_exception();
        throw;
      }
    }
    return *value_;
  }

 private:
  std::optional<T> value_;
  std::exception_ptr error_;
};

struct PropensityPair {
  Vector train;
  Vector eval;
};

struct OutcomePair {
  Vector mu1;
  Vector mu0;
};

PropensityPair fit_propensity(const Dataset& train, const Dataset& eval,
                              const RecipeSettings& s) {
  PropensityPair out;
  if (s.propensity == PropensityClass::oracle) {
    if (!train.true_pi || !eval.true_pi)
      throw InvalidArgument("oracle propensity requested but the dataset has no true pi");
    out.train = *train.true_pi;
    out.eval = *eval.true_pi;
  } else {
    double l1 = 0.0;
    if (s.propensity == PropensityClass::lasso)
      l1 = s.lasso_l1.value_or(1e-4 * static_cast<double>(train.n()));
    const LogisticModel model = fit_logistic(train.x, train.a, s.propensity_intercept, l1);
    out.train = model.predict(train.x);
    out.eval = model.predict(eval.x);
  }
  if (s.truncation) {
    out.train = truncate(out.train, *s.truncation);
    out.eval = truncate(out.eval, *s.truncation);
  }
  return out;
}

class FoldContext {
 public:
  FoldContext(const Dataset& data, const FoldPlan& plan, int fold, const RecipeSettings& s)
      : s_(s), fold_(fold) {
    train_ = data.subset(plan.train_rows(fold));
    eval_ = data.subset(plan.eval_rows(fold));
    if (train_.treated_count() == 0 || eval_.treated_count() == 0)
      throw InvalidArgument("fold " + std::to_string(fold) + " has no treated rows");
  }

  FoldEstimate run(EstimatorId id) {
    const RieszSpec& spec = s_.riesz;
    switch (id) {
      case EstimatorId::direct:
        return fold_direct(eval_, {Vector(), outcome().mu1, outcome().mu0}, spec);
      case EstimatorId::ipw:
        return fold_ipw(eval_, {propensity().eval, Vector(), Vector()}, spec);
      case EstimatorId::ipw_sn:
        return fold_ipw_sn(eval_, {propensity().eval, Vector(), Vector()}, spec);
      case EstimatorId::aipw:
        return fold_aipw(eval_, nuisances(), spec);
      case EstimatorId::aipw_sn:
        return fold_aipw_sn(eval_, nuisances(), spec);
      case EstimatorId::tmle:
        return fold_tmle(eval_, nuisances(), spec);
      case EstimatorId::tmle_l:
        return tmle_logistic();
      case EstimatorId::clearner_linear:
        return clearner_linear();
      case EstimatorId::clearner_l:
        return clearner_logistic();
      case EstimatorId::clearner_gbrt:
        return clearner_gbrt(false);
      case EstimatorId::lagrangian_gbrt:
        return clearner_gbrt(true);
      case EstimatorId::clearner_mlp:
        return clearner_mlp();
      case EstimatorId::dual_clearner:
        return dual(false);
      case EstimatorId::dual_clearner_sn:
        return dual(true);
      case EstimatorId::param_fluc:
        return param_fluc(false);
      case EstimatorId::param_fluc_sn:
        return param_fluc(true);
    }
    throw InvalidArgument("unknown estimator");
  }

 private:
  void require_mmo(EstimatorId id) const {
    if (s_.riesz.two_arm())
      throw InvalidArgument(std::string(to_string(id)) +
                            " supports only the mean-missing-outcome representer");
  }

  const PropensityPair& propensity() {
    return propensity_.get([&] { return fit_propensity(train_, eval_, s_); });
  }

  const OutcomePair& outcome() {
    return outcome_.get([&] {
      OutcomePair out;
      const RowList treated = rows_where(train_.a, 1.0);
      switch (s_.outcome) {
        case OutcomeClass::linear: {
          const LinearModel m1 = fit_ols(take_rows(train_.x, treated), take(train_.y, treated),
                                         std::nullopt, s_.outcome_intercept);
          out.mu1 = m1.predict(eval_.x);
          if (s_.riesz.two_arm()) {
            const RowList control = rows_where(train_.a, 0.0);
            const LinearModel m0 = fit_ols(take_rows(train_.x, control), take(train_.y, control),
                                           std::nullopt, s_.outcome_intercept);
            out.mu0 = m0.predict(eval_.x);
          }
          break;
        }
        case OutcomeClass::gbrt: {
          require_mmo(EstimatorId::direct);
          const BoostSample tr = treated_sample(train_);
          const BoostSample va = treated_sample(eval_);
          const BoostParams params = grid_search_gbrt(tr, va, seeded_grid(1));
          out.mu1 = boost_fit(tr, va, params, squared_loss_gradient).predict(eval_.x);
          break;
        }
        case OutcomeClass::mlp: {
          require_mmo(EstimatorId::direct);
          std::vector<MlpTrainResult> runs;
          const Vector ones = Vector::Ones(eval_.n());
          int k = 0;
          for (TrainConfig cfg : s_.mlp_grid) {
            cfg.lambda = 0.0;
            cfg.apply_bias_shift = false;
            cfg.seed = mix_seed(s_.seed, fold_, 0x6d6c7030ULL + static_cast<std::uint64_t>(k++));
            runs.push_back(train_clearner_mlp(train_, eval_, eval_, ones, cfg));
          }
          out.mu1 = runs[select_mlp(runs, MlpSelection::best_val_mse)].model.predict(eval_.x);
          break;
        }
        case OutcomeClass::oracle:
          if (!s_.oracle_outcome) throw InvalidArgument("oracle outcome requested but not set");
          require_mmo(EstimatorId::direct);
          out.mu1 = s_.oracle_outcome(eval_.x);
          break;
      }
      return out;
    });
  }

  NuisanceValues nuisances() {
    return {propensity().eval, outcome().mu1, outcome().mu0};
  }

  std::vector<BoostParams> seeded_grid(std::uint64_t salt) const {
    std::vector<BoostParams> grid = s_.gbrt_grid;
    for (std::size_t i = 0; i < grid.size(); ++i)
      grid[i].seed = mix_seed(s_.seed, fold_, salt * 1000 + i);
    return grid;
  }

  // Bounds from every observed outcome of the fold (train and eval treated
  // rows) so eval targets also lie in [0, 1].
  OutcomeScaling fold_scaling() const {
    const RowList tr = rows_where(train_.a, 1.0);
    const RowList ev = rows_where(eval_.a, 1.0);
    Vector y(static_cast<Index>(tr.size() + ev.size()));
    y << take(train_.y, tr), take(eval_.y, ev);
    return scale_outcomes(y, s_.alpha).first;
  }

  FoldEstimate tmle_logistic() {
    require_mmo(EstimatorId::tmle_l);
    const RowList treated = rows_where(train_.a, 1.0);
    const OutcomeScaling scaling = fold_scaling();
    const Vector ytil = scaling.scale(take(train_.y, treated));
    const LogisticModel q = fit_fractional_logistic(take_rows(train_.x, treated), ytil,
                                                    Vector::Ones(ytil.size()), s_.outcome_intercept);
    return fold_tmle_logistic(eval_, propensity().eval, q.predict(eval_.x), scaling);
  }

  FoldEstimate clearner_linear() {
    const PropensityPair& pi = propensity();
    const bool two_arm = s_.riesz.two_arm();
    // Block design: treated rows use the first coefficient block, control rows
    // the second (two-arm representers only).
    auto block = [&](const Dataset& d, const Vector& pi_d, Matrix& x, Vector& y, Vector& h) {
      const RowList rows = two_arm ? [&] {
        RowList all(static_cast<std::size_t>(d.n()));
        for (Index i = 0; i < d.n(); ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
      }() : rows_where(d.a, 1.0);
      const Matrix xd = design_matrix(take_rows(d.x, rows), s_.outcome_intercept);
      const Vector alpha = riesz_values(s_.riesz, take(pi_d, rows), take(d.a, rows),
                                        take_rows(d.x, rows));
      const Index p = xd.cols();
      x = Matrix::Zero(xd.rows(), two_arm ? 2 * p : p);
      for (Index r = 0; r < xd.rows(); ++r) {
        const bool treated = d.a[rows[static_cast<std::size_t>(r)]] == 1.0;
        x.block(r, treated ? 0 : p, 1, p) = xd.row(r);
      }
      y = take(d.y, rows);
      h = alpha;
    };
    Matrix xt, xe;
    Vector yt, ht, ye, he;
    block(train_, pi.train, xt, yt, ht);
    block(eval_, pi.eval, xe, ye, he);
    const ConstrainedFit fit = solve_constrained_ols(xt, yt, ht, xe, ye, he);
    const Vector& coef = fit.linear().coef;
    const Matrix xd = design_matrix(eval_.x, s_.outcome_intercept);
    const Index p = xd.cols();
    const Vector mu1 = xd * coef.head(p);
    const Vector mu0 = two_arm ? Vector(xd * coef.tail(p)) : Vector();
    FoldEstimate f = fold_plugin(eval_, pi.eval, mu1, s_.riesz, mu0);
    f.diagnostics.multiplier = fit.multiplier;
    return f;
  }

  FoldEstimate clearner_logistic() {
    require_mmo(EstimatorId::clearner_l);
    const PropensityPair& pi = propensity();
    const RowList tr = rows_where(train_.a, 1.0);
    const RowList ev = rows_where(eval_.a, 1.0);
    const OutcomeScaling scaling = fold_scaling();
    const Vector ytil_tr = scaling.scale(take(train_.y, tr));
    const Vector ytil_ev = scaling.scale(take(eval_.y, ev));
    const Vector h_ev = take(pi.eval, ev).cwiseInverse();
    const ConstrainedFit fit = solve_clearner_logistic(take_rows(train_.x, tr), ytil_tr,
                                                       take_rows(eval_.x, ev), ytil_ev, h_ev,
                                                       s_.outcome_intercept);
    const Vector mu = scaling.unscale(fit.logistic().predict(eval_.x));
    FoldEstimate f = fold_plugin(eval_, pi.eval, mu);
    f.diagnostics.multiplier = fit.multiplier;
    return f;
  }

  FoldEstimate clearner_gbrt(bool lagrangian_only) {
    const EstimatorId id = lagrangian_only ? EstimatorId::lagrangian_gbrt : EstimatorId::clearner_gbrt;
    require_mmo(id);
    const PropensityPair& pi = propensity();
    const RowList tr = rows_where(train_.a, 1.0);
    const BoostSample tr_s = treated_sample(train_);
    const BoostSample va_s = treated_sample(eval_);
    BoostParams params = grid_search_gbrt(tr_s, va_s, seeded_grid(2),
                                          clearner_stage1_gradient(take(pi.train, tr)));
    if (lagrangian_only) params.max_trees_k = 0;
    const ClearnerBoostResult fit =
        clearner_boost(train_, eval_, eval_, pi.train, pi.eval, params);
    return fold_plugin(eval_, pi.eval, fit.model.predict(eval_.x));
  }

  FoldEstimate clearner_mlp() {
    require_mmo(EstimatorId::clearner_mlp);
    const PropensityPair& pi = propensity();
    const double weight_mean = eval_.a.cwiseQuotient(pi.eval).mean();
    std::vector<MlpTrainResult> runs;
    int k = 0;
    for (TrainConfig cfg : s_.mlp_grid) {
      cfg.lambda /= weight_mean * weight_mean;
      cfg.apply_bias_shift = true;
      cfg.seed = mix_seed(s_.seed, fold_, 0x6d6c7031ULL + static_cast<std::uint64_t>(k++));
      runs.push_back(train_clearner_mlp(train_, eval_, eval_, pi.eval, cfg));
    }
    const MlpTrainResult& chosen = runs[select_mlp(runs, s_.mlp_selection)];
    return fold_plugin(eval_, pi.eval, chosen.model.predict(eval_.x));
  }

  FoldEstimate dual(bool self_normalize) {
    require_mmo(self_normalize ? EstimatorId::dual_clearner_sn : EstimatorId::dual_clearner);
    const Vector& mu = outcome().mu1;
    const ConstrainedFit fit = solve_dual_propensity(train_.x, train_.a, eval_.x, eval_.a, mu,
                                                     s_.propensity_intercept);
    FoldEstimate f = fold_weighted(eval_, fit.logistic().predict(eval_.x), mu, self_normalize);
    f.diagnostics.multiplier = fit.multiplier;
    return f;
  }

  FoldEstimate param_fluc(bool self_normalize) {
    require_mmo(self_normalize ? EstimatorId::param_fluc_sn : EstimatorId::param_fluc);
    const Vector& mu = outcome().mu1;
    const ParamFlucFit fit = solve_param_fluc(eval_.a, propensity().eval, mu);
    FoldEstimate f = fold_weighted(eval_, fit.omega_step, mu, self_normalize);
    f.diagnostics.multiplier = fit.lambda1;
    return f;
  }

  const RecipeSettings& s_;
  int fold_;
  Dataset train_;
  Dataset eval_;
  Lazy<PropensityPair> propensity_;
  Lazy<OutcomePair> outcome_;
};

}  // namespace

const std::vector<EstimatorId>& all_estimators() {
  static const std::vector<EstimatorId> ids = [] {
    std::vector<EstimatorId> out;
    for (const auto& [id, name] : kNames) out.push_back(id);
    return out;
  }();
  return ids;
}

std::string_view to_string(EstimatorId id) {
  for (const auto& [key, name] : kNames)
    if (key == id) return name;
  return "unknown";
}

EstimatorId parse_estimator(std::string_view name) {
  for (const auto& [key, known] : kNames)
    if (known == name) return key;
  throw ConfigError("unknown estimator recipe '" + std::string(name) + "'");
}

std::string_view to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::linear: return "linear";
    case OutcomeClass::gbrt: return "gbrt";
    case OutcomeClass::mlp: return "mlp";
    case OutcomeClass::oracle: return "oracle";
  }
  return "unknown";
}

std::string_view to_string(PropensityClass c) {
  switch (c) {
    case PropensityClass::logistic: return "logistic";
    case PropensityClass::lasso: return "lasso";
    case PropensityClass::oracle: return "oracle";
  }
  return "unknown";
}

BoostParams grid_search_gbrt(const BoostSample& train, const BoostSample& val,
                             const std::vector<BoostParams>& grid,
                             const PseudoGradient& gradient) {
  if (grid.empty()) throw InvalidArgument("grid_search_gbrt: empty grid");
  std::size_t best = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    BoostTrace trace;
    boost_fit(train, val, grid[i], gradient, &trace);
    if (trace.best_val_mse < best_mse) {
      best_mse = trace.best_val_mse;
      best = i;
    }
  }
  return grid[best];
}

std::map<EstimatorId, RecipeOutcome> run_recipes(const Dataset& data, const FoldPlan& plan,
                                                 const RecipeSettings& settings,
                                                 const std::vector<EstimatorId>& ids) {
  if (plan.assignments.size() != static_cast<std::size_t>(data.n()))
    throw InvalidArgument("fold plan does not match the dataset size");
  std::map<EstimatorId, RecipeOutcome> out;
  std::map<EstimatorId, std::vector<FoldEstimate>> folds;
  for (EstimatorId id : ids) out[id];
  for (int k = 0; k < plan.k; ++k) {
    std::optional<FoldContext> ctx;
    std::string fold_error;
    try {
      ctx.emplace(data, plan, k, settings);
    } catch (const std::exception& e) {
      fold_error = e.what();
    }
    for (EstimatorId id : ids) {
      RecipeOutcome& slot = out[id];
      if (!slot.error.empty()) continue;
      if (!ctx) {
        slot.error = fold_error;
        continue;
      }
      try {
        folds[id].push_back(ctx->run(id));
      } catch (const std::exception& e) {
        slot.error = e.what();
      }
    }
  }
  for (EstimatorId id : ids) {
    RecipeOutcome& slot = out[id];
    if (!slot.error.empty()) continue;
    try {
      slot.result = finalize(folds[id]);
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  }
  return out;
}

Vector crossfit_propensity(const Dataset& data, const FoldPlan& plan,
                           const RecipeSettings& settings) {
  if (plan.assignments.size() != static_cast<std::size_t>(data.n()))
    throw InvalidArgument("fold plan does not match the dataset size");
  Vector out(data.n());
  for (int k = 0; k < plan.k; ++k) {
    const RowList eval_rows = plan.eval_rows(k);
    const PropensityPair pi =
        fit_propensity(data.subset(plan.train_rows(k)), data.subset(eval_rows), settings);
    for (std::size_t i = 0; i < eval_rows.size(); ++i) out[eval_rows[i]] = pi.eval[static_cast<Index>(i)];
  }
  return out;
}

EstimateResult crossfit(const Dataset& data, const FoldPlan& plan,
                        const RecipeSettings& settings, EstimatorId id) {
  auto out = run_recipes(data, plan, settings, {id});
  RecipeOutcome& r = out[id];
  if (!r.result) throw Error(std::string(to_string(id)) + ": " + r.error);
  return *r.result;
}

}  // namespace clearner
