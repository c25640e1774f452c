#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clearner/common.hpp"
#include "clearner/datagen.hpp"
#include "clearner/gbrt.hpp"
#include "clearner/mlp.hpp"
#include "clearner/models.hpp"

namespace clearner {

inline constexpr double kZ95 = 1.959964;

enum class RieszKind { mean_missing_outcome, full_ate, policy_value };

// The target is P[g1(X) mu(X,1) + g0(X) mu(X,0)] and the representer is
// g1 A/pi + g0 (1-A)/(1-pi).
struct RieszSpec {
  RieszKind kind = RieszKind::mean_missing_outcome;
  // Policy rule c(X) in [0,1]; used for policy_value only.
  std::function<double(const Eigen::RowVectorXd&)> policy;

  bool two_arm() const { return kind != RieszKind::mean_missing_outcome; }
  void coefficients(const Matrix& x, Vector& g1, Vector& g0) const;
};

Vector riesz_values(const RieszSpec& spec, const Vector& pi_hat, const Vector& a,
                    const Matrix& x);

struct EstimateDiagnostics {
  // Largest |P_eval[a(W)(Y - mu)]| over folds and the matching P_eval[|a(W) Y|].
  std::optional<double> constraint_residual;
  std::optional<double> constraint_scale;
  double min_pi = 0.0;
  double max_inv_pi = 0.0;
  std::optional<double> epsilon;     // targeting step
  std::optional<double> multiplier;  // lambda-hat or solver multiplier
};

struct EstimateResult {
  double psi_hat = 0.0;
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  EstimateDiagnostics diagnostics;
};

EstimateResult make_estimate(double psi, double variance, EstimateDiagnostics diag = {});

// Lower bound only.
Vector truncate(const Vector& pi_values, double eta);

// Nuisance values on evaluation rows. mu0 is unused for mean missing outcome.
struct NuisanceValues {
  Vector pi_hat;
  Vector mu1;
  Vector mu0;
};

struct NuisanceFit {
  std::function<Vector(const Matrix&)> pi_hat;
  std::function<Vector(const Matrix&)> mu1;
  std::function<Vector(const Matrix&)> mu0;
  std::string propensity_class;
  std::string outcome_class;
  int fold = -1;

  NuisanceValues evaluate(const Matrix& x) const;
};

// One fold's estimate with the per-row values whose empirical variance gives
// the variance numerator.
struct FoldEstimate {
  double psi = 0.0;
  Vector influence;
  EstimateDiagnostics diagnostics;
};

EstimateResult finalize(const std::vector<FoldEstimate>& folds);

FoldEstimate fold_direct(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec);
FoldEstimate fold_ipw(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec);
FoldEstimate fold_ipw_sn(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec);
FoldEstimate fold_aipw(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec);
FoldEstimate fold_aipw_sn(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec);
FoldEstimate fold_tmle(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec);
// q_hat: fitted values on the scaled outcome space for every eval row.
FoldEstimate fold_tmle_logistic(const Dataset& eval, const Vector& pi_hat, const Vector& q_hat,
                                const OutcomeScaling& scaling);
// Plug-in of a constrained outcome model (mean missing outcome).
FoldEstimate fold_plugin(const Dataset& eval, const Vector& pi_hat, const Vector& mu_c,
                         const RieszSpec& spec = {}, const Vector& mu0_c = Vector());
// mean(A Y / w), or its Hajek form; variance uses the fixed outcome values mu.
FoldEstimate fold_weighted(const Dataset& eval, const Vector& weights_pi, const Vector& mu,
                           bool self_normalize);

EstimateResult estimate_direct(const Dataset& eval, const NuisanceValues& nv,
                               const RieszSpec& spec = {});
EstimateResult estimate_ipw(const Dataset& eval, const NuisanceValues& nv,
                            const RieszSpec& spec = {});
EstimateResult estimate_ipw_sn(const Dataset& eval, const NuisanceValues& nv,
                               const RieszSpec& spec = {});
EstimateResult estimate_aipw(const Dataset& eval, const NuisanceValues& nv,
                             const RieszSpec& spec = {});
EstimateResult estimate_aipw_sn(const Dataset& eval, const NuisanceValues& nv,
                                const RieszSpec& spec = {});
EstimateResult estimate_tmle(const Dataset& eval, const NuisanceValues& nv,
                             const RieszSpec& spec = {});
EstimateResult estimate_tmle_logistic(const Dataset& eval, const Vector& pi_hat,
                                      const Vector& q_hat, const OutcomeScaling& scaling);

// Recipes ------------------------------------------------------------------

enum class EstimatorId {
  direct,
  ipw,
  ipw_sn,
  aipw,
  aipw_sn,
  tmle,
  tmle_l,
  clearner_linear,
  clearner_l,
  clearner_gbrt,
  clearner_mlp,
  lagrangian_gbrt,
  dual_clearner,
  dual_clearner_sn,
  param_fluc,
  param_fluc_sn,
};

const std::vector<EstimatorId>& all_estimators();
std::string_view to_string(EstimatorId id);
// Throws ConfigError for unknown names.
EstimatorId parse_estimator(std::string_view name);

enum class OutcomeClass { linear, gbrt, mlp, oracle };
enum class PropensityClass { logistic, lasso, oracle };

std::string_view to_string(OutcomeClass c);
std::string_view to_string(PropensityClass c);

// lambda_0 in {0, 1, 4, 16, 64}.
inline std::vector<TrainConfig> default_mlp_grid() {
  std::vector<TrainConfig> grid;
  for (double l : {0.0, 1.0, 4.0, 16.0, 64.0}) {
    TrainConfig t;
    t.lambda = l;
    grid.push_back(t);
  }
  return grid;
}

struct RecipeSettings {
  OutcomeClass outcome = OutcomeClass::linear;
  PropensityClass propensity = PropensityClass::logistic;
  bool outcome_intercept = true;
  bool propensity_intercept = true;
  // Penalty for the lasso propensity; default 1e-4 * training rows.
  std::optional<double> lasso_l1;
  std::optional<double> truncation;
  double alpha = 0.1;
  std::vector<BoostParams> gbrt_grid = {BoostParams{}};
  // lambda in each entry is lambda_0, multiplied by (P_eval[A/pi])^-2.
  std::vector<TrainConfig> mlp_grid = default_mlp_grid();
  MlpSelection mlp_selection = MlpSelection::best_val_mse;
  RieszSpec riesz;
  // mu(X, 1) for OutcomeClass::oracle.
  std::function<Vector(const Matrix&)> oracle_outcome;
  std::uint64_t seed = 1;
};

struct RecipeOutcome {
  std::optional<EstimateResult> result;
  std::string error;
};

// Runs every requested recipe on one dataset, sharing nuisance fits. A recipe
// that throws is reported through RecipeOutcome::error.
std::map<EstimatorId, RecipeOutcome> run_recipes(const Dataset& data, const FoldPlan& plan,
                                                 const RecipeSettings& settings,
                                                 const std::vector<EstimatorId>& ids);

// Single recipe; rethrows its error.
EstimateResult crossfit(const Dataset& data, const FoldPlan& plan,
                        const RecipeSettings& settings, EstimatorId id);

// Cross-fitted propensity values for every row (each row predicted by the
// model trained without its fold), truncated per settings.
Vector crossfit_propensity(const Dataset& data, const FoldPlan& plan,
                           const RecipeSettings& settings);

// Grid search on treated rows: params minimising validation MSE of the
// stage-1 fit under the given pseudo-gradient. Ties keep the earlier entry.
BoostParams grid_search_gbrt(const BoostSample& train, const BoostSample& val,
                             const std::vector<BoostParams>& grid,
                             const PseudoGradient& gradient = squared_loss_gradient);

}  // namespace clearner
