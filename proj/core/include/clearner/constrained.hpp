#pragma once

#include <functional>
#include <variant>

#include "clearner/common.hpp"
#include "clearner/models.hpp"

namespace clearner {

struct ConstrainedFit {
  std::variant<LinearModel, LogisticModel> model;
  double multiplier = 0.0;
  // Constraint value at the solution (raw sum over eval rows).
  double residual = 0.0;
  int iterations = 0;

  const LinearModel& linear() const { return std::get<LinearModel>(model); }
  const LogisticModel& logistic() const { return std::get<LogisticModel>(model); }
};

// Closed-form constrained least squares on treated train/eval rows:
// theta = OLS(y_tr + lambda*h_tr) with lambda chosen so h_ev'(y_ev - x_ev theta) = 0.
// x_* are design matrices (add the intercept column beforehand if wanted).
ConstrainedFit solve_constrained_ols(const Matrix& x_tr, const Vector& y_tr,
                                     const Vector& h_tr, const Matrix& x_ev,
                                     const Vector& y_ev, const Vector& h_ev);

struct ValueGrad {
  double value = 0.0;
  Vector gradient;
};
using SmoothFunction = std::function<ValueGrad(const Vector&)>;

struct AugLagOptions {
  double tol = 1e-8;
  int max_outer = 40;
  int max_inner = 1000;  // BFGS iterations per outer round
  double penalty0 = 1.0;
};

struct AugLagResult {
  Vector theta;
  double multiplier = 0.0;
  double residual = 0.0;
  double stationarity = 0.0;
  double penalty = 0.0;
  int iterations = 0;  // total inner iterations
  int outer = 0;
};

// min f(theta) s.t. c(theta) = 0. Throws ConvergenceError (carrying the best
// iterate) when the outer budget runs out.
AugLagResult augmented_lagrangian(const SmoothFunction& objective,
                                  const SmoothFunction& constraint, const Vector& theta0,
                                  const AugLagOptions& options = {});

// Fractional-logistic NLL on train rows subject to
// sum h_ev (ytil_ev - sigma(x_ev theta)) = 0.
ConstrainedFit solve_clearner_logistic(const Matrix& x_tr, const Vector& ytil_tr,
                                       const Matrix& x_ev, const Vector& ytil_ev,
                                       const Vector& h_ev, bool intercept = false);

// Logistic propensity by maximum likelihood on (x_tr, a_tr) subject to
// sum_ev A mu e^{-x'beta} - sum_ev (1-A) mu = 0, i.e. sum_ev (1 - A/pi) mu = 0.
// residual is sum_ev (1 - A/pi) mu.
ConstrainedFit solve_dual_propensity(const Matrix& x_tr, const Vector& a_tr,
                                     const Matrix& x_ev, const Vector& a_ev,
                                     const Vector& mu_ev, bool intercept = false);
ConstrainedFit solve_dual_propensity(const Matrix& x, const Vector& a, const Vector& mu,
                                     bool intercept = false);

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

// Minimises f. Non-finite values are treated as infeasible.
NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             const Vector& step, int max_evaluations = 2000,
                             double tol = 1e-12);

struct ParamFlucFit {
  Vector omega;       // step-1 fluctuated propensity
  Vector omega_step;  // step-2 propensity used for weighting
  double lambda1 = 0.0;
  Eigen::Vector2d lambda_step = Eigen::Vector2d::Zero();  // on [1, mu/mean|mu|]
  double foc_residual = 0.0;  // sum (1 - A/omega_step) mu / sum |mu|
  int evaluations = 0;
};

ParamFlucFit solve_param_fluc(const Vector& a, const Vector& pi_hat, const Vector& mu_hat);

}  // namespace clearner
