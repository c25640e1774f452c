#pragma once

#include <optional>
#include <utility>

#include "clearner/common.hpp"

namespace clearner {

struct FitDiagnostics {
  int iterations = 0;
  // Per-observation (sub)gradient max-norm at the returned coefficients.
  double gradient_norm = 0.0;
  bool converged = true;
};

// Prepends a column of ones when intercept is set. The intercept is coef[0].
Matrix design_matrix(const Matrix& x, bool intercept);

struct LinearModel {
  Vector coef;
  bool intercept_used = false;

  Vector predict(const Matrix& x) const;
};

// Logistic-link model; predict() returns sigma(x'coef) in (0,1). Fractional
// outcome fits reuse this record with predictions on the scaled outcome space.
struct LogisticModel {
  Vector coef;
  bool intercept_used = false;
  FitDiagnostics diagnostics;

  Vector linear_predictor(const Matrix& x) const;
  Vector predict(const Matrix& x) const;
};

struct OutcomeScaling {
  double y_min = 0.0;
  double y_max = 1.0;
  double alpha = 0.0;

  double scale(double y) const { return (y - y_min) / (y_max - y_min); }
  double unscale(double t) const { return y_min + t * (y_max - y_min); }
  Vector scale(const Vector& y) const;
  Vector unscale(const Vector& t) const;
};

LinearModel fit_ols(const Matrix& x, const Vector& y,
                    const std::optional<Vector>& weights = std::nullopt,
                    bool intercept = true);

// l1 == 0: Newton with step halving. l1 > 0: FISTA on sum NLL + l1*|coef|_1
// (intercept unpenalised).
LogisticModel fit_logistic(const Matrix& x, const Vector& a, bool intercept,
                           double l1 = 0.0);

// Weighted Bernoulli quasi-likelihood with targets in [0,1].
LogisticModel fit_fractional_logistic(const Matrix& x, const Vector& y_frac,
                                      const Vector& weights, bool intercept = false);

// Margins: y_max = max + alpha*|max|, y_min = min - alpha*|min|.
std::pair<OutcomeScaling, Vector> scale_outcomes(const Vector& y_treated,
                                                 double alpha = 0.1);

// Bernoulli negative log-likelihood of a target in [0,1] at logit eta,
// log(1 + e^eta) - target*eta. Shared by the constrained solvers.
double bernoulli_nll_logit(double eta, double target);

}  // namespace clearner
