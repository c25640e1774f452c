#include "clearner/models.hpp"

#include <algorithm>
#include <string>

namespace clearner {

namespace {

constexpr double kConditionLimit = 1e10;
constexpr double kSeparationLogit = 30.0;

// Column scales used to condition solves. Columns of zeros keep scale 1.
Vector column_rms(const Matrix& x) {
  Vector s(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double rms = std::sqrt(x.col(j).squaredNorm() / std::max<Index>(1, x.rows()));
    s[j] = rms > 0.0 ? rms : 1.0;
  }
  return s;
}

struct NewtonResult {
  Vector z;
  FitDiagnostics diag;
};

double weighted_nll(const Matrix& z, const Vector& coef, const Vector& target,
                    const Vector& w) {
  const Vector eta = z * coef;
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i)
    if (w[i] != 0.0) total += w[i] * bernoulli_nll_logit(eta[i], target[i]);
  return total;
}

// Newton with step halving on the weighted Bernoulli (quasi-)likelihood in
// scaled coordinates. Gradient norm is per unit weight.
NewtonResult newton_logistic(const Matrix& z, const Vector& target, const Vector& w,
                             int max_iter, double tol) {
  const Index p = z.cols();
  const double wsum = w.sum();
  NewtonResult out;
  out.z = Vector::Zero(p);
  double f = weighted_nll(z, out.z, target, w);
  for (int it = 0; it <= max_iter; ++it) {
    const Vector eta = z * out.z;
    Vector prob(eta.size()), curv(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      prob[i] = logistic(eta[i]);
      curv[i] = w[i] * prob[i] * (1.0 - prob[i]);
    }
    const Vector grad = z.transpose() * (w.array() * (prob - target).array()).matrix();
    out.diag.iterations = it;
    out.diag.gradient_norm = grad.lpNorm<Eigen::Infinity>() / wsum;
    if (out.diag.gradient_norm <= tol) {
      out.diag.converged = true;
      return out;
    }
    if (it == max_iter) break;
    Matrix hess = z.transpose() * curv.asDiagonal() * z;
    Eigen::LDLT<Matrix> ldlt(hess);
    Vector step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      step = ldlt.solve(grad);
    }
    if (step.size() != p || !step.allFinite()) {
      hess.diagonal().array() += 1e-10 * (1.0 + hess.diagonal().maxCoeff());
      step = hess.ldlt().solve(grad);
    }
    double t = 1.0;
    bool improved = false;
    for (int half = 0; half <= 30; ++half) {
      const Vector trial = out.z - t * step;
      const double ft = weighted_nll(z, trial, target, w);
      if (ft <= f) {
        out.z = trial;
        improved = ft < f || half == 0;
        f = ft;
        break;
      }
      t *= 0.5;
    }
    if (!improved) {
      // No descent left at double precision; report the achieved norm.
      out.diag.converged = false;
      return out;
    }
  }
  out.diag.converged = false;
  return out;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// FISTA with gradient restart on sum NLL(z) + sum_j pen_j |z_j|.
NewtonResult fista_logistic(const Matrix& z, const Vector& a, const Vector& pen,
                            int max_iter, double tol) {
  const Index n = z.rows();
  const Index p = z.cols();
  auto gradient = [&](const Vector& c) {
    Vector eta = z * c;
    for (Index i = 0; i < n; ++i) eta[i] = logistic(eta[i]) - a[i];
    return Vector(z.transpose() * eta);
  };
  auto subgrad_norm = [&](const Vector& c, const Vector& g) {
    double worst = 0.0;
    for (Index j = 0; j < p; ++j) {
      double r;
      if (c[j] > 0) r = std::abs(g[j] + pen[j]);
      else if (c[j] < 0) r = std::abs(g[j] - pen[j]);
      else r = std::max(0.0, std::abs(g[j]) - pen[j]);
      worst = std::max(worst, r);
    }
    return worst / static_cast<double>(n);
  };

  // Lipschitz constant of the smooth part is at most ||Z||^2 / 4.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(z.transpose() * z, Eigen::EigenvaluesOnly);
  const double lip = std::max(1e-12, 0.25 * eig.eigenvalues().maxCoeff());
  const double step = 1.0 / lip;

  NewtonResult out;
  Vector x = Vector::Zero(p), x_prev = x, yk = x;
  double t = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Vector gy = gradient(yk);
    Vector next(p);
    for (Index j = 0; j < p; ++j)
      next[j] = soft_threshold(yk[j] - step * gy[j], step * pen[j]);
    // Restart momentum when the step opposes the previous direction.
    if ((yk - next).dot(next - x) > 0.0) {
      t = 1.0;
      yk = x;
      continue;
    }
    x_prev = x;
    x = next;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    yk = x + ((t - 1.0) / t_next) * (x - x_prev);
    t = t_next;
    out.diag.iterations = it + 1;
    if ((it + 1) % 10 == 0 || it + 1 == max_iter) {
      const double norm = subgrad_norm(x, gradient(x));
      out.diag.gradient_norm = norm;
      if (norm <= tol) {
        out.z = x;
        out.diag.converged = true;
        return out;
      }
    }
  }
  out.z = x;
  out.diag.gradient_norm = subgrad_norm(x, gradient(x));
  out.diag.converged = out.diag.gradient_norm <= tol;
  return out;
}

void check_binary_classes(const Vector& a) {
  bool has0 = false, has1 = false;
  for (Index i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) has0 = true;
    else if (a[i] == 1.0) has1 = true;
    else throw InvalidArgument("treatment indicator must be binary");
  }
  if (!has0 || !has1)
    throw InvalidArgument("logistic fit needs both classes present");
}

}  // namespace

double bernoulli_nll_logit(double eta, double target) {
  const double softplus = eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  return softplus - target * eta;
}

Matrix design_matrix(const Matrix& x, bool intercept) {
  if (!intercept) return x;
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

Vector LinearModel::predict(const Matrix& x) const {
  return design_matrix(x, intercept_used) * coef;
}

Vector LogisticModel::linear_predictor(const Matrix& x) const {
  return design_matrix(x, intercept_used) * coef;
}

Vector LogisticModel::predict(const Matrix& x) const {
  Vector eta = linear_predictor(x);
  for (Index i = 0; i < eta.size(); ++i) eta[i] = logistic(eta[i]);
  return eta;
}

Vector OutcomeScaling::scale(const Vector& y) const {
  return (y.array() - y_min) / (y_max - y_min);
}

Vector OutcomeScaling::unscale(const Vector& t) const {
  return y_min + t.array() * (y_max - y_min);
}

LinearModel fit_ols(const Matrix& x, const Vector& y,
                    const std::optional<Vector>& weights, bool intercept) {
  if (x.rows() != y.size()) throw InvalidArgument("fit_ols: rows(x) != len(y)");
  const Matrix xd = design_matrix(x, intercept);
  if (xd.cols() == 0) throw InvalidArgument("fit_ols: empty design");
  Vector sw = Vector::Ones(y.size());
  if (weights) {
    if (weights->size() != y.size()) throw InvalidArgument("fit_ols: weight length");
    if ((weights->array() < 0.0).any()) throw InvalidArgument("fit_ols: negative weight");
    sw = weights->array().sqrt();
  }
  Matrix zw = sw.asDiagonal() * xd;
  const Vector yw = sw.asDiagonal() * y;
  Vector s(zw.cols());
  for (Index j = 0; j < zw.cols(); ++j) {
    s[j] = zw.col(j).norm();
    if (s[j] == 0.0)
      throw SingularSystem("fit_ols: design column " + std::to_string(j) +
                               " is zero after weighting",
                           std::numeric_limits<double>::infinity());
    zw.col(j) /= s[j];
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(zw);
  const auto rdiag = qr.matrixR().diagonal().cwiseAbs();
  const double cond = rdiag.size() ? rdiag.maxCoeff() / rdiag.minCoeff() : 0.0;
  if (zw.rows() < zw.cols() || !(cond < kConditionLimit))
    throw SingularSystem("fit_ols: design is rank deficient (condition estimate " +
                             std::to_string(cond) + ")",
                         cond);
  LinearModel model;
  model.intercept_used = intercept;
  model.coef = qr.solve(yw).cwiseQuotient(s);
  return model;
}

LogisticModel fit_logistic(const Matrix& x, const Vector& a, bool intercept, double l1) {
  if (x.rows() != a.size()) throw InvalidArgument("fit_logistic: rows(x) != len(a)");
  if (!(l1 >= 0.0)) throw InvalidArgument("fit_logistic: l1 must be >= 0");
  check_binary_classes(a);
  const Matrix xd = design_matrix(x, intercept);
  const Vector s = column_rms(xd);
  const Matrix z = xd * s.cwiseInverse().asDiagonal();

  NewtonResult fit;
  if (l1 == 0.0) {
    fit = newton_logistic(z, a, Vector::Ones(a.size()), 100, 1e-8);
  } else {
    Vector pen = l1 * s.cwiseInverse();
    if (intercept) pen[0] = 0.0;
    fit = fista_logistic(z, a, pen, 5000, 1e-8);
  }
  const double max_eta = (z * fit.z).cwiseAbs().maxCoeff();
  if (max_eta > kSeparationLogit)
    throw SeparationError(
        "fit_logistic: classes are (quasi-)separated and coefficients diverge; "
        "use l1 > 0 or truncate propensities");
  LogisticModel model;
  model.intercept_used = intercept;
  model.coef = fit.z.cwiseQuotient(s);
  model.diagnostics = fit.diag;
  return model;
}

LogisticModel fit_fractional_logistic(const Matrix& x, const Vector& y_frac,
                                      const Vector& weights, bool intercept) {
  if (x.rows() != y_frac.size() || weights.size() != y_frac.size())
    throw InvalidArgument("fit_fractional_logistic: length mismatch");
  if ((y_frac.array() < 0.0).any() || (y_frac.array() > 1.0).any())
    throw InvalidArgument("fit_fractional_logistic: targets must lie in [0,1]");
  if ((weights.array() < 0.0).any() || !(weights.sum() > 0.0))
    throw InvalidArgument("fit_fractional_logistic: weights must be >= 0 with positive sum");
  const Matrix xd = design_matrix(x, intercept);
  const Vector s = column_rms(xd);
  const Matrix z = xd * s.cwiseInverse().asDiagonal();
  NewtonResult fit = newton_logistic(z, y_frac, weights, 100, 1e-8);
  if (!fit.diag.converged)
    throw ConvergenceError("fit_fractional_logistic: score norm " +
                               std::to_string(fit.diag.gradient_norm) +
                               " after " + std::to_string(fit.diag.iterations) +
                               " iterations",
                           fit.diag.gradient_norm, fit.diag.iterations,
                           fit.z.cwiseQuotient(s));
  LogisticModel model;
  model.intercept_used = intercept;
  model.coef = fit.z.cwiseQuotient(s);
  model.diagnostics = fit.diag;
  return model;
}

std::pair<OutcomeScaling, Vector> scale_outcomes(const Vector& y_treated, double alpha) {
  if (y_treated.size() == 0) throw InvalidArgument("scale_outcomes: no treated outcomes");
  if (!(alpha >= 0.0)) throw InvalidArgument("scale_outcomes: alpha must be >= 0");
  const double lo = y_treated.minCoeff();
  const double hi = y_treated.maxCoeff();
  OutcomeScaling scaling;
  scaling.alpha = alpha;
  scaling.y_min = lo - alpha * std::abs(lo);
  scaling.y_max = hi + alpha * std::abs(hi);
  if (!(scaling.y_max > scaling.y_min))
    throw InvalidArgument("scale_outcomes: y_max equals y_min after margins");
  return {scaling, scaling.scale(y_treated)};
}

}  // namespace clearner
