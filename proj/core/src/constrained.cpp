#include "clearner/constrained.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace clearner {

namespace {

Vector column_rms(const Matrix& x) {
  Vector s(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double rms = std::sqrt(x.col(j).squaredNorm() / std::max<Index>(1, x.rows()));
    s[j] = rms > 0.0 ? rms : 1.0;
  }
  return s;
}

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

struct InnerResult {
  Vector theta;
  double gradient_norm = 0.0;
  int iterations = 0;
};

// BFGS with Armijo backtracking. The acceptance test allows a few ulps of
// round-off so the solve can reach gradient norms near machine precision.
InnerResult bfgs(const SmoothFunction& f, Vector theta, double gtol, int max_iter) {
  const Index p = theta.size();
  ValueGrad cur = f(theta);
  Matrix hinv = Matrix::Identity(p, p);
  bool fresh = true;
  InnerResult out;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it;
    if (!(inf_norm(cur.gradient) > gtol)) break;
    Vector dir = -hinv * cur.gradient;
    double slope = cur.gradient.dot(dir);
    if (!(slope < 0.0)) {
      hinv.setIdentity();
      fresh = true;
      dir = -cur.gradient;
      slope = -cur.gradient.squaredNorm();
    }
    const double slack = 16.0 * std::numeric_limits<double>::epsilon() * std::abs(cur.value);
    double t = 1.0;
    ValueGrad next;
    Vector trial;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      trial = theta + t * dir;
      if (trial == theta) break;
      next = f(trial);
      if (next.gradient.allFinite()) {
        const double armijo = cur.value + 1e-4 * t * slope;
        // Round-off acceptance only counts when stationarity improves.
        if (next.value <= armijo ||
            (next.value <= armijo + slack && inf_norm(next.gradient) < inf_norm(cur.gradient))) {
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (fresh) break;
      hinv.setIdentity();
      fresh = true;
      continue;
    }
    const Vector s = trial - theta;
    const Vector y = next.gradient - cur.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) hinv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Matrix ident = Matrix::Identity(p, p);
      hinv = (ident - rho * s * y.transpose()) * hinv * (ident - rho * y * s.transpose()) +
             rho * s * s.transpose();
      fresh = false;
    }
    theta = trial;
    cur = next;
    out.iterations = it + 1;
  }
  out.theta = std::move(theta);
  out.gradient_norm = inf_norm(cur.gradient);
  return out;
}

}  // namespace

ConstrainedFit solve_constrained_ols(const Matrix& x_tr, const Vector& y_tr,
                                     const Vector& h_tr, const Matrix& x_ev,
                                     const Vector& y_ev, const Vector& h_ev) {
  if (x_tr.rows() != y_tr.size() || h_tr.size() != y_tr.size() ||
      x_ev.rows() != y_ev.size() || h_ev.size() != y_ev.size() || x_tr.cols() != x_ev.cols())
    throw InvalidArgument("solve_constrained_ols: dimension mismatch");
  const Vector s = column_rms(x_tr);
  const Matrix z = x_tr * s.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  const auto rdiag = qr.matrixR().diagonal().cwiseAbs();
  const double cond = rdiag.size() ? rdiag.maxCoeff() / rdiag.minCoeff() : 0.0;
  if (z.rows() < z.cols() || !(cond < 1e10))
    throw SingularSystem("solve_constrained_ols: singular Gram matrix (condition estimate " +
                             std::to_string(cond) + ")",
                         cond);
  // (X'X)^{-1} X' b is the least-squares solution of X v = b.
  const Vector theta_ols = qr.solve(y_tr).cwiseQuotient(s);
  const Vector v = qr.solve(h_tr).cwiseQuotient(s);
  const double num = h_ev.dot(y_ev - x_ev * theta_ols);
  const double den = h_ev.dot(x_ev * v);
  if (!(std::abs(den) >= 1e-12 * h_ev.squaredNorm()) || den == 0.0)
    throw DegenerateDirection("solve_constrained_ols: KKT denominator " + std::to_string(den) +
                              " is numerically zero");
  const double lambda = num / den;
  LinearModel model;
  model.coef = theta_ols + lambda * v;
  model.intercept_used = false;
  ConstrainedFit fit;
  fit.residual = h_ev.dot(y_ev - x_ev * model.coef);
  fit.model = std::move(model);
  fit.multiplier = lambda;
  return fit;
}

AugLagResult augmented_lagrangian(const SmoothFunction& objective,
                                  const SmoothFunction& constraint, const Vector& theta0,
                                  const AugLagOptions& options) {
  const ValueGrad f0 = objective(theta0);
  const double stat_tol = options.tol * (1.0 + inf_norm(f0.gradient));
  AugLagResult res;
  res.theta = theta0;
  res.penalty = options.penalty0;
  double nu = 0.0;
  double previous = std::abs(constraint(theta0).value);
  double best_violation = std::numeric_limits<double>::infinity();
  Vector best = theta0;

  for (int outer = 1; outer <= options.max_outer; ++outer) {
    const double rho = res.penalty;
    const double mult = nu;
    SmoothFunction lagrangian = [&](const Vector& th) {
      ValueGrad fv = objective(th);
      const ValueGrad cv = constraint(th);
      fv.value += mult * cv.value + 0.5 * rho * cv.value * cv.value;
      fv.gradient += (mult + rho * cv.value) * cv.gradient;
      if (!std::isfinite(fv.value)) fv.value = std::numeric_limits<double>::infinity();
      return fv;
    };
    InnerResult inner = bfgs(lagrangian, res.theta, stat_tol, options.max_inner);
    res.theta = inner.theta;
    res.iterations += inner.iterations;
    res.outer = outer;
    const ValueGrad cv = constraint(res.theta);
    nu += rho * cv.value;
    const ValueGrad fv = objective(res.theta);
    res.multiplier = nu;
    res.residual = cv.value;
    res.stationarity = inf_norm(fv.gradient + nu * cv.gradient);
    if (std::abs(cv.value) < best_violation) {
      best_violation = std::abs(cv.value);
      best = res.theta;
    }
    if (std::abs(cv.value) <= options.tol && res.stationarity <= stat_tol) {
      // Project onto the constraint surface; the move is O(tol) so
      // stationarity is unaffected to working precision.
      for (int k = 0; k < 5 && res.residual != 0.0; ++k) {
        const ValueGrad c = constraint(res.theta);
        const double g2 = c.gradient.squaredNorm();
        if (g2 == 0.0) break;
        const Vector step = res.theta - (c.value / g2) * c.gradient;
        const double next = constraint(step).value;
        if (!(std::abs(next) < std::abs(res.residual))) break;
        res.theta = step;
        res.residual = next;
      }
      return res;
    }
    if (std::abs(cv.value) > 0.25 * previous) res.penalty *= 10.0;
    previous = std::abs(cv.value);
  }
  throw ConvergenceError("augmented_lagrangian: budget exhausted with constraint " +
                             std::to_string(res.residual) + " and stationarity " +
                             std::to_string(res.stationarity),
                         res.residual, res.iterations, best);
}

ConstrainedFit solve_clearner_logistic(const Matrix& x_tr, const Vector& ytil_tr,
                                       const Matrix& x_ev, const Vector& ytil_ev,
                                       const Vector& h_ev, bool intercept) {
  if (x_tr.rows() != ytil_tr.size() || x_ev.rows() != ytil_ev.size() ||
      h_ev.size() != ytil_ev.size() || x_tr.cols() != x_ev.cols())
    throw InvalidArgument("solve_clearner_logistic: dimension mismatch");
  LogisticModel start =
      fit_fractional_logistic(x_tr, ytil_tr, Vector::Ones(ytil_tr.size()), intercept);
  const double scale = h_ev.cwiseAbs().sum();
  ConstrainedFit fit;
  if (scale == 0.0) {
    fit.model = start;
    return fit;
  }
  const Matrix dt = design_matrix(x_tr, intercept);
  const Matrix de = design_matrix(x_ev, intercept);
  const Vector s = column_rms(dt);
  const Matrix zt = dt * s.cwiseInverse().asDiagonal();
  const Matrix ze = de * s.cwiseInverse().asDiagonal();
  const double m = static_cast<double>(zt.rows());

  SmoothFunction objective = [&](const Vector& th) {
    const Vector eta = zt * th;
    ValueGrad out;
    Vector resid(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      const double p = logistic(eta[i]);
      out.value += bernoulli_nll_logit(eta[i], ytil_tr[i]);
      resid[i] = p - ytil_tr[i];
    }
    out.value /= m;
    out.gradient = zt.transpose() * resid / m;
    return out;
  };
  SmoothFunction constraint = [&](const Vector& th) {
    const Vector eta = ze * th;
    ValueGrad out;
    Vector dp(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      const double p = logistic(eta[i]);
      out.value += h_ev[i] * (ytil_ev[i] - p);
      dp[i] = -h_ev[i] * p * (1.0 - p);
    }
    out.value /= scale;
    out.gradient = ze.transpose() * dp / scale;
    return out;
  };
  const AugLagResult al = augmented_lagrangian(objective, constraint, start.coef.cwiseProduct(s));
  LogisticModel model;
  model.intercept_used = intercept;
  model.coef = al.theta.cwiseQuotient(s);
  model.diagnostics.iterations = al.iterations;
  model.diagnostics.gradient_norm = al.stationarity;
  const Vector pred = model.predict(x_ev);
  fit.residual = h_ev.dot(ytil_ev - pred);
  fit.multiplier = al.multiplier;
  fit.iterations = al.iterations;
  fit.model = std::move(model);
  return fit;
}

ConstrainedFit solve_dual_propensity(const Matrix& x_tr, const Vector& a_tr,
                                     const Matrix& x_ev, const Vector& a_ev,
                                     const Vector& mu_ev, bool intercept) {
  if (x_tr.rows() != a_tr.size() || x_ev.rows() != a_ev.size() || mu_ev.size() != a_ev.size() ||
      x_tr.cols() != x_ev.cols())
    throw InvalidArgument("solve_dual_propensity: dimension mismatch");
  const double treated = a_tr.sum();
  if (treated == 0.0 || treated == static_cast<double>(a_tr.size()))
    throw InvalidArgument("solve_dual_propensity: needs both treated and control rows");
  const double scale = mu_ev.cwiseAbs().sum();
  const LogisticModel start = fit_logistic(x_tr, a_tr, intercept, 0.0);
  ConstrainedFit fit;
  auto balance = [&](const LogisticModel& m) {
    const Vector pi = m.predict(x_ev);
    return (Vector::Ones(pi.size()) - a_ev.cwiseQuotient(pi)).dot(mu_ev);
  };
  if (scale == 0.0) {
    fit.residual = 0.0;
    fit.model = start;
    return fit;
  }
  const Matrix dt = design_matrix(x_tr, intercept);
  const Matrix de = design_matrix(x_ev, intercept);
  const Vector s = column_rms(dt);
  const Matrix zt = dt * s.cwiseInverse().asDiagonal();
  const Matrix ze = de * s.cwiseInverse().asDiagonal();
  const double m = static_cast<double>(zt.rows());
  const double control_term = (Vector::Ones(a_ev.size()) - a_ev).dot(mu_ev);

  SmoothFunction objective = [&](const Vector& th) {
    const Vector eta = zt * th;
    ValueGrad out;
    Vector resid(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      const double p = logistic(eta[i]);
      out.value += bernoulli_nll_logit(eta[i], a_tr[i]);
      resid[i] = p - a_tr[i];
    }
    out.value /= m;
    out.gradient = zt.transpose() * resid / m;
    return out;
  };
  SmoothFunction constraint = [&](const Vector& th) {
    const Vector eta = ze * th;
    ValueGrad out;
    Vector d(eta.size());
    double total = 0.0;
    for (Index i = 0; i < eta.size(); ++i) {
      const double term = a_ev[i] == 0.0 ? 0.0 : a_ev[i] * mu_ev[i] * std::exp(-eta[i]);
      total += term;
      d[i] = -term;
    }
    out.value = (total - control_term) / scale;
    out.gradient = ze.transpose() * d / scale;
    return out;
  };
  const AugLagResult al = augmented_lagrangian(objective, constraint, start.coef.cwiseProduct(s));
  LogisticModel model;
  model.intercept_used = intercept;
  model.coef = al.theta.cwiseQuotient(s);
  model.diagnostics.iterations = al.iterations;
  model.diagnostics.gradient_norm = al.stationarity;
  fit.residual = balance(model);
  fit.multiplier = al.multiplier;
  fit.iterations = al.iterations;
  fit.model = std::move(model);
  return fit;
}

ConstrainedFit solve_dual_propensity(const Matrix& x, const Vector& a, const Vector& mu,
                                     bool intercept) {
  return solve_dual_propensity(x, a, x, a, mu, intercept);
}

NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             const Vector& step, int max_evaluations, double tol) {
  const Index n = x0.size();
  NelderMeadResult out;
  auto eval = [&](const Vector& x) {
    ++out.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  vals[0] = eval(x0);
  for (Index j = 0; j < n; ++j) {
    pts[static_cast<std::size_t>(j + 1)][j] += step[j];
    vals[static_cast<std::size_t>(j + 1)] = eval(pts[static_cast<std::size_t>(j + 1)]);
  }
  std::vector<std::size_t> order(pts.size());
  while (out.evaluations < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return vals[l] < vals[r]; });
    const std::size_t best = order.front(), worst = order.back(),
                      second = order[order.size() - 2];
    double size = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      size = std::max(size, (pts[i] - pts[best]).lpNorm<Eigen::Infinity>());
    const double fspread = vals[worst] - vals[best];
    if (size <= tol * (1.0 + pts[best].lpNorm<Eigen::Infinity>()) ||
        (std::isfinite(fspread) && fspread <= 1e-15 * (1.0 + std::abs(vals[best])) &&
         size <= std::sqrt(tol))) {
      out.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);
    const Vector xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const Vector xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                              : Vector(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  out.x = pts[static_cast<std::size_t>(it - vals.begin())];
  out.value = *it;
  return out;
}

ParamFlucFit solve_param_fluc(const Vector& a, const Vector& pi_hat, const Vector& mu_hat) {
  const Index n = a.size();
  if (pi_hat.size() != n || mu_hat.size() != n)
    throw InvalidArgument("solve_param_fluc: length mismatch");
  if (a.sum() == 0.0) throw InvalidArgument("solve_param_fluc: no treated rows");
  constexpr double lo = 1e-6, hi = 1.0 - 1e-6;
  ParamFlucFit fit;
  const double mscale = mu_hat.cwiseAbs().mean();
  if (mscale == 0.0) {
    fit.omega = pi_hat;
    fit.omega_step = pi_hat;
    return fit;
  }
  const Vector mu = mu_hat / mscale;
  const Vector h = (Vector::Ones(n) - pi_hat).cwiseProduct(mu);

  auto omega_at = [&](double lambda) {
    Vector w = pi_hat + lambda * h;
    return Vector(w.cwiseMax(lo).cwiseMin(hi));
  };
  auto step1 = [&](const Vector& l) {
    const Vector w = omega_at(l[0]);
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) ll += a[i] == 1.0 ? std::log(w[i]) : std::log1p(-w[i]);
    return -ll;
  };
  const NelderMeadResult r1 = nelder_mead(step1, Vector::Zero(1), Vector::Constant(1, 0.05));
  if (!r1.converged)
    throw ConvergenceError("solve_param_fluc: step-1 simplex did not converge", r1.value,
                           r1.evaluations, r1.x);
  fit.lambda1 = r1.x[0];
  fit.omega = omega_at(fit.lambda1);
  fit.evaluations = r1.evaluations;

  const Vector& w = fit.omega;
  auto omega_step = [&](const Eigen::Vector2d& l) {
    return Vector(w.array() + (1.0 - w.array()) * (l[0] + l[1] * mu.array()));
  };
  auto step2 = [&](const Vector& l) {
    const Vector ws = omega_step(Eigen::Vector2d(l[0], l[1]));
    double q = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (a[i] == 1.0) {
        if (!(ws[i] > lo)) return std::numeric_limits<double>::infinity();
        q += std::log(ws[i]) / (1.0 - w[i]);
      }
      q -= l[0] + l[1] * mu[i];
    }
    return -q;
  };
  const NelderMeadResult r2 = nelder_mead(step2, Vector::Zero(2), Vector::Constant(2, 0.01));
  if (!r2.converged)
    throw ConvergenceError("solve_param_fluc: step-2 simplex did not converge", r2.value,
                           r2.evaluations, r2.x);
  fit.evaluations += r2.evaluations;
  Eigen::Vector2d l(r2.x[0], r2.x[1]);

  // Newton polish on the concave step-2 objective.
  auto gradient_at = [&](const Eigen::Vector2d& lam, Eigen::Matrix2d* hess) {
    const Vector ws = omega_step(lam);
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    if (hess) hess->setZero();
    for (Index i = 0; i < n; ++i) {
      const Eigen::Vector2d b(1.0, mu[i]);
      g += (a[i] / ws[i] - 1.0) * b;
      if (hess && a[i] == 1.0)
        *hess -= (1.0 - w[i]) / (ws[i] * ws[i]) * (b * b.transpose());
    }
    return g;
  };
  for (int it = 0; it < 30; ++it) {
    Eigen::Matrix2d hess;
    const Eigen::Vector2d g = gradient_at(l, &hess);
    if (g.lpNorm<Eigen::Infinity>() <= 1e-12 * static_cast<double>(n)) break;
    const Eigen::Vector2d dir = -hess.ldlt().solve(g);
    if (!dir.allFinite()) break;
    const double f0 = step2(Vector(l));
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      const Eigen::Vector2d cand = l + t * dir;
      if (step2(Vector(cand)) <= f0) {
        l = cand;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  fit.lambda_step = l;
  fit.omega_step = omega_step(l);
  fit.foc_residual =
      (Vector::Ones(n) - a.cwiseQuotient(fit.omega_step)).dot(mu_hat) / mu_hat.cwiseAbs().sum();
  return fit;
}

}  // namespace clearner
