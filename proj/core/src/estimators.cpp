#include "clearner/estimators.hpp"

#include <algorithm>
#include <limits>
#include <boost/math/tools/roots.hpp>

namespace clearner {

namespace {

bool is_two_arm(const RieszSpec& spec) { return spec.two_arm(); }

void check_propensity(const RieszSpec& spec, const Vector& pi, const Vector& a) {
  for (Index i = 0; i < pi.size(); ++i) {
    if (!(pi[i] > 0.0) && a[i] == 1.0)
      throw InvalidArgument("propensity must be positive on treated rows");
    if (is_two_arm(spec) && !(pi[i] < 1.0))
      throw InvalidArgument("propensity equal to 1 under a two-arm representer");
  }
}

void fill_pi_diagnostics(EstimateDiagnostics& d, const Vector& pi) {
  if (pi.size() == 0) return;
  d.min_pi = pi.minCoeff();
  d.max_inv_pi = 1.0 / d.min_pi;
}

// Weights of untreated rows never enter the estimate.
void fill_treated_diagnostics(EstimateDiagnostics& d, const Vector& pi, const Vector& a) {
  d.min_pi = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < pi.size(); ++i)
    if (a[i] == 1.0) d.min_pi = std::min(d.min_pi, pi[i]);
  d.max_inv_pi = 1.0 / d.min_pi;
}

struct Pieces {
  Vector g1, g0;
  Vector alpha;   // representer values
  Vector mu_obs;  // mu(X, A)
  Vector m;       // g1 mu1 + g0 mu0
};

Pieces pieces(const Dataset& eval, const Vector& pi, const Vector& mu1, const Vector& mu0,
              const RieszSpec& spec) {
  const Index n = eval.n();
  if (pi.size() != n || mu1.size() != n) throw InvalidArgument("nuisance length mismatch");
  if (eval.n() == 0) throw InvalidArgument("empty evaluation set");
  check_propensity(spec, pi, eval.a);
  Pieces p;
  spec.coefficients(eval.x, p.g1, p.g0);
  p.alpha = riesz_values(spec, pi, eval.a, eval.x);
  if (is_two_arm(spec)) {
    if (mu0.size() != n) throw InvalidArgument("two-arm representer needs mu0");
    p.mu_obs = eval.a.cwiseProduct(mu1) + (Vector::Ones(n) - eval.a).cwiseProduct(mu0);
    p.m = p.g1.cwiseProduct(mu1) + p.g0.cwiseProduct(mu0);
  } else {
    p.mu_obs = mu1;
    p.m = mu1;
  }
  return p;
}

// Observed outcome with unobserved arms zeroed so they never enter sums.
Vector observed_y(const Dataset& eval, const RieszSpec& spec) {
  if (is_two_arm(spec)) return eval.y;
  return eval.a.cwiseProduct(eval.y);
}

double sum_inverse(const Vector& a, const Vector& pi) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] == 1.0) s += 1.0 / pi[i];
  return s;
}

double sum_inverse_control(const Vector& a, const Vector& pi) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] == 0.0) s += 1.0 / (1.0 - pi[i]);
  return s;
}

void residual_diagnostics(EstimateDiagnostics& d, const Vector& alpha, const Vector& y,
                          const Vector& mu_obs) {
  const double n = static_cast<double>(alpha.size());
  d.constraint_residual = std::abs(alpha.dot(y - mu_obs)) / n;
  d.constraint_scale = alpha.cwiseProduct(y).cwiseAbs().sum() / n;
}

}  // namespace

void RieszSpec::coefficients(const Matrix& x, Vector& g1, Vector& g0) const {
  const Index n = x.rows();
  switch (kind) {
    case RieszKind::mean_missing_outcome:
      g1 = Vector::Ones(n);
      g0 = Vector::Zero(n);
      return;
    case RieszKind::full_ate:
      g1 = Vector::Ones(n);
      g0 = -Vector::Ones(n);
      return;
    case RieszKind::policy_value:
      if (!policy) throw InvalidArgument("policy-value representer needs a policy rule");
      g1.resize(n);
      for (Index i = 0; i < n; ++i) g1[i] = policy(x.row(i));
      g0 = Vector::Ones(n) - g1;
      return;
  }
}

Vector riesz_values(const RieszSpec& spec, const Vector& pi_hat, const Vector& a,
                    const Matrix& x) {
  const Index n = a.size();
  if (pi_hat.size() != n || x.rows() != n) throw InvalidArgument("riesz_values: length mismatch");
  Vector g1, g0;
  spec.coefficients(x, g1, g0);
  Vector out(n);
  for (Index i = 0; i < n; ++i) {
    if (a[i] == 1.0) {
      if (!(pi_hat[i] > 0.0)) throw InvalidArgument("riesz_values: propensity must be > 0");
      out[i] = g1[i] / pi_hat[i];
    } else if (spec.two_arm()) {
      if (!(pi_hat[i] < 1.0))
        throw InvalidArgument("riesz_values: propensity equals 1 but the representer needs 1/(1-pi)");
      out[i] = g0[i] / (1.0 - pi_hat[i]);
    } else {
      out[i] = 0.0;
    }
  }
  return out;
}

EstimateResult make_estimate(double psi, double variance, EstimateDiagnostics diag) {
  EstimateResult r;
  r.psi_hat = psi;
  r.variance = std::max(0.0, variance);
  const double half = kZ95 * std::sqrt(r.variance);
  r.ci_low = psi - half;
  r.ci_high = psi + half;
  r.diagnostics = std::move(diag);
  return r;
}

Vector truncate(const Vector& pi_values, double eta) { return pi_values.cwiseMax(eta); }

NuisanceValues NuisanceFit::evaluate(const Matrix& x) const {
  NuisanceValues nv;
  if (pi_hat) nv.pi_hat = pi_hat(x);
  if (mu1) nv.mu1 = mu1(x);
  if (mu0) nv.mu0 = mu0(x);
  return nv;
}

EstimateResult finalize(const std::vector<FoldEstimate>& folds) {
  if (folds.empty()) throw InvalidArgument("finalize: no folds");
  Index total = 0;
  for (const auto& f : folds) total += f.influence.size();
  Vector pooled(total);
  Index off = 0;
  double psi = 0.0;
  EstimateDiagnostics d;
  d.min_pi = std::numeric_limits<double>::infinity();
  double eps_sum = 0.0, mult_sum = 0.0;
  int eps_count = 0, mult_count = 0;
  for (const auto& f : folds) {
    pooled.segment(off, f.influence.size()) = f.influence;
    off += f.influence.size();
    psi += f.psi;
    d.min_pi = std::min(d.min_pi, f.diagnostics.min_pi);
    d.max_inv_pi = std::max(d.max_inv_pi, f.diagnostics.max_inv_pi);
    if (f.diagnostics.constraint_residual) {
      d.constraint_residual =
          std::max(d.constraint_residual.value_or(0.0), *f.diagnostics.constraint_residual);
      d.constraint_scale =
          std::max(d.constraint_scale.value_or(0.0), f.diagnostics.constraint_scale.value_or(0.0));
    }
    if (f.diagnostics.epsilon) {
      eps_sum += *f.diagnostics.epsilon;
      ++eps_count;
    }
    if (f.diagnostics.multiplier) {
      mult_sum += *f.diagnostics.multiplier;
      ++mult_count;
    }
  }
  if (!std::isfinite(d.min_pi)) d.min_pi = 0.0;
  if (eps_count) d.epsilon = eps_sum / eps_count;
  if (mult_count) d.multiplier = mult_sum / mult_count;
  psi /= static_cast<double>(folds.size());
  const double variance = empirical_variance(pooled) / static_cast<double>(total);
  return make_estimate(psi, variance, std::move(d));
}

FoldEstimate fold_direct(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  FoldEstimate f;
  Vector g1, g0;
  spec.coefficients(eval.x, g1, g0);
  if (nv.mu1.size() != eval.n()) throw InvalidArgument("direct: mu length mismatch");
  f.influence = g1.cwiseProduct(nv.mu1);
  if (spec.two_arm()) {
    if (nv.mu0.size() != eval.n()) throw InvalidArgument("direct: two-arm representer needs mu0");
    f.influence += g0.cwiseProduct(nv.mu0);
  }
  f.psi = f.influence.mean();
  fill_pi_diagnostics(f.diagnostics, nv.pi_hat);
  return f;
}

FoldEstimate fold_ipw(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  check_propensity(spec, nv.pi_hat, eval.a);
  FoldEstimate f;
  const Vector alpha = riesz_values(spec, nv.pi_hat, eval.a, eval.x);
  f.influence = alpha.cwiseProduct(observed_y(eval, spec));
  f.psi = f.influence.mean();
  fill_pi_diagnostics(f.diagnostics, nv.pi_hat);
  return f;
}

FoldEstimate fold_ipw_sn(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  check_propensity(spec, nv.pi_hat, eval.a);
  const Index n = eval.n();
  const double nd = static_cast<double>(n);
  Vector g1, g0;
  spec.coefficients(eval.x, g1, g0);
  const Vector y = observed_y(eval, spec);
  const double s1 = sum_inverse(eval.a, nv.pi_hat);
  if (s1 == 0.0) throw InvalidArgument("ipw_sn: zero self-normalisation denominator");
  const double s0 = spec.two_arm() ? sum_inverse_control(eval.a, nv.pi_hat) : 1.0;
  if (s0 == 0.0) throw InvalidArgument("ipw_sn: zero control normalisation denominator");
  FoldEstimate f;
  f.influence = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    if (eval.a[i] == 1.0) {
      f.influence[i] = g1[i] * y[i] / (nv.pi_hat[i] * s1 / nd);
    } else if (spec.two_arm()) {
      f.influence[i] = g0[i] * y[i] / ((1.0 - nv.pi_hat[i]) * s0 / nd);
    }
  }
  f.psi = f.influence.mean();
  fill_pi_diagnostics(f.diagnostics, nv.pi_hat);
  return f;
}

FoldEstimate fold_aipw(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  const Pieces p = pieces(eval, nv.pi_hat, nv.mu1, nv.mu0, spec);
  const Vector y = observed_y(eval, spec);
  FoldEstimate f;
  f.influence = p.m + p.alpha.cwiseProduct(y - p.mu_obs);
  f.psi = f.influence.mean();
  fill_pi_diagnostics(f.diagnostics, nv.pi_hat);
  return f;
}

FoldEstimate fold_aipw_sn(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  const Pieces p = pieces(eval, nv.pi_hat, nv.mu1, nv.mu0, spec);
  const Vector y = observed_y(eval, spec);
  const Index n = eval.n();
  const double s1 = sum_inverse(eval.a, nv.pi_hat);
  if (s1 == 0.0) throw InvalidArgument("aipw_sn: zero self-normalisation denominator");
  double corr1 = 0.0, corr0 = 0.0;
  for (Index i = 0; i < n; ++i)
    if (eval.a[i] == 1.0) corr1 += p.g1[i] * (y[i] - p.mu_obs[i]) / nv.pi_hat[i];
  corr1 /= s1;
  if (spec.two_arm()) {
    const double s0 = sum_inverse_control(eval.a, nv.pi_hat);
    if (s0 == 0.0) throw InvalidArgument("aipw_sn: zero control normalisation denominator");
    for (Index i = 0; i < n; ++i)
      if (eval.a[i] == 0.0) corr0 += p.g0[i] * (y[i] - p.mu_obs[i]) / (1.0 - nv.pi_hat[i]);
    corr0 /= s0;
  }
  FoldEstimate f;
  f.psi = p.m.mean() + corr1 + corr0;
  f.influence = p.m + p.alpha.cwiseProduct(y - p.mu_obs);
  fill_pi_diagnostics(f.diagnostics, nv.pi_hat);
  return f;
}

FoldEstimate fold_tmle(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  const Pieces p = pieces(eval, nv.pi_hat, nv.mu1, nv.mu0, spec);
  const Vector y = observed_y(eval, spec);
  const double den = p.alpha.squaredNorm();
  if (den == 0.0) throw InvalidArgument("tmle: zero denominator sum A/pi^2");
  const double eps = p.alpha.dot(y - p.mu_obs) / den;
  const Index n = eval.n();
  Vector m(n), mu_obs(n);
  for (Index i = 0; i < n; ++i) {
    const double mu1 = nv.mu1[i] + eps * p.g1[i] / nv.pi_hat[i];
    double mu0 = 0.0;
    if (spec.two_arm()) mu0 = nv.mu0[i] + eps * p.g0[i] / (1.0 - nv.pi_hat[i]);
    m[i] = p.g1[i] * mu1 + p.g0[i] * mu0;
    mu_obs[i] = eval.a[i] == 1.0 ? mu1 : mu0;
  }
  FoldEstimate f;
  f.psi = m.mean();
  f.influence = m + p.alpha.cwiseProduct(y - mu_obs);
  f.diagnostics.epsilon = eps;
  fill_pi_diagnostics(f.diagnostics, nv.pi_hat);
  residual_diagnostics(f.diagnostics, p.alpha, y, mu_obs);
  return f;
}

FoldEstimate fold_tmle_logistic(const Dataset& eval, const Vector& pi_hat, const Vector& q_hat,
                                const OutcomeScaling& scaling) {
  const Index n = eval.n();
  if (pi_hat.size() != n || q_hat.size() != n)
    throw InvalidArgument("tmle_l: length mismatch");
  const RieszSpec mmo;
  check_propensity(mmo, pi_hat, eval.a);
  RowList treated;
  for (Index i = 0; i < n; ++i)
    if (eval.a[i] == 1.0) treated.push_back(i);
  if (treated.empty()) throw InvalidArgument("tmle_l: no treated rows");

  Vector offset(n), h(n);
  for (Index i = 0; i < n; ++i) {
    offset[i] = logit(q_hat[i]);
    h[i] = 1.0 / pi_hat[i];
  }
  // phi(eps) = sum_treated H (ytil - sigma(offset + eps H)); decreasing in eps.
  auto phi = [&](double eps) {
    double v = 0.0, dv = 0.0;
    for (Index i : treated) {
      const double p = logistic(offset[i] + eps * h[i]);
      v += h[i] * (scaling.scale(eval.y[i]) - p);
      dv -= h[i] * h[i] * p * (1.0 - p);
    }
    return std::make_pair(v, dv);
  };
  double scale_h = 0.0;
  for (Index i : treated) scale_h += h[i];
  double eps = 0.0;
  const double phi0 = phi(0.0).first;
  if (phi0 != 0.0) {
    // Bracket the root by doubling away from zero.
    double lo = 0.0, hi = 0.0;
    double width = 1.0 / scale_h * static_cast<double>(treated.size());
    for (int k = 0; k < 200; ++k, width *= 2.0) {
      const double probe = phi0 > 0.0 ? width : -width;
      if ((phi(probe).first > 0.0) != (phi0 > 0.0)) {
        lo = std::min(0.0, probe);
        hi = std::max(0.0, probe);
        break;
      }
    }
    if (lo == hi) throw ConvergenceError("tmle_l: could not bracket the fluctuation", phi0, 0);
    boost::uintmax_t iters = 200;
    eps = boost::math::tools::newton_raphson_iterate(phi, 0.5 * (lo + hi), lo, hi, 50, iters);
  }
  const double foc = phi(eps).first;
  if (!(std::abs(foc) <= 1e-8 * std::max(1.0, scale_h)))
    throw ConvergenceError("tmle_l: first-order condition residual " + std::to_string(foc),
                           foc, 0);
  Vector mu(n);
  for (Index i = 0; i < n; ++i) mu[i] = scaling.unscale(logistic(offset[i] + eps * h[i]));
  const Vector alpha = riesz_values(mmo, pi_hat, eval.a, eval.x);
  const Vector y = eval.a.cwiseProduct(eval.y);
  FoldEstimate f;
  f.psi = mu.mean();
  f.influence = mu + alpha.cwiseProduct(y - mu);
  f.diagnostics.epsilon = eps;
  f.diagnostics.constraint_residual = std::abs(foc) / static_cast<double>(n);
  f.diagnostics.constraint_scale = scale_h / static_cast<double>(n);
  fill_pi_diagnostics(f.diagnostics, pi_hat);
  return f;
}

FoldEstimate fold_plugin(const Dataset& eval, const Vector& pi_hat, const Vector& mu_c,
                         const RieszSpec& spec, const Vector& mu0_c) {
  const Pieces p = pieces(eval, pi_hat, mu_c, mu0_c, spec);
  const Vector y = observed_y(eval, spec);
  FoldEstimate f;
  f.psi = p.m.mean();
  f.influence = p.m + p.alpha.cwiseProduct(y - p.mu_obs);
  fill_pi_diagnostics(f.diagnostics, pi_hat);
  residual_diagnostics(f.diagnostics, p.alpha, y, p.mu_obs);
  return f;
}

FoldEstimate fold_weighted(const Dataset& eval, const Vector& weights_pi, const Vector& mu,
                           bool self_normalize) {
  const Index n = eval.n();
  if (weights_pi.size() != n || mu.size() != n) throw InvalidArgument("weighted: length mismatch");
  const RieszSpec mmo;
  check_propensity(mmo, weights_pi, eval.a);
  const Vector alpha = riesz_values(mmo, weights_pi, eval.a, eval.x);
  const Vector y = eval.a.cwiseProduct(eval.y);
  FoldEstimate f;
  const double total = alpha.dot(y);
  if (self_normalize) {
    const double s = alpha.sum();
    if (s == 0.0) throw InvalidArgument("weighted: zero self-normalisation denominator");
    f.psi = total / s;
  } else {
    f.psi = total / static_cast<double>(n);
  }
  f.influence = mu + alpha.cwiseProduct(y - mu);
  fill_treated_diagnostics(f.diagnostics, weights_pi, eval.a);
  f.diagnostics.constraint_residual =
      std::abs((Vector::Ones(n) - alpha).dot(mu)) / static_cast<double>(n);
  f.diagnostics.constraint_scale = mu.cwiseAbs().mean();
  return f;
}

EstimateResult estimate_direct(const Dataset& eval, const NuisanceValues& nv,
                               const RieszSpec& spec) {
  return finalize({fold_direct(eval, nv, spec)});
}
EstimateResult estimate_ipw(const Dataset& eval, const NuisanceValues& nv, const RieszSpec& spec) {
  return finalize({fold_ipw(eval, nv, spec)});
}
EstimateResult estimate_ipw_sn(const Dataset& eval, const NuisanceValues& nv,
                               const RieszSpec& spec) {
  return finalize({fold_ipw_sn(eval, nv, spec)});
}
EstimateResult estimate_aipw(const Dataset& eval, const NuisanceValues& nv,
                             const RieszSpec& spec) {
  return finalize({fold_aipw(eval, nv, spec)});
}
EstimateResult estimate_aipw_sn(const Dataset& eval, const NuisanceValues& nv,
                                const RieszSpec& spec) {
  return finalize({fold_aipw_sn(eval, nv, spec)});
}
EstimateResult estimate_tmle(const Dataset& eval, const NuisanceValues& nv,
                             const RieszSpec& spec) {
  return finalize({fold_tmle(eval, nv, spec)});
}
EstimateResult estimate_tmle_logistic(const Dataset& eval, const Vector& pi_hat,
                                      const Vector& q_hat, const OutcomeScaling& scaling) {
  return finalize({fold_tmle_logistic(eval, pi_hat, q_hat, scaling)});
}

}  // namespace clearner
