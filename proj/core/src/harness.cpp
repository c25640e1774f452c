#include "clearner/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

namespace clearner {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t fold_seed(std::uint64_t seed) { return seed * 0xbf58476d1ce4e5b9ULL + 0x5f0ddULL; }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation (denominator m - 1); zero for a single value.
double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

// Linear interpolation between order statistics.
double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Metric mean_metric(const std::vector<double>& v) {
  return {mean(v), sample_sd(v) / std::sqrt(static_cast<double>(v.size()))};
}

int worker_count(int requested, int jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, std::max(jobs, 1));
}

// Runs body(i) for i in [0, jobs) on a small pool; the first exception is rethrown.
template <typename F>
void parallel_for(int jobs, int threads, F&& body) {
  const int workers = worker_count(threads, jobs);
  if (workers == 1) {
    for (int i = 0; i < jobs; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < jobs; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

FoldPlan plan_for(Index n, int folds, std::uint64_t seed) {
  return folds == 1 ? FoldPlan::single(n) : make_folds(n, folds, fold_seed(seed));
}

}  // namespace

double ReplicationRecord::abs_error() const { return std::abs(psi_hat - truth); }

Dataset make_dataset(const ExperimentConfig& cfg, int replication) {
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(replication);
  Dataset data;
  switch (cfg.dgp) {
    case DgpKind::kang_schafer: {
      KsConfig ks;
      ks.n = cfg.n;
      ks.c = cfg.c;
      ks.misspecified = cfg.misspecified;
      ks.flipped = cfg.flipped;
      ks.seed = seed;
      data = gen_kang_schafer(ks);
      break;
    }
    case DgpKind::heavy_tail:
      data = gen_heavy_tail(cfg.n, seed);
      break;
    case DgpKind::csv:
      data = load_csv(cfg.csv_path);
      break;
  }
  if (cfg.truth) {
    data.truth = cfg.truth;
  } else if (cfg.dgp != DgpKind::csv && cfg.settings.riesz.kind == RieszKind::full_ate) {
    // Generated outcomes do not depend on treatment.
    data.truth = 0.0;
  }
  return data;
}

PropensityStats summarize_propensity(const Vector& pi_hat) {
  if (pi_hat.size() == 0) throw InvalidArgument("summarize_propensity: empty input");
  std::vector<double> v(pi_hat.data(), pi_hat.data() + pi_hat.size());
  std::sort(v.begin(), v.end());
  const std::size_t tail =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(v.size()))));
  PropensityStats s;
  s.min = v.front();
  s.max = v.back();
  s.sd = sample_sd(v);
  double low = 0.0, inv = 0.0;
  for (std::size_t i = 0; i < tail; ++i) {
    low += v[i];
    inv += 1.0 / v[i];
  }
  s.cvar_low = low / static_cast<double>(tail);
  s.max_inv = 1.0 / v.front();
  s.cvar_inv = inv / static_cast<double>(tail);
  return s;
}

std::vector<RecipeSummary> aggregate(const std::vector<ReplicationRecord>& raw,
                                     double extreme_factor) {
  std::vector<std::string> order;
  for (const auto& r : raw)
    if (std::find(order.begin(), order.end(), r.recipe) == order.end()) order.push_back(r.recipe);

  std::vector<RecipeSummary> out;
  for (const auto& name : order) {
    RecipeSummary s;
    s.recipe = name;
    std::vector<double> err, abs_err, sq_err, cover;
    for (const auto& r : raw) {
      if (r.recipe != name) continue;
      ++s.runs;
      if (!r.ok) {
        ++s.failures;
        continue;
      }
      const double e = r.psi_hat - r.truth;
      err.push_back(e);
      abs_err.push_back(std::abs(e));
      sq_err.push_back(e * e);
      cover.push_back(r.covers() ? 1.0 : 0.0);
    }
    if (err.empty()) {
      s.bias = s.mae = s.rmse = s.median_ae = s.coverage = {kNaN, kNaN};
      out.push_back(s);
      continue;
    }
    const double m = static_cast<double>(err.size());
    s.bias = mean_metric(err);
    s.mae = mean_metric(abs_err);
    const Metric mse = mean_metric(sq_err);
    s.rmse.value = std::sqrt(mse.value);
    // Delta method on sqrt(MSE).
    s.rmse.se = s.rmse.value > 0.0 ? mse.se / (2.0 * s.rmse.value) : 0.0;
    s.median_ae.value = median(abs_err);
    // Normal-theory standard error of a median.
    s.median_ae.se = std::sqrt(M_PI / 2.0) * sample_sd(abs_err) / std::sqrt(m);
    s.coverage.value = mean(cover);
    s.coverage.se = std::sqrt(s.coverage.value * (1.0 - s.coverage.value) / m);
    if (s.median_ae.value > 0.0)
      for (double a : abs_err)
        if (a > extreme_factor * s.median_ae.value) ++s.extreme;
    out.push_back(s);
  }
  return out;
}

PropensitySummary aggregate(const std::vector<PropensityStats>& raw) {
  PropensitySummary s;
  s.datasets = static_cast<int>(raw.size());
  if (raw.empty()) {
    s.min = s.max = s.sd = s.cvar_low = s.max_inv = s.cvar_inv = {kNaN, kNaN};
    return s;
  }
  auto field = [&](double PropensityStats::*member) {
    std::vector<double> v;
    for (const auto& p : raw) v.push_back(p.*member);
    return mean_metric(v);
  };
  s.min = field(&PropensityStats::min);
  s.max = field(&PropensityStats::max);
  s.sd = field(&PropensityStats::sd);
  s.cvar_low = field(&PropensityStats::cvar_low);
  s.max_inv = field(&PropensityStats::max_inv);
  s.cvar_inv = field(&PropensityStats::cvar_inv);
  return s;
}

SimulationReport run_monte_carlo(const ExperimentConfig& cfg, const ProgressCallback& progress) {
  cfg.validate();
  const int reps = cfg.replications;
  std::optional<Dataset> csv_data;
  if (cfg.dgp == DgpKind::csv) {
    csv_data = make_dataset(cfg, 1);
    csv_data->validate();
  }

  std::vector<std::vector<ReplicationRecord>> records(static_cast<std::size_t>(reps));
  std::vector<std::optional<PropensityStats>> propensity(static_cast<std::size_t>(reps));
  std::mutex progress_mutex;

  parallel_for(reps, cfg.threads, [&](int i) {
    const int r = i + 1;
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
    auto& out = records[static_cast<std::size_t>(i)];
    Dataset data;
    std::string data_error;
    try {
      data = csv_data ? *csv_data : make_dataset(cfg, r);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    const std::uint64_t hash = data_error.empty() ? data.hash() : 0;
    const double truth = data.truth.value_or(kNaN);
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(r, hash);
    }

    std::map<EstimatorId, RecipeOutcome> results;
    RecipeSettings settings = cfg.settings;
    settings.seed = seed;
    FoldPlan plan;
    if (data_error.empty()) {
      plan = plan_for(data.n(), cfg.folds, seed);
      results = run_recipes(data, plan, settings, cfg.recipes);
      try {
        PropensityStats p = summarize_propensity(crossfit_propensity(data, plan, settings));
        p.replication = r;
        propensity[static_cast<std::size_t>(i)] = p;
      } catch (const std::exception&) {
      }
    }
    for (EstimatorId id : cfg.recipes) {
      ReplicationRecord rec;
      rec.replication = r;
      rec.dataset_hash = hash;
      rec.recipe = std::string(to_string(id));
      rec.truth = truth;
      if (!data_error.empty()) {
        rec.error = data_error;
      } else if (const auto& res = results[id]; res.result) {
        rec.ok = true;
        rec.psi_hat = res.result->psi_hat;
        rec.variance = res.result->variance;
        rec.ci_low = res.result->ci_low;
        rec.ci_high = res.result->ci_high;
        rec.min_pi = res.result->diagnostics.min_pi;
        rec.max_inv_pi = res.result->diagnostics.max_inv_pi;
        rec.constraint_residual = res.result->diagnostics.constraint_residual;
        rec.constraint_scale = res.result->diagnostics.constraint_scale;
      } else {
        rec.error = res.error;
      }
      out.push_back(std::move(rec));
    }
  });

  SimulationReport report;
  report.name = cfg.name;
  for (auto& block : records)
    for (auto& rec : block) report.raw.push_back(std::move(rec));
  for (auto& p : propensity)
    if (p) report.propensity_raw.push_back(*p);
  report.summary = aggregate(report.raw, cfg.extreme_factor);
  report.propensity = aggregate(report.propensity_raw);
  return report;
}

HeavyTailReport heavy_tail_diagnostic(const HeavyTailOptions& options) {
  if (options.replications < 2 || options.meta_repetitions < 1 || options.meta_small < 2 ||
      options.meta_small > options.replications || options.folds < 1 || options.n < 4)
    throw InvalidArgument("heavy_tail_diagnostic: invalid options");

  const std::vector<EstimatorId> ids = {EstimatorId::direct, EstimatorId::aipw,
                                        EstimatorId::tmle, EstimatorId::clearner_linear};
  RecipeSettings oracle;
  oracle.propensity = PropensityClass::oracle;
  oracle.outcome = OutcomeClass::oracle;
  oracle.oracle_outcome = [](const Matrix& x) -> Vector {
    return (210.0 + 10.0 * x.col(0).array()).matrix();
  };
  RecipeSettings fitted;
  fitted.propensity = PropensityClass::oracle;
  fitted.outcome = OutcomeClass::linear;

  const int reps = options.replications;
  const int total = reps * options.meta_repetitions;
  // errors[recipe][global replication]
  std::vector<std::vector<double>> errors(ids.size(), std::vector<double>(static_cast<std::size_t>(total), kNaN));

  parallel_for(total, options.threads, [&](int g) {
    const std::uint64_t seed = options.seed + static_cast<std::uint64_t>(g) + 1;
    const Dataset data = gen_heavy_tail(options.n, seed);
    const FoldPlan plan = plan_for(data.n(), options.folds, seed);
    RecipeSettings s1 = oracle, s2 = fitted;
    s1.seed = s2.seed = seed;
    auto a = run_recipes(data, plan, s1, {EstimatorId::direct});
    auto b = run_recipes(data, plan, s2, {EstimatorId::aipw, EstimatorId::tmle, EstimatorId::clearner_linear});
    a.merge(b);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto& res = a[ids[k]];
      if (res.result) errors[k][static_cast<std::size_t>(g)] = res.result->psi_hat - *data.truth;
    }
  });

  HeavyTailReport report;
  report.options = options;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    HeavyTailRecipe rec;
    rec.recipe = std::string(to_string(ids[k]));
    std::vector<double> main_err, main_abs;
    for (int i = 0; i < reps; ++i) {
      const double e = errors[k][static_cast<std::size_t>(i)];
      if (std::isnan(e)) {
        ++rec.failures;
        continue;
      }
      main_err.push_back(e);
      main_abs.push_back(std::abs(e));
    }
    if (main_abs.size() >= 2) {
      rec.q50 = quantile(main_abs, 0.5);
      rec.q90 = quantile(main_abs, 0.9);
      rec.q99 = quantile(main_abs, 0.99);
      rec.q995 = quantile(main_abs, 0.995);
      for (int c : options.checkpoints) {
        const auto m = std::min<std::size_t>(static_cast<std::size_t>(c), main_err.size());
        const std::vector<double> head(main_err.begin(), main_err.begin() + static_cast<long>(m));
        const double sd = sample_sd(head);
        rec.running_variance.push_back(sd * sd);
      }
    }
    for (int m = 0; m < options.meta_repetitions; ++m) {
      std::vector<double> block;
      for (int i = 0; i < reps; ++i) {
        const double e = errors[k][static_cast<std::size_t>(m * reps + i)];
        if (!std::isnan(e)) block.push_back(e);
      }
      if (block.size() < static_cast<std::size_t>(options.meta_small)) continue;
      const std::vector<double> head(block.begin(), block.begin() + options.meta_small);
      const double small = std::pow(sample_sd(head), 2);
      const double large = std::pow(sample_sd(block), 2);
      if (small <= 0.0) continue;
      const double ratio = large / small;
      if (ratio > 2.0) ++rec.meta_above_2;
      if (ratio < 1.5) ++rec.meta_below_1_5;
    }
    if (k == 0) report.direct_sd = sample_sd(main_err);
    report.recipes.push_back(std::move(rec));
  }
  const double c_q = report.recipes[3].q995;
  report.tail_ratio = c_q > 0.0 ? report.recipes[1].q995 / c_q : kNaN;
  return report;
}

}  // namespace clearner
