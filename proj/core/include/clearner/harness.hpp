#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clearner/estimators.hpp"

namespace clearner {

enum class DgpKind { kang_schafer, heavy_tail, csv };

std::string_view to_string(DgpKind kind);

struct ExperimentConfig {
  std::string name = "experiment";
  DgpKind dgp = DgpKind::kang_schafer;
  Index n = 200;
  double c = 1.0;
  bool misspecified = true;
  bool flipped = false;
  std::string csv_path;
  // Estimand value for CSV data (generated data carries its own).
  std::optional<double> truth;
  int replications = 100;
  // 1 means single split (train = eval = all rows).
  int folds = 1;
  std::vector<EstimatorId> recipes;
  RecipeSettings settings;
  std::uint64_t seed = 1;
  // 0 uses every hardware thread.
  int threads = 0;
  std::string output_dir = "results";
  // A replication is extreme when |error| > extreme_factor * median |error|.
  double extreme_factor = 20.0;

  // Throws ConfigError.
  void validate() const;
};

// Flat key/value YAML document; keys mirror the field names above plus
// intercept, outcome_model, propensity_model, gbrt.* and mlp.* entries.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Learning rate x feature subsample x depth grid.
std::vector<BoostParams> paper_gbrt_grid();
// {0.05, 0.1} x {0.8} x {3}, J capped at 500.
std::vector<BoostParams> desk_gbrt_grid();

Dataset make_dataset(const ExperimentConfig& cfg, int replication);

struct ReplicationRecord {
  int replication = 0;
  std::uint64_t dataset_hash = 0;
  std::string recipe;
  bool ok = false;
  double psi_hat = 0.0;
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double truth = 0.0;
  double min_pi = 0.0;
  double max_inv_pi = 0.0;
  std::optional<double> constraint_residual;
  std::optional<double> constraint_scale;
  std::string error;

  double abs_error() const;
  bool covers() const { return ci_low <= truth && truth <= ci_high; }
};

// Summary of one dataset's cross-fitted propensity values.
struct PropensityStats {
  int replication = 0;
  double min = 0.0;
  double max = 0.0;
  double sd = 0.0;
  // Mean of the smallest 5% of pi-hat.
  double cvar_low = 0.0;
  double max_inv = 0.0;
  // Mean of the largest 5% of 1/pi-hat.
  double cvar_inv = 0.0;
};

PropensityStats summarize_propensity(const Vector& pi_hat);

struct Metric {
  double value = 0.0;
  double se = 0.0;
};

struct RecipeSummary {
  std::string recipe;
  int runs = 0;
  int failures = 0;
  int extreme = 0;
  Metric bias;
  Metric mae;
  Metric rmse;
  Metric median_ae;
  Metric coverage;
};

struct PropensitySummary {
  int datasets = 0;
  Metric min;
  Metric max;
  Metric sd;
  Metric cvar_low;
  Metric max_inv;
  Metric cvar_inv;
};

struct SimulationReport {
  std::string name;
  std::vector<ReplicationRecord> raw;
  std::vector<PropensityStats> propensity_raw;
  std::vector<RecipeSummary> summary;
  PropensitySummary propensity;
};

// Recipes appear in order of first occurrence in `raw`.
std::vector<RecipeSummary> aggregate(const std::vector<ReplicationRecord>& raw,
                                     double extreme_factor = 20.0);
PropensitySummary aggregate(const std::vector<PropensityStats>& raw);

using ProgressCallback = std::function<void(int replication, std::uint64_t dataset_hash)>;

SimulationReport run_monte_carlo(const ExperimentConfig& cfg,
                                 const ProgressCallback& progress = {});

enum class ReportFormat { csv, markdown };

// Writes <dir>/<name>_metrics.{csv,md}, <dir>/<name>_raw.csv and
// <dir>/<name>_propensity.csv. Returns the metrics path.
std::string render_report(const SimulationReport& report, ReportFormat format,
                          const std::string& dir);
std::string metrics_table(const SimulationReport& report, ReportFormat format);

std::vector<ReplicationRecord> load_raw_csv(const std::string& path);
std::vector<PropensityStats> load_propensity_csv(const std::string& path);

struct HeavyTailOptions {
  Index n = 500;
  int replications = 5000;
  int folds = 2;
  std::uint64_t seed = 1;
  int meta_repetitions = 20;
  int meta_small = 500;
  int threads = 0;
  std::vector<int> checkpoints = {100, 250, 500, 1000, 2000, 5000};
};

struct HeavyTailRecipe {
  std::string recipe;
  int failures = 0;
  double q50 = 0.0;
  double q90 = 0.0;
  double q99 = 0.0;
  double q995 = 0.0;
  // Sample variance of the errors over the first checkpoint[i] replications.
  std::vector<double> running_variance;
  // Meta-repetitions with var(all)/var(first meta_small) above 2 and below 1.5.
  int meta_above_2 = 0;
  int meta_below_1_5 = 0;
};

struct HeavyTailReport {
  HeavyTailOptions options;
  std::vector<HeavyTailRecipe> recipes;
  double tail_ratio = 0.0;
  double direct_sd = 0.0;
};

// Recipes: direct with the true outcome function, aipw, tmle and the linear
// C-Learner, all with the true propensity.
HeavyTailReport heavy_tail_diagnostic(const HeavyTailOptions& options);
std::string render_heavy_tail(const HeavyTailReport& report);

}  // namespace clearner
