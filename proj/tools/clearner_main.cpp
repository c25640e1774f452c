#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "clearner/harness.hpp"

using namespace clearner;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json result_json(std::string_view recipe, const RecipeOutcome& out) {
  json j;
  j["recipe"] = recipe;
  if (!out.result) {
    j["error"] = out.error;
    return j;
  }
  const EstimateResult& r = *out.result;
  j["psi_hat"] = r.psi_hat;
  j["variance"] = r.variance;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["diagnostics"] = {{"constraint_residual", optional_json(r.diagnostics.constraint_residual)},
                      {"constraint_scale", optional_json(r.diagnostics.constraint_scale)},
                      {"min_pi", r.diagnostics.min_pi},
                      {"max_inv_pi", r.diagnostics.max_inv_pi},
                      {"epsilon", optional_json(r.diagnostics.epsilon)},
                      {"multiplier", optional_json(r.diagnostics.multiplier)}};
  return j;
}

std::vector<EstimatorId> parse_recipes(const std::vector<std::string>& names) {
  std::vector<EstimatorId> ids;
  for (const auto& n : names) {
    if (n == "all") {
      const auto& all = all_estimators();
      ids.insert(ids.end(), all.begin(), all.end());
    } else {
      ids.push_back(parse_estimator(n));
    }
  }
  return ids;
}

std::string output_dir(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CLEARNER_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained-learning estimators for missing outcomes and treatment effects"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Write a generated dataset as CSV");
  std::string sim_dgp = "kang_schafer", sim_out;
  long sim_n = 200;
  double sim_c = 1.0;
  bool sim_correct = false, sim_flipped = false;
  std::uint64_t sim_seed = 1;
  simulate->add_option("--dgp", sim_dgp, "kang_schafer or heavy_tail")
      ->check(CLI::IsMember({"kang_schafer", "heavy_tail"}));
  simulate->add_option("-n,--n", sim_n, "Rows")->check(CLI::PositiveNumber);
  simulate->add_option("--c", sim_c, "Overlap scale of the propensity index");
  simulate->add_flag("--correct", sim_correct, "Use the untransformed covariates");
  simulate->add_flag("--flipped", sim_flipped, "Relabel treatment and control");
  simulate->add_option("--seed", sim_seed);
  simulate->add_option("-o,--out", sim_out, "Output CSV")->required();

  // estimate
  auto* estimate = app.add_subcommand("estimate", "Run recipes on one dataset (JSON lines)");
  std::string est_data, est_config, est_outcome = "linear", est_propensity = "logistic";
  std::vector<std::string> est_recipes;
  int est_folds = 1;
  std::uint64_t est_seed = 1;
  std::optional<double> est_truncation;
  bool est_no_intercept = false;
  estimate->add_option("-d,--data", est_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  estimate->add_option("-r,--recipes", est_recipes, "Recipe names or 'all'")->delimiter(',');
  estimate->add_option("-c,--config", est_config, "Config file supplying model settings")
      ->check(CLI::ExistingFile);
  estimate->add_option("-k,--folds", est_folds, "Cross-fitting folds (1 = single split)")
      ->check(CLI::PositiveNumber);
  estimate->add_option("--seed", est_seed);
  estimate->add_option("--outcome-model", est_outcome)
      ->check(CLI::IsMember({"linear", "gbrt", "mlp"}));
  estimate->add_option("--propensity-model", est_propensity)
      ->check(CLI::IsMember({"logistic", "lasso", "oracle"}));
  estimate->add_option("--truncation", est_truncation, "Lower bound on propensities");
  estimate->add_flag("--no-intercept", est_no_intercept);

  // benchmark
  auto* benchmark = app.add_subcommand("benchmark", "Monte-Carlo experiment from a config file");
  std::string bench_config, bench_format = "markdown", bench_out;
  std::optional<int> bench_reps, bench_threads;
  bool bench_quiet = false;
  benchmark->add_option("config", bench_config, "Config file")->required()->check(CLI::ExistingFile);
  benchmark->add_option("--format", bench_format)->check(CLI::IsMember({"csv", "markdown"}));
  benchmark->add_option("--replications", bench_reps, "Override replications");
  benchmark->add_option("--threads", bench_threads, "Override worker threads");
  benchmark->add_option("--out-dir", bench_out, "Override output directory");
  benchmark->add_flag("-q,--quiet", bench_quiet, "Do not log dataset hashes");

  // heavytail
  auto* heavytail = app.add_subcommand("heavytail", "Heavy-tail variance diagnostic");
  HeavyTailOptions ht;
  std::string ht_out;
  heavytail->add_option("-n,--n", ht.n);
  heavytail->add_option("-R,--replications", ht.replications);
  heavytail->add_option("-k,--folds", ht.folds);
  heavytail->add_option("--meta", ht.meta_repetitions, "Meta-repetitions");
  heavytail->add_option("--meta-small", ht.meta_small, "Replications in the short variance window");
  heavytail->add_option("--seed", ht.seed);
  heavytail->add_option("--threads", ht.threads);
  heavytail->add_option("-o,--out", ht_out, "Also write the report here");

  // report
  auto* report = app.add_subcommand("report", "Re-render tables from a raw replication CSV");
  std::string rep_raw, rep_format = "markdown", rep_out, rep_name;
  double rep_extreme = 20.0;
  report->add_option("raw", rep_raw, "<name>_raw.csv")->required()->check(CLI::ExistingFile);
  report->add_option("--format", rep_format)->check(CLI::IsMember({"csv", "markdown"}));
  report->add_option("--out-dir", rep_out);
  report->add_option("--name", rep_name, "Experiment name (default from the file name)");
  report->add_option("--extreme-factor", rep_extreme);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*simulate) {
      Dataset data;
      if (sim_dgp == "heavy_tail") {
        data = gen_heavy_tail(sim_n, sim_seed);
      } else {
        KsConfig ks;
        ks.n = sim_n;
        ks.c = sim_c;
        ks.misspecified = !sim_correct;
        ks.flipped = sim_flipped;
        ks.seed = sim_seed;
        data = gen_kang_schafer(ks);
      }
      write_csv(data, sim_out);
      return 0;
    }

    if (*estimate) {
      RecipeSettings settings;
      if (!est_config.empty()) {
        settings = load_config(est_config).settings;
      } else {
        settings.outcome = est_outcome == "gbrt" ? OutcomeClass::gbrt
                           : est_outcome == "mlp" ? OutcomeClass::mlp
                                                  : OutcomeClass::linear;
        settings.propensity = est_propensity == "lasso"    ? PropensityClass::lasso
                              : est_propensity == "oracle" ? PropensityClass::oracle
                                                           : PropensityClass::logistic;
        settings.truncation = est_truncation;
        settings.outcome_intercept = settings.propensity_intercept = !est_no_intercept;
        settings.gbrt_grid = desk_gbrt_grid();
      }
      settings.seed = est_seed;
      if (est_recipes.empty()) est_recipes = {"direct", "aipw", "clearner_linear"};
      const auto ids = parse_recipes(est_recipes);
      const Dataset data = load_csv(est_data);
      data.validate();
      const FoldPlan plan = est_folds == 1 ? FoldPlan::single(data.n())
                                           : make_folds(data.n(), est_folds, est_seed);
      const auto results = run_recipes(data, plan, settings, ids);
      int failures = 0;
      for (EstimatorId id : ids) {
        const auto& out = results.at(id);
        if (!out.result) ++failures;
        std::cout << result_json(to_string(id), out).dump() << '\n';
      }
      return failures == static_cast<int>(ids.size()) ? kExitRuntime : 0;
    }

    if (*benchmark) {
      ExperimentConfig cfg = load_config(bench_config);
      if (bench_reps) cfg.replications = *bench_reps;
      if (bench_threads) cfg.threads = *bench_threads;
      cfg.output_dir = output_dir(bench_out, cfg.output_dir);
      cfg.validate();
      ProgressCallback progress;
      if (!bench_quiet)
        progress = [](int r, std::uint64_t hash) {
          std::fprintf(stderr, "replication %d dataset %016llx\n", r,
                       static_cast<unsigned long long>(hash));
        };
      const SimulationReport rep = run_monte_carlo(cfg, progress);
      const auto format = bench_format == "csv" ? ReportFormat::csv : ReportFormat::markdown;
      const std::string path = render_report(rep, format, cfg.output_dir);
      std::cout << metrics_table(rep, format);
      std::cerr << "wrote " << path << '\n';
      return 0;
    }

    if (*heavytail) {
      const HeavyTailReport rep = heavy_tail_diagnostic(ht);
      const std::string text = render_heavy_tail(rep);
      std::cout << text;
      if (!ht_out.empty()) {
        std::ofstream out(ht_out);
        if (!out) throw Error("cannot write '" + ht_out + "'");
        out << text;
      }
      return 0;
    }

    if (*report) {
      namespace fs = std::filesystem;
      SimulationReport rep;
      const fs::path raw_path(rep_raw);
      std::string stem = raw_path.stem().string();
      if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, "_raw") == 0)
        stem.resize(stem.size() - 4);
      rep.name = rep_name.empty() ? stem : rep_name;
      rep.raw = load_raw_csv(rep_raw);
      const fs::path prop = raw_path.parent_path() / (stem + "_propensity.csv");
      if (fs::exists(prop)) rep.propensity_raw = load_propensity_csv(prop.string());
      rep.summary = aggregate(rep.raw, rep_extreme);
      rep.propensity = aggregate(rep.propensity_raw);
      const auto format = rep_format == "csv" ? ReportFormat::csv : ReportFormat::markdown;
      render_report(rep, format, output_dir(rep_out, raw_path.parent_path().string()));
      std::cout << metrics_table(rep, format);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
