#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "clearner/harness.hpp"

namespace clearner {

namespace {

const std::set<std::string> kKnownKeys = {
    "name", "dgp", "n", "c", "misspecified", "flipped", "csv_path", "truth",
    "replications", "folds", "single_split", "recipes", "truncation", "estimand",
    "policy_share", "outcome_model", "propensity_model", "intercept", "outcome_intercept",
    "propensity_intercept", "lasso_l1", "alpha", "seed", "threads", "output_dir",
    "extreme_factor", "gbrt.grid", "gbrt.learning_rate", "gbrt.colsample", "gbrt.max_depth",
    "gbrt.max_trees", "gbrt.max_trees_k", "gbrt.subsample", "gbrt.early_stop_rounds",
    "gbrt.min_leaf", "gbrt.stage2_subsample", "mlp.lambda", "mlp.learning_rate",
    "mlp.epochs", "mlp.batch_size", "mlp.momentum", "mlp.hidden", "mlp.activation",
    "mlp.selection"};

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("key '" + key + "': cannot read value '" +
                      (node.IsScalar() ? node.Scalar() : std::string("<non-scalar>")) + "'");
  }
}

template <typename T>
std::vector<T> list(const YAML::Node& node, const std::string& key) {
  std::vector<T> out;
  if (node.IsSequence()) {
    for (const auto& item : node) out.push_back(scalar<T>(item, key));
  } else {
    out.push_back(scalar<T>(node, key));
  }
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

OutcomeClass parse_outcome(const std::string& v) {
  if (v == "linear") return OutcomeClass::linear;
  if (v == "gbrt") return OutcomeClass::gbrt;
  if (v == "mlp") return OutcomeClass::mlp;
  throw ConfigError("outcome_model must be linear, gbrt or mlp (got '" + v + "')");
}

PropensityClass parse_propensity(const std::string& v) {
  if (v == "logistic") return PropensityClass::logistic;
  if (v == "lasso") return PropensityClass::lasso;
  if (v == "oracle") return PropensityClass::oracle;
  throw ConfigError("propensity_model must be logistic, lasso or oracle (got '" + v + "')");
}

bool is_mmo_only(EstimatorId id) {
  switch (id) {
    case EstimatorId::direct:
    case EstimatorId::ipw:
    case EstimatorId::ipw_sn:
    case EstimatorId::aipw:
    case EstimatorId::aipw_sn:
    case EstimatorId::tmle:
    case EstimatorId::clearner_linear:
      return false;
    default:
      return true;
  }
}

}  // namespace

std::string_view to_string(DgpKind kind) {
  switch (kind) {
    case DgpKind::kang_schafer: return "kang_schafer";
    case DgpKind::heavy_tail: return "heavy_tail";
    case DgpKind::csv: return "csv";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw ConfigError("replications must be at least 1");
  if (folds < 1) throw ConfigError("folds must be at least 1");
  if (recipes.empty()) throw ConfigError("recipes must not be empty");
  if (dgp != DgpKind::csv && n < 2) throw ConfigError("n must be at least 2");
  if (dgp != DgpKind::csv && folds > n) throw ConfigError("folds exceeds n");
  if (dgp == DgpKind::csv) {
    if (csv_path.empty()) throw ConfigError("dgp csv needs csv_path");
    if (!truth) throw ConfigError("dgp csv needs truth for error metrics");
  }
  if (dgp == DgpKind::kang_schafer && !(c > 0.0)) throw ConfigError("c must be positive");
  if (settings.truncation && !(*settings.truncation > 0.0 && *settings.truncation < 0.5))
    throw ConfigError("truncation must lie in (0, 0.5)");
  if (settings.lasso_l1 && *settings.lasso_l1 < 0.0)
    throw ConfigError("lasso_l1 must be non-negative");
  if (!(settings.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(extreme_factor > 0.0)) throw ConfigError("extreme_factor must be positive");
  if (threads < 0) throw ConfigError("threads must be non-negative");
  const bool needs_gbrt =
      settings.outcome == OutcomeClass::gbrt ||
      std::any_of(recipes.begin(), recipes.end(), [](EstimatorId id) {
        return id == EstimatorId::clearner_gbrt || id == EstimatorId::lagrangian_gbrt;
      });
  if (needs_gbrt && settings.gbrt_grid.empty()) throw ConfigError("gbrt grid is empty");
  const bool needs_mlp =
      settings.outcome == OutcomeClass::mlp ||
      std::find(recipes.begin(), recipes.end(), EstimatorId::clearner_mlp) != recipes.end();
  if (needs_mlp && settings.mlp_grid.empty()) throw ConfigError("mlp grid is empty");
  try {
    for (const auto& p : settings.gbrt_grid) p.validate();
    for (const auto& t : settings.mlp_grid) t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (settings.riesz.two_arm()) {
    if (settings.outcome != OutcomeClass::linear)
      throw ConfigError("two-arm estimands need outcome_model linear");
    for (EstimatorId id : recipes)
      if (is_mmo_only(id))
        throw ConfigError("recipe " + std::string(to_string(id)) +
                          " supports only the mean missing outcome estimand");
  }
}

std::vector<BoostParams> paper_gbrt_grid() {
  std::vector<BoostParams> grid;
  for (double eta : {0.01, 0.05, 0.1, 0.2})
    for (double colsample : {0.5, 0.8, 1.0})
      for (int depth : {3, 4, 5}) {
        BoostParams p;
        p.eta = eta;
        p.colsample = colsample;
        p.max_depth = depth;
        grid.push_back(p);
      }
  return grid;
}

std::vector<BoostParams> desk_gbrt_grid() {
  std::vector<BoostParams> grid;
  for (double eta : {0.05, 0.1}) {
    BoostParams p;
    p.eta = eta;
    p.colsample = 0.8;
    p.max_depth = 3;
    p.max_trees_j = 500;
    grid.push_back(p);
  }
  return grid;
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ExperimentConfig cfg;
  if (root.IsNull()) throw ConfigError("config is empty");
  if (!root.IsMap()) throw ConfigError("config must be a key/value document");

  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    if (!kKnownKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  auto has = [&](const char* key) { return root[key] && !root[key].IsNull(); };
  auto get = [&](const char* key) { return root[key]; };

  if (has("name")) cfg.name = scalar<std::string>(get("name"), "name");
  if (has("dgp")) {
    const auto v = scalar<std::string>(get("dgp"), "dgp");
    if (v == "kang_schafer" || v == "ks") cfg.dgp = DgpKind::kang_schafer;
    else if (v == "heavy_tail") cfg.dgp = DgpKind::heavy_tail;
    else if (v == "csv") cfg.dgp = DgpKind::csv;
    else throw ConfigError("dgp must be kang_schafer, heavy_tail or csv (got '" + v + "')");
  }
  if (has("n")) cfg.n = scalar<long>(get("n"), "n");
  if (has("c")) cfg.c = scalar<double>(get("c"), "c");
  if (has("misspecified")) cfg.misspecified = scalar<bool>(get("misspecified"), "misspecified");
  if (has("flipped")) cfg.flipped = scalar<bool>(get("flipped"), "flipped");
  if (has("csv_path")) cfg.csv_path = scalar<std::string>(get("csv_path"), "csv_path");
  if (has("truth")) cfg.truth = scalar<double>(get("truth"), "truth");
  if (has("replications")) cfg.replications = scalar<int>(get("replications"), "replications");
  if (has("folds")) cfg.folds = scalar<int>(get("folds"), "folds");
  if (has("single_split") && scalar<bool>(get("single_split"), "single_split")) cfg.folds = 1;
  if (has("recipes"))
    for (const auto& name : list<std::string>(get("recipes"), "recipes"))
      cfg.recipes.push_back(parse_estimator(name));

  RecipeSettings& s = cfg.settings;
  if (has("truncation")) s.truncation = scalar<double>(get("truncation"), "truncation");
  if (has("estimand")) {
    const auto v = scalar<std::string>(get("estimand"), "estimand");
    if (v == "mean_missing_outcome" || v == "mmo") s.riesz.kind = RieszKind::mean_missing_outcome;
    else if (v == "ate") s.riesz.kind = RieszKind::full_ate;
    else if (v == "policy") s.riesz.kind = RieszKind::policy_value;
    else throw ConfigError("estimand must be mmo, ate or policy (got '" + v + "')");
  }
  if (s.riesz.kind == RieszKind::policy_value) {
    const double share = has("policy_share") ? scalar<double>(get("policy_share"), "policy_share")
                                             : 0.5;
    if (!(share >= 0.0 && share <= 1.0)) throw ConfigError("policy_share must lie in [0, 1]");
    s.riesz.policy = [share](const Eigen::RowVectorXd&) { return share; };
  }
  if (has("outcome_model"))
    s.outcome = parse_outcome(scalar<std::string>(get("outcome_model"), "outcome_model"));
  if (has("propensity_model"))
    s.propensity =
        parse_propensity(scalar<std::string>(get("propensity_model"), "propensity_model"));
  if (has("intercept")) {
    s.outcome_intercept = s.propensity_intercept = scalar<bool>(get("intercept"), "intercept");
  }
  if (has("outcome_intercept"))
    s.outcome_intercept = scalar<bool>(get("outcome_intercept"), "outcome_intercept");
  if (has("propensity_intercept"))
    s.propensity_intercept = scalar<bool>(get("propensity_intercept"), "propensity_intercept");
  if (has("lasso_l1")) s.lasso_l1 = scalar<double>(get("lasso_l1"), "lasso_l1");
  if (has("alpha")) s.alpha = scalar<double>(get("alpha"), "alpha");

  // GBRT grid: a preset, then per-field overrides taken as a Cartesian
  // product in the order learning rate, colsample, depth.
  s.gbrt_grid = desk_gbrt_grid();
  if (has("gbrt.grid")) {
    const auto v = scalar<std::string>(get("gbrt.grid"), "gbrt.grid");
    if (v == "paper") s.gbrt_grid = paper_gbrt_grid();
    else if (v != "desk") throw ConfigError("gbrt.grid must be desk or paper (got '" + v + "')");
  }
  if (has("gbrt.learning_rate") || has("gbrt.colsample") || has("gbrt.max_depth")) {
    std::set<double> etas, cols;
    std::set<int> depths;
    std::vector<double> eta_list, col_list;
    std::vector<int> depth_list;
    for (const auto& p : s.gbrt_grid) {
      if (etas.insert(p.eta).second) eta_list.push_back(p.eta);
      if (cols.insert(p.colsample).second) col_list.push_back(p.colsample);
      if (depths.insert(p.max_depth).second) depth_list.push_back(p.max_depth);
    }
    if (has("gbrt.learning_rate")) eta_list = list<double>(get("gbrt.learning_rate"), "gbrt.learning_rate");
    if (has("gbrt.colsample")) col_list = list<double>(get("gbrt.colsample"), "gbrt.colsample");
    if (has("gbrt.max_depth")) depth_list = list<int>(get("gbrt.max_depth"), "gbrt.max_depth");
    s.gbrt_grid.clear();
    for (double eta : eta_list)
      for (double col : col_list)
        for (int depth : depth_list) {
          BoostParams p;
          p.eta = eta;
          p.colsample = col;
          p.max_depth = depth;
          s.gbrt_grid.push_back(p);
        }
  }
  for (auto& p : s.gbrt_grid) {
    if (has("gbrt.max_trees")) p.max_trees_j = scalar<int>(get("gbrt.max_trees"), "gbrt.max_trees");
    if (has("gbrt.max_trees_k"))
      p.max_trees_k = scalar<int>(get("gbrt.max_trees_k"), "gbrt.max_trees_k");
    if (has("gbrt.subsample")) p.subsample = scalar<double>(get("gbrt.subsample"), "gbrt.subsample");
    if (has("gbrt.early_stop_rounds"))
      p.early_stop_rounds = scalar<int>(get("gbrt.early_stop_rounds"), "gbrt.early_stop_rounds");
    if (has("gbrt.min_leaf")) p.min_leaf = scalar<int>(get("gbrt.min_leaf"), "gbrt.min_leaf");
    if (has("gbrt.stage2_subsample"))
      p.stage2_subsample = scalar<double>(get("gbrt.stage2_subsample"), "gbrt.stage2_subsample");
  }

  TrainConfig base;
  if (has("mlp.learning_rate")) base.lr = scalar<double>(get("mlp.learning_rate"), "mlp.learning_rate");
  if (has("mlp.epochs")) base.epochs = scalar<int>(get("mlp.epochs"), "mlp.epochs");
  if (has("mlp.batch_size")) base.batch = scalar<int>(get("mlp.batch_size"), "mlp.batch_size");
  if (has("mlp.momentum")) base.momentum = scalar<double>(get("mlp.momentum"), "mlp.momentum");
  if (has("mlp.hidden")) base.hidden = list<int>(get("mlp.hidden"), "mlp.hidden");
  if (has("mlp.activation")) {
    const auto v = scalar<std::string>(get("mlp.activation"), "mlp.activation");
    if (v == "tanh") base.activation = Activation::tanh;
    else if (v == "softplus") base.activation = Activation::softplus;
    else throw ConfigError("mlp.activation must be tanh or softplus (got '" + v + "')");
  }
  if (has("mlp.selection")) {
    const auto v = scalar<std::string>(get("mlp.selection"), "mlp.selection");
    if (v == "best_val_mse") s.mlp_selection = MlpSelection::best_val_mse;
    else if (v == "min_first_shift") s.mlp_selection = MlpSelection::min_first_shift;
    else throw ConfigError("mlp.selection must be best_val_mse or min_first_shift");
  }
  const std::vector<double> lambdas =
      has("mlp.lambda") ? list<double>(get("mlp.lambda"), "mlp.lambda")
                         : std::vector<double>{0.0, 1.0, 4.0, 16.0, 64.0};
  s.mlp_grid.clear();
  for (double l : lambdas) {
    TrainConfig t = base;
    t.lambda = l;
    s.mlp_grid.push_back(t);
  }

  if (has("seed")) cfg.seed = scalar<std::uint64_t>(get("seed"), "seed");
  if (has("threads")) cfg.threads = scalar<int>(get("threads"), "threads");
  if (has("output_dir")) cfg.output_dir = scalar<std::string>(get("output_dir"), "output_dir");
  if (has("extreme_factor"))
    cfg.extreme_factor = scalar<double>(get("extreme_factor"), "extreme_factor");
  s.seed = cfg.seed;

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig cfg = parse_config(text.str());
  if (const char* dir = std::getenv("CLEARNER_OUTPUT_DIR"); dir && *dir) cfg.output_dir = dir;
  return cfg;
}

}  // namespace clearner
