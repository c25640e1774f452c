#include "clearner/gbrt.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace clearner {

namespace {

struct TreeBuilder {
  const Matrix& x;
  const Vector& target;
  const std::vector<int>& features;
  int max_depth;
  int min_leaf;
  RegressionTree tree;

  int build(RowList rows, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0, sumsq = 0.0;
    for (Index r : rows) {
      sum += target[r];
      sumsq += target[r] * target[r];
    }
    const double m = static_cast<double>(rows.size());
    tree.nodes[id].value = rows.empty() ? 0.0 : sum / m;
    if (depth >= max_depth || rows.size() < 2 * static_cast<std::size_t>(min_leaf))
      return id;

    const double base = sum * sum / m;
    const double min_gain = 1e-12 * std::max(sumsq, 1e-300);
    double best_gain = min_gain;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, double>> sorted(rows.size());
    for (int f : features) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        sorted[i] = {x(rows[i], f), target[rows[i]]};
      std::sort(sorted.begin(), sorted.end(),
                [](const auto& l, const auto& r) { return l.first < r.first; });
      double left = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        left += sorted[i].second;
        const std::size_t nl = i + 1;
        const std::size_t nr = sorted.size() - nl;
        if (nl < static_cast<std::size_t>(min_leaf)) continue;
        if (nr < static_cast<std::size_t>(min_leaf)) break;
        if (!(sorted[i].first < sorted[i + 1].first)) continue;
        const double right = sum - left;
        const double gain = left * left / static_cast<double>(nl) +
                            right * right / static_cast<double>(nr) - base;
        if (gain > best_gain + 1e-12 * std::abs(best_gain)) {
          best_gain = gain;
          best_feature = f;
          double mid = 0.5 * (sorted[i].first + sorted[i + 1].first);
          if (!(mid < sorted[i + 1].first)) mid = sorted[i].first;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return id;

    RowList left_rows, right_rows;
    for (Index r : rows)
      (x(r, best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    tree.nodes[id].feature = best_feature;
    tree.nodes[id].threshold = best_threshold;
    const int l = build(std::move(left_rows), depth + 1);
    const int r = build(std::move(right_rows), depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

RowList sample_rows(Index count, double fraction, Rng& rng) {
  RowList rows(static_cast<std::size_t>(count));
  std::iota(rows.begin(), rows.end(), Index{0});
  if (fraction >= 1.0) return rows;
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count))));
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(keep);
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::vector<int> sample_features(Index d, double fraction, Rng& rng) {
  std::vector<int> features(static_cast<std::size_t>(d));
  std::iota(features.begin(), features.end(), 0);
  if (fraction >= 1.0) return features;
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d))));
  std::shuffle(features.begin(), features.end(), rng);
  features.resize(keep);
  std::sort(features.begin(), features.end());
  return features;
}

double mse(const Vector& y, const Vector& pred) {
  if (y.size() == 0) return 0.0;
  return (y - pred).squaredNorm() / static_cast<double>(y.size());
}

double sample_sd(const Vector& v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

double RegressionTree::predict_row(const Matrix& x, Index row) const {
  int id = 0;
  while (nodes[id].feature >= 0)
    id = x(row, nodes[id].feature) <= nodes[id].threshold ? nodes[id].left : nodes[id].right;
  return nodes[id].value;
}

Vector RegressionTree::predict(const Matrix& x) const {
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out[i] = predict_row(x, i);
  return out;
}

int RegressionTree::depth() const {
  std::function<int(int)> walk = [&](int id) -> int {
    if (nodes[id].feature < 0) return 0;
    return 1 + std::max(walk(nodes[id].left), walk(nodes[id].right));
  };
  return nodes.empty() ? 0 : walk(0);
}

int RegressionTree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(),
                                        [](const TreeNode& n) { return n.feature < 0; }));
}

RegressionTree fit_tree(const Matrix& x, const Vector& target, const RowList& rows,
                        const std::vector<int>& features, int max_depth, int min_leaf) {
  if (target.size() != x.rows()) throw InvalidArgument("fit_tree: target length");
  if (max_depth < 0 || min_leaf < 1) throw InvalidArgument("fit_tree: bad depth/min_leaf");
  for (int f : features)
    if (f < 0 || f >= x.cols()) throw InvalidArgument("fit_tree: feature out of range");
  TreeBuilder builder{x, target, features, max_depth, min_leaf, {}};
  builder.tree.max_depth = max_depth;
  builder.build(rows, 0);
  return std::move(builder.tree);
}

void BoostParams::validate() const {
  if (!(eta > 0.0)) throw InvalidArgument("BoostParams: eta must be > 0");
  if (!(colsample > 0.0 && colsample <= 1.0) || !(subsample > 0.0 && subsample <= 1.0) ||
      !(stage2_subsample > 0.0 && stage2_subsample <= 1.0))
    throw InvalidArgument("BoostParams: fractions must lie in (0,1]");
  if (max_trees_j < 0 || max_trees_k < 0 || early_stop_rounds < 1 || max_depth < 0 ||
      min_leaf < 1)
    throw InvalidArgument("BoostParams: invalid caps");
}

Vector GBRTModel::predict(const Matrix& x) const {
  Vector out = Vector::Constant(x.rows(), base_score);
  for (const auto& t : trees) out += eta * t.tree.predict(x);
  return out;
}

int GBRTModel::tree_count(int stage) const {
  return static_cast<int>(std::count_if(trees.begin(), trees.end(),
                                        [stage](const StagedTree& t) { return t.stage == stage; }));
}

Vector squared_loss_gradient(const BoostSample& train, const Vector& prediction) {
  return train.y - prediction;
}

GBRTModel boost_fit(const BoostSample& train, const BoostSample& val,
                    const BoostParams& params, const PseudoGradient& pseudo_gradient,
                    BoostTrace* trace) {
  params.validate();
  if (train.x.rows() == 0) throw InvalidArgument("boost_fit: empty training sample");
  Rng rng(params.seed, 0x7472656573ULL);
  GBRTModel model;
  model.eta = params.eta;
  model.base_score = train.y.mean();

  Vector pred_train = Vector::Constant(train.x.rows(), model.base_score);
  Vector pred_val = Vector::Constant(val.x.rows(), model.base_score);
  BoostTrace local;
  local.val_mse.push_back(mse(val.y, pred_val));
  local.best_val_mse = local.val_mse.back();
  int since_best = 0;

  for (int j = 0; j < params.max_trees_j; ++j) {
    const Vector g = pseudo_gradient(train, pred_train);
    if (g.size() != train.x.rows())
      throw InvalidArgument("boost_fit: pseudo-gradient length mismatch");
    const RowList rows = sample_rows(train.x.rows(), params.subsample, rng);
    const auto features = sample_features(train.x.cols(), params.colsample, rng);
    RegressionTree tree =
        fit_tree(train.x, g, rows, features, params.max_depth, params.min_leaf);
    pred_train += params.eta * tree.predict(train.x);
    pred_val += params.eta * tree.predict(val.x);
    model.trees.push_back({std::move(tree), 1});
    local.val_mse.push_back(mse(val.y, pred_val));
    if (local.val_mse.back() < local.best_val_mse) {
      local.best_val_mse = local.val_mse.back();
      local.best_iteration = j + 1;
      since_best = 0;
    } else if (++since_best >= params.early_stop_rounds) {
      break;
    }
  }
  model.trees.resize(static_cast<std::size_t>(local.best_iteration));
  if (trace) *trace = std::move(local);
  return model;
}

double epsilon_star(const Vector& a, const Vector& y, const Vector& mu,
                    const Vector& pi_hat) {
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    num += (y[i] - mu[i]) / pi_hat[i];
    den += 1.0 / (pi_hat[i] * pi_hat[i]);
  }
  if (den == 0.0) throw InvalidArgument("epsilon_star: no treated rows");
  return num / den;
}

double epsilon_star(const Dataset& data, const GBRTModel& model, const Vector& pi_hat) {
  return epsilon_star(data.a, data.y, model.predict(data.x), pi_hat);
}

double constraint_residual(const Vector& a, const Vector& y, const Vector& mu,
                           const Vector& pi_hat) {
  double total = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] != 0.0) total += (y[i] - mu[i]) / pi_hat[i];
  return a.size() ? total / static_cast<double>(a.size()) : 0.0;
}

BoostSample treated_sample(const Dataset& data) {
  RowList rows;
  for (Index i = 0; i < data.n(); ++i)
    if (data.a[i] == 1.0) rows.push_back(i);
  return {take_rows(data.x, rows), take(data.y, rows)};
}

PseudoGradient clearner_stage1_gradient(Vector pi_treated) {
  return [pi = std::move(pi_treated)](const BoostSample& train, const Vector& prediction) {
    const Vector ones = Vector::Ones(train.y.size());
    const double eps = epsilon_star(ones, train.y, prediction, pi);
    return Vector((train.y - prediction).array() + eps / pi.array());
  };
}

ClearnerBoostResult clearner_boost(const Dataset& train, const Dataset& eval,
                                   const Dataset& val, const Vector& pi_train,
                                   const Vector& pi_eval, const BoostParams& params) {
  params.validate();
  if (pi_train.size() != train.n() || pi_eval.size() != eval.n())
    throw InvalidArgument("clearner_boost: propensity length mismatch");
  if (eval.treated_count() == 0) throw InvalidArgument("clearner_boost: no treated eval rows");
  if (train.treated_count() == 0) throw InvalidArgument("clearner_boost: no treated train rows");

  RowList train_treated;
  for (Index i = 0; i < train.n(); ++i)
    if (train.a[i] == 1.0) train_treated.push_back(i);
  const BoostSample tr = treated_sample(train);
  const BoostSample va = treated_sample(val);

  ClearnerBoostResult out;
  out.model = boost_fit(tr, va, params, clearner_stage1_gradient(take(pi_train, train_treated)),
                        &out.diagnostics.stage1);
  auto& diag = out.diagnostics;
  diag.stage1_trees = static_cast<int>(out.model.trees.size());

  RowList eval_treated;
  for (Index i = 0; i < eval.n(); ++i)
    if (eval.a[i] == 1.0) eval_treated.push_back(i);
  const Matrix xe = take_rows(eval.x, eval_treated);
  const Vector ye = take(eval.y, eval_treated);
  const Vector pe = take(pi_eval, eval_treated);
  const Vector ones = Vector::Ones(ye.size());
  const double n_eval = static_cast<double>(eval.n());
  auto residual_of = [&](const Vector& mu) {
    return ((ye - mu).array() / pe.array()).sum() / n_eval;
  };

  Vector mu = out.model.predict(xe);
  double residual = residual_of(mu);
  diag.initial_residual = residual;
  diag.tolerance = 1e-6 * sample_sd(tr.y);
  Rng rng(params.seed, 0x7374616765ULL);
  int rejected_run = 0;
  int built = 0;
  while (std::abs(residual) > diag.tolerance && built < params.max_trees_k &&
         rejected_run < params.early_stop_rounds) {
    ++built;
    const double eps = epsilon_star(ones, ye, mu, pe);
    const Vector target = eps * pe.cwiseInverse();
    const RowList rows = sample_rows(ye.size(), params.stage2_subsample, rng);
    const auto features = sample_features(eval.d(), params.colsample, rng);
    RegressionTree tree = fit_tree(xe, target, rows, features, params.max_depth, params.min_leaf);
    const Vector candidate = mu + params.eta * tree.predict(xe);
    const double next = residual_of(candidate);
    if (std::abs(next) < std::abs(residual)) {
      mu = candidate;
      residual = next;
      out.model.trees.push_back({std::move(tree), 2});
      ++diag.stage2_trees;
      rejected_run = 0;
    } else {
      ++diag.stage2_rejected;
      ++rejected_run;
    }
  }
  diag.final_residual = residual;
  diag.converged = std::abs(residual) <= diag.tolerance;
  return out;
}

}  // namespace clearner
