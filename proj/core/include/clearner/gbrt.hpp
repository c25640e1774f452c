#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "clearner/common.hpp"
#include "clearner/datagen.hpp"

namespace clearner {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

// Rows with x[feature] <= threshold go left.
struct RegressionTree {
  std::vector<TreeNode> nodes;
  int max_depth = 0;

  double predict_row(const Matrix& x, Index row) const;
  Vector predict(const Matrix& x) const;
  int depth() const;
  int leaf_count() const;
};

RegressionTree fit_tree(const Matrix& x, const Vector& target, const RowList& rows,
                        const std::vector<int>& features, int max_depth, int min_leaf);

struct BoostParams {
  double eta = 0.1;
  int max_trees_j = 500;
  int max_trees_k = 3000;
  int max_depth = 3;
  double colsample = 1.0;
  double subsample = 1.0;
  int early_stop_rounds = 20;
  int min_leaf = 5;
  double stage2_subsample = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StagedTree {
  RegressionTree tree;
  int stage = 1;
};

struct GBRTModel {
  double base_score = 0.0;
  double eta = 0.1;
  std::vector<StagedTree> trees;

  Vector predict(const Matrix& x) const;
  int tree_count(int stage) const;
};

// Rows a booster fits: the training rows (typically the treated ones).
struct BoostSample {
  Matrix x;
  Vector y;
};

// Returns the per-row target for the next tree given current predictions.
using PseudoGradient =
    std::function<Vector(const BoostSample& train, const Vector& prediction)>;

Vector squared_loss_gradient(const BoostSample& train, const Vector& prediction);

struct BoostTrace {
  std::vector<double> val_mse;  // after 0, 1, 2, ... trees
  int best_iteration = 0;
  double best_val_mse = 0.0;
};

GBRTModel boost_fit(const BoostSample& train, const BoostSample& val,
                    const BoostParams& params, const PseudoGradient& pseudo_gradient,
                    BoostTrace* trace = nullptr);

// P[A(Y - mu)/pi] / P[A/pi^2] over the given rows.
double epsilon_star(const Vector& a, const Vector& y, const Vector& mu,
                    const Vector& pi_hat);
double epsilon_star(const Dataset& data, const GBRTModel& model, const Vector& pi_hat);

// Constraint value P_eval[(A/pi)(Y - mu)].
double constraint_residual(const Vector& a, const Vector& y, const Vector& mu,
                           const Vector& pi_hat);

struct ClearnerBoostDiagnostics {
  int stage1_trees = 0;
  int stage2_trees = 0;
  int stage2_rejected = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  double tolerance = 0.0;
  bool converged = false;
  BoostTrace stage1;
};

struct ClearnerBoostResult {
  GBRTModel model;
  ClearnerBoostDiagnostics diagnostics;
};

// Two-stage constrained boosting. pi_train/pi_eval align with the rows of
// train/eval. Stage 1 fits treated train rows with the targeting-modified
// gradient; stage 2 drives the eval constraint to zero.
ClearnerBoostResult clearner_boost(const Dataset& train, const Dataset& eval,
                                   const Dataset& val, const Vector& pi_train,
                                   const Vector& pi_eval, const BoostParams& params);

// Stage-1 gradient of the constrained objective on a treated sample.
PseudoGradient clearner_stage1_gradient(Vector pi_treated);

BoostSample treated_sample(const Dataset& data);

}  // namespace clearner
