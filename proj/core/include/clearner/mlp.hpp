#pragma once

#include <cstdint>
#include <vector>

#include "clearner/common.hpp"
#include "clearner/datagen.hpp"
#include "clearner/gbrt.hpp"

namespace clearner {

enum class Activation { tanh, softplus };

struct Layer {
  Matrix w;  // out x in
  Vector b;
};

struct MLPParams {
  std::vector<Layer> layers;
  Activation activation = Activation::tanh;

  // widths = {input, hidden..., 1}; Glorot-uniform weights, zero biases.
  static MLPParams init(const std::vector<int>& widths, Activation activation,
                        std::uint64_t seed);

  double& theta_bias() { return layers.back().b[0]; }
  double theta_bias() const { return layers.back().b[0]; }
  Index input_width() const { return layers.front().w.cols(); }
  Index parameter_count() const;
  // Layer by layer: w (column-major) then b.
  Vector flatten() const;
  void unflatten(const Vector& flat);
};

double mlp_forward(const MLPParams& params, const Eigen::RowVectorXd& x_row);
Vector mlp_forward(const MLPParams& params, const Matrix& x);

// Rows entering the constraint P_eval[(A/pi)(Y - f)].
struct ConstraintSet {
  Matrix x;
  Vector a;
  Vector y;
  Vector pi_hat;
};

struct LossGrad {
  double loss = 0.0;
  double mse_term = 0.0;
  double penalty_term = 0.0;
  double constraint = 0.0;
  Vector gradient;  // flattened, same order as MLPParams::flatten
};

// Minibatch MSE on batch rows plus lambda * (P_eval[(A/pi)(Y - f)])^2.
LossGrad loss_and_grad(const MLPParams& params, const BoostSample& batch,
                       const ConstraintSet& eval, double lambda);

double mlp_constraint(const MLPParams& params, const ConstraintSet& eval);

// Moves theta_bias by P_eval[(A/pi)(Y - f)] / P_eval[A/pi]. shift receives the amount.
MLPParams bias_shift(const MLPParams& params, const ConstraintSet& eval,
                     double* shift = nullptr);

struct TrainConfig {
  double lambda = 0.0;
  double lr = 0.01;
  int epochs = 100;
  int batch = 16;
  std::uint64_t seed = 1;
  double momentum = 0.9;
  std::vector<int> hidden = {32, 32};
  Activation activation = Activation::tanh;
  bool apply_bias_shift = true;

  void validate() const;
};

// Network on standardised inputs and outputs, mapped back for prediction.
struct MlpRegressor {
  MLPParams params;
  Vector x_mean;
  Vector x_scale;
  double y_mean = 0.0;
  double y_scale = 1.0;

  Vector predict(const Matrix& x) const;
};

struct MlpTrainDiagnostics {
  std::vector<double> val_mse;  // per epoch, original units
  int best_epoch = 0;           // 1-based
  double best_val_mse = 0.0;
  double first_epoch_shift = 0.0;  // |shift| after epoch 1, original units
  double final_residual = 0.0;     // eval constraint of the returned snapshot
};

struct MlpTrainResult {
  MlpRegressor model;
  MlpTrainDiagnostics diagnostics;
  TrainConfig config;
};

// pi_eval aligns with eval rows. Fits treated train rows; validation MSE on
// treated val rows; epoch-end bias shift on eval when cfg.apply_bias_shift.
MlpTrainResult train_clearner_mlp(const Dataset& train, const Dataset& val,
                                  const Dataset& eval, const Vector& pi_eval,
                                  const TrainConfig& cfg);

enum class MlpSelection { best_val_mse, min_first_shift };

// Index of the selected run. min_first_shift considers runs whose best val MSE
// is within 10% of the overall best.
std::size_t select_mlp(const std::vector<MlpTrainResult>& runs, MlpSelection rule);

}  // namespace clearner
