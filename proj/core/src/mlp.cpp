#include "clearner/mlp.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

namespace clearner {

namespace {

double activate(Activation act, double z) {
  if (act == Activation::tanh) return std::tanh(z);
  return z > 30.0 ? z : std::log1p(std::exp(z));
}

double activate_derivative(Activation act, double z) {
  if (act == Activation::tanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return logistic(z);
}

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activations per layer (rows x width)
  std::vector<Matrix> post;  // inputs to each layer; post[0] = x
  Vector output;
};

ForwardCache forward_batch(const MLPParams& params, const Matrix& x) {
  ForwardCache cache;
  cache.post.push_back(x);
  const std::size_t layers = params.layers.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const Layer& layer = params.layers[l];
    Matrix z = cache.post.back() * layer.w.transpose();
    z.rowwise() += layer.b.transpose();
    cache.pre.push_back(z);
    if (l + 1 < layers) {
      Matrix h = z.unaryExpr([&](double v) { return activate(params.activation, v); });
      cache.post.push_back(std::move(h));
    }
  }
  cache.output = cache.pre.back().col(0);
  return cache;
}

// Accumulates d(sum_i dout_i * f(x_i))/d(params) into grad (flattened order).
void backprop(const MLPParams& params, const ForwardCache& cache, const Vector& dout,
              Vector& grad) {
  const std::size_t layers = params.layers.size();
  std::vector<Index> offsets(layers);
  Index off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = off;
    off += params.layers[l].w.size() + params.layers[l].b.size();
  }
  Matrix delta = dout;  // rows x 1
  for (std::size_t l = layers; l-- > 0;) {
    const Layer& layer = params.layers[l];
    const Matrix gw = delta.transpose() * cache.post[l];  // out x in
    const Vector gb = delta.colwise().sum().transpose();
    Eigen::Map<Matrix>(grad.data() + offsets[l], layer.w.rows(), layer.w.cols()) += gw;
    grad.segment(offsets[l] + layer.w.size(), layer.b.size()) += gb;
    if (l == 0) break;
    Matrix back = delta * layer.w;
    const Matrix& z = cache.pre[l - 1];
    for (Index i = 0; i < back.rows(); ++i)
      for (Index j = 0; j < back.cols(); ++j)
        back(i, j) *= activate_derivative(params.activation, z(i, j));
    delta = std::move(back);
  }
}

Vector weights_over_pi(const ConstraintSet& eval) {
  return eval.a.cwiseQuotient(eval.pi_hat);
}

}  // namespace

MLPParams MLPParams::init(const std::vector<int>& widths, Activation activation,
                          std::uint64_t seed) {
  if (widths.size() < 2 || widths.back() != 1)
    throw InvalidArgument("MLPParams::init: widths must end with 1");
  for (int w : widths)
    if (w < 1) throw InvalidArgument("MLPParams::init: widths must be positive");
  MLPParams params;
  params.activation = activation;
  Rng rng(seed, 0x6d6c70ULL);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> draw(-bound, bound);
    Layer layer;
    layer.w.resize(out, in);
    for (Index j = 0; j < layer.w.cols(); ++j)
      for (Index i = 0; i < layer.w.rows(); ++i) layer.w(i, j) = draw(rng);
    layer.b = Vector::Zero(out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Index MLPParams::parameter_count() const {
  Index count = 0;
  for (const auto& layer : layers) count += layer.w.size() + layer.b.size();
  return count;
}

Vector MLPParams::flatten() const {
  Vector flat(parameter_count());
  Index off = 0;
  for (const auto& layer : layers) {
    flat.segment(off, layer.w.size()) = Eigen::Map<const Vector>(layer.w.data(), layer.w.size());
    off += layer.w.size();
    flat.segment(off, layer.b.size()) = layer.b;
    off += layer.b.size();
  }
  return flat;
}

void MLPParams::unflatten(const Vector& flat) {
  if (flat.size() != parameter_count())
    throw InvalidArgument("MLPParams::unflatten: size mismatch");
  Index off = 0;
  for (auto& layer : layers) {
    layer.w = Eigen::Map<const Matrix>(flat.data() + off, layer.w.rows(), layer.w.cols());
    off += layer.w.size();
    layer.b = flat.segment(off, layer.b.size());
    off += layer.b.size();
  }
}

double mlp_forward(const MLPParams& params, const Eigen::RowVectorXd& x_row) {
  if (x_row.size() != params.input_width())
    throw InvalidArgument("mlp_forward: row width " + std::to_string(x_row.size()) +
                          " does not match input width " +
                          std::to_string(params.input_width()));
  Vector h = x_row.transpose();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Vector z = params.layers[l].w * h + params.layers[l].b;
    if (l + 1 < params.layers.size())
      h = z.unaryExpr([&](double v) { return activate(params.activation, v); });
    else
      h = std::move(z);
  }
  return h[0];
}

Vector mlp_forward(const MLPParams& params, const Matrix& x) {
  if (x.cols() != params.input_width())
    throw InvalidArgument("mlp_forward: input width mismatch");
  return forward_batch(params, x).output;
}

double mlp_constraint(const MLPParams& params, const ConstraintSet& eval) {
  if (eval.x.rows() == 0) return 0.0;
  const Vector f = mlp_forward(params, eval.x);
  return weights_over_pi(eval).dot(eval.y - f) / static_cast<double>(eval.x.rows());
}

LossGrad loss_and_grad(const MLPParams& params, const BoostSample& batch,
                       const ConstraintSet& eval, double lambda) {
  LossGrad out;
  out.gradient = Vector::Zero(params.parameter_count());
  if (batch.x.rows() > 0) {
    const ForwardCache cache = forward_batch(params, batch.x);
    const Vector resid = batch.y - cache.output;
    const double m = static_cast<double>(batch.x.rows());
    out.mse_term = resid.squaredNorm() / m;
    backprop(params, cache, (-2.0 / m) * resid, out.gradient);
  }
  if (lambda > 0.0) {
    if (eval.x.rows() == 0) throw InvalidArgument("loss_and_grad: empty eval set");
    const ForwardCache cache = forward_batch(params, eval.x);
    const Vector w = weights_over_pi(eval);
    const double n = static_cast<double>(eval.x.rows());
    out.constraint = w.dot(eval.y - cache.output) / n;
    out.penalty_term = lambda * out.constraint * out.constraint;
    backprop(params, cache, (-2.0 * lambda * out.constraint / n) * w, out.gradient);
  } else if (eval.x.rows() > 0) {
    out.constraint = mlp_constraint(params, eval);
  }
  out.loss = out.mse_term + out.penalty_term;
  return out;
}

MLPParams bias_shift(const MLPParams& params, const ConstraintSet& eval, double* shift) {
  const Vector w = weights_over_pi(eval);
  const double total = w.sum();
  if (!(total > 0.0)) throw InvalidArgument("bias_shift: no treated eval rows");
  const Vector f = mlp_forward(params, eval.x);
  const double delta = w.dot(eval.y - f) / total;
  MLPParams out = params;
  out.theta_bias() += delta;
  if (shift) *shift = delta;
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("TrainConfig: lr must be > 0");
  if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
  if (batch < 1) throw InvalidArgument("TrainConfig: batch must be >= 1");
  if (!(lambda >= 0.0)) throw InvalidArgument("TrainConfig: lambda must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("TrainConfig: momentum");
}

Vector MlpRegressor::predict(const Matrix& x) const {
  const Matrix z = (x.rowwise() - x_mean.transpose()).array().rowwise() /
                   x_scale.transpose().array();
  return (y_mean + y_scale * mlp_forward(params, z).array()).matrix();
}

MlpTrainResult train_clearner_mlp(const Dataset& train, const Dataset& val,
                                  const Dataset& eval, const Vector& pi_eval,
                                  const TrainConfig& cfg) {
  cfg.validate();
  if (pi_eval.size() != eval.n()) throw InvalidArgument("train_clearner_mlp: pi length");
  const BoostSample tr_raw = treated_sample(train);
  if (tr_raw.y.size() == 0) throw InvalidArgument("train_clearner_mlp: no treated train rows");

  MlpTrainResult result;
  result.config = cfg;
  MlpRegressor& model = result.model;
  model.x_mean = train.x.colwise().mean().transpose();
  model.x_scale = ((train.x.rowwise() - model.x_mean.transpose()).array().square().colwise().mean())
                      .sqrt()
                      .transpose();
  for (Index j = 0; j < model.x_scale.size(); ++j)
    if (!(model.x_scale[j] > 0.0)) model.x_scale[j] = 1.0;
  model.y_mean = tr_raw.y.mean();
  model.y_scale = std::sqrt((tr_raw.y.array() - model.y_mean).square().mean());
  if (!(model.y_scale > 0.0)) model.y_scale = 1.0;

  auto standardise_x = [&](const Matrix& x) {
    return Matrix((x.rowwise() - model.x_mean.transpose()).array().rowwise() /
                  model.x_scale.transpose().array());
  };
  auto standardise_y = [&](const Vector& y) {
    return Vector((y.array() - model.y_mean) / model.y_scale);
  };
  const BoostSample tr{standardise_x(tr_raw.x), standardise_y(tr_raw.y)};
  const BoostSample va_raw = treated_sample(val);
  const ConstraintSet ev{standardise_x(eval.x), eval.a, standardise_y(eval.y), pi_eval};

  std::vector<int> widths = {static_cast<int>(train.d())};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  MLPParams params = MLPParams::init(widths, cfg.activation, cfg.seed);
  Vector velocity = Vector::Zero(params.parameter_count());

  Rng rng(cfg.seed, 0x73676400ULL);
  std::vector<Index> order(static_cast<std::size_t>(tr.y.size()));
  std::iota(order.begin(), order.end(), Index{0});
  auto& diag = result.diagnostics;
  diag.best_val_mse = std::numeric_limits<double>::infinity();
  MLPParams best = params;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const RowList rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const BoostSample batch{take_rows(tr.x, rows), take(tr.y, rows)};
      const LossGrad lg = loss_and_grad(params, batch, ev, cfg.lambda);
      if (!std::isfinite(lg.loss) || !lg.gradient.allFinite())
        throw ConvergenceError("train_clearner_mlp: non-finite loss in epoch " +
                                   std::to_string(epoch),
                               lg.loss, epoch);
      velocity = cfg.momentum * velocity - cfg.lr * lg.gradient;
      params.unflatten(params.flatten() + velocity);
    }
    if (cfg.apply_bias_shift) {
      double shift = 0.0;
      params = bias_shift(params, ev, &shift);
      if (epoch == 1) diag.first_epoch_shift = std::abs(shift) * model.y_scale;
    }
    MlpRegressor snapshot = model;
    snapshot.params = params;
    const Vector pred = snapshot.predict(va_raw.x);
    const double val_mse =
        va_raw.y.size() ? (va_raw.y - pred).squaredNorm() / static_cast<double>(va_raw.y.size())
                        : 0.0;
    if (!std::isfinite(val_mse))
      throw ConvergenceError("train_clearner_mlp: non-finite validation loss in epoch " +
                                 std::to_string(epoch),
                             val_mse, epoch);
    diag.val_mse.push_back(val_mse);
    if (val_mse < diag.best_val_mse) {
      diag.best_val_mse = val_mse;
      diag.best_epoch = epoch;
      best = params;
    }
  }
  model.params = best;
  diag.final_residual =
      constraint_residual(eval.a, eval.y, model.predict(eval.x), pi_eval);
  return result;
}

std::size_t select_mlp(const std::vector<MlpTrainResult>& runs, MlpSelection rule) {
  if (runs.empty()) throw InvalidArgument("select_mlp: no runs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].diagnostics.best_val_mse < runs[best].diagnostics.best_val_mse) best = i;
  if (rule == MlpSelection::best_val_mse) return best;
  const double limit = 1.1 * runs[best].diagnostics.best_val_mse;
  std::size_t chosen = best;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& d = runs[i].diagnostics;
    if (d.best_val_mse <= limit &&
        d.first_epoch_shift < runs[chosen].diagnostics.first_epoch_shift)
      chosen = i;
  }
  return chosen;
}

}  // namespace clearner
