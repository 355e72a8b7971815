#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "volcast/autodiff.hpp"
#include "volcast/error.hpp"
#include "volcast/network.hpp"
#include "volcast/tensor.hpp"

namespace volcast {

/// Inputs and targets for supervised training. Inputs are B x K x F for
/// sequence models, B x F for tabular ones. The index vectors are optional
/// bookkeeping for windowed panels (empty for tabular data).
struct Dataset {
  Tensor inputs;
  std::vector<double> targets;
  std::vector<std::size_t> asset_index;
  std::vector<std::size_t> end_index;  ///< last input period of each row
  std::vector<std::size_t> target_index;  ///< period in which the target is realised

  std::size_t size() const noexcept { return targets.size(); }
  bool empty() const noexcept { return targets.empty(); }

  /// Values per row in `inputs`.
  std::size_t row_width() const {
    std::size_t w = 1;
    for (std::size_t k = 1; k < inputs.rank(); ++k) w *= inputs.shape()[k];
    return w;
  }
};

/// Rows of `data` selected by `rows`, in the given order.
inline Dataset subset(const Dataset& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ContractError("subset of zero rows");
  Dataset out;
  Tensor::Shape shape = data.inputs.shape();
  shape[0] = rows.size();
  const std::size_t w = data.row_width();
  std::vector<double> values(rows.size() * w);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= data.size()) throw ContractError("subset row out of range");
    std::copy_n(data.inputs.data() + rows[i] * w, w, values.begin() + static_cast<std::ptrdiff_t>(i * w));
    out.targets.push_back(data.targets[rows[i]]);
    if (!data.asset_index.empty()) out.asset_index.push_back(data.asset_index[rows[i]]);
    if (!data.end_index.empty()) out.end_index.push_back(data.end_index[rows[i]]);
    if (!data.target_index.empty()) out.target_index.push_back(data.target_index[rows[i]]);
  }
  out.inputs = Tensor(std::move(shape), std::move(values));
  return out;
}

inline Dataset slice_rows(const Dataset& data, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return subset(data, rows);
}

/// First `train_fraction` of the rows for training, the rest for validation.
/// Rows must already be in chronological order; the cut is moved forward so
/// that no target period straddles the boundary.
inline std::pair<Dataset, Dataset> split_chronological(const Dataset& data, double train_fraction = 0.7) {
  if (data.size() < 2) throw ContractError("need at least two rows to split");
  std::size_t cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(data.size())));
  cut = std::clamp<std::size_t>(cut, 1, data.size() - 1);
  if (!data.target_index.empty()) {
    while (cut < data.size() - 1 && data.target_index[cut] == data.target_index[cut - 1]) ++cut;
  }
  return {slice_rows(data, 0, cut), slice_rows(data, cut, data.size())};
}

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 1000;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  double tolerance = 1e-4;
  double lambda_reg = 0.01;  ///< NIG head only
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (patience == 0) throw ConfigError("patience must be at least 1");
    if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be non-negative");
    if (!(lambda_reg >= 0.0)) throw ConfigError("lambda_reg must be non-negative");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  }
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected ADAM update of every parameter.
inline void adam_step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads, AdamState& state,
                      double learning_rate) {
  if (grads.size() != params.size()) throw ContractError("adam_step: gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!grads[k].same_shape(params[k].value)) throw ShapeError("adam_step: gradient shape mismatch for " + params[k].name);
    for (double g : grads[k].values()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient for parameter " + params[k].name);
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(p.value.zeros_like());
      state.v.push_back(p.value.zeros_like());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k].value;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.values()) v *= s;
  }
  return norm;
}

/// Patience-based early stopping on a validation loss.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double tolerance) : patience_(patience), tolerance_(tolerance) {}

  /// Records one epoch. Returns true if this epoch is the new best.
  bool update(double loss) {
    ++epochs_;
    if (loss < best_ - tolerance_) {
      best_ = loss;
      best_epoch_ = epochs_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const noexcept { return stale_ >= patience_; }
  double best() const noexcept { return best_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  std::size_t stale_epochs() const noexcept { return stale_; }

 private:
  std::size_t patience_;
  double tolerance_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epochs_ = 0;
  std::size_t stale_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_val_nll = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Tensor batch_inputs(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                           std::size_t end) {
  Tensor::Shape shape = data.inputs.shape();
  shape[0] = end - begin;
  const std::size_t w = data.row_width();
  std::vector<double> values((end - begin) * w);
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(data.inputs.data() + order[i] * w, w, values.begin() + static_cast<std::ptrdiff_t>((i - begin) * w));
  }
  return Tensor(std::move(shape), std::move(values));
}

inline Tensor batch_targets(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                            std::size_t end, const Scaling& s) {
  Tensor t = Tensor::matrix(end - begin, 1);
  for (std::size_t i = begin; i < end; ++i) t[i - begin] = (data.targets[order[i]] - s.target_shift) / s.target_scale;
  return t;
}

}  // namespace detail

/// Mean predictive NLL in original target units, eval mode.
inline double evaluate_nll(const Forecaster& model, const Dataset& data, std::size_t chunk = 4096) {
  if (data.empty()) throw ContractError("evaluate_nll on an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const double log_scale = std::log(model.scaling().target_scale);
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    ad::Tape tape;
    auto vars = model.bind(tape, false);
    HeadOutputs out = model.forward_eval(tape, vars, detail::batch_inputs(data, order, begin, end));
    ad::Var y = tape.leaf(detail::batch_targets(data, order, begin, end, model.scaling()));
    total += batch_loss(out, y, 0.0).item() * static_cast<double>(end - begin);
  }
  // Change of variables from standardised to original units.
  return total / static_cast<double>(data.size()) + log_scale;
}

/// Eval-mode predictions for every row, in original units.
inline std::vector<DistributionParams> predict_all(const Forecaster& model, const Dataset& data,
                                                   std::size_t chunk = 4096) {
  std::vector<DistributionParams> out;
  out.reserve(data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    auto part = model.predict(detail::batch_inputs(data, order, begin, end));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

/// Gradient of the mean training loss over one batch, with the loss value.
inline double loss_and_gradients(Forecaster& model, const Tensor& inputs, const Tensor& targets, double lambda_reg,
                                 bool train_mode, std::mt19937_64* rng, std::vector<Tensor>& grads) {
  ad::Tape tape;
  auto vars = model.bind(tape, true);
  HeadOutputs out = model.forward(tape, vars, inputs, train_mode, rng);
  ad::Var y = tape.leaf(targets);
  ad::Var loss = batch_loss(out, y, lambda_reg);
  tape.backward(loss);
  grads.clear();
  for (const auto& v : vars) grads.push_back(v.grad());
  return loss.item();
}

/// Fits the model by minibatch ADAM with early stopping on `validation`, then
/// restores the parameters (and normalisation buffers) of the best epoch.
inline TrainResult train(Forecaster& model, const Dataset& training, const Dataset& validation,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (training.empty() || validation.empty()) throw ContractError("train needs non-empty training and validation sets");
  const double lambda = model.config().head == Head::nig ? cfg.lambda_reg : 0.0;
  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  EarlyStopping stopper(cfg.patience, cfg.tolerance);
  TrainResult result;
  auto best_params = model.parameters();
  auto best_buffers = model.buffers();
  const double log_scale = std::log(model.scaling().target_scale);

  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> grads;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Tensor x = detail::batch_inputs(training, order, begin, end);
      Tensor y = detail::batch_targets(training, order, begin, end, model.scaling());
      const double loss = loss_and_gradients(model, x, y, lambda, true, &rng, grads);
      if (!std::isfinite(loss)) throw TrainingError("training loss is not finite at epoch " + std::to_string(epoch));
      clip_global_norm(grads, cfg.clip_norm);
      adam_step(model.parameters(), grads, adam, cfg.learning_rate);
      loss_sum += loss * static_cast<double>(end - begin);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_nll = loss_sum / static_cast<double>(order.size()) + log_scale;
    log.val_nll = evaluate_nll(model, validation);
    if (std::isnan(log.val_nll)) {
      throw TrainingError("validation NLL is NaN at epoch " + std::to_string(epoch) +
                          " (train NLL " + std::to_string(log.train_nll) + ")");
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(log);
    if (stopper.update(log.val_nll)) {
      best_params = model.parameters();
      best_buffers = model.buffers();
    }
    if (stopper.should_stop()) break;
  }
  model.parameters() = std::move(best_params);
  model.buffers() = std::move(best_buffers);
  result.best_epoch = stopper.best_epoch();
  result.best_val_nll = stopper.best();
  return result;
}

/// Per-epoch log as CSV: epoch, train_nll, val_nll and, if requested, wall
/// seconds. Without timings the file is a deterministic function of the seed.
inline void write_epoch_log(const TrainResult& r, const std::string& path, bool with_seconds = false) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  out.precision(17);
  out << "epoch,train_nll,val_nll" << (with_seconds ? ",seconds" : "") << '\n';
  for (const auto& e : r.history) {
    out << e.epoch << ',' << e.train_nll << ',' << e.val_nll;
    if (with_seconds) out << ',' << e.seconds;
    out << '\n';
  }
}

}  // namespace volcast
