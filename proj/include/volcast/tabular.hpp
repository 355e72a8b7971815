#pragma once

// Repeated random-split regression benchmark on tabular data.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "volcast/backtest.hpp"
#include "volcast/data.hpp"
#include "volcast/ensemble.hpp"
#include "volcast/metrics.hpp"
#include "volcast/training.hpp"

namespace volcast {

struct TabularTrial {
  double rmse = 0.0;
  double nll = 0.0;  ///< mean mixture NLL in original target units
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
};

struct TabularSummary {
  std::string dataset;
  std::string head;
  std::vector<TabularTrial> trials;
  double rmse_mean = 0.0, rmse_sd = 0.0;
  double nll_mean = 0.0, nll_sd = 0.0;
};

/// Label of a head configuration, with the tied SMD shown separately.
inline std::string head_label(const ModelConfig& c) {
  if (c.tied()) return "smd_tied";
  return std::string(to_string(c.head));
}

/// Each trial holds out a random `test_fraction` of rows (seed base_seed + trial),
/// fits the ensemble on the remainder with centred target scaling, and scores
/// the held-out rows.
inline TabularSummary run_tabular(const TabularData& table, ModelConfig model, const TrainConfig& train_cfg,
                                  const EnsembleConfig& ens, std::size_t trials, double test_fraction,
                                  const std::string& dataset = "") {
  if (trials == 0) throw ConfigError("tabular benchmark needs at least one trial");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  const std::size_t n = table.data.size();
  const std::size_t n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n - n_test < 4) throw ConfigError("dataset too small for the requested split");
  model.trunk = TrunkKind::dense;
  model.input_dim = table.feature_names.size();

  TabularSummary s;
  s.dataset = dataset;
  s.head = head_label(model);
  std::vector<double> rmses, nlls;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(ens.base_seed + t);
    std::shuffle(order.begin(), order.end(), rng);
    const Dataset test = subset(table.data, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test)});
    const Dataset rest = subset(table.data, {order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end()});
    EnsembleConfig trial_ens = ens;
    trial_ens.base_seed = ens.base_seed + 1000 * t;
    const FittedEnsemble fit = fit_ensemble(rest, model, train_cfg, trial_ens, /*centre_target=*/true);

    std::vector<std::vector<DistributionParams>> per_member;
    for (const auto& m : fit.members) per_member.push_back(predict_all(m, test));
    std::vector<double> y_hat;
    double nll_sum = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::vector<DistributionParams> params;
      for (const auto& pm : per_member) params.push_back(pm[i]);
      y_hat.push_back(combine_members(params, test.targets[i]).y_hat);
      nll_sum += ensemble_nll(test.targets[i], params);
    }
    TabularTrial trial;
    trial.rmse = rmse(test.targets, y_hat);
    trial.nll = nll_sum / static_cast<double>(test.size());
    trial.train_rows = rest.size();
    trial.test_rows = test.size();
    rmses.push_back(trial.rmse);
    nlls.push_back(trial.nll);
    s.trials.push_back(trial);
  }
  s.rmse_mean = mean_of(rmses);
  s.rmse_sd = sample_sd(rmses);
  s.nll_mean = mean_of(nlls);
  s.nll_sd = sample_sd(nlls);
  return s;
}

inline std::string tabular_csv_header() { return "dataset,head,rmse_mean,rmse_sd,nll_mean,nll_sd"; }

inline std::string to_csv_row(const TabularSummary& s) {
  return s.dataset + ',' + s.head + ',' + format_double(s.rmse_mean) + ',' + format_double(s.rmse_sd) + ',' +
         format_double(s.nll_mean) + ',' + format_double(s.nll_sd);
}

/// Heteroscedastic synthetic regression: y = sin(x0) + 0.5 x1 + (0.1 + 0.3 |x2|) e,
/// remaining features are noise. Needs at least three features.
inline TabularData make_synthetic_tabular(std::size_t rows, std::size_t features, std::uint64_t seed) {
  if (features < 3) throw ContractError("synthetic tabular data needs at least three features");
  if (rows == 0) throw ContractError("synthetic tabular data needs at least one row");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  TabularData t;
  for (std::size_t k = 0; k < features; ++k) t.feature_names.push_back("x" + std::to_string(k));
  t.target_name = "y";
  std::vector<double> values(rows * features);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < features; ++k) values[i * features + k] = z(rng);
    const double* x = values.data() + i * features;
    t.data.targets.push_back(std::sin(x[0]) + 0.5 * x[1] + (0.1 + 0.3 * std::fabs(x[2])) * z(rng));
  }
  t.data.inputs = Tensor::matrix(rows, features, std::move(values));
  return t;
}

/// Linear-Gaussian regression: y = sum_k x_k / (k + 1) + noise_sd e with
/// standard normal features.
inline TabularData make_linear_tabular(std::size_t rows, std::size_t features, double noise_sd, std::uint64_t seed) {
  if (rows == 0 || features == 0) throw ContractError("linear tabular data needs rows and features");
  if (!(noise_sd > 0.0)) throw ContractError("noise_sd must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  TabularData t;
  for (std::size_t k = 0; k < features; ++k) t.feature_names.push_back("x" + std::to_string(k));
  t.target_name = "y";
  std::vector<double> values(rows * features);
  for (std::size_t i = 0; i < rows; ++i) {
    double y = 0.0;
    for (std::size_t k = 0; k < features; ++k) {
      values[i * features + k] = z(rng);
      y += values[i * features + k] / static_cast<double>(k + 1);
    }
    t.data.targets.push_back(y + noise_sd * z(rng));
  }
  t.data.inputs = Tensor::matrix(rows, features, std::move(values));
  return t;
}

}  // namespace volcast
