#pragma once

// Hyperparameter grid search and the four-variant ablation.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "volcast/backtest.hpp"
#include "volcast/metrics.hpp"

namespace volcast {

struct GridSpec {
  std::vector<std::vector<std::size_t>> lstm_units{{16, 8}, {32, 16, 8}, {32, 16}, {64, 32, 16}};
  std::vector<std::vector<std::size_t>> trunk_hidden{{8}, {16, 8}};
  std::vector<double> dropout_rate{0.2, 0.3, 0.4};
};

/// Every combination of the grid applied to `base`, LSTM widths varying slowest.
inline std::vector<ModelConfig> grid_models(const ModelConfig& base, const GridSpec& grid) {
  std::vector<ModelConfig> out;
  for (const auto& lstm : grid.lstm_units) {
    for (const auto& hidden : grid.trunk_hidden) {
      for (double rate : grid.dropout_rate) {
        ModelConfig m = base;
        m.lstm_units = lstm;
        m.trunk_hidden = hidden;
        m.dropout_rate = rate;
        m.validate();
        out.push_back(std::move(m));
      }
    }
  }
  if (out.empty()) throw ConfigError("hyperparameter grid is empty");
  return out;
}

struct GridPoint {
  ModelConfig model;
  double val_nll = 0.0;
};

struct GridResult {
  std::vector<GridPoint> points;
  std::size_t best = 0;  ///< lowest validation NLL, first on ties
};

/// Scores each grid point by the validation NLL of one member (seed
/// base_seed) trained on the rows available before the first test period.
inline GridResult grid_search(const ReturnPanel& panel, const BacktestSchedule& schedule, const ModelConfig& base,
                              const GridSpec& grid, const TrainConfig& train_cfg, const EnsembleConfig& ens) {
  panel.validate();
  schedule.validate(panel.periods());
  const auto models = grid_models(base, grid);
  const std::size_t K = base.window_len, h = base.horizon;
  const Dataset all = make_windows(panel, K, h, base.features, 1);
  if (schedule.test_start < h) throw ScheduleError("test range starts before one horizon of data exists");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.target_index[i] + h <= schedule.test_start && (all.end_index[i] + 1 - K) % schedule.train_stride == 0)
      rows.push_back(i);
  }
  if (rows.empty()) throw ScheduleError("no rows precede the test range for the grid search");
  const Dataset tuning = subset(all, rows);

  GridResult result;
  result.points.resize(models.size());
  EnsembleConfig one = ens;
  one.members = 1;
  one.workers = 1;
  detail::parallel_for(models.size(), ens.workers, [&](std::size_t g) {
    const auto fit = fit_ensemble(tuning, models[g], train_cfg, one, /*centre_target=*/false);
    result.points[g] = {models[g], fit.histories[0].best_val_nll};
  });
  for (std::size_t g = 1; g < result.points.size(); ++g)
    if (result.points[g].val_nll < result.points[result.best].val_nll) result.best = g;
  return result;
}

struct AblationVariant {
  std::string name;
  ModelConfig model;
  std::size_t members = 0;
};

/// The full model and the three single-change ablations.
inline std::vector<AblationVariant> ablation_variants(const ModelConfig& full, std::size_t members) {
  ModelConfig single = full;
  single.head_mode = HeadMode::single_layer;
  ModelConfig returns = full;
  returns.features = Features::returns_only;
  return {{"full", full, members}, {"no_averaging", full, 1}, {"single_output", single, members},
          {"returns_only", returns, members}};
}

struct AblationRun {
  std::string variant;
  std::size_t seed_index = 0;
  std::uint64_t base_seed = 0;
  MetricReport metrics;
};

struct AblationSummary {
  std::string variant;
  std::size_t seeds = 0;
  double cc_mean = 0, cc_sd = 0;
  double rmse_mean = 0, rmse_sd = 0;
  double nll_mean = 0, nll_sd = 0;
  double tracking_mean = std::nan(""), tracking_sd = std::nan("");
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::vector<AblationSummary> summary;  ///< one row per variant, in variant order
};

/// Seed stride between repetitions, so member seeds of different repetitions never overlap.
inline constexpr std::uint64_t kAblationSeedStride = 1000;

/// Runs every variant with ensemble seeds base_seed + s * kAblationSeedStride
/// for s < seeds. Tracking is filled when `true_sigma2` is given.
inline AblationReport run_ablation(const ReturnPanel& panel, const BacktestSchedule& schedule, const ModelConfig& full,
                                   const TrainConfig& train_cfg, const EnsembleConfig& ens, std::size_t seeds,
                                   std::size_t bucket, const std::vector<double>* true_sigma2 = nullptr,
                                   const std::function<void(const AblationRun&, const BacktestResult&)>& on_run = {}) {
  if (seeds == 0) throw ConfigError("ablation needs at least one seed");
  const auto variants = ablation_variants(full, ens.members);
  AblationReport report;
  for (const auto& v : variants) {
    std::vector<double> cc, rmse_v, nll_v, tracking;
    for (std::size_t s = 0; s < seeds; ++s) {
      EnsembleConfig e = ens;
      e.members = v.members;
      e.base_seed = ens.base_seed + s * kAblationSeedStride;
      const BacktestResult r = walk_forward(panel, schedule, v.model, train_cfg, e);
      AblationRun run{v.name, s, e.base_seed, r.metrics};
      run.metrics.label = v.name;
      if (true_sigma2) {
        run.metrics.tracking = tracking_against_truth(r, *true_sigma2, panel.asset_count(), bucket).mean_correlation;
        tracking.push_back(run.metrics.tracking);
      }
      cc.push_back(run.metrics.cc);
      rmse_v.push_back(run.metrics.rmse);
      nll_v.push_back(run.metrics.nll);
      if (on_run) on_run(run, r);
      report.runs.push_back(std::move(run));
    }
    AblationSummary sm;
    sm.variant = v.name;
    sm.seeds = seeds;
    sm.cc_mean = mean_of(cc);
    sm.cc_sd = sample_sd(cc);
    sm.rmse_mean = mean_of(rmse_v);
    sm.rmse_sd = sample_sd(rmse_v);
    sm.nll_mean = mean_of(nll_v);
    sm.nll_sd = sample_sd(nll_v);
    if (!tracking.empty()) {
      sm.tracking_mean = mean_of(tracking);
      sm.tracking_sd = sample_sd(tracking);
    }
    report.summary.push_back(sm);
  }
  return report;
}

inline const AblationSummary& find_variant(const AblationReport& r, const std::string& name) {
  for (const auto& s : r.summary)
    if (s.variant == name) return s;
  throw ContractError("ablation has no variant named " + name);
}

inline void write_ablation_csv(const AblationReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
  out << "variant,seeds,cc_mean,cc_sd,rmse_mean,rmse_sd,nll_mean,nll_sd,tracking_mean,tracking_sd\n";
  for (const auto& s : r.summary) {
    out << s.variant << ',' << s.seeds << ',' << num(s.cc_mean) << ',' << num(s.cc_sd) << ',' << num(s.rmse_mean) << ','
        << num(s.rmse_sd) << ',' << num(s.nll_mean) << ',' << num(s.nll_sd) << ',' << num(s.tracking_mean) << ','
        << num(s.tracking_sd) << '\n';
  }
}

inline void write_ablation_runs_csv(const AblationReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  out << "seed_index,base_seed," << metric_csv_header() << '\n';
  for (const auto& run : r.runs) out << run.seed_index << ',' << run.base_seed << ',' << to_csv_row(run.metrics) << '\n';
}

}  // namespace volcast
