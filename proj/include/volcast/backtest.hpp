#pragma once

// Walk-forward refit-then-forecast over a return panel.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "volcast/data.hpp"
#include "volcast/distributions.hpp"
#include "volcast/ensemble.hpp"
#include "volcast/error.hpp"
#include "volcast/metrics.hpp"
#include "volcast/network.hpp"
#include "volcast/training.hpp"

namespace volcast {

enum class WindowMode { expanding, rolling };

inline std::string_view to_string(WindowMode m) { return m == WindowMode::expanding ? "expanding" : "rolling"; }

inline WindowMode parse_window_mode(std::string_view s) {
  if (s == "expanding") return WindowMode::expanding;
  if (s == "rolling") return WindowMode::rolling;
  throw ConfigError("unknown schedule mode '" + std::string(s) + "' (expected expanding or rolling)");
}

/// Periods are indices into the panel's timestamps. Forecasts are grouped by
/// the period in which their target is realised.
struct BacktestSchedule {
  WindowMode mode = WindowMode::expanding;
  std::size_t test_start = 0;      ///< first target period of the test range
  std::size_t test_end = 0;        ///< one past the last target period; 0 = end of panel
  std::size_t refit_interval = 0;  ///< periods between refits
  std::size_t window_len = 0;      ///< rolling mode: target periods in each training window
  std::size_t train_stride = 1;    ///< keep every stride-th window end for training

  void validate(std::size_t panel_periods) const {
    const std::size_t end = test_end == 0 ? panel_periods : test_end;
    if (refit_interval == 0) throw ScheduleError("refit_interval must be positive");
    if (train_stride == 0) throw ScheduleError("train_stride must be positive");
    if (test_start == 0 || test_start >= end) throw ScheduleError("test range is empty or starts at the first period");
    if (end > panel_periods) throw ScheduleError("test_end lies beyond the panel");
    if (mode == WindowMode::rolling && window_len == 0) throw ScheduleError("rolling schedule needs window_len > 0");
  }
};

struct EnsembleConfig {
  std::size_t members = 5;
  std::uint64_t base_seed = 0;
  std::size_t workers = 0;  ///< 0 = hardware concurrency
};

struct RefitPeriod {
  std::size_t index = 0;
  std::size_t start = 0;  ///< first target period forecast by this fit
  std::size_t end = 0;    ///< one past the last
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
  std::size_t test_rows = 0;
  std::size_t first_train_target = 0;
  std::size_t last_train_target = 0;
  std::vector<std::size_t> best_epochs;
  std::vector<double> best_val_nll;
  std::vector<TrainResult> histories;
};

struct BacktestResult {
  Head head = Head::smd;
  std::size_t horizon = 1;
  std::vector<ForecastRow> rows;
  std::vector<std::size_t> target_index;
  std::vector<std::size_t> end_index;
  std::vector<std::size_t> asset_index;
  std::vector<std::size_t> period_of_row;
  std::vector<std::vector<DistributionParams>> member_params;  ///< per row, per member
  std::vector<RefitPeriod> periods;
  MetricReport metrics;
};

namespace detail {

inline std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t w = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  return std::max<std::size_t>(1, std::min(w, jobs));
}

/// Runs job(i) for i in [0, n) on up to `workers` threads. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = worker_count(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// A trained ensemble and its training diagnostics.
struct FittedEnsemble {
  std::vector<Forecaster> members;
  std::vector<TrainResult> histories;
};

/// Trains `ens.members` forecasters with seeds base_seed + m on a 70/30
/// chronological split of `rows`. Time-series targets are scaled but not centred.
inline FittedEnsemble fit_ensemble(const Dataset& rows, const ModelConfig& model, const TrainConfig& train_cfg,
                                   const EnsembleConfig& ens, bool centre_target) {
  if (ens.members == 0) throw ConfigError("ensemble needs at least one member");
  if (rows.size() < 4) throw ScheduleError("training window holds only " + std::to_string(rows.size()) + " rows");
  auto [train_set, val_set] = split_chronological(rows, 0.7);
  const Scaling scaling = fit_scaling(train_set, centre_target);
  FittedEnsemble fit;
  std::vector<std::optional<Forecaster>> slots(ens.members);
  fit.histories.resize(ens.members);
  detail::parallel_for(ens.members, ens.workers, [&](std::size_t m) {
    const std::uint64_t seed = ens.base_seed + m;
    Forecaster f(model, seed);
    f.scaling() = scaling;
    TrainConfig cfg = train_cfg;
    cfg.seed = seed;
    fit.histories[m] = train(f, train_set, val_set, cfg);
    slots[m].emplace(std::move(f));
  });
  for (auto& s : slots) fit.members.push_back(std::move(*s));
  return fit;
}

/// Combines member predictions of one row into a forecast in original units.
inline ForecastRow combine_members(const std::vector<DistributionParams>& params, double y) {
  std::vector<UncertaintyReport> reports;
  reports.reserve(params.size());
  for (const auto& p : params) reports.push_back(decompose(p));
  const auto u = ensemble_decompose(reports);
  ForecastRow r;
  r.y = y;
  r.y_hat = u.prediction;
  r.var_hat = u.predictive;
  r.aleatoric = u.aleatoric;
  r.epistemic = u.epistemic;
  return r;
}

/// CC over target periods, RMSE, and mean mixture / moment-matched NLL.
inline MetricReport score(const BacktestResult& r, const std::string& label) {
  MetricReport m;
  m.label = label;
  m.rows = r.rows.size();
  if (r.rows.empty()) throw EvaluationError("no forecasts to score");
  std::vector<double> y, y_hat;
  std::map<std::size_t, CrossSection> by_period;
  double nll_sum = 0.0, moment_sum = 0.0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    y.push_back(row.y);
    y_hat.push_back(row.y_hat);
    auto& cs = by_period[r.target_index[i]];
    cs.y.push_back(row.y);
    cs.y_hat.push_back(row.y_hat);
    nll_sum += ensemble_nll(row.y, r.member_params[i]);
    EnsemblePrediction e;
    e.mean = row.y_hat;
    e.predictive_variance = row.var_hat;
    moment_sum += moment_matched_nll(row.y, e);
  }
  m.rmse = rmse(y, y_hat);
  m.nll = nll_sum / static_cast<double>(r.rows.size());
  m.nll_moment = moment_sum / static_cast<double>(r.rows.size());
  std::vector<CrossSection> sections;
  for (auto& [t, cs] : by_period) sections.push_back(std::move(cs));
  try {
    const auto cc = cross_sectional_corr(sections);
    m.cc = cc.cc;
    m.cc_periods_used = cc.periods_used;
    m.cc_periods_skipped = cc.periods_skipped;
  } catch (const MetricError&) {
    m.cc_periods_skipped = sections.size();
  }
  return m;
}

/// Walk-forward backtest. For refit period k covering target periods
/// [s_k, e_k), the ensemble is trained on rows whose targets are realised no
/// later than s_k - h (so the model exists when the first forecast of the
/// period is issued) and forecasts every row with target in [s_k, e_k).
inline BacktestResult walk_forward(const ReturnPanel& panel, const BacktestSchedule& schedule, const ModelConfig& model,
                                   const TrainConfig& train_cfg, const EnsembleConfig& ens,
                                   const std::function<void(const RefitPeriod&)>& on_period = {}) {
  panel.validate();
  schedule.validate(panel.periods());
  model.validate();
  train_cfg.validate();
  const std::size_t K = model.window_len, h = model.horizon;
  const Dataset all = make_windows(panel, K, h, model.features, 1);
  const std::size_t end = schedule.test_end == 0 ? panel.periods() : schedule.test_end;

  BacktestResult result;
  result.head = model.head;
  result.horizon = h;
  std::size_t k = 0;
  for (std::size_t start = schedule.test_start; start < end; start += schedule.refit_interval, ++k) {
    RefitPeriod period;
    period.index = k;
    period.start = start;
    period.end = std::min(end, start + schedule.refit_interval);
    if (start < h) throw ScheduleError("refit period starts before one horizon of data exists");
    const std::size_t last_target = start - h;
    const std::size_t first_target =
        schedule.mode == WindowMode::rolling && last_target + 1 > schedule.window_len ? last_target + 1 - schedule.window_len : 0;

    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const std::size_t tgt = all.target_index[i];
      if (tgt >= first_target && tgt <= last_target && (all.end_index[i] + 1 - K) % schedule.train_stride == 0) {
        train_rows.push_back(i);
      }
      if (tgt >= period.start && tgt < period.end) test_rows.push_back(i);
    }
    if (train_rows.empty()) {
      throw ScheduleError("refit period " + std::to_string(k) + " (target period " + std::to_string(start) +
                          ") has an empty training window");
    }
    if (test_rows.empty()) continue;
    const Dataset train_data = subset(all, train_rows);
    const FittedEnsemble fit = fit_ensemble(train_data, model, train_cfg, ens, /*centre_target=*/false);
    const Dataset test_data = subset(all, test_rows);

    period.train_rows = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(train_rows.size())));
    period.validation_rows = train_rows.size() - period.train_rows;
    period.test_rows = test_rows.size();
    period.first_train_target = all.target_index[train_rows.front()];
    period.last_train_target = all.target_index[train_rows.back()];
    for (const auto& hist : fit.histories) {
      period.best_epochs.push_back(hist.best_epoch);
      period.best_val_nll.push_back(hist.best_val_nll);
    }
    period.histories = fit.histories;

    std::vector<std::vector<DistributionParams>> per_member(fit.members.size());
    detail::parallel_for(fit.members.size(), ens.workers,
                         [&](std::size_t m) { per_member[m] = predict_all(fit.members[m], test_data); });
    for (std::size_t i = 0; i < test_rows.size(); ++i) {
      std::vector<DistributionParams> params;
      for (const auto& pm : per_member) params.push_back(pm[i]);
      ForecastRow row = combine_members(params, test_data.targets[i]);
      row.timestamp = panel.timestamps[test_data.target_index[i]];
      row.asset = panel.assets[test_data.asset_index[i]];
      result.rows.push_back(std::move(row));
      result.target_index.push_back(test_data.target_index[i]);
      result.end_index.push_back(test_data.end_index[i]);
      result.asset_index.push_back(test_data.asset_index[i]);
      result.period_of_row.push_back(k);
      result.member_params.push_back(std::move(params));
    }
    if (on_period) on_period(period);
    result.periods.push_back(std::move(period));
  }
  if (result.rows.empty()) throw ScheduleError("schedule produced no forecasts");
  result.metrics = score(result, std::string(to_string(model.head)));
  return result;
}

/// Per-row member parameters: timestamp, asset, member, head, then the
/// head's parameters in order (mu, sigma2) / (gamma, nu, alpha, beta) /
/// (gamma, sigma2, alpha, beta).
inline void save_member_params_csv(const BacktestResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  out << "timestamp,asset,member,head,p0,p1,p2,p3\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    for (std::size_t m = 0; m < r.member_params[i].size(); ++m) {
      out << r.rows[i].timestamp << ',' << r.rows[i].asset << ',' << m << ',';
      std::visit(
          [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, GaussianParams>) {
              out << "gaussian," << format_double(p.mu) << ',' << format_double(p.sigma2) << ",,";
            } else if constexpr (std::is_same_v<P, NIGParams>) {
              out << "nig," << format_double(p.gamma) << ',' << format_double(p.nu) << ',' << format_double(p.alpha)
                  << ',' << format_double(p.beta);
            } else {
              out << "smd," << format_double(p.gamma) << ',' << format_double(p.sigma2) << ','
                  << format_double(p.alpha) << ',' << format_double(p.beta);
            }
          },
          r.member_params[i][m]);
      out << '\n';
    }
  }
}

/// Per-asset series of forecasts ordered by target period.
struct AssetSeries {
  std::vector<std::size_t> target_index;
  std::vector<double> y, y_hat, var_hat;
};

inline std::vector<AssetSeries> series_by_asset(const BacktestResult& r, std::size_t assets) {
  std::vector<AssetSeries> out(assets);
  std::vector<std::size_t> order(r.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.target_index[a] < r.target_index[b]; });
  for (std::size_t i : order) {
    auto& s = out.at(r.asset_index[i]);
    s.target_index.push_back(r.target_index[i]);
    s.y.push_back(r.rows[i].y);
    s.y_hat.push_back(r.rows[i].y_hat);
    s.var_hat.push_back(r.rows[i].var_hat);
  }
  return out;
}

struct TrackingSummary {
  double mean_correlation = std::nan("");
  std::vector<double> per_asset;
  std::size_t buckets = 0;
};

/// True variance of each row's target: the conditional variances of the
/// summed periods. `true_sigma2` is the T x N path.
inline double true_target_variance(const BacktestResult& r, const std::vector<double>& true_sigma2,
                                   std::size_t assets, std::size_t target_index, std::size_t asset) {
  double v = 0.0;
  for (std::size_t t = target_index + 1 - r.horizon; t <= target_index; ++t) v += true_sigma2.at(t * assets + asset);
  return v;
}

/// Per asset: correlation across buckets of RMPU (root mean predictive
/// variance) with the root mean true variance of the same targets; averaged
/// over assets.
inline TrackingSummary tracking_against_truth(const BacktestResult& r, const std::vector<double>& true_sigma2,
                                              std::size_t assets, std::size_t bucket = 24) {
  TrackingSummary s;
  const auto all = series_by_asset(r, assets);
  double total = 0.0;
  for (std::size_t a = 0; a < all.size(); ++a) {
    const auto& series = all[a];
    if (series.target_index.empty()) continue;
    std::vector<double> truth(series.target_index.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
      truth[i] = true_target_variance(r, true_sigma2, assets, series.target_index[i], a);
    const auto model = volatility_proxies(series.y, series.y_hat, series.var_hat, bucket);
    const auto oracle = volatility_proxies(series.y, series.y_hat, truth, bucket);
    const double rho = tracking_correlation(oracle.uncertainty, model.uncertainty);
    s.per_asset.push_back(rho);
    s.buckets = model.uncertainty.size();
    total += rho;
  }
  if (s.per_asset.empty()) throw MetricError("no asset has forecasts to track");
  s.mean_correlation = total / static_cast<double>(s.per_asset.size());
  return s;
}

/// Bucketed plot data per asset: realised SD, RMSE and RMPU of each bucket.
inline void save_plot_csv(const BacktestResult& r, const ReturnPanel& panel, const std::string& path,
                          std::size_t bucket = 24, const std::vector<double>* true_sigma2 = nullptr) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  out << "asset,bucket,first_timestamp,realised,error,uncertainty" << (true_sigma2 ? ",true_sigma" : "") << '\n';
  const auto all = series_by_asset(r, panel.asset_count());
  for (std::size_t a = 0; a < all.size(); ++a) {
    const auto& series = all[a];
    if (series.target_index.empty()) continue;
    const auto p = volatility_proxies(series.y, series.y_hat, series.var_hat, bucket);
    std::vector<double> truth;
    if (true_sigma2) {
      for (auto t : series.target_index) truth.push_back(true_target_variance(r, *true_sigma2, panel.asset_count(), t, a));
    }
    const auto oracle = true_sigma2 ? volatility_proxies(series.y, series.y_hat, truth, bucket) : VolatilityProxies{};
    for (std::size_t d = 0; d < p.uncertainty.size(); ++d) {
      out << panel.assets[a] << ',' << d << ',' << panel.timestamps[series.target_index[d * bucket]] << ','
          << format_double(p.realised[d]) << ',' << format_double(p.error[d]) << ',' << format_double(p.uncertainty[d]);
      if (true_sigma2) out << ',' << format_double(oracle.uncertainty[d]);
      out << '\n';
    }
  }
}

}  // namespace volcast
