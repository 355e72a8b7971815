#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "volcast/error.hpp"

namespace volcast {

/// Pearson correlation. Throws MetricError when either series is constant.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ContractError("pearson: series lengths differ");
  if (x.size() < 2) throw MetricError("pearson needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw MetricError("correlation undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Observations of one period across assets.
struct CrossSection {
  std::vector<double> y;
  std::vector<double> y_hat;
};

struct CrossSectionalResult {
  double cc = 0.0;
  std::size_t periods_used = 0;
  std::size_t periods_skipped = 0;  ///< fewer than two assets or a constant vector
  std::vector<double> per_period;   ///< NaN for skipped periods
};

inline CrossSectionalResult cross_sectional_corr(const std::vector<CrossSection>& periods) {
  CrossSectionalResult r;
  double total = 0.0;
  for (const auto& p : periods) {
    try {
      const double rho = pearson(p.y, p.y_hat);
      r.per_period.push_back(rho);
      total += rho;
      ++r.periods_used;
    } catch (const MetricError&) {
      r.per_period.push_back(std::nan(""));
      ++r.periods_skipped;
    }
  }
  if (r.periods_used == 0) throw MetricError("cross-sectional correlation is undefined in every period");
  r.cc = total / static_cast<double>(r.periods_used);
  return r;
}

inline double rmse(const std::vector<double>& y, const std::vector<double>& y_hat) {
  if (y.empty()) throw ContractError("rmse of an empty series");
  if (y.size() != y_hat.size()) throw ContractError("rmse: series lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("mean of an empty series");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Per-bucket realised-volatility and uncertainty proxies for one asset.
/// Daily mode: sd of the returns, root mean squared forecast error, root mean
/// predictive variance (RMPU) per bucket of `bucket` periods. Monthly mode
/// (bucket == 1): absolute error and the root predictive variance (MAPU).
struct VolatilityProxies {
  std::vector<double> realised;     ///< SD, or the absolute return in monthly mode (AV)
  std::vector<double> error;        ///< RMSE-daily, or AE
  std::vector<double> uncertainty;  ///< RMPU, or MAPU
  std::size_t truncated = 0;        ///< trailing periods dropped from an incomplete bucket
};

inline VolatilityProxies volatility_proxies(const std::vector<double>& y, const std::vector<double>& y_hat,
                                            const std::vector<double>& var_hat, std::size_t bucket = 24) {
  if (y.size() != y_hat.size() || y.size() != var_hat.size()) throw ContractError("proxy series lengths differ");
  if (bucket == 0) throw ContractError("bucket size must be positive");
  VolatilityProxies p;
  const std::size_t full = y.size() / bucket;
  p.truncated = y.size() - full * bucket;
  for (std::size_t d = 0; d < full; ++d) {
    std::vector<double> ys(y.begin() + static_cast<std::ptrdiff_t>(d * bucket),
                           y.begin() + static_cast<std::ptrdiff_t>((d + 1) * bucket));
    double se = 0.0, v = 0.0;
    for (std::size_t i = d * bucket; i < (d + 1) * bucket; ++i) {
      if (!(var_hat[i] >= 0.0)) throw DomainError("predictive variance must be non-negative");
      se += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
      v += var_hat[i];
    }
    const double b = static_cast<double>(bucket);
    p.realised.push_back(bucket == 1 ? std::fabs(ys[0]) : sample_sd(ys));
    p.error.push_back(std::sqrt(se / b));
    p.uncertainty.push_back(std::sqrt(v / b));
  }
  return p;
}

/// Time-series correlation between a realised proxy and predicted uncertainty.
inline double tracking_correlation(const std::vector<double>& proxy, const std::vector<double>& uncertainty) {
  if (proxy.size() != uncertainty.size()) throw ContractError("tracking series are not aligned");
  return pearson(proxy, uncertainty);
}

struct MetricReport {
  std::string label;
  double cc = std::nan("");
  double rmse = std::nan("");
  double nll = std::nan("");           ///< mixture NLL, nats
  double nll_moment = std::nan("");    ///< moment-matched Gaussian NLL, nats
  double tracking = std::nan("");      ///< optional, NaN when not computed
  std::size_t rows = 0;
  std::size_t cc_periods_used = 0;
  std::size_t cc_periods_skipped = 0;
};

inline nlohmann::json to_json(const MetricReport& r) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"label", r.label},
          {"cc", num(r.cc)},
          {"rmse", num(r.rmse)},
          {"nll", num(r.nll)},
          {"nll_moment_matched", num(r.nll_moment)},
          {"tracking_correlation", num(r.tracking)},
          {"rows", r.rows},
          {"cc_periods_used", r.cc_periods_used},
          {"cc_periods_skipped", r.cc_periods_skipped}};
}

inline std::string metric_csv_header() {
  return "label,cc,rmse,nll,nll_moment_matched,tracking_correlation,rows,cc_periods_used,cc_periods_skipped";
}

inline std::string to_csv_row(const MetricReport& r) {
  auto num = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return r.label + ',' + num(r.cc) + ',' + num(r.rmse) + ',' + num(r.nll) + ',' + num(r.nll_moment) + ',' +
         num(r.tracking) + ',' + std::to_string(r.rows) + ',' + std::to_string(r.cc_periods_used) + ',' +
         std::to_string(r.cc_periods_skipped);
}

inline void write_metric_reports(const std::vector<MetricReport>& reports, const std::string& json_path,
                                 const std::string& csv_path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  std::ofstream js(json_path);
  if (!js) throw ContractError("cannot write " + json_path);
  js << arr.dump(2) << '\n';
  std::ofstream csv(csv_path);
  if (!csv) throw ContractError("cannot write " + csv_path);
  csv << metric_csv_header() << '\n';
  for (const auto& r : reports) csv << to_csv_row(r) << '\n';
}

}  // namespace volcast
