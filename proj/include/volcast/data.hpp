#pragma once

// Return panels, feature windows, synthetic GARCH(1,1) panels and CSV I/O.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "volcast/error.hpp"
#include "volcast/network.hpp"
#include "volcast/tensor.hpp"
#include "volcast/training.hpp"

namespace volcast {

inline constexpr double kLogSquareFloor = 1e-12;

// ---- text helpers ------------------------------------------------------------------

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ContractError("cannot format double");
  return std::string(buf, end);
}

/// Parses the whole of `s` as a double; false if any character is left over.
inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '"')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '"')) f.pop_back();
  }
  return fields;
}

/// Orders timestamps numerically when both parse as numbers, otherwise as
/// strings (ISO-8601 stamps sort correctly that way).
inline bool timestamp_less(const std::string& a, const std::string& b) {
  double x, y;
  if (parse_double(a, x) && parse_double(b, y)) return x < y;
  return a < b;
}

// ---- panels --------------------------------------------------------------------------

/// T x N log-returns, row t holding every asset at timestamps[t].
struct ReturnPanel {
  std::vector<std::string> timestamps;
  std::vector<std::string> assets;
  std::vector<double> returns;  ///< row-major T x N

  std::size_t periods() const noexcept { return timestamps.size(); }
  std::size_t asset_count() const noexcept { return assets.size(); }
  double at(std::size_t t, std::size_t n) const { return returns[t * assets.size() + n]; }
  double& at(std::size_t t, std::size_t n) { return returns[t * assets.size() + n]; }

  void validate() const {
    if (assets.empty() || timestamps.empty()) throw ContractError("empty return panel");
    if (returns.size() != timestamps.size() * assets.size()) throw ShapeError("panel returns do not match T x N");
    for (std::size_t t = 1; t < timestamps.size(); ++t) {
      if (!timestamp_less(timestamps[t - 1], timestamps[t])) {
        throw ContractError("timestamps not strictly increasing at " + timestamps[t]);
      }
    }
    for (double r : returns)
      if (!std::isfinite(r)) throw ContractError("panel contains a non-finite return");
  }
};

inline std::vector<double> to_log_returns(const std::vector<double>& prices) {
  std::vector<double> out;
  if (prices.empty()) return out;
  for (double p : prices)
    if (!(p > 0.0) || !std::isfinite(p)) throw DomainError("prices must be positive, got " + std::to_string(p));
  out.reserve(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) out.push_back(std::log(prices[t]) - std::log(prices[t - 1]));
  return out;
}

inline double log_squared_return(double r) { return std::log(std::max(r * r, kLogSquareFloor)); }

inline std::vector<double> log_squared_returns(const std::vector<double>& returns) {
  std::vector<double> out(returns.size());
  std::transform(returns.begin(), returns.end(), out.begin(), log_squared_return);
  return out;
}

/// Sliding windows over every asset. A row ending at period t (inclusive)
/// holds periods t-K+1..t and targets the summed return over t+1..t+h.
/// Rows are ordered by end period, then asset. Only end periods with
/// (t - K + 1) % stride == 0 are kept.
inline Dataset make_windows(const ReturnPanel& panel, std::size_t K, std::size_t h, Features features,
                            std::size_t stride = 1) {
  if (K == 0 || h == 0 || stride == 0) throw ContractError("window length, horizon and stride must be positive");
  const std::size_t T = panel.periods(), N = panel.asset_count();
  if (T < K + h) {
    throw ContractError("panel of " + std::to_string(T) + " periods is too short for K=" + std::to_string(K) +
                        " and h=" + std::to_string(h));
  }
  const std::size_t F = features == Features::returns_and_logsq ? 2 : 1;
  std::vector<double> logsq(panel.returns.size());
  std::transform(panel.returns.begin(), panel.returns.end(), logsq.begin(), log_squared_return);

  Dataset d;
  std::vector<double> values;
  const std::size_t first = K - 1, last = T - 1 - h;
  const std::size_t rows = N * ((last - first) / stride + 1);
  values.reserve(rows * K * F);
  d.targets.reserve(rows);
  for (std::size_t t = first; t <= last; t += stride) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t s = t + 1 - K; s <= t; ++s) {
        values.push_back(panel.at(s, n));
        if (F == 2) values.push_back(logsq[s * N + n]);
      }
      double y = 0.0;
      for (std::size_t s = t + 1; s <= t + h; ++s) y += panel.at(s, n);
      d.targets.push_back(y);
      d.asset_index.push_back(n);
      d.end_index.push_back(t);
      d.target_index.push_back(t + h);
    }
  }
  d.inputs = Tensor({d.targets.size(), K, F}, std::move(values));
  return d;
}

// ---- GARCH simulation ------------------------------------------------------------------

struct GarchSpec {
  double omega = 0.05;
  double a = 0.1;
  double b = 0.85;
  double mu = 0.0;

  void validate() const {
    if (!(omega > 0.0)) throw ConfigError("GARCH omega must be positive");
    if (!(a >= 0.0) || !(b >= 0.0)) throw ConfigError("GARCH a and b must be non-negative");
    if (!(a + b < 1.0)) {
      throw ConfigError("GARCH spec is not stationary: a + b = " + std::to_string(a + b) + " must be below 1");
    }
  }
  double unconditional_variance() const { return omega / (1.0 - a - b); }
};

struct SimulatedPanel {
  ReturnPanel panel;
  std::vector<double> sigma2;  ///< T x N conditional variance of each return
};

/// sigma2_t = omega + a r_{t-1}^2 + b sigma2_{t-1}, r_t = mu + sigma_t z_t,
/// started at the unconditional variance. Assets are independent.
inline SimulatedPanel garch_simulate(const GarchSpec& spec, std::size_t T, std::size_t N, std::uint64_t seed) {
  spec.validate();
  if (T == 0 || N == 0) throw ConfigError("simulate needs T > 0 and N > 0");
  SimulatedPanel out;
  out.panel.timestamps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) out.panel.timestamps.push_back(std::to_string(t));
  for (std::size_t n = 0; n < N; ++n) out.panel.assets.push_back("A" + std::to_string(n));
  out.panel.returns.resize(T * N);
  out.sigma2.resize(T * N);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> s2(N, spec.unconditional_variance()), prev_r(N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      if (t > 0) s2[n] = spec.omega + spec.a * prev_r[n] * prev_r[n] + spec.b * s2[n];
      const double r = spec.mu + std::sqrt(s2[n]) * z(rng);
      out.sigma2[t * N + n] = s2[n];
      out.panel.returns[t * N + n] = r;
      prev_r[n] = r;
    }
  }
  return out;
}

// ---- CSV -----------------------------------------------------------------------------------

enum class ValueColumn { detect, price, log_return };

/// Long-format panel: header `timestamp,asset,price` (or `return`), one row per
/// (timestamp, asset). Prices are converted to log-returns, dropping the first
/// timestamp. Every asset must be present at every timestamp. Assets keep the
/// order in which they first appear.
inline ReturnPanel load_csv(const std::string& path, ValueColumn kind = ValueColumn::detect) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path + ": missing header row");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "timestamp" || header[1] != "asset") {
    throw IngestionError(path + ":1: header must start with timestamp,asset,<price|return>");
  }
  if (kind == ValueColumn::detect) {
    if (header[2] == "price") kind = ValueColumn::price;
    else if (header[2] == "return") kind = ValueColumn::log_return;
    else throw IngestionError(path + ":1: third column must be 'price' or 'return'");
  }

  std::map<std::string, std::size_t> asset_ids;  // first-appearance order
  std::vector<std::string> asset_names;
  std::vector<std::string> stamps;
  std::map<std::pair<std::string, std::string>, double> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != header.size()) throw IngestionError(where + ": expected " + std::to_string(header.size()) + " fields");
    double v;
    if (f[0].empty() || f[1].empty()) throw IngestionError(where + ": empty timestamp or asset");
    if (!parse_double(f[2], v) || !std::isfinite(v)) throw IngestionError(where + ": cannot parse value '" + f[2] + "'");
    if (!cells.emplace(std::pair{f[0], f[1]}, v).second) {
      throw IngestionError(where + ": duplicate (timestamp, asset) = (" + f[0] + ", " + f[1] + ")");
    }
    if (asset_ids.emplace(f[1], asset_names.size()).second) asset_names.push_back(f[1]);
    stamps.push_back(f[0]);
  }
  if (cells.empty()) throw IngestionError(path + ": no data rows");
  std::sort(stamps.begin(), stamps.end(), timestamp_less);
  stamps.erase(std::unique(stamps.begin(), stamps.end()), stamps.end());

  ReturnPanel raw;
  raw.timestamps = stamps;
  raw.assets = asset_names;
  raw.returns.assign(stamps.size() * raw.assets.size(), 0.0);
  for (std::size_t t = 0; t < stamps.size(); ++t) {
    for (std::size_t n = 0; n < raw.assets.size(); ++n) {
      auto it = cells.find({stamps[t], raw.assets[n]});
      if (it == cells.end()) {
        throw IngestionError(path + ": missing value for asset " + raw.assets[n] + " at " + stamps[t]);
      }
      raw.at(t, n) = it->second;
    }
  }
  if (kind == ValueColumn::log_return) return raw;

  ReturnPanel out;
  out.assets = raw.assets;
  if (raw.periods() < 2) throw IngestionError(path + ": need at least two timestamps of prices");
  out.timestamps.assign(raw.timestamps.begin() + 1, raw.timestamps.end());
  out.returns.resize(out.timestamps.size() * out.assets.size());
  for (std::size_t n = 0; n < out.assets.size(); ++n) {
    std::vector<double> prices(raw.periods());
    for (std::size_t t = 0; t < raw.periods(); ++t) prices[t] = raw.at(t, n);
    std::vector<double> r;
    try {
      r = to_log_returns(prices);
    } catch (const DomainError& e) {
      throw IngestionError(path + ": asset " + out.assets[n] + ": " + e.what());
    }
    for (std::size_t t = 0; t < r.size(); ++t) out.at(t, n) = r[t];
  }
  return out;
}

/// Writes a panel in the long format read by load_csv.
inline void save_panel_csv(const ReturnPanel& panel, const std::string& path, std::string_view value_name = "return") {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  out << "timestamp,asset," << value_name << '\n';
  for (std::size_t t = 0; t < panel.periods(); ++t)
    for (std::size_t n = 0; n < panel.asset_count(); ++n)
      out << panel.timestamps[t] << ',' << panel.assets[n] << ',' << format_double(panel.at(t, n)) << '\n';
}

/// One forecast in original units.
struct ForecastRow {
  std::string timestamp;  ///< when the target is realised
  std::string asset;
  double y = 0.0;
  double y_hat = 0.0;
  double var_hat = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
};

inline void save_csv(const std::vector<ForecastRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  out << "timestamp,asset,y,y_hat,var_hat,aleatoric,epistemic\n";
  for (const auto& r : rows) {
    out << r.timestamp << ',' << r.asset << ',' << format_double(r.y) << ',' << format_double(r.y_hat) << ','
        << format_double(r.var_hat) << ',' << format_double(r.aleatoric) << ',' << format_double(r.epistemic) << '\n';
  }
}

inline std::vector<ForecastRow> load_forecasts_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line).size() != 7) throw IngestionError(path + ":1: bad header");
  std::vector<ForecastRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    ForecastRow r;
    double* slots[5] = {&r.y, &r.y_hat, &r.var_hat, &r.aleatoric, &r.epistemic};
    if (f.size() != 7) throw IngestionError(path + ":" + std::to_string(line_no) + ": expected 7 fields");
    r.timestamp = f[0];
    r.asset = f[1];
    for (int k = 0; k < 5; ++k) {
      if (!parse_double(f[2 + k], *slots[k])) {
        throw IngestionError(path + ":" + std::to_string(line_no) + ": cannot parse '" + f[2 + k] + "'");
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- tabular data ------------------------------------------------------------------------

struct TabularData {
  std::vector<std::string> feature_names;
  std::string target_name;
  Dataset data;  ///< inputs B x F
};

/// Numeric CSV with a header. The target is the named column, or the last one.
inline TabularData load_tabular_csv(const std::string& path, const std::string& target = "") {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path + ": missing header row");
  auto header = split_csv_line(line);
  if (header.size() < 2) throw IngestionError(path + ":1: need at least one feature and a target");
  std::size_t target_col = header.size() - 1;
  if (!target.empty()) {
    auto it = std::find(header.begin(), header.end(), target);
    if (it == header.end()) throw IngestionError(path + ":1: no column named '" + target + "'");
    target_col = static_cast<std::size_t>(it - header.begin());
  }
  TabularData out;
  out.target_name = header[target_col];
  for (std::size_t k = 0; k < header.size(); ++k)
    if (k != target_col) out.feature_names.push_back(header[k]);
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != header.size()) throw IngestionError(where + ": expected " + std::to_string(header.size()) + " fields");
    for (std::size_t k = 0; k < f.size(); ++k) {
      double v;
      if (!parse_double(f[k], v) || !std::isfinite(v)) {
        throw IngestionError(where + ": non-numeric value '" + f[k] + "' in column " + header[k]);
      }
      if (k == target_col) out.data.targets.push_back(v);
      else values.push_back(v);
    }
  }
  if (out.data.targets.empty()) throw IngestionError(path + ": no data rows");
  out.data.inputs = Tensor::matrix(out.data.targets.size(), out.feature_names.size(), std::move(values));
  return out;
}

inline void save_tabular_csv(const TabularData& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write " + path);
  for (const auto& name : t.feature_names) out << name << ',';
  out << t.target_name << '\n';
  const std::size_t F = t.feature_names.size();
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    for (std::size_t k = 0; k < F; ++k) out << format_double(t.data.inputs[i * F + k]) << ',';
    out << format_double(t.data.targets[i]) << '\n';
  }
}

// ---- scaling ---------------------------------------------------------------------------------

/// Feature and target standardisation fitted on training rows only. Raw
/// returns are scaled but not centred; log r^2 and tabular features are
/// z-scored. The target shift is used only when `centre_target`.
inline Scaling fit_scaling(const Dataset& train, bool centre_target) {
  if (train.empty()) throw ContractError("fit_scaling on an empty dataset");
  const auto& shape = train.inputs.shape();
  const bool sequence = shape.size() == 3;
  const std::size_t F = sequence ? shape[2] : shape[1];
  const std::size_t per_row = train.row_width();
  Scaling s;
  s.feature_mean.assign(F, 0.0);
  s.feature_std.assign(F, 1.0);
  std::vector<double> sum(F, 0.0), sum2(F, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t j = 0; j < per_row; ++j) {
      const double v = train.inputs[i * per_row + j];
      sum[j % F] += v;
      sum2[j % F] += v * v;
    }
    count += per_row / F;
  }
  for (std::size_t k = 0; k < F; ++k) {
    const double m = sum[k] / static_cast<double>(count);
    const double var = std::max(sum2[k] / static_cast<double>(count) - m * m, 0.0);
    const bool raw_return = sequence && k == 0;
    const double sd = raw_return ? std::sqrt(sum2[k] / static_cast<double>(count)) : std::sqrt(var);
    s.feature_mean[k] = raw_return ? 0.0 : m;
    s.feature_std[k] = sd > 0.0 ? sd : 1.0;
  }
  double ts = 0.0, ts2 = 0.0;
  for (double y : train.targets) {
    ts += y;
    ts2 += y * y;
  }
  const double n = static_cast<double>(train.size());
  const double mean = ts / n;
  s.target_shift = centre_target ? mean : 0.0;
  const double spread = centre_target ? std::sqrt(std::max(ts2 / n - mean * mean, 0.0)) : std::sqrt(ts2 / n);
  s.target_scale = spread > 0.0 ? spread : 1.0;
  return s;
}

}  // namespace volcast
