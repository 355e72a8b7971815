#pragma once

// Run configuration: an INI file with one section per component. Every key
// has a default; unknown sections or keys are rejected.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "volcast/backtest.hpp"
#include "volcast/data.hpp"
#include "volcast/error.hpp"
#include "volcast/experiments.hpp"
#include "volcast/network.hpp"
#include "volcast/training.hpp"

namespace volcast {

struct TabularSpec {
  std::string path;
  std::string target;  ///< empty = last column
  std::size_t trials = 5;
  double test_fraction = 0.1;
  std::string dataset_name;  ///< defaults to the file stem
};

struct RunConfig {
  // [data]
  std::string panel_path;  ///< empty = simulate
  std::string true_variance_path;  ///< optional T x N conditional variances, same layout as the panel
  ValueColumn value_column = ValueColumn::detect;
  // [simulate]
  GarchSpec garch;
  std::size_t sim_T = 5000;
  std::size_t sim_N = 10;
  std::uint64_t sim_seed = 7;
  // [model], [train], [ensemble]
  ModelConfig model;
  TrainConfig train;
  EnsembleConfig ensemble;
  // [schedule]
  BacktestSchedule schedule;
  std::string test_start = "";  ///< period index or timestamp; empty = 70% of the panel
  std::string test_end = "";
  // [metrics]
  std::size_t bucket = 24;
  // [output]
  std::string output_dir = "volcast_out";
  // [grid], [tabular]
  GridSpec grid;
  TabularSpec tabular;
};

namespace config_detail {

inline std::vector<std::size_t> parse_widths(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    double v;
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    if (!parse_double(item, v) || v < 0 || v != std::floor(v)) {
      throw ConfigError(key + ": '" + item + "' is not a non-negative integer");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + s + "'");
}

inline double parse_number(const std::string& s, const std::string& key) {
  double v;
  if (!parse_double(s, v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& key) {
  std::string_view t = s;
  while (!t.empty() && (t.front() == ' ' || t.front() == '\t')) t.remove_prefix(1);
  while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\r')) t.remove_suffix(1);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

}  // namespace config_detail

/// Sets one `section.key` to `value`. Throws ConfigError for unknown keys or bad values.
inline void apply_setting(RunConfig& c, const std::string& dotted, const std::string& value) {
  using namespace config_detail;
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ConfigError("setting '" + dotted + "' must be section.key");
  const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
  const std::string& v = value;
  const std::string& k = dotted;
  auto unknown = [&] { throw ConfigError("unknown configuration key '" + dotted + "'"); };

  if (section == "data") {
    if (key == "panel") c.panel_path = v;
    else if (key == "true_variance") c.true_variance_path = v;
    else if (key == "value") {
      if (v == "detect") c.value_column = ValueColumn::detect;
      else if (v == "price") c.value_column = ValueColumn::price;
      else if (v == "return") c.value_column = ValueColumn::log_return;
      else throw ConfigError(k + ": expected detect, price or return");
    } else unknown();
  } else if (section == "simulate") {
    if (key == "T") c.sim_T = parse_count(v, k);
    else if (key == "N") c.sim_N = parse_count(v, k);
    else if (key == "omega") c.garch.omega = parse_number(v, k);
    else if (key == "a") c.garch.a = parse_number(v, k);
    else if (key == "b") c.garch.b = parse_number(v, k);
    else if (key == "mu") c.garch.mu = parse_number(v, k);
    else if (key == "seed") c.sim_seed = parse_count(v, k);
    else unknown();
  } else if (section == "model") {
    auto& m = c.model;
    if (key == "head") m.head = parse_head(v);
    else if (key == "head_mode") m.head_mode = parse_head_mode(v);
    else if (key == "tie_alpha_beta") m.tie_alpha_beta = parse_bool(v, k);
    else if (key == "trunk") m.trunk = parse_trunk(v);
    else if (key == "lstm_units") m.lstm_units = parse_widths(v, k);
    else if (key == "trunk_hidden") m.trunk_hidden = parse_widths(v, k);
    else if (key == "subnet_hidden") m.subnet_hidden = parse_widths(v, k);
    else if (key == "dropout_rate") m.dropout_rate = parse_number(v, k);
    else if (key == "use_batchnorm") m.use_batchnorm = parse_bool(v, k);
    else if (key == "features") m.features = parse_features(v);
    else if (key == "window_len") m.window_len = parse_count(v, k);
    else if (key == "horizon") m.horizon = parse_count(v, k);
    else unknown();
  } else if (section == "train") {
    auto& t = c.train;
    if (key == "learning_rate") t.learning_rate = parse_number(v, k);
    else if (key == "batch_size") t.batch_size = parse_count(v, k);
    else if (key == "max_epochs") t.max_epochs = parse_count(v, k);
    else if (key == "patience") t.patience = parse_count(v, k);
    else if (key == "tolerance") t.tolerance = parse_number(v, k);
    else if (key == "lambda_reg") t.lambda_reg = parse_number(v, k);
    else if (key == "clip_norm") t.clip_norm = parse_number(v, k);
    else unknown();
  } else if (section == "ensemble") {
    if (key == "members") c.ensemble.members = parse_count(v, k);
    else if (key == "base_seed") c.ensemble.base_seed = parse_count(v, k);
    else if (key == "workers") c.ensemble.workers = parse_count(v, k);
    else unknown();
  } else if (section == "schedule") {
    auto& s = c.schedule;
    if (key == "mode") s.mode = parse_window_mode(v);
    else if (key == "test_start") c.test_start = v;
    else if (key == "test_end") c.test_end = v;
    else if (key == "refit_interval") s.refit_interval = parse_count(v, k);
    else if (key == "window_len") s.window_len = parse_count(v, k);
    else if (key == "train_stride") s.train_stride = parse_count(v, k);
    else unknown();
  } else if (section == "metrics") {
    if (key == "bucket") c.bucket = parse_count(v, k);
    else unknown();
  } else if (section == "output") {
    if (key == "dir") c.output_dir = v;
    else unknown();
  } else if (section == "grid") {
    if (key == "lstm_units" || key == "trunk_hidden") {
      std::vector<std::vector<std::size_t>> options;
      for (const auto& part : split(v, ';')) options.push_back(parse_widths(part, k));
      if (options.empty()) throw ConfigError(k + ": empty option list");
      (key == "lstm_units" ? c.grid.lstm_units : c.grid.trunk_hidden) = options;
    } else if (key == "dropout_rate") {
      c.grid.dropout_rate.clear();
      for (const auto& part : split(v, ',')) c.grid.dropout_rate.push_back(parse_number(part, k));
    } else unknown();
  } else if (section == "tabular") {
    if (key == "path") c.tabular.path = v;
    else if (key == "target") c.tabular.target = v;
    else if (key == "trials") c.tabular.trials = parse_count(v, k);
    else if (key == "test_fraction") c.tabular.test_fraction = parse_number(v, k);
    else if (key == "name") c.tabular.dataset_name = v;
    else unknown();
  } else {
    throw ConfigError("unknown configuration section '" + section + "'");
  }
}

/// Parses `section.key=value`.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must be section.key=value");
  apply_setting(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "<config>") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(origin + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) apply_setting(c, section + "." + key, value.get_value<std::string>());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    c = parse_run_config(in, path);
  }
  for (const auto& o : overrides) apply_override(c, o);
  if (const char* env = std::getenv("VOLCAST_OUT"); env && *env) c.output_dir = env;
  return c;
}

/// Canonical INI text of every setting; the config hash is taken over this.
inline std::string to_ini(const RunConfig& c) {
  using config_detail::join_widths;
  std::ostringstream o;
  const char* value_names[] = {"detect", "price", "return"};
  o << "[data]\npanel=" << c.panel_path << "\ntrue_variance=" << c.true_variance_path << "\nvalue=" << value_names[static_cast<int>(c.value_column)] << "\n\n";
  o << "[simulate]\nT=" << c.sim_T << "\nN=" << c.sim_N << "\nomega=" << format_double(c.garch.omega)
    << "\na=" << format_double(c.garch.a) << "\nb=" << format_double(c.garch.b) << "\nmu=" << format_double(c.garch.mu)
    << "\nseed=" << c.sim_seed << "\n\n";
  const auto& m = c.model;
  o << "[model]\nhead=" << to_string(m.head) << "\nhead_mode=" << to_string(m.head_mode)
    << "\ntie_alpha_beta=" << (m.tie_alpha_beta ? "true" : "false") << "\ntrunk=" << to_string(m.trunk)
    << "\nlstm_units=" << join_widths(m.lstm_units) << "\ntrunk_hidden=" << join_widths(m.trunk_hidden)
    << "\nsubnet_hidden=" << join_widths(m.subnet_hidden) << "\ndropout_rate=" << format_double(m.dropout_rate)
    << "\nuse_batchnorm=" << (m.use_batchnorm ? "true" : "false") << "\nfeatures=" << to_string(m.features)
    << "\nwindow_len=" << m.window_len << "\nhorizon=" << m.horizon << "\n\n";
  const auto& t = c.train;
  o << "[train]\nlearning_rate=" << format_double(t.learning_rate) << "\nbatch_size=" << t.batch_size
    << "\nmax_epochs=" << t.max_epochs << "\npatience=" << t.patience << "\ntolerance=" << format_double(t.tolerance)
    << "\nlambda_reg=" << format_double(t.lambda_reg) << "\nclip_norm=" << format_double(t.clip_norm) << "\n\n";
  o << "[ensemble]\nmembers=" << c.ensemble.members << "\nbase_seed=" << c.ensemble.base_seed
    << "\nworkers=" << c.ensemble.workers << "\n\n";
  const auto& s = c.schedule;
  o << "[schedule]\nmode=" << to_string(s.mode) << "\ntest_start=" << c.test_start << "\ntest_end=" << c.test_end
    << "\nrefit_interval=" << s.refit_interval << "\nwindow_len=" << s.window_len << "\ntrain_stride=" << s.train_stride
    << "\n\n";
  o << "[metrics]\nbucket=" << c.bucket << "\n\n";
  o << "[output]\ndir=" << c.output_dir << "\n\n";
  std::string lstm, hidden, drop;
  for (const auto& w : c.grid.lstm_units) lstm += (lstm.empty() ? "" : ";") + join_widths(w);
  for (const auto& w : c.grid.trunk_hidden) hidden += (hidden.empty() ? "" : ";") + join_widths(w);
  for (double d : c.grid.dropout_rate) drop += (drop.empty() ? "" : ",") + format_double(d);
  o << "[grid]\nlstm_units=" << lstm << "\ntrunk_hidden=" << hidden << "\ndropout_rate=" << drop << "\n\n";
  o << "[tabular]\npath=" << c.tabular.path << "\ntarget=" << c.tabular.target << "\ntrials=" << c.tabular.trials
    << "\ntest_fraction=" << format_double(c.tabular.test_fraction) << "\nname=" << c.tabular.dataset_name << "\n";
  return o.str();
}

/// Resolves a period given as an index or a timestamp (first period at or after it).
inline std::size_t resolve_period(const ReturnPanel& panel, const std::string& spec, std::size_t fallback) {
  if (spec.empty()) return fallback;
  double v;
  const bool numeric_stamps = !panel.timestamps.empty() && parse_double(panel.timestamps.front(), v);
  if (!numeric_stamps && parse_double(spec, v)) {
    if (v < 0 || v != std::floor(v)) throw ConfigError("period index '" + spec + "' must be a non-negative integer");
    return static_cast<std::size_t>(v);
  }
  for (std::size_t t = 0; t < panel.periods(); ++t)
    if (!timestamp_less(panel.timestamps[t], spec)) return t;
  throw ScheduleError("timestamp '" + spec + "' lies after the end of the panel");
}

/// Schedule with test_start / test_end resolved against the panel.
inline BacktestSchedule resolve_schedule(const RunConfig& c, const ReturnPanel& panel) {
  BacktestSchedule s = c.schedule;
  s.test_start = resolve_period(panel, c.test_start, static_cast<std::size_t>(0.7 * static_cast<double>(panel.periods())));
  s.test_end = c.test_end.empty() ? 0 : resolve_period(panel, c.test_end, 0);
  if (s.refit_interval == 0) s.refit_interval = panel.periods();
  return s;
}

}  // namespace volcast
