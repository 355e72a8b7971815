// volcast command-line tool: simulate, train, backtest, ablate, verify, tabular, meinert-path.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "volcast/volcast.hpp"

namespace fs = std::filesystem;
using namespace volcast;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// SHA-1 of "blob <size>\0<text>", the object id git assigns to the same bytes.
std::string git_blob_hash(const std::string& text) {
  const std::string blob = "blob " + std::to_string(text.size()) + '\0' + text;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", digest[i]);
    hex += b;
  }
  return hex;
}

/// Owns the output directory for one command: lock file plus run manifest.
class Run {
 public:
  Run(std::string command, const RunConfig& cfg, std::string config_path, std::uint64_t seed)
      : dir_(cfg.output_dir), lock_(dir_ / ".volcast.lock") {
    fs::create_directories(dir_);
    std::FILE* f = std::fopen(lock_.c_str(), "wx");
    if (!f) throw ConfigError("output directory " + dir_.string() + " is locked by another run (" + lock_.string() + ")");
    std::fclose(f);
    locked_ = true;
    const std::string ini = to_ini(cfg);
    manifest_ = {{"command", std::move(command)},
                 {"config_path", std::move(config_path)},
                 {"seed", seed},
                 {"started", utc_now()},
                 {"finished", nullptr},
                 {"config_hash", git_blob_hash(ini)},
                 {"output_dir", fs::absolute(dir_).string()},
                 {"status", "running"}};
    std::ofstream(dir_ / "config.ini") << ini;
    write_manifest();
  }

  ~Run() {
    if (locked_) {
      std::error_code ec;
      fs::remove(lock_, ec);
    }
  }

  Run(const Run&) = delete;
  Run& operator=(const Run&) = delete;

  void finish(const std::string& status) {
    manifest_["finished"] = utc_now();
    manifest_["status"] = status;
    write_manifest();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  const fs::path& dir() const { return dir_; }

 private:
  void write_manifest() const { std::ofstream(dir_ / "manifest.json") << manifest_.dump(2) << '\n'; }

  fs::path dir_;
  fs::path lock_;
  bool locked_ = false;
  nlohmann::json manifest_;
};

/// Runs `body` inside a Run, recording failure in the manifest before rethrowing.
int with_run(const std::string& command, const RunConfig& cfg, const std::string& config_path, std::uint64_t seed,
             const std::function<int(Run&)>& body) {
  Run run(command, cfg, config_path, seed);
  try {
    const int code = body(run);
    run.finish(code == 0 ? "ok" : "failed");
    return code;
  } catch (...) {
    run.finish("error");
    throw;
  }
}

struct LoadedPanel {
  ReturnPanel panel;
  std::optional<std::vector<double>> true_sigma2;
};

/// The configured panel, or a simulated one when no path is set.
LoadedPanel load_panel(const RunConfig& cfg) {
  LoadedPanel out;
  if (cfg.panel_path.empty()) {
    auto sim = garch_simulate(cfg.garch, cfg.sim_T, cfg.sim_N, cfg.sim_seed);
    out.panel = std::move(sim.panel);
    out.true_sigma2 = std::move(sim.sigma2);
    return out;
  }
  out.panel = load_csv(cfg.panel_path, cfg.value_column);
  if (!cfg.true_variance_path.empty()) {
    const ReturnPanel truth = load_csv(cfg.true_variance_path, ValueColumn::log_return);
    if (truth.assets != out.panel.assets || truth.timestamps != out.panel.timestamps) {
      throw IngestionError(cfg.true_variance_path + ": timestamps or assets differ from the return panel");
    }
    out.true_sigma2 = truth.returns;
  }
  return out;
}

std::string widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "-" : "") + std::to_string(w[i]);
  return s;
}

void write_periods_csv(const BacktestResult& r, const std::string& path) {
  std::ofstream out(path);
  out << "period,start,end,train_rows,validation_rows,test_rows,first_train_target,last_train_target,best_epochs,"
         "best_val_nll\n";
  for (const auto& p : r.periods) {
    std::string epochs, nll;
    for (std::size_t m = 0; m < p.best_epochs.size(); ++m) {
      epochs += (m ? ";" : "") + std::to_string(p.best_epochs[m]);
      nll += (m ? ";" : "") + format_double(p.best_val_nll[m]);
    }
    out << p.index << ',' << p.start << ',' << p.end << ',' << p.train_rows << ',' << p.validation_rows << ','
        << p.test_rows << ',' << p.first_train_target << ',' << p.last_train_target << ',' << epochs << ',' << nll
        << '\n';
  }
}

void log_period(const RefitPeriod& p) {
  std::cerr << "refit " << p.index << ": targets [" << p.start << ", " << p.end << "), " << p.train_rows << "+"
            << p.validation_rows << " training rows, " << p.test_rows << " forecasts\n";
}

/// Forecasts, member parameters, metrics, plot data, refit summary and epoch logs.
MetricReport write_backtest(Run& run, const BacktestResult& r, const LoadedPanel& data, std::size_t bucket,
                            const std::string& label) {
  save_csv(r.rows, run.path("forecasts.csv"));
  save_member_params_csv(r, run.path("member_params.csv"));
  write_periods_csv(r, run.path("periods.csv"));
  fs::create_directories(run.dir() / "logs");
  for (const auto& p : r.periods) {
    for (std::size_t m = 0; m < p.histories.size(); ++m) {
      write_epoch_log(p.histories[m], run.path("logs/period_" + std::to_string(p.index) + "_member_" +
                                               std::to_string(m) + ".csv"));
    }
  }
  MetricReport report = r.metrics;
  report.label = label;
  const std::vector<double>* truth = data.true_sigma2 ? &*data.true_sigma2 : nullptr;
  if (truth) report.tracking = tracking_against_truth(r, *truth, data.panel.asset_count(), bucket).mean_correlation;
  save_plot_csv(r, data.panel, run.path("plot.csv"), bucket, truth);
  write_metric_reports({report}, run.path("metrics.json"), run.path("metrics.csv"));
  return report;
}

void print_report(const MetricReport& m) {
  std::cout << m.label << ": CC " << m.cc << ", RMSE " << m.rmse << ", NLL " << m.nll << " (moment-matched "
            << m.nll_moment << ")";
  if (std::isfinite(m.tracking)) std::cout << ", tracking " << m.tracking;
  std::cout << ", " << m.rows << " forecasts\n";
}

int cmd_simulate(const RunConfig& cfg, const std::string& config_path) {
  return with_run("simulate", cfg, config_path, cfg.sim_seed, [&](Run& run) {
    const auto sim = garch_simulate(cfg.garch, cfg.sim_T, cfg.sim_N, cfg.sim_seed);
    save_panel_csv(sim.panel, run.path("panel.csv"));
    ReturnPanel truth = sim.panel;
    truth.returns = sim.sigma2;
    save_panel_csv(truth, run.path("true_variance.csv"), "sigma2");
    std::cout << "wrote " << cfg.sim_T << " x " << cfg.sim_N << " panel to " << run.path("panel.csv") << '\n';
    return 0;
  });
}

int cmd_train(const RunConfig& cfg, const std::string& config_path) {
  return with_run("train", cfg, config_path, cfg.ensemble.base_seed, [&](Run& run) {
    const LoadedPanel data = load_panel(cfg);
    const BacktestSchedule s = resolve_schedule(cfg, data.panel);
    cfg.model.validate();
    const std::size_t K = cfg.model.window_len, h = cfg.model.horizon;
    const Dataset all = make_windows(data.panel, K, h, cfg.model.features, 1);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all.target_index[i] + h <= s.test_start && (all.end_index[i] + 1 - K) % s.train_stride == 0) rows.push_back(i);
    }
    if (rows.empty()) throw ScheduleError("no training rows precede test_start");
    const auto fit = fit_ensemble(subset(all, rows), cfg.model, cfg.train, cfg.ensemble, false);
    fs::create_directories(run.dir() / "logs");
    for (std::size_t m = 0; m < fit.members.size(); ++m) {
      fit.members[m].save(run.path("member_" + std::to_string(m) + ".json"));
      write_epoch_log(fit.histories[m], run.path("logs/member_" + std::to_string(m) + ".csv"));
      std::cout << "member " << m << ": best epoch " << fit.histories[m].best_epoch << ", validation NLL "
                << fit.histories[m].best_val_nll << '\n';
    }
    return 0;
  });
}

int cmd_backtest(const RunConfig& cfg, const std::string& config_path, bool grid) {
  return with_run(grid ? "backtest --grid" : "backtest", cfg, config_path, cfg.ensemble.base_seed, [&](Run& run) {
    const LoadedPanel data = load_panel(cfg);
    const BacktestSchedule s = resolve_schedule(cfg, data.panel);
    ModelConfig model = cfg.model;
    if (grid) {
      const auto g = grid_search(data.panel, s, model, cfg.grid, cfg.train, cfg.ensemble);
      std::ofstream out(run.path("grid.csv"));
      out << "lstm_units,trunk_hidden,dropout_rate,val_nll,selected\n";
      for (std::size_t i = 0; i < g.points.size(); ++i) {
        const auto& p = g.points[i];
        out << widths(p.model.lstm_units) << ',' << widths(p.model.trunk_hidden) << ','
            << format_double(p.model.dropout_rate) << ',' << format_double(p.val_nll) << ',' << (i == g.best ? 1 : 0)
            << '\n';
      }
      model = g.points[g.best].model;
      std::cerr << "grid: selected lstm " << widths(model.lstm_units) << ", hidden " << widths(model.trunk_hidden)
                << ", dropout " << model.dropout_rate << '\n';
    }
    const auto r = walk_forward(data.panel, s, model, cfg.train, cfg.ensemble, log_period);
    print_report(write_backtest(run, r, data, cfg.bucket, head_label(model)));
    return 0;
  });
}

int cmd_ablate(const RunConfig& cfg, const std::string& config_path, std::size_t seeds) {
  return with_run("ablate", cfg, config_path, cfg.ensemble.base_seed, [&](Run& run) {
    const LoadedPanel data = load_panel(cfg);
    const BacktestSchedule s = resolve_schedule(cfg, data.panel);
    fs::create_directories(run.dir() / "runs");
    const auto report = run_ablation(
        data.panel, s, cfg.model, cfg.train, cfg.ensemble, seeds, cfg.bucket,
        data.true_sigma2 ? &*data.true_sigma2 : nullptr, [&](const AblationRun& a, const BacktestResult& r) {
          save_csv(r.rows, run.path("runs/" + a.variant + "_seed" + std::to_string(a.seed_index) + "_forecasts.csv"));
          print_report(a.metrics);
        });
    write_ablation_csv(report, run.path("ablation.csv"));
    write_ablation_runs_csv(report, run.path("ablation_runs.csv"));
    for (const auto& v : report.summary) {
      std::cout << v.variant << ": CC " << v.cc_mean << " +- " << v.cc_sd << ", RMSE " << v.rmse_mean << " +- "
                << v.rmse_sd << ", NLL " << v.nll_mean << " +- " << v.nll_sd << '\n';
    }
    return 0;
  });
}

int cmd_verify(const RunConfig& cfg, const std::string& config_path) {
  return with_run("verify", cfg, config_path, verify::Options{}.seed, [&](Run& run) {
    const auto results = verify::run_all();
    nlohmann::json report = nlohmann::json::array();
    std::size_t failed = 0;
    for (const auto& r : results) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
      report.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
      if (!r.passed) ++failed;
    }
    std::ofstream(run.path("verify.json")) << report.dump(2) << '\n';
    std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
    return failed == 0 ? 0 : 1;
  });
}

int cmd_tabular(const RunConfig& cfg, const std::string& config_path, const std::vector<std::string>& heads,
                bool synthetic) {
  return with_run("tabular", cfg, config_path, cfg.ensemble.base_seed, [&](Run& run) {
    TabularData table;
    std::string name = cfg.tabular.dataset_name;
    if (synthetic) {
      table = make_linear_tabular(2000, 8, 0.5, cfg.sim_seed);
      if (name.empty()) name = "linear_gaussian";
    } else {
      if (cfg.tabular.path.empty()) throw ConfigError("tabular needs tabular.path (or --synthetic)");
      table = load_tabular_csv(cfg.tabular.path, cfg.tabular.target);
      if (name.empty()) name = fs::path(cfg.tabular.path).stem().string();
    }
    std::vector<ModelConfig> models;
    if (heads.empty()) {
      models.push_back(cfg.model);
    } else {
      for (const auto& h : heads) {
        ModelConfig m = cfg.model;
        m.tie_alpha_beta = h == "smd_tied";
        m.head = parse_head(m.tie_alpha_beta ? "smd" : h);
        models.push_back(m);
      }
    }
    std::ofstream out(run.path("tabular.csv"));
    std::ofstream trials(run.path("tabular_trials.csv"));
    out << tabular_csv_header() << '\n';
    trials << "dataset,head,trial,train_rows,test_rows,rmse,nll\n";
    for (const auto& m : models) {
      const auto s = run_tabular(table, m, cfg.train, cfg.ensemble, cfg.tabular.trials, cfg.tabular.test_fraction, name);
      out << to_csv_row(s) << '\n';
      for (std::size_t t = 0; t < s.trials.size(); ++t) {
        trials << s.dataset << ',' << s.head << ',' << t << ',' << s.trials[t].train_rows << ','
               << s.trials[t].test_rows << ',' << format_double(s.trials[t].rmse) << ','
               << format_double(s.trials[t].nll) << '\n';
      }
      std::cout << s.dataset << " " << s.head << ": RMSE " << s.rmse_mean << " +- " << s.rmse_sd << ", NLL "
                << s.nll_mean << " +- " << s.nll_sd << '\n';
    }
    return 0;
  });
}

struct PathSettings {
  double y = 1.0, gamma = 0.0, alpha = 2.0, nu_min = 1e-3, nu_max = 1e3;
  std::size_t points = 61;
};

/// NIG NLL and its derivative in nu along beta = 1 / (1 + nu), i.e. beta nu = 1 / (1 + 1/nu).
int cmd_meinert_path(const RunConfig& cfg, const std::string& config_path, const PathSettings& p) {
  return with_run("meinert-path", cfg, config_path, 0, [&](Run& run) {
    if (!(p.nu_min > 0.0 && p.nu_max > p.nu_min) || p.points < 2) throw ConfigError("need 0 < nu-min < nu-max, points >= 2");
    std::ofstream out(run.path("meinert_path.csv"));
    out << "nu,beta,nll,dnll_dnu_fixed_beta,dnll_dnu_along_path\n";
    for (std::size_t i = 0; i < p.points; ++i) {
      const double nu = p.nu_min * std::pow(p.nu_max / p.nu_min, static_cast<double>(i) / static_cast<double>(p.points - 1));
      const double beta = 1.0 / (1.0 + nu);
      auto nll_at = [&](bool path, double& grad) {
        ad::Tape tape;
        auto v = tape.leaf(Tensor::matrix(1, 1, nu), true);
        auto b = path ? tape.constant(1.0) / (v + 1.0) : tape.constant(beta);
        auto loss = expr::nig_nll(tape.constant(p.y), tape.constant(p.gamma), v, tape.constant(p.alpha), b);
        tape.backward(loss);
        grad = v.grad()[0];
        return loss.item();
      };
      double partial = 0.0, along = 0.0;
      const double value = nll_at(false, partial);
      nll_at(true, along);
      out << format_double(nu) << ',' << format_double(beta) << ',' << format_double(value) << ','
          << format_double(partial) << ',' << format_double(along) << '\n';
    }
    std::cout << "wrote " << p.points << " points to " << run.path("meinert_path.csv") << '\n';
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural return forecasting with decomposed predictive uncertainty"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  app.add_option("-c,--config", config_path, "INI configuration file (single source of truth)");
  app.add_option("-s,--set", overrides, "Override a setting, section.key=value (repeatable)");
  app.add_option("-o,--out", out_dir, "Output directory (VOLCAST_OUT takes precedence)");

  auto* sim = app.add_subcommand("simulate", "Simulate a GARCH(1,1) panel and its conditional variances");
  std::optional<std::size_t> T, N;
  std::optional<double> omega, a, b, mu;
  std::optional<std::uint64_t> seed;
  sim->add_option("--T", T, "Periods");
  sim->add_option("--N", N, "Assets");
  sim->add_option("--omega", omega, "GARCH constant");
  sim->add_option("--a", a, "ARCH coefficient");
  sim->add_option("--b", b, "GARCH coefficient");
  sim->add_option("--mu", mu, "Return mean");
  sim->add_option("--seed", seed, "Random seed");

  auto* train_cmd = app.add_subcommand("train", "Fit one ensemble on the data before test_start and save checkpoints");
  auto* backtest = app.add_subcommand("backtest", "Walk-forward backtest with periodic refits");
  bool grid = false;
  backtest->add_flag("--grid", grid, "Select LSTM widths, hidden widths and dropout by validation NLL first");
  auto* ablate = app.add_subcommand("ablate", "Full model against No-Averaging, Single-Output and Returns-only");
  std::size_t seeds = 3;
  ablate->add_option("--seeds", seeds, "Repetitions with different ensemble seeds")->check(CLI::PositiveNumber);
  auto* verify_cmd = app.add_subcommand("verify", "Run the oracle checks and report pass/fail per check");
  auto* tabular = app.add_subcommand("tabular", "Repeated random-split benchmark on a numeric CSV");
  std::vector<std::string> heads;
  bool synthetic = false;
  std::string tab_path;
  tabular->add_option("--data", tab_path, "CSV path (overrides tabular.path)");
  tabular->add_option("--heads", heads, "Heads to compare: gaussian, nig, smd, smd_tied")->delimiter(',');
  tabular->add_flag("--synthetic", synthetic, "Use a seeded linear-Gaussian dataset instead of a file");
  auto* meinert = app.add_subcommand("meinert-path", "Report dNLL/dnu of the NIG loss along beta nu = 1/(1+1/nu)");
  PathSettings path;
  meinert->add_option("--y", path.y, "Observation");
  meinert->add_option("--gamma", path.gamma, "Location");
  meinert->add_option("--alpha", path.alpha, "Shape alpha");
  meinert->add_option("--nu-min", path.nu_min, "Smallest nu");
  meinert->add_option("--nu-max", path.nu_max, "Largest nu");
  meinert->add_option("--points", path.points, "Grid points (log-spaced)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!out_dir.empty()) overrides.push_back("output.dir=" + out_dir);
    if (!tab_path.empty()) overrides.push_back("tabular.path=" + tab_path);
    if (T) overrides.push_back("simulate.T=" + std::to_string(*T));
    if (N) overrides.push_back("simulate.N=" + std::to_string(*N));
    if (omega) overrides.push_back("simulate.omega=" + format_double(*omega));
    if (a) overrides.push_back("simulate.a=" + format_double(*a));
    if (b) overrides.push_back("simulate.b=" + format_double(*b));
    if (mu) overrides.push_back("simulate.mu=" + format_double(*mu));
    if (seed) overrides.push_back("simulate.seed=" + std::to_string(*seed));
    const RunConfig cfg = load_run_config(config_path, overrides);
    cfg.garch.validate();
    cfg.model.validate();
    cfg.train.validate();
    if (cfg.ensemble.members == 0) throw ConfigError("ensemble.members must be positive");

    if (*sim) return cmd_simulate(cfg, config_path);
    if (*train_cmd) return cmd_train(cfg, config_path);
    if (*backtest) return cmd_backtest(cfg, config_path, grid);
    if (*ablate) return cmd_ablate(cfg, config_path, seeds);
    if (*verify_cmd) return cmd_verify(cfg, config_path);
    if (*tabular) return cmd_tabular(cfg, config_path, heads, synthetic);
    if (*meinert) return cmd_meinert_path(cfg, config_path, path);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ScheduleError& e) {
    std::cerr << "schedule error: " << e.what() << '\n';
    return 2;
  } catch (const IngestionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "invalid value: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
