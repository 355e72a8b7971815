#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "volcast/backtest.hpp"
#include "volcast/experiments.hpp"

using namespace volcast;

namespace {

ModelConfig tiny_model(std::size_t horizon = 1) {
  ModelConfig c;
  c.lstm_units = {3};
  c.trunk_hidden = {3};
  c.subnet_hidden = {3};
  c.window_len = 4;
  c.horizon = horizon;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 64;
  t.max_epochs = 3;
  t.patience = 2;
  return t;
}

EnsembleConfig two_members() {
  EnsembleConfig e;
  e.members = 2;
  e.base_seed = 100;
  e.workers = 2;
  return e;
}

BacktestSchedule schedule(std::size_t start, std::size_t refit) {
  BacktestSchedule s;
  s.test_start = start;
  s.refit_interval = refit;
  return s;
}

const SimulatedPanel& sim() {
  static const SimulatedPanel s = garch_simulate(GarchSpec{}, 90, 3, 11);
  return s;
}

}  // namespace

TEST(Schedule, ValidateRejectsBadSchedules) {
  EXPECT_THROW(schedule(0, 10).validate(50), ScheduleError);
  EXPECT_THROW(schedule(60, 10).validate(50), ScheduleError);
  EXPECT_THROW(schedule(20, 0).validate(50), ScheduleError);
  BacktestSchedule s = schedule(20, 10);
  s.mode = WindowMode::rolling;
  EXPECT_THROW(s.validate(50), ScheduleError);
  s.window_len = 5;
  EXPECT_NO_THROW(s.validate(50));
  s.test_end = 51;
  EXPECT_THROW(s.validate(50), ScheduleError);
  EXPECT_EQ(parse_window_mode("rolling"), WindowMode::rolling);
  EXPECT_THROW(parse_window_mode("sliding"), ConfigError);
}

TEST(ParallelFor, RunsEveryJobAndRethrows) {
  std::vector<std::atomic<int>> hits(37);
  detail::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(detail::parallel_for(8, 3,
                                    [](std::size_t i) {
                                      if (i == 5) throw TrainingError("boom");
                                    }),
               TrainingError);
}

class WalkForwardHorizon : public ::testing::TestWithParam<std::size_t> {};

TEST_P(WalkForwardHorizon, TrainingTargetsPrecedeEveryForecastOrigin) {
  const std::size_t h = GetParam();
  const auto r = walk_forward(sim().panel, schedule(60, 10), tiny_model(h), tiny_train(), two_members());
  ASSERT_EQ(r.periods.size(), 3u);
  for (const auto& p : r.periods) {
    EXPECT_LE(p.last_train_target + h, p.start);
    EXPECT_EQ(p.last_train_target + h, p.start);  // expanding window uses all available rows
    EXPECT_EQ(p.best_epochs.size(), 2u);
  }
  EXPECT_EQ(r.rows.size(), 3u * (90 - 60));
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& p = r.periods[r.period_of_row[i]];
    EXPECT_GE(r.target_index[i], p.start);
    EXPECT_LT(r.target_index[i], p.end);
    EXPECT_EQ(r.end_index[i] + h, r.target_index[i]);
    EXPECT_NEAR(r.rows[i].aleatoric + r.rows[i].epistemic, r.rows[i].var_hat, 1e-12 * r.rows[i].var_hat);
    EXPECT_EQ(r.member_params[i].size(), 2u);
  }
}

INSTANTIATE_TEST_SUITE_P(Horizons, WalkForwardHorizon, ::testing::Values(1u, 3u));

TEST(WalkForward, FutureReturnsDoNotChangeFirstForecasts) {
  const auto base = walk_forward(sim().panel, schedule(60, 30), tiny_model(), tiny_train(), two_members());
  ReturnPanel shocked = sim().panel;
  for (std::size_t t = 60; t < shocked.periods(); ++t)
    for (std::size_t n = 0; n < shocked.asset_count(); ++n) shocked.at(t, n) *= 7.0;
  const auto moved = walk_forward(shocked, schedule(60, 30), tiny_model(), tiny_train(), two_members());
  std::size_t compared = 0;
  for (std::size_t i = 0; i < base.rows.size(); ++i) {
    if (base.target_index[i] != 60) continue;
    EXPECT_EQ(base.rows[i].y_hat, moved.rows[i].y_hat);
    EXPECT_EQ(base.rows[i].var_hat, moved.rows[i].var_hat);
    ++compared;
  }
  EXPECT_EQ(compared, 3u);
}

TEST(WalkForward, RollingWindowAndStride) {
  BacktestSchedule s = schedule(60, 15);
  s.mode = WindowMode::rolling;
  s.window_len = 20;
  s.train_stride = 2;
  const auto r = walk_forward(sim().panel, s, tiny_model(), tiny_train(), two_members());
  for (const auto& p : r.periods) {
    EXPECT_GE(p.first_train_target + 20, p.last_train_target + 1);
    EXPECT_LE(p.last_train_target + 1, p.start);
    EXPECT_LE(p.train_rows + p.validation_rows, 3u * 10u);
  }
}

TEST(WalkForward, DeterministicGivenSeeds) {
  const auto a = walk_forward(sim().panel, schedule(70, 20), tiny_model(), tiny_train(), two_members());
  EnsembleConfig serial = two_members();
  serial.workers = 1;
  const auto b = walk_forward(sim().panel, schedule(70, 20), tiny_model(), tiny_train(), serial);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].y_hat, b.rows[i].y_hat);
    EXPECT_EQ(a.rows[i].var_hat, b.rows[i].var_hat);
  }
  EXPECT_EQ(a.metrics.nll, b.metrics.nll);
}

TEST(WalkForward, EmptyTrainingWindowIsAScheduleError) {
  // First row targets period K = 4; a fit for period 4 has nothing to train on.
  EXPECT_THROW(walk_forward(sim().panel, schedule(4, 10), tiny_model(), tiny_train(), two_members()), ScheduleError);
}

TEST(Score, MatchesHandAggregation) {
  BacktestResult r;
  const DistributionParams g1 = GaussianParams{0.0, 1.0}, g2 = GaussianParams{1.0, 1.0};
  r.member_params = {{g1}, {g2}, {g1}, {g2}};
  r.rows = {{"5", "A", 0.5, 0.0, 1.0, 1.0, 0.0},
            {"5", "B", 1.0, 1.0, 1.0, 1.0, 0.0},
            {"6", "A", 0.0, 0.0, 1.0, 1.0, 0.0},
            {"6", "B", 2.0, 1.0, 1.0, 1.0, 0.0}};
  r.target_index = {5, 5, 6, 6};
  const auto m = score(r, "x");
  EXPECT_DOUBLE_EQ(m.cc, 1.0);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt((0.25 + 0 + 0 + 1) / 4));
  const double expected = (gaussian_nll(0.5, {0, 1}) + gaussian_nll(1, {1, 1}) + gaussian_nll(0, {0, 1}) +
                           gaussian_nll(2, {1, 1})) / 4;
  EXPECT_NEAR(m.nll, expected, 1e-15);
  EXPECT_NEAR(m.nll_moment, expected, 1e-15);
  EXPECT_EQ(m.cc_periods_used, 2u);
}

TEST(Tracking, PerfectForecasterTracksTruth) {
  const auto& s = sim();
  BacktestResult r;
  for (std::size_t t = 40; t < 90; ++t) {
    for (std::size_t n = 0; n < 3; ++n) {
      r.rows.push_back({s.panel.timestamps[t], s.panel.assets[n], s.panel.at(t, n), 0.0, s.sigma2[t * 3 + n], 0, 0});
      r.target_index.push_back(t);
      r.asset_index.push_back(n);
    }
  }
  const auto tr = tracking_against_truth(r, s.sigma2, 3, 5);
  EXPECT_EQ(tr.buckets, 10u);
  EXPECT_NEAR(tr.mean_correlation, 1.0, 1e-12);
  const auto path = std::filesystem::temp_directory_path() / "volcast_plot.csv";
  save_plot_csv(r, s.panel, path.string(), 5, &s.sigma2);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1u + 3u * 10u);
  std::filesystem::remove(path);
}

TEST(Output, MemberParamsHaveOneLinePerMemberAndRow) {
  const auto r = walk_forward(sim().panel, schedule(80, 10), tiny_model(), tiny_train(), two_members());
  const auto path = std::filesystem::temp_directory_path() / "volcast_members.csv";
  save_member_params_csv(r, path.string());
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "timestamp,asset,member,head,p0,p1,p2,p3");
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 2u * r.rows.size());
  std::filesystem::remove(path);
}

TEST(Output, NigVarianceRecomputesFromEmittedParameters) {
  ModelConfig m = tiny_model();
  m.head = Head::nig;
  EnsembleConfig one = two_members();
  one.members = 1;
  const auto r = walk_forward(sim().panel, schedule(80, 10), m, tiny_train(), one);
  const auto path = std::filesystem::temp_directory_path() / "volcast_nig_members.csv";
  save_member_params_csv(r, path.string());
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::size_t i = 0;
  while (std::getline(in, line)) {
    const auto f = split_csv_line(line);
    ASSERT_EQ(f[3], "nig");
    double nu, alpha, beta;
    ASSERT_TRUE(parse_double(f[5], nu) && parse_double(f[6], alpha) && parse_double(f[7], beta));
    const double expected = beta * (1 + nu) / (nu * (alpha - 1));
    EXPECT_NEAR(r.rows[i].var_hat, expected, 1e-10 * expected);
    ++i;
  }
  EXPECT_EQ(i, r.rows.size());
  std::filesystem::remove(path);
}

TEST(Output, SingleGaussianHasNoEpistemicPart) {
  ModelConfig m = tiny_model();
  m.head = Head::gaussian;
  EnsembleConfig one = two_members();
  one.members = 1;
  const auto r = walk_forward(sim().panel, schedule(80, 10), m, tiny_train(), one);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.epistemic, 0.0);
    EXPECT_EQ(row.aleatoric, row.var_hat);
  }
}

TEST(Ablation, NoAveragingEqualsFirstMemberOfFullRun) {
  BacktestResult full, single;
  ModelConfig m = tiny_model();
  run_ablation(sim().panel, schedule(80, 10), m, tiny_train(), two_members(), 1, 5, &sim().sigma2,
               [&](const AblationRun& a, const BacktestResult& r) {
                 if (a.variant == "full") full = r;
                 if (a.variant == "no_averaging") single = r;
               });
  ASSERT_EQ(full.rows.size(), single.rows.size());
  for (std::size_t i = 0; i < full.rows.size(); ++i) {
    const auto& member0 = std::get<SMDParams>(full.member_params[i][0]);
    const auto& only = std::get<SMDParams>(single.member_params[i][0]);
    EXPECT_EQ(member0.gamma, only.gamma);
    EXPECT_EQ(member0.alpha, only.alpha);
    EXPECT_EQ(single.rows[i].y_hat, member0.gamma);
  }
}

TEST(Ablation, FourVariantsWithSpreadOverSeeds) {
  const auto report = run_ablation(sim().panel, schedule(84, 10), tiny_model(), tiny_train(), two_members(), 3, 2,
                                   &sim().sigma2);
  ASSERT_EQ(report.summary.size(), 4u);
  EXPECT_EQ(report.runs.size(), 12u);
  EXPECT_EQ(report.summary[0].variant, "full");
  EXPECT_EQ(find_variant(report, "returns_only").seeds, 3u);
  EXPECT_GT(find_variant(report, "full").nll_sd, 0.0);
  EXPECT_THROW(find_variant(report, "nope"), ContractError);
}

TEST(Grid, EnumeratesEveryCombinationAndPicksLowestLoss) {
  GridSpec g;
  EXPECT_EQ(grid_models(tiny_model(), g).size(), 24u);
  g.lstm_units = {{2}, {3}};
  g.trunk_hidden = {{2}};
  g.dropout_rate = {0.1};
  const auto r = grid_search(sim().panel, schedule(60, 30), tiny_model(), g, tiny_train(), two_members());
  ASSERT_EQ(r.points.size(), 2u);
  for (const auto& p : r.points) EXPECT_GE(p.val_nll, r.points[r.best].val_nll);
  EXPECT_EQ(r.points[1].model.lstm_units, (std::vector<std::size_t>{3}));
}
