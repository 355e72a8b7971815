#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "volcast/data.hpp"

using namespace volcast;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << contents;
  return path;
}

// T x N panel with r(t, n) = 0.01 (t + 1) + n.
ReturnPanel ramp_panel(std::size_t T, std::size_t N) {
  ReturnPanel p;
  for (std::size_t t = 0; t < T; ++t) p.timestamps.push_back(std::to_string(t));
  for (std::size_t n = 0; n < N; ++n) p.assets.push_back("S" + std::to_string(n));
  p.returns.resize(T * N);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n) p.at(t, n) = 0.01 * static_cast<double>(t + 1) + static_cast<double>(n);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const IngestionError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Text, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    double back;
    ASSERT_TRUE(parse_double(format_double(v), back));
    EXPECT_EQ(back, v);
  }
}

TEST(Text, ParseDoubleRequiresFullMatch) {
  double v;
  EXPECT_TRUE(parse_double(" 1.5\r", v));
  EXPECT_EQ(v, 1.5);
  EXPECT_TRUE(parse_double("+2", v));
  EXPECT_FALSE(parse_double("1.5abc", v));
  EXPECT_FALSE(parse_double("", v));
  EXPECT_FALSE(parse_double("abc", v));
}

TEST(Text, TimestampOrdering) {
  EXPECT_TRUE(timestamp_less("9", "10"));
  EXPECT_TRUE(timestamp_less("2020-01-09", "2020-01-10"));
  EXPECT_FALSE(timestamp_less("10", "10"));
}

TEST(Returns, LogReturnsOfPrices) {
  const auto r = to_log_returns({100.0, 110.0, 99.0});
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NEAR(r[0], std::log(1.1), 1e-15);
  EXPECT_NEAR(r[1], std::log(0.9), 1e-15);
  EXPECT_THROW(to_log_returns({1.0, 0.0}), DomainError);
  EXPECT_THROW(to_log_returns({1.0, -3.0}), DomainError);
}

TEST(Returns, LogSquaredReturnIsFloored) {
  EXPECT_DOUBLE_EQ(log_squared_return(0.0), std::log(1e-12));
  EXPECT_NEAR(log_squared_return(0.1), 2.0 * std::log(0.1), 1e-14);
}

TEST(Windows, HandBuiltPanel) {
  const ReturnPanel p = ramp_panel(6, 2);
  const Dataset d = make_windows(p, 2, 2, Features::returns_and_logsq);
  // End periods 1..3, two assets each.
  ASSERT_EQ(d.size(), 6u);
  EXPECT_EQ(d.inputs.shape(), (Tensor::Shape{6, 2, 2}));
  const std::vector<std::size_t> ends{1, 1, 2, 2, 3, 3}, assets{0, 1, 0, 1, 0, 1};
  EXPECT_EQ(d.end_index, ends);
  EXPECT_EQ(d.asset_index, assets);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t t = d.end_index[i], n = d.asset_index[i];
    EXPECT_EQ(d.target_index[i], t + 2);
    EXPECT_NEAR(d.targets[i], p.at(t + 1, n) + p.at(t + 2, n), 1e-15);
    for (std::size_t k = 0; k < 2; ++k) {
      const double r = p.at(t - 1 + k, n);
      EXPECT_EQ(d.inputs[(i * 2 + k) * 2], r);
      EXPECT_EQ(d.inputs[(i * 2 + k) * 2 + 1], log_squared_return(r));
    }
  }
}

TEST(Windows, ReturnsOnlyHasOneFeature) {
  const Dataset d = make_windows(ramp_panel(5, 1), 3, 1, Features::returns_only);
  EXPECT_EQ(d.inputs.shape(), (Tensor::Shape{2, 3, 1}));
}

TEST(Windows, MinimumLengthAndStride) {
  EXPECT_EQ(make_windows(ramp_panel(4, 3), 3, 1, Features::returns_only).size(), 3u);
  EXPECT_THROW(make_windows(ramp_panel(3, 3), 3, 1, Features::returns_only), ContractError);
  const Dataset strided = make_windows(ramp_panel(20, 1), 2, 1, Features::returns_only, 5);
  const std::vector<std::size_t> ends{1, 6, 11, 16};
  EXPECT_EQ(strided.end_index, ends);
}

TEST(Garch, RejectsNonStationarySpec) {
  GarchSpec s;
  s.a = 0.2;
  s.b = 0.8;
  try {
    s.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("not stationary"), std::string::npos);
  }
  EXPECT_THROW(garch_simulate(s, 10, 1, 0), ConfigError);
}

TEST(Garch, SeededAndFollowsRecursion) {
  const GarchSpec spec;
  const auto a = garch_simulate(spec, 200, 3, 5), b = garch_simulate(spec, 200, 3, 5);
  EXPECT_EQ(a.panel.returns, b.panel.returns);
  EXPECT_NE(a.panel.returns, garch_simulate(spec, 200, 3, 6).panel.returns);
  EXPECT_DOUBLE_EQ(a.sigma2[0], spec.unconditional_variance());
  for (std::size_t t = 1; t < 200; ++t) {
    for (std::size_t n = 0; n < 3; ++n) {
      const double r = a.panel.at(t - 1, n);
      EXPECT_NEAR(a.sigma2[t * 3 + n], spec.omega + spec.a * r * r + spec.b * a.sigma2[(t - 1) * 3 + n], 1e-15);
    }
  }
}

TEST(Garch, SampleVarianceNearUnconditional) {
  const GarchSpec spec;
  const auto sim = garch_simulate(spec, 40000, 5, 9);
  double s2 = 0.0;
  for (double r : sim.panel.returns) s2 += r * r;
  s2 /= static_cast<double>(sim.panel.returns.size());
  EXPECT_NEAR(s2 / spec.unconditional_variance(), 1.0, 0.05);
}

TEST(Csv, PanelRoundTrip) {
  const auto sim = garch_simulate(GarchSpec{}, 30, 12, 2);
  const auto path = std::filesystem::temp_directory_path() / "volcast_panel_roundtrip.csv";
  save_panel_csv(sim.panel, path.string());
  const ReturnPanel back = load_csv(path.string());
  EXPECT_EQ(back.assets, sim.panel.assets);
  EXPECT_EQ(back.timestamps, sim.panel.timestamps);
  EXPECT_EQ(back.returns, sim.panel.returns);
  std::filesystem::remove(path);
}

TEST(Csv, PricesBecomeLogReturns) {
  const auto path = temp_file("volcast_prices.csv",
                              "timestamp,asset,price\n2020-01-02,B,50\n2020-01-01,A,100\n2020-01-01,B,40\n"
                              "2020-01-02,A,110\n");
  const ReturnPanel p = load_csv(path.string());
  ASSERT_EQ(p.periods(), 1u);
  EXPECT_EQ(p.timestamps[0], "2020-01-02");
  EXPECT_EQ(p.assets, (std::vector<std::string>{"B", "A"}));
  EXPECT_NEAR(p.at(0, 0), std::log(50.0 / 40.0), 1e-15);
  EXPECT_NEAR(p.at(0, 1), std::log(1.1), 1e-15);
  std::filesystem::remove(path);
}

TEST(Csv, ErrorsNameFileAndLine) {
  const auto dup = temp_file("volcast_dup.csv", "timestamp,asset,return\n1,A,0.1\n1,A,0.2\n");
  EXPECT_NE(error_of([&] { load_csv(dup.string()); }).find("volcast_dup.csv:3"), std::string::npos);
  const auto bad = temp_file("volcast_bad.csv", "timestamp,asset,return\n1,A,0.1\n2,A,x\n");
  EXPECT_NE(error_of([&] { load_csv(bad.string()); }).find("volcast_bad.csv:3"), std::string::npos);
  const auto gap = temp_file("volcast_gap.csv", "timestamp,asset,return\n1,A,0.1\n1,B,0.1\n2,A,0.2\n");
  EXPECT_NE(error_of([&] { load_csv(gap.string()); }).find("missing value for asset B"), std::string::npos);
  const auto neg = temp_file("volcast_neg.csv", "timestamp,asset,price\n1,A,1\n2,A,-1\n");
  EXPECT_NE(error_of([&] { load_csv(neg.string()); }).find("asset A"), std::string::npos);
  const auto header = temp_file("volcast_header.csv", "date,ticker,close\n");
  EXPECT_NE(error_of([&] { load_csv(header.string()); }).find(":1:"), std::string::npos);
  EXPECT_THROW(load_csv("/nonexistent/volcast.csv"), IngestionError);
  for (const auto& p : {dup, bad, gap, neg, header}) std::filesystem::remove(p);
}

TEST(Csv, ForecastRoundTrip) {
  std::vector<ForecastRow> rows{{"5", "A0", 0.1, 0.2, 0.3, 0.1, 0.2}, {"6", "A1", -1.0 / 3.0, 0.0, 1e-9, 5e-10, 5e-10}};
  const auto path = std::filesystem::temp_directory_path() / "volcast_forecasts.csv";
  save_csv(rows, path.string());
  const auto back = load_forecasts_csv(path.string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].asset, "A1");
  EXPECT_EQ(back[1].y, rows[1].y);
  EXPECT_EQ(back[1].var_hat, rows[1].var_hat);
  std::filesystem::remove(path);
}

TEST(Tabular, RoundTripAndNamedTarget) {
  const auto path = temp_file("volcast_tab.csv", "a,y,b\n1,2,3\n4,5,6\n");
  const TabularData t = load_tabular_csv(path.string(), "y");
  EXPECT_EQ(t.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.data.targets, (std::vector<double>{2, 5}));
  EXPECT_EQ(t.data.inputs[3], 6.0);
  const TabularData last = load_tabular_csv(path.string());
  EXPECT_EQ(last.target_name, "b");
  save_tabular_csv(t, path.string());
  const TabularData back = load_tabular_csv(path.string());
  EXPECT_EQ(back.target_name, "y");
  EXPECT_EQ(back.data.targets, t.data.targets);
  std::filesystem::remove(path);
}

TEST(Tabular, NonNumericCellIsRejected) {
  const auto path = temp_file("volcast_tab_bad.csv", "a,y\n1,2\nred,3\n");
  EXPECT_NE(error_of([&] { load_tabular_csv(path.string()); }).find("volcast_tab_bad.csv:3"), std::string::npos);
  EXPECT_THROW(load_tabular_csv(path.string(), "missing"), IngestionError);
  std::filesystem::remove(path);
}

TEST(Scaling, ReturnsAreScaledNotCentred) {
  const Dataset d = make_windows(ramp_panel(10, 2), 3, 1, Features::returns_and_logsq);
  const Scaling s = fit_scaling(d, false);
  EXPECT_EQ(s.feature_mean[0], 0.0);
  EXPECT_NE(s.feature_mean[1], 0.0);
  EXPECT_EQ(s.target_shift, 0.0);
  double ss = 0.0;
  for (double y : d.targets) ss += y * y;
  EXPECT_NEAR(s.target_scale, std::sqrt(ss / static_cast<double>(d.size())), 1e-14);
}

TEST(Scaling, TabularFeaturesAndTargetAreCentred) {
  Dataset d;
  d.inputs = Tensor::matrix(4, 1, std::vector<double>{1, 2, 3, 4});
  d.targets = {10, 10, 14, 14};
  const Scaling s = fit_scaling(d, true);
  EXPECT_DOUBLE_EQ(s.feature_mean[0], 2.5);
  EXPECT_DOUBLE_EQ(s.feature_std[0], std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(s.target_shift, 12.0);
  EXPECT_DOUBLE_EQ(s.target_scale, 2.0);
}
