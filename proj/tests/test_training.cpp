#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "volcast/data.hpp"
#include "volcast/training.hpp"

using namespace volcast;

namespace {

ModelConfig small_model(Head head = Head::smd) {
  ModelConfig c;
  c.head = head;
  c.lstm_units = {4};
  c.trunk_hidden = {4};
  c.subnet_hidden = {4};
  c.window_len = 5;
  c.dropout_rate = 0.1;
  return c;
}

Dataset garch_rows(std::size_t T, std::size_t N, std::uint64_t seed) {
  const auto sim = garch_simulate(GarchSpec{}, T, N, seed);
  return make_windows(sim.panel, 5, 1, Features::returns_and_logsq);
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 15;
  cfg.patience = 3;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(Adam, TwoStepsOnSquareMatchHandTrace) {
  std::vector<NamedTensor> params{{"x", Tensor::matrix(1, 1, 1.0)}};
  AdamState state;
  const double lr = 0.1;
  adam_step(params, {Tensor::matrix(1, 1, 2.0 * params[0].value[0])}, state, lr);
  // First bias-corrected step moves by lr * g / |g| = lr.
  EXPECT_NEAR(params[0].value[0], 0.9, 1e-9);
  adam_step(params, {Tensor::matrix(1, 1, 2.0 * params[0].value[0])}, state, lr);
  // Independent trace in extended precision, epsilon included in both steps.
  const long double x1 = 1.0L - 0.1L * 2.0L / (2.0L + 1e-8L);
  const long double g2 = 2.0L * x1;
  const long double m = 0.9L * 0.2L + 0.1L * g2, v = 0.999L * 0.004L + 0.001L * g2 * g2;
  const long double m_hat = m / (1 - 0.81L), v_hat = v / (1 - 0.999L * 0.999L);
  const long double expected = x1 - 0.1L * m_hat / (std::sqrt(v_hat) + 1e-8L);
  EXPECT_NEAR(params[0].value[0], static_cast<double>(expected), 1e-12);
  EXPECT_NEAR(params[0].value[0], 0.80041, 1e-5);
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
  std::vector<NamedTensor> params{{"w", Tensor::matrix(1, 2)}, {"head.bias", Tensor::matrix(1, 1)}};
  AdamState state;
  try {
    adam_step(params, {Tensor::matrix(1, 2), Tensor::matrix(1, 1, std::nan(""))}, state, 0.01);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("head.bias"), std::string::npos);
  }
  EXPECT_EQ(params[0].value[0], 0.0);
}

TEST(Adam, RejectsMismatchedGradients) {
  std::vector<NamedTensor> params{{"w", Tensor::matrix(1, 2)}};
  AdamState state;
  EXPECT_THROW(adam_step(params, {Tensor::matrix(2, 1)}, state, 0.01), ShapeError);
  EXPECT_THROW(adam_step(params, {}, state, 0.01), ContractError);
}

TEST(Clipping, ScalesToMaxNormOnlyWhenExceeded) {
  std::vector<Tensor> g{Tensor::row({6.0, 0.0}), Tensor::matrix(1, 1, 8.0)};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 5.0), 10.0);
  EXPECT_DOUBLE_EQ(g[0][0], 3.0);
  EXPECT_DOUBLE_EQ(g[1][0], 4.0);
  std::vector<Tensor> small{Tensor::row({0.3, 0.4})};
  EXPECT_DOUBLE_EQ(clip_global_norm(small, 5.0), 0.5);
  EXPECT_DOUBLE_EQ(small[0][1], 0.4);
}

TEST(EarlyStopping, StopsAfterPatienceEpochsWithoutImprovement) {
  EarlyStopping s(2, 1e-3);
  EXPECT_TRUE(s.update(1.0));
  EXPECT_TRUE(s.update(0.9));
  EXPECT_FALSE(s.update(0.8995));  // within tolerance
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(0.95));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 2u);
  EXPECT_DOUBLE_EQ(s.best(), 0.9);
}

TEST(Split, ChronologicalCutNeverSplitsATargetPeriod) {
  const Dataset d = garch_rows(40, 3, 1);
  const auto [train, val] = split_chronological(d, 0.7);
  EXPECT_EQ(train.size() + val.size(), d.size());
  EXPECT_LT(train.target_index.back(), val.target_index.front());
  EXPECT_GE(train.size(), static_cast<std::size_t>(0.7 * static_cast<double>(d.size())));
}

TEST(Split, SubsetRejectsBadRows) {
  const Dataset d = garch_rows(20, 2, 1);
  EXPECT_THROW(subset(d, {d.size()}), ContractError);
  EXPECT_THROW(subset(d, {}), ContractError);
  const Dataset one = subset(d, {3});
  EXPECT_EQ(one.size(), 1u);
  EXPECT_EQ(one.target_index[0], d.target_index[3]);
  for (std::size_t j = 0; j < d.row_width(); ++j) EXPECT_EQ(one.inputs[j], d.inputs[3 * d.row_width() + j]);
}

TEST(TrainConfig, ValidateRejectsBadValues) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda_reg = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EvaluateNll, AddsLogTargetScale) {
  Dataset d = garch_rows(60, 2, 4);
  Forecaster a(small_model(), 1);
  Forecaster b = a;
  b.scaling().target_scale = 2.0;
  Dataset doubled = d;
  for (auto& y : doubled.targets) y *= 2.0;
  EXPECT_NEAR(evaluate_nll(b, doubled), evaluate_nll(a, d) + std::log(2.0), 1e-10);
  EXPECT_NEAR(evaluate_nll(a, d, 7), evaluate_nll(a, d), 1e-12);
}

TEST(Train, ReducesValidationLossAndRestoresBestEpoch) {
  const Dataset d = garch_rows(300, 4, 5);
  const auto [tr, va] = split_chronological(d, 0.7);
  Forecaster model(small_model(), 11);
  model.scaling() = fit_scaling(tr, false);
  const double before = evaluate_nll(model, va);
  const TrainResult r = train(model, tr, va, quick_config());
  ASSERT_FALSE(r.history.empty());
  EXPECT_LT(r.best_val_nll, before);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_DOUBLE_EQ(r.best_val_nll, r.history[r.best_epoch - 1].val_nll);
  EXPECT_NEAR(evaluate_nll(model, va), r.best_val_nll, 1e-12);
}

TEST(Train, SameSeedGivesIdenticalParameters) {
  const Dataset d = garch_rows(120, 3, 6);
  const auto [tr, va] = split_chronological(d, 0.7);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 3;
  Forecaster a(small_model(Head::nig), 2), b(small_model(Head::nig), 2);
  train(a, tr, va, cfg);
  train(b, tr, va, cfg);
  for (std::size_t k = 0; k < a.parameters().size(); ++k) {
    const auto x = a.parameters()[k].value.values(), y = b.parameters()[k].value.values();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << a.parameters()[k].name;
  }
}

TEST(Train, RejectsEmptySets) {
  const Dataset d = garch_rows(30, 2, 7);
  Forecaster model(small_model(), 1);
  EXPECT_THROW(train(model, d, Dataset{}, quick_config()), ContractError);
}

TEST(EpochLog, WritesOneLinePerEpoch) {
  TrainResult r;
  r.history = {{1, 1.5, 1.4, 0.1}, {2, 1.2, 1.3, 0.1}};
  const auto path = std::filesystem::temp_directory_path() / "volcast_epoch_log.csv";
  write_epoch_log(r, path.string());
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,train_nll,val_nll");
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 2);
  write_epoch_log(r, path.string(), true);
  std::ifstream timed(path);
  std::getline(timed, header);
  EXPECT_EQ(header, "epoch,train_nll,val_nll,seconds");
  std::filesystem::remove(path);
}
