#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "volcast/autodiff.hpp"
#include "volcast/special.hpp"

using namespace volcast;
using namespace volcast::ad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Central difference of a scalar function, used as the adjoint oracle.
double central_difference(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST(Tensor, ShapeMustMatchBuffer) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({0, 3}, 0.0), ShapeError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Special, LogGammaKnownValues) {
  EXPECT_NEAR(log_gamma(1.0), 0.0, 1e-15);
  EXPECT_NEAR(log_gamma(0.5), 0.5 * std::log(std::numbers::pi), 1e-14);
  EXPECT_THROW(log_gamma(0.0), DomainError);
  EXPECT_THROW(log_gamma(-2.5), DomainError);
}

TEST(Special, DigammaMatchesFiniteDifferenceOfLogGamma) {
  // Frozen from a central difference of lgamma, step 1e-6.
  const double oracle = central_difference([](double x) { return std::lgamma(x); }, 1.0);
  EXPECT_NEAR(oracle, -0.5772156649, 1e-8);
  EXPECT_NEAR(digamma(1.0), -0.57721566490153286, 1e-12);
  EXPECT_NEAR(digamma(1.0), oracle, 1e-8);
}

TEST(Special, DigammaAccurateAcrossRange) {
  // Recurrence psi(x + 1) = psi(x) + 1 / x pins relative consistency; the
  // series is checked against finite differences of lgamma in long double.
  for (double x : {1e-3, 0.1, 0.5, 0.9, 1.7, 3.3, 5.99, 6.0, 12.5, 100.0, 1e4, 9.9e5}) {
    EXPECT_NEAR(digamma(x + 1.0), digamma(x) + 1.0 / x, 1e-10 * std::max(1.0, std::fabs(digamma(x)))) << x;
    const long double h = 1e-7L * std::max(1.0L, static_cast<long double>(x));
    const long double fd = (std::lgamma(static_cast<long double>(x) + h) - std::lgamma(static_cast<long double>(x) - h)) / (2 * h);
    EXPECT_NEAR(digamma(x), static_cast<double>(fd), 1e-6 * std::max(1.0, std::fabs(digamma(x)))) << x;
  }
  EXPECT_NEAR(digamma(0.5), -std::numbers::egamma - 2.0 * std::numbers::ln2, 1e-13);
}

TEST(Special, SoftplusStable) {
  EXPECT_NEAR(softplus(0.0), std::numbers::ln2, 1e-15);
  EXPECT_LT(std::fabs(softplus(40.0) - 40.0), 1e-12);
  EXPECT_GT(softplus(-700.0), 0.0);
  EXPECT_GT(softplus(-40.0), 0.0);
  EXPECT_EQ(softplus(1e6), 1e6);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-60.0, 60.0);
  for (int i = 0; i < 1000; ++i) EXPECT_GT(softplus(u(rng)), 0.0);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1.0, 2.0}), true);
  Var root = sum(x * x);
  tape.backward(root);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, LogAndSoftplus) {
  {
    Tape tape;
    Var x = tape.leaf(Tensor::row({1.0}), true);
    tape.backward(sum(log(x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::row({0.0}), true);
    tape.backward(sum(softplus(x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.5);
  }
}

TEST(Backward, LogGammaAdjointIsDigamma) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1.0}), true);
  tape.backward(sum(lgamma(x)));
  const double oracle = central_difference([](double v) { return std::lgamma(v); }, 1.0);
  EXPECT_NEAR(x.grad()[0], oracle, 1e-8);
}

TEST(Backward, NonScalarRootRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(x * x), ContractError);
}

TEST(Backward, ReusedNodeAccumulates) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({3.0}), true);
  Var y = x * x + x;  // x used three times
  tape.backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape tape;
    Var a = tape.leaf(random_tensor(rng, 4, 3, -1, 1), true);
    Var b = tape.leaf(random_tensor(rng, 3, 5, -1, 1), true);
    tape.backward(sum(tanh(matmul(a, b))));
    return std::pair{a.grad(), b.grad()};
  };
  auto [a1, b1] = run();
  auto [a2, b2] = run();
  for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_EQ(a1[i], a2[i]);
  for (std::size_t i = 0; i < b1.size(); ++i) EXPECT_EQ(b1[i], b2[i]);
}

TEST(Errors, DomainAndShape) {
  Tape tape;
  Var neg = tape.leaf(Tensor::row({-1.0}), true);
  Var zero = tape.leaf(Tensor::row({0.0}), true);
  EXPECT_THROW(log(neg), DomainError);
  EXPECT_THROW(log(zero), DomainError);
  EXPECT_THROW(lgamma(zero), DomainError);
  Var a = tape.leaf(Tensor::matrix(2, 3, 1.0));
  Var b = tape.leaf(Tensor::matrix(3, 2, 1.0));
  EXPECT_THROW(a + b, ShapeError);
  EXPECT_THROW(a * b, ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  Var bad_row = tape.leaf(Tensor::matrix(1, 2, 1.0));
  EXPECT_THROW(add_row(a, bad_row), ShapeError);
}

TEST(GradCheck, ReportsNonFinite) {
  EXPECT_THROW(grad_check([](Tape&, const Var& x) { return sum(log(x - 1.0)); }, Tensor::row({1.0}), 1e-5),
               std::exception);
}

// Each primitive against central differences over 100 random inputs.
struct PrimitiveCase {
  const char* name;
  double lo, hi;
  std::function<Var(const Var&)> op;
};

class PrimitiveGradient : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor(rng, 2, 3, c.lo, c.hi);
    const double err = grad_check([&](Tape&, const Var& v) { return sum(c.op(v)); }, x, 1e-5);
    ASSERT_LT(err, 1e-4) << c.name << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Unary, PrimitiveGradient,
    ::testing::Values(
        PrimitiveCase{"exp", -3, 3, [](const Var& x) { return exp(x); }},
        PrimitiveCase{"log", 0.1, 5, [](const Var& x) { return log(x); }},
        PrimitiveCase{"square", -3, 3, [](const Var& x) { return square(x); }},
        PrimitiveCase{"sqrt", 0.1, 5, [](const Var& x) { return sqrt(x); }},
        PrimitiveCase{"abs", 0.05, 3, [](const Var& x) { return abs(x - 1.6); }},
        PrimitiveCase{"tanh", -3, 3, [](const Var& x) { return tanh(x); }},
        PrimitiveCase{"sigmoid", -6, 6, [](const Var& x) { return sigmoid(x); }},
        PrimitiveCase{"softplus", -40, 40, [](const Var& x) { return softplus(x); }},
        PrimitiveCase{"lgamma", 0.05, 50, [](const Var& x) { return lgamma(x); }},
        PrimitiveCase{"neg_scale", -3, 3, [](const Var& x) { return scale(neg(x), 2.5) + 1.0; }},
        PrimitiveCase{"mean", -3, 3, [](const Var& x) { return mean(x * x); }},
        PrimitiveCase{"transpose", -3, 3, [](const Var& x) { return transpose(x) * transpose(x); }},
        PrimitiveCase{"sum_rows", -3, 3, [](const Var& x) { return square(sum_rows(x)); }},
        PrimitiveCase{"mean_rows", -3, 3, [](const Var& x) { return square(mean_rows(x)); }},
        PrimitiveCase{"slice_concat", -3, 3,
                      [](const Var& x) { return square(concat_cols({slice_cols(x, 2, 1), slice_cols(x, 0, 2)})); }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(BinaryGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(99);
  using Fn = std::function<Var(const std::vector<Var>&)>;
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add", [](const std::vector<Var>& v) { return square(v[0] + v[1]); }},
      {"sub", [](const std::vector<Var>& v) { return square(v[0] - v[1]); }},
      {"mul", [](const std::vector<Var>& v) { return v[0] * v[1]; }},
      {"div", [](const std::vector<Var>& v) { return v[0] / v[1]; }},
  };
  for (const auto& [name, fn] : cases) {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Tensor> in{random_tensor(rng, 2, 3, -2, 2), random_tensor(rng, 2, 3, 0.5, 3)};
      const double err = grad_check([&](Tape&, const std::vector<Var>& v) { return sum(fn(v)); }, in, 1e-5);
      ASSERT_LT(err, 1e-4) << name;
    }
  }
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor> in{random_tensor(rng, 3, 4, -1, 1), random_tensor(rng, 4, 2, -1, 1),
                           random_tensor(rng, 1, 2, -1, 1)};
    auto f = [](Tape&, const std::vector<Var>& v) {
      Var z = add_row(matmul(v[0], v[1]), v[2]);
      return sum(tanh(mul_row(z, v[2])));
    };
    ASSERT_LT(grad_check(f, in, 1e-5), 1e-4);
  }
}
