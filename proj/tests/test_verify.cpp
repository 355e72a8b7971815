#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "volcast/verify.hpp"

using namespace volcast;

namespace {

verify::Options fast() {
  verify::Options o;
  o.mc_ensembles = 3;
  o.mc_samples = 400'000;
  return o;
}

// SMD NLL with log(pi) in place of log(2 pi).
double corrupted_smd_nll(double y, const SMDParams& p) {
  return smd_nll(y, p) - 0.5 * std::log(2.0);
}

}  // namespace

TEST(Verify, EveryCheckPasses) {
  for (const auto& r : verify::run_all(fast())) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(Verify, CheckNamesAreUnique) {
  const auto results = verify::run_all(fast());
  EXPECT_GE(results.size(), 10u);
  std::set<std::string> names;
  for (const auto& r : results) names.insert(r.name);
  EXPECT_EQ(names.size(), results.size());
}

TEST(Verify, CorruptedConstantIsCaught) {
  verify::Options o = fast();
  o.smd_nll = corrupted_smd_nll;
  EXPECT_FALSE(verify::smd_quadrature(o).passed);
  EXPECT_FALSE(verify::reference_values(o).passed);
}

TEST(Verify, CorruptedTailExponentIsCaught) {
  verify::Options o = fast();
  o.smd_nll = [](double y, const SMDParams& p) {
    SMDParams q = p;
    q.alpha = p.alpha + 1e-3;
    return smd_nll(y, q);
  };
  EXPECT_FALSE(verify::smd_quadrature(o).passed);
}

TEST(Verify, ThrowingImplementationBecomesAFailedEntry) {
  verify::Options o = fast();
  o.smd_nll = [](double, const SMDParams&) -> double { throw OracleError("did not converge"); };
  const auto r = verify::smd_quadrature(o);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.detail.find("did not converge"), std::string::npos);
}
