#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "volcast/distributions.hpp"
#include "volcast/error.hpp"

namespace volcast {

struct MemberForecast {
  double mean = 0.0;
  double variance = 0.0;
};

struct EnsemblePrediction {
  double mean = 0.0;
  double predictive_variance = 0.0;
  std::vector<double> member_means;
  std::vector<double> member_variances;

  /// Population variance of the member means.
  double disagreement() const {
    double d = 0.0;
    for (double m : member_means) d += (m - mean) * (m - mean);
    return d / static_cast<double>(member_means.size());
  }
};

/// Equal-weight mixture moments: mean(y_i) and mean(y_i^2 + Var_i) - mean^2.
/// The variance is accumulated as mean(Var_i) plus the spread of the member
/// means about their average, which is the same quantity without the
/// cancellation of the raw second-moment form and is exact at M = 1.
inline EnsemblePrediction ensemble_predict(const std::vector<MemberForecast>& members) {
  if (members.empty()) throw ContractError("ensemble_predict needs at least one member");
  EnsemblePrediction e;
  const double m = static_cast<double>(members.size());
  double mean = 0.0, mean_var = 0.0;
  for (const auto& f : members) {
    if (!(f.variance >= 0.0) || !std::isfinite(f.mean)) throw DomainError("member variance must be non-negative");
    mean += f.mean;
    mean_var += f.variance;
    e.member_means.push_back(f.mean);
    e.member_variances.push_back(f.variance);
  }
  e.mean = mean / m;
  e.predictive_variance = mean_var / m + e.disagreement();
  return e;
}

/// Mean aleatoric and epistemic parts across members, with the spread of
/// member predictions counted as epistemic. Sums to the mixture variance.
inline UncertaintyReport ensemble_decompose(const std::vector<UncertaintyReport>& members) {
  if (members.empty()) throw ContractError("ensemble_decompose needs at least one member");
  std::vector<MemberForecast> f;
  double aleatoric = 0.0, epistemic = 0.0;
  for (const auto& r : members) {
    f.push_back({r.prediction, r.predictive});
    aleatoric += r.aleatoric;
    epistemic += r.epistemic;
  }
  const auto e = ensemble_predict(f);
  const double m = static_cast<double>(members.size());
  UncertaintyReport out;
  out.prediction = e.mean;
  out.aleatoric = aleatoric / m;
  out.epistemic = epistemic / m + e.disagreement();
  out.predictive = e.predictive_variance;
  return out;
}

/// Log predictive density of one member: Gaussian, or the Student-t marginal of the NIG/SMD head.
inline double member_log_density(double y, const DistributionParams& p) {
  return -nll(y, p);
}

/// -log of the equal-weight mixture density, by log-sum-exp.
inline double ensemble_nll(double y, const std::vector<DistributionParams>& members) {
  if (members.empty()) throw ContractError("ensemble_nll needs at least one member");
  std::vector<double> logs;
  logs.reserve(members.size());
  for (const auto& p : members) logs.push_back(member_log_density(y, p));
  const double top = *std::max_element(logs.begin(), logs.end());
  if (!std::isfinite(top)) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (double l : logs) s += std::exp(l - top);
  return -(top + std::log(s / static_cast<double>(members.size())));
}

/// NLL of a single Gaussian with the ensemble's mean and variance.
inline double moment_matched_nll(double y, const EnsemblePrediction& e) {
  return gaussian_nll(y, {e.mean, e.predictive_variance});
}

}  // namespace volcast
