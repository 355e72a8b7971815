#pragma once

// Numerical marginalisation of the NIG and scale-mixture hierarchies. These
// integrate the generative model directly and never touch the closed-form
// t densities, so they serve as independent oracles for the NLLs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "volcast/distributions.hpp"
#include "volcast/error.hpp"

namespace volcast::quadrature {

struct TrapezoidOptions {
  double initial_step = 0.25;
  double rel_tol = 1e-8;      ///< max relative change between successive halvings
  double tail_log_drop = 42;  ///< truncate where the integrand is e^-42 below its peak
  int min_levels = 3;
  int max_levels = 14;
};

/// log of the integral over the whole real line of exp(log_f(x)).
///
/// log_f must be unimodal (or nearly so) with tails that decay at least
/// exponentially. The support is found by walking outward from `center`,
/// then the trapezoid rule is refined by halving the step. For smooth
/// integrands with fast-decaying tails the trapezoid rule on the full line
/// converges geometrically in the number of nodes.
inline double log_integrate_line(const std::function<double(double)>& log_f, double center,
                                 const TrapezoidOptions& opt = {}) {
  const double h0 = opt.initial_step;
  double peak = log_f(center);
  if (std::isnan(peak)) throw OracleError("integrand is NaN at the starting point");

  // Walk outward until the integrand is negligible relative to the largest value seen.
  auto walk = [&](double direction) {
    double x = center;
    for (int i = 0; i < 100000; ++i) {
      x += direction * h0;
      const double v = log_f(x);
      if (std::isnan(v)) throw OracleError("integrand is NaN at x = " + std::to_string(x));
      peak = std::max(peak, v);
      if (v < peak - opt.tail_log_drop) return x;
    }
    throw OracleError("integrand tail does not decay");
  };
  const double hi = walk(+1.0);
  const double lo = walk(-1.0);
  if (!std::isfinite(peak)) throw OracleError("integrand has no finite mass");

  auto term = [&](double x) { return std::exp(log_f(x) - peak); };

  const double width = hi - lo;
  std::size_t n = static_cast<std::size_t>(std::ceil(width / h0));
  double h = width / static_cast<double>(n);
  double sum = 0.5 * (term(lo) + term(hi));
  for (std::size_t i = 1; i < n; ++i) sum += term(lo + h * static_cast<double>(i));
  double estimate = sum * h;

  for (int level = 1; level <= opt.max_levels; ++level) {
    // Add the midpoints of the previous grid.
    for (std::size_t i = 0; i < n; ++i) sum += term(lo + h * (static_cast<double>(i) + 0.5));
    n *= 2;
    h *= 0.5;
    const double refined = sum * h;
    const double change = std::fabs(refined - estimate) / std::max(std::fabs(refined), 1e-300);
    estimate = refined;
    if (level >= opt.min_levels && change < opt.rel_tol) return peak + std::log(estimate);
  }
  throw OracleError("quadrature did not converge to relative tolerance " + std::to_string(opt.rel_tol));
}

/// log p(y) for y | nu ~ N(gamma, sigma^2 / nu), nu ~ Gamma(alpha, beta), integrated over nu.
///
/// Works in s = log nu so the Gamma shape's power singularity at 0 becomes an
/// exponential tail. Accepts alpha > 0.
inline double smd_marginal_log_pdf(double y, const SMDParams& p, const TrapezoidOptions& opt = {}) {
  p.validate(AlphaFloor::density);
  const double d2 = (y - p.gamma) * (y - p.gamma);
  const double log_gamma_norm = p.alpha * std::log(p.beta) - std::lgamma(p.alpha);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  auto log_integrand = [&](double s) {
    const double nu = std::exp(s);
    const double variance = p.sigma2 / nu;
    const double log_normal = -0.5 * (log_2pi + std::log(variance)) - 0.5 * d2 / variance;
    const double log_gamma_pdf = log_gamma_norm + (p.alpha - 1.0) * s - p.beta * nu;
    return log_normal + log_gamma_pdf + s;  // d nu = nu ds
  };
  // Rough mode of the posterior over nu.
  const double center = std::log((p.alpha + 0.5) / (p.beta + 0.5 * d2 / p.sigma2));
  return log_integrate_line(log_integrand, center, opt);
}

/// log p(y) for y ~ N(mu, sigma^2), mu ~ N(gamma, sigma^2 / nu), sigma^2 ~ IG(alpha, beta).
///
/// Nested quadrature: the inner integral over mu for each sigma^2, the outer
/// over s = log sigma^2.
inline double nig_marginal_log_pdf(double y, const NIGParams& p, const TrapezoidOptions& opt = {}) {
  p.validate(AlphaFloor::density);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const double log_ig_norm = p.alpha * std::log(p.beta) - std::lgamma(p.alpha);
  TrapezoidOptions inner_opt = opt;
  inner_opt.rel_tol = std::min(opt.rel_tol, 1e-10);
  inner_opt.initial_step = 0.5;

  auto log_outer = [&](double s) {
    const double sigma2 = std::exp(s);
    const double sd = std::sqrt(sigma2 / (1.0 + p.nu));
    const double mu_center = (y + p.nu * p.gamma) / (1.0 + p.nu);
    // Inner variable is standardised: mu = mu_center + sd * u.
    auto log_inner = [&](double u) {
      const double mu = mu_center + sd * u;
      const double data = -0.5 * (log_2pi + s) - 0.5 * (y - mu) * (y - mu) / sigma2;
      const double prior_var = sigma2 / p.nu;
      const double prior = -0.5 * (log_2pi + std::log(prior_var)) - 0.5 * (mu - p.gamma) * (mu - p.gamma) / prior_var;
      return data + prior + std::log(sd);
    };
    const double inner = log_integrate_line(log_inner, 0.0, inner_opt);
    // IG density in sigma^2 times the Jacobian sigma^2.
    const double log_ig = log_ig_norm - (p.alpha + 1.0) * s - p.beta / sigma2;
    return inner + log_ig + s;
  };
  const double d2 = (y - p.gamma) * (y - p.gamma);
  const double center = std::log((p.beta + 0.5 * d2 * p.nu / (1.0 + p.nu)) / (p.alpha + 0.5));
  return log_integrate_line(log_outer, center, opt);
}

/// Marginal density of y under the head's hierarchy, by quadrature.
inline double marginal_pdf_oracle(const DistributionParams& params, double y, const TrapezoidOptions& opt = {}) {
  return std::visit(
      [&](const auto& q) -> double {
        using P = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<P, GaussianParams>) {
          q.validate();
          return std::exp(-gaussian_nll(y, q));
        } else if constexpr (std::is_same_v<P, NIGParams>) {
          return std::exp(nig_marginal_log_pdf(y, q, opt));
        } else {
          return std::exp(smd_marginal_log_pdf(y, q, opt));
        }
      },
      params);
}

}  // namespace volcast::quadrature
