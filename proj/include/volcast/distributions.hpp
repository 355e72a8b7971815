#pragma once

// Predictive heads: Gaussian, Normal-Inverse-Gamma (evidential) and the
// Gamma scale mixture of normals (SMD). Each NLL is written once as a
// template so the same expression serves plain doubles and autodiff Vars.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "volcast/autodiff.hpp"
#include "volcast/error.hpp"
#include "volcast/special.hpp"

namespace volcast {

enum class Head { gaussian, nig, smd };

inline std::string_view to_string(Head h) {
  switch (h) {
    case Head::gaussian: return "gaussian";
    case Head::nig: return "nig";
    case Head::smd: return "smd";
  }
  return "?";
}

inline Head parse_head(std::string_view s) {
  if (s == "gaussian") return Head::gaussian;
  if (s == "nig") return Head::nig;
  if (s == "smd") return Head::smd;
  throw ConfigError("unknown head '" + std::string(s) + "' (expected gaussian, nig or smd)");
}

/// Lower bound applied to alpha when validating parameters.
///  - finite_variance: alpha > 1, required wherever a variance is reported and
///    guaranteed by the network's constraint layer.
///  - density: alpha > 0, enough for the marginal density to exist; used by the
///    NLLs and the quadrature oracle so limit cases (alpha = 1) can be scored.
enum class AlphaFloor { finite_variance, density };

namespace detail {

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw DomainError(std::string(what) + " must be positive and finite, got " + std::to_string(v));
  }
}

inline void require_alpha(double alpha, AlphaFloor floor) {
  if (floor == AlphaFloor::finite_variance) {
    if (!(alpha > 1.0) || !std::isfinite(alpha)) {
      throw DomainError("alpha must exceed 1 for a finite variance, got " + std::to_string(alpha));
    }
  } else {
    require_positive(alpha, "alpha");
  }
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string(what) + " must be finite");
}

}  // namespace detail

struct GaussianParams {
  double mu = 0.0;
  double sigma2 = 1.0;

  void validate() const {
    detail::require_finite(mu, "mu");
    detail::require_positive(sigma2, "sigma2");
  }
};

struct NIGParams {
  double gamma = 0.0;
  double nu = 1.0;
  double alpha = 2.0;
  double beta = 1.0;

  void validate(AlphaFloor floor = AlphaFloor::finite_variance) const {
    detail::require_finite(gamma, "gamma");
    detail::require_positive(nu, "nu");
    detail::require_alpha(alpha, floor);
    detail::require_positive(beta, "beta");
  }
};

struct SMDParams {
  double gamma = 0.0;
  double sigma2 = 1.0;
  double alpha = 2.0;
  double beta = 1.0;
  bool tied = false;  ///< alpha == beta is enforced

  void validate(AlphaFloor floor = AlphaFloor::finite_variance) const {
    detail::require_finite(gamma, "gamma");
    detail::require_positive(sigma2, "sigma2");
    detail::require_alpha(alpha, floor);
    detail::require_positive(beta, "beta");
    if (tied && alpha != beta) throw DomainError("tied SMD parameters need alpha == beta");
  }
};

using DistributionParams = std::variant<GaussianParams, NIGParams, SMDParams>;

inline Head head_of(const DistributionParams& p) {
  return static_cast<Head>(p.index());
}

struct UncertaintyReport {
  double prediction = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
  double predictive = 0.0;
  /// NIG only: Var[mu | sigma^2] ~ beta / (nu alpha), uses E[sigma^2] ~ 1/E[sigma^-2].
  std::optional<double> mu_uncertainty_approx;
  /// NIG only: Var[mu] - Var[mu | sigma^2] ~ beta / (nu alpha (alpha - 1)).
  std::optional<double> sigma2_uncertainty_approx;
};

// ---- NLL expressions (double or ad::Var) --------------------------------------------

inline double square(double x) { return x * x; }

namespace expr {

using std::abs;
using std::lgamma;
using std::log;

template <class T>
T gaussian_nll(const T& y, const T& mu, const T& sigma2) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  return 0.5 * (log(sigma2) + log_2pi) + square(y - mu) / (sigma2 * 2.0);
}

template <class T>
T nig_nll(const T& y, const T& gamma, const T& nu, const T& alpha, const T& beta) {
  const double log_pi = std::log(std::numbers::pi);
  const T omega = beta * (nu + 1.0) * 2.0;
  return 0.5 * (log_pi - log(nu)) - alpha * log(omega) +
         (alpha + 0.5) * log(square(y - gamma) * nu + omega) + lgamma(alpha) - lgamma(alpha + 0.5);
}

template <class T>
T smd_nll(const T& y, const T& gamma, const T& sigma2, const T& alpha, const T& beta) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const T scale = sigma2 * beta;
  return lgamma(alpha) - lgamma(alpha + 0.5) + 0.5 * (log(scale) + log_2pi) +
         (alpha + 0.5) * log(square(y - gamma) / (scale * 2.0) + 1.0);
}

/// SMD with beta := alpha, i.e. a Student-t with 2 alpha degrees of freedom and scale sigma^2.
template <class T>
T ptvii_nll(const T& y, const T& gamma, const T& sigma2, const T& alpha) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const T scale = sigma2 * alpha;
  return lgamma(alpha) - lgamma(alpha + 0.5) + 0.5 * (log(scale) + log_2pi) +
         (alpha + 0.5) * log(square(y - gamma) / (scale * 2.0) + 1.0);
}

/// Total-evidence penalty |y - gamma| (nu + 2 alpha).
template <class T>
T evidential_regularizer(const T& y, const T& gamma, const T& nu, const T& alpha) {
  return abs(y - gamma) * (nu + alpha * 2.0);
}

}  // namespace expr

// ---- scalar API ----------------------------------------------------------------------------

inline double gaussian_nll(double y, const GaussianParams& p) {
  detail::require_finite(y, "y");
  p.validate();
  return expr::gaussian_nll(y, p.mu, p.sigma2);
}

inline double nig_nll(double y, const NIGParams& p) {
  detail::require_finite(y, "y");
  p.validate(AlphaFloor::density);
  return expr::nig_nll(y, p.gamma, p.nu, p.alpha, p.beta);
}

inline double smd_nll(double y, const SMDParams& p) {
  detail::require_finite(y, "y");
  p.validate(AlphaFloor::density);
  return expr::smd_nll(y, p.gamma, p.sigma2, p.alpha, p.beta);
}

inline double ptvii_nll(double y, double gamma, double sigma2, double alpha) {
  detail::require_finite(y, "y");
  SMDParams{gamma, sigma2, alpha, alpha, true}.validate(AlphaFloor::density);
  return expr::ptvii_nll(y, gamma, sigma2, alpha);
}

inline double evidential_regularizer(double y, const NIGParams& p) {
  detail::require_finite(y, "y");
  p.validate(AlphaFloor::density);
  return expr::evidential_regularizer(y, p.gamma, p.nu, p.alpha);
}

/// Negative log predictive density of any head.
inline double nll(double y, const DistributionParams& p) {
  return std::visit(
      [y](const auto& q) -> double {
        using P = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<P, GaussianParams>) return gaussian_nll(y, q);
        else if constexpr (std::is_same_v<P, NIGParams>) return nig_nll(y, q);
        else return smd_nll(y, q);
      },
      p);
}

/// log density of a location-scale Student-t with squared scale `scale2` and `df` degrees of freedom.
inline double student_t_log_pdf(double y, double loc, double scale2, double df) {
  detail::require_positive(scale2, "scale2");
  detail::require_positive(df, "df");
  const double z2 = (y - loc) * (y - loc) / scale2;
  return std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
         0.5 * std::log(df * std::numbers::pi * scale2) - 0.5 * (df + 1.0) * std::log1p(z2 / df);
}

/// Marginal of y under the NIG hierarchy: t(gamma, beta (1 + nu) / (nu alpha), 2 alpha).
inline double nig_marginal_pdf(double y, const NIGParams& p) {
  p.validate(AlphaFloor::density);
  return std::exp(student_t_log_pdf(y, p.gamma, p.beta * (1.0 + p.nu) / (p.nu * p.alpha), 2.0 * p.alpha));
}

/// Marginal of y under the Gamma scale mixture: t(gamma, sigma^2 beta / alpha, 2 alpha).
inline double smd_marginal_pdf(double y, const SMDParams& p) {
  p.validate(AlphaFloor::density);
  return std::exp(student_t_log_pdf(y, p.gamma, p.sigma2 * p.beta / p.alpha, 2.0 * p.alpha));
}

// ---- decompositions ----------------------------------------------------------------------------

inline UncertaintyReport gaussian_decompose(const GaussianParams& p) {
  p.validate();
  return {p.mu, p.sigma2, 0.0, p.sigma2, std::nullopt, std::nullopt};
}

inline UncertaintyReport nig_decompose(const NIGParams& p) {
  p.validate(AlphaFloor::finite_variance);
  UncertaintyReport r;
  r.prediction = p.gamma;
  r.aleatoric = p.beta / (p.alpha - 1.0);
  r.epistemic = p.beta / (p.nu * (p.alpha - 1.0));
  r.predictive = r.aleatoric + r.epistemic;
  r.mu_uncertainty_approx = p.beta / (p.nu * p.alpha);
  r.sigma2_uncertainty_approx = p.beta / (p.nu * p.alpha * (p.alpha - 1.0));
  return r;
}

inline UncertaintyReport smd_decompose(const SMDParams& p) {
  p.validate(AlphaFloor::finite_variance);
  const double s = p.sigma2 * p.beta;
  UncertaintyReport r;
  r.prediction = p.gamma;
  r.aleatoric = s / p.alpha;
  r.epistemic = s / (p.alpha * (p.alpha - 1.0));
  // Summed rather than s / (alpha - 1) so the identity holds bit for bit.
  r.predictive = r.aleatoric + r.epistemic;
  return r;
}

inline UncertaintyReport decompose(const DistributionParams& p) {
  return std::visit(
      [](const auto& q) -> UncertaintyReport {
        using P = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<P, GaussianParams>) return gaussian_decompose(q);
        else if constexpr (std::is_same_v<P, NIGParams>) return nig_decompose(q);
        else return smd_decompose(q);
      },
      p);
}

}  // namespace volcast
