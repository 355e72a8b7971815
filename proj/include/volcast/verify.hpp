#pragma once

// Oracle checks shared by the `verify` command and the acceptance binary.
// Every check turns exceptions into a failed entry.

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "volcast/autodiff.hpp"
#include "volcast/distributions.hpp"
#include "volcast/ensemble.hpp"
#include "volcast/network.hpp"
#include "volcast/quadrature.hpp"
#include "volcast/special.hpp"

namespace volcast::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  /// Closed-form SMD NLL under test; replaced by fixtures to prove the checks bite.
  std::function<double(double, const SMDParams&)> smd_nll = [](double y, const SMDParams& p) {
    return volcast::smd_nll(y, p);
  };
  std::size_t smd_points = 500;
  std::size_t nig_points = 100;
  std::size_t mc_ensembles = 20;
  std::size_t mc_samples = 10'000'000;
  std::uint64_t seed = 20240601;
};

namespace detail {

inline std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto [ok, detail] = body();
    r.passed = ok;
    r.detail = std::move(detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

}  // namespace detail

/// Closed-form SMD NLL against -log of the quadrature mixture density.
inline CheckResult smd_quadrature(const Options& o) {
  return detail::timed("smd_nll_vs_quadrature", [&] {
    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < o.smd_points; ++i) {
      SMDParams p;
      p.gamma = 2 * u(rng) - 1;
      p.alpha = 0.5 + 49.5 * u(rng);
      p.beta = 0.1 + 49.9 * u(rng);
      p.sigma2 = detail::log_uniform(rng, 1e-4, 10.0);
      const double y = p.gamma + (40 * u(rng) - 20) * std::sqrt(p.sigma2);
      const double oracle = -quadrature::smd_marginal_log_pdf(y, p);
      worst = std::max(worst, std::fabs(o.smd_nll(y, p) - oracle));
    }
    return std::pair{worst < 1e-6, "max |error| " + detail::sci(worst) + " over " + std::to_string(o.smd_points) +
                                       " points (tolerance 1e-6)"};
  });
}

inline CheckResult nig_quadrature(const Options& o) {
  return detail::timed("nig_nll_vs_nested_quadrature", [&] {
    std::mt19937_64 rng(o.seed + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < o.nig_points; ++i) {
      const NIGParams p{2 * u(rng) - 1, detail::log_uniform(rng, 0.05, 20.0), 0.6 + 30 * u(rng),
                        detail::log_uniform(rng, 0.01, 10.0)};
      const double scale = std::sqrt(p.beta * (1 + p.nu) / (p.nu * p.alpha));
      const double y = p.gamma + (20 * u(rng) - 10) * scale;
      worst = std::max(worst, std::fabs(nig_nll(y, p) + quadrature::nig_marginal_log_pdf(y, p)));
    }
    return std::pair{worst < 1e-5, "max |error| " + detail::sci(worst) + " over " + std::to_string(o.nig_points) +
                                       " points (tolerance 1e-5)"};
  });
}

inline CheckResult reference_values(const Options& o) {
  return detail::timed("reference_nll_values", [&] {
    const double smd_oracle = -quadrature::smd_marginal_log_pdf(0.0, {0.0, 1.0, 1.0, 1.0});
    const double nig_oracle = -quadrature::nig_marginal_log_pdf(0.0, {0.0, 1.0, 1.0000001, 0.5});
    const double smd = o.smd_nll(0.0, {0.0, 1.0, 1.0, 1.0});
    const double nig = nig_nll(0.0, {0.0, 1.0, 1.0000001, 0.5});
    const double err = std::max(std::fabs(smd - smd_oracle), std::fabs(nig - nig_oracle));
    return std::pair{err < 1e-8 && std::fabs(smd_oracle - 1.03972077) < 1e-8,
                     "smd " + std::to_string(smd) + ", nig " + std::to_string(nig) + ", oracle " +
                         std::to_string(smd_oracle)};
  });
}

inline CheckResult tied_equals_ptvii(const Options& o) {
  return detail::timed("tied_smd_equals_ptvii", [&] {
    std::mt19937_64 rng(o.seed + 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double a = 1.001 + 30 * u(rng), s2 = 0.01 + 3 * u(rng), g = u(rng) - 0.5, y = 4 * u(rng) - 2;
      worst = std::max(worst, std::fabs(o.smd_nll(y, {g, s2, a, a}) - ptvii_nll(y, g, s2, a)));
    }
    return std::pair{worst < 1e-12, "max |difference| " + detail::sci(worst)};
  });
}

inline CheckResult smd_rescaling(const Options& o) {
  return detail::timed("smd_scale_redundancy", [&] {
    std::mt19937_64 rng(o.seed + 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const SMDParams p{u(rng) - 0.5, 0.01 + 2 * u(rng), 1.01 + 10 * u(rng), 0.1 + 5 * u(rng)};
      const double k = std::exp(6 * u(rng) - 3), y = 2 * u(rng) - 1;
      worst = std::max(worst, std::fabs(o.smd_nll(y, p) - o.smd_nll(y, {p.gamma, k * p.sigma2, p.alpha, p.beta / k})));
    }
    return std::pair{worst < 1e-12, "max |difference| under (sigma2, beta) -> (k sigma2, beta / k): " + detail::sci(worst)};
  });
}

inline CheckResult loss_gradients(const Options& o) {
  return detail::timed("loss_gradients", [&] {
    using ad::Var;
    auto one = [](double v) { return Tensor::matrix(1, 1, v); };
    auto gaussian = [](ad::Tape&, const std::vector<Var>& v) { return ad::sum(expr::gaussian_nll(v[0], v[1], v[2])); };
    auto nig = [](ad::Tape&, const std::vector<Var>& v) { return ad::sum(expr::nig_nll(v[0], v[1], v[2], v[3], v[4])); };
    auto smd = [](ad::Tape&, const std::vector<Var>& v) { return ad::sum(expr::smd_nll(v[0], v[1], v[2], v[3], v[4])); };
    double worst = 0.0;
    worst = std::max(worst, ad::grad_check(smd, {one(0.3), one(0.1), one(0.5), one(2.0), one(1.5)}, 1e-5));
    worst = std::max(worst, ad::grad_check(nig, {one(0.3), one(0.1), one(2.0), one(2.0), one(1.5)}, 1e-5));
    std::mt19937_64 rng(o.seed + 4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      worst = std::max(worst, ad::grad_check(gaussian, {one(2 * u(rng) - 1), one(2 * u(rng) - 1), one(0.1 + 2 * u(rng))}, 1e-5));
      worst = std::max(worst, ad::grad_check(smd, {one(2 * u(rng) - 1), one(2 * u(rng) - 1), one(0.1 + 2 * u(rng)),
                                                   one(1.05 + 5 * u(rng)), one(0.1 + 3 * u(rng))},
                                             1e-5));
      worst = std::max(worst, ad::grad_check(nig, {one(2 * u(rng) - 1), one(2 * u(rng) - 1), one(0.1 + 3 * u(rng)),
                                                   one(1.05 + 5 * u(rng)), one(0.1 + 3 * u(rng))},
                                             1e-5));
    }
    return std::pair{worst < 1e-4, "max relative error " + detail::sci(worst) + " (tolerance 1e-4)"};
  });
}

inline CheckResult network_gradients(const Options& o) {
  return detail::timed("network_end_to_end_gradient", [&] {
    double worst = 0.0;
    for (Head head : {Head::gaussian, Head::nig, Head::smd}) {
      for (HeadMode mode : {HeadMode::single_layer, HeadMode::subnetworks}) {
        ModelConfig c;
        c.head = head;
        c.head_mode = mode;
        c.lstm_units = {2, 2};
        c.trunk_hidden = {2};
        c.subnet_hidden = {2};
        c.window_len = 3;
        Forecaster model(c, o.seed);
        std::mt19937_64 rng(o.seed + 5);
        std::normal_distribution<double> z(0.0, 1.0);
        Tensor x({4, 3, 2}, 0.0);
        for (auto& v : x.values()) v = z(rng);
        Tensor y = Tensor::matrix(4, 1);
        for (auto& v : y.values()) v = z(rng);
        std::vector<Tensor> inputs;
        for (const auto& p : model.parameters()) inputs.push_back(p.value);
        auto loss = [&](ad::Tape& tape, const std::vector<ad::Var>& vars) {
          std::mt19937_64 mask(o.seed + 6);
          return batch_loss(model.forward(tape, vars, x, true, &mask), tape.leaf(y), head == Head::nig ? 0.01 : 0.0);
        };
        worst = std::max(worst, ad::grad_check(loss, inputs, 1e-5));
      }
    }
    return std::pair{worst < 1e-3, "max relative error " + detail::sci(worst) + " over 6 head layouts (tolerance 1e-3)"};
  });
}

inline CheckResult digamma_accuracy(const Options&) {
  return detail::timed("digamma_vs_lgamma_differences", [] {
    double worst = 0.0;
    for (double x = 0.01; x < 1e6; x *= 1.37) {
      const long double h = 1e-6L * std::max(1.0L, static_cast<long double>(x));
      const long double fd = (std::lgamma(x + h) - std::lgamma(x - h)) / (2 * h);
      worst = std::max(worst, std::fabs(digamma(x) - static_cast<double>(fd)) / std::max(1.0, std::fabs(digamma(x))));
    }
    return std::pair{worst < 1e-6, "max relative deviation from central differences " + detail::sci(worst)};
  });
}

inline CheckResult smd_decomposition(const Options& o) {
  return detail::timed("smd_decomposition_identity", [&] {
    std::mt19937_64 rng(o.seed + 7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t violations = 0;
    for (int i = 0; i < 10000; ++i) {
      const SMDParams p{u(rng), std::exp(10 * u(rng) - 5), 1.0 + std::exp(8 * u(rng) - 6), std::exp(8 * u(rng) - 4)};
      const auto r = smd_decompose(p);
      if (r.aleatoric + r.epistemic != r.predictive) ++violations;
      const double ratio = r.epistemic / r.aleatoric;
      if (std::fabs(ratio * (p.alpha - 1.0) - 1.0) > 1e-12) ++violations;
    }
    const auto unit = smd_decompose({0.0, 1.0, 2.0, 1.0});
    const bool ok = violations == 0 && unit.aleatoric == 0.5 && unit.epistemic == 0.5 && unit.predictive == 1.0;
    return std::pair{ok, std::to_string(violations) + " violations of aleatoric + epistemic == predictive in 10000 draws"};
  });
}

inline CheckResult nig_decomposition(const Options& o) {
  return detail::timed("nig_decomposition", [&] {
    const auto even = nig_decompose({0.0, 1.0, 2.0, 1.0});
    bool ok = even.aleatoric == 1.0 && even.epistemic == 1.0 && even.predictive == 2.0;
    std::mt19937_64 rng(o.seed + 8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const NIGParams p{u(rng), std::exp(6 * u(rng) - 3), 1.0 + std::exp(6 * u(rng) - 4), std::exp(6 * u(rng) - 3)};
      const auto r = nig_decompose(p);
      const double closed = p.beta * (1 + p.nu) / (p.nu * (p.alpha - 1));
      worst = std::max(worst, std::fabs(r.predictive - closed) / closed);
      if (r.aleatoric < 0 || r.epistemic < 0) ok = false;
    }
    return std::pair{ok && worst < 1e-12, "even split at nu = 1: " + std::string(ok ? "yes" : "no") +
                                              "; max relative deviation from beta(1+nu)/(nu(alpha-1)) " + detail::sci(worst)};
  });
}

/// Mixture variance against Monte Carlo draws from the equal-weight mixture.
inline CheckResult ensemble_monte_carlo(const Options& o) {
  return detail::timed("ensemble_variance_monte_carlo", [&] {
    std::mt19937_64 rng(o.seed + 9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t e = 0; e < o.mc_ensembles; ++e) {
      std::vector<MemberForecast> members(5);
      for (auto& m : members) m = {2 * u(rng) - 1, 0.05 + u(rng)};
      const auto pred = ensemble_predict(members);
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      std::normal_distribution<double> z(0.0, 1.0);
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < o.mc_samples; ++i) {
        const auto& m = members[pick(rng)];
        const double y = m.mean + std::sqrt(m.variance) * z(rng);
        s += y;
        s2 += y * y;
      }
      const double n = static_cast<double>(o.mc_samples);
      const double mc = s2 / n - (s / n) * (s / n);
      worst = std::max(worst, std::fabs(mc / pred.predictive_variance - 1.0));
    }
    return std::pair{worst < 0.01, "max relative deviation " + detail::sci(worst) + " over " +
                                       std::to_string(o.mc_ensembles) + " ensembles of 5 (tolerance 1%)"};
  });
}

inline CheckResult ensemble_identities(const Options& o) {
  return detail::timed("ensemble_collapse_and_jensen_gap", [&] {
    std::mt19937_64 rng(o.seed + 10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bool ok = true;
    double worst_gap = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const MemberForecast single{u(rng) - 0.5, u(rng)};
      const auto one = ensemble_predict({single});
      ok &= one.mean == single.mean && one.predictive_variance == single.variance;
      std::vector<MemberForecast> members(1 + i % 7);
      for (auto& m : members) m = {4 * u(rng) - 2, u(rng)};
      const auto e = ensemble_predict(members);
      double mean_var = 0.0, pop = 0.0;
      for (const auto& m : members) mean_var += m.variance;
      mean_var /= static_cast<double>(members.size());
      for (const auto& m : members) pop += (m.mean - e.mean) * (m.mean - e.mean);
      pop /= static_cast<double>(members.size());
      worst_gap = std::max(worst_gap, std::fabs(e.predictive_variance - mean_var - pop));
    }
    const auto pair = ensemble_predict({{1.0, 0.0}, {-1.0, 0.0}});
    ok &= pair.mean == 0.0 && pair.predictive_variance == 1.0;
    return std::pair{ok && worst_gap < 1e-12,
                     std::string("M=1 collapse ") + (ok ? "exact" : "broken") + "; Jensen gap error " + detail::sci(worst_gap)};
  });
}

inline CheckResult mixture_bound(const Options& o) {
  return detail::timed("mixture_nll_bound", [&] {
    std::mt19937_64 rng(o.seed + 11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t violations = 0;
    for (int i = 0; i < 2000; ++i) {
      std::vector<DistributionParams> members;
      const std::size_t m = 1 + i % 6;
      double mean_nll = 0.0;
      const double y = 4 * u(rng) - 2;
      for (std::size_t k = 0; k < m; ++k) {
        DistributionParams p = SMDParams{u(rng) - 0.5, 0.05 + u(rng), 1.1 + 5 * u(rng), 0.1 + 2 * u(rng)};
        members.push_back(p);
        mean_nll += nll(y, p);
      }
      mean_nll /= static_cast<double>(m);
      if (ensemble_nll(y, members) > mean_nll + std::log(static_cast<double>(m)) + 1e-12) ++violations;
    }
    return std::pair{violations == 0, std::to_string(violations) + " violations of nll <= mean member nll + log M"};
  });
}

inline std::vector<CheckResult> run_all(const Options& o = {}) {
  return {smd_quadrature(o),    nig_quadrature(o),   reference_values(o),    tied_equals_ptvii(o),
          smd_rescaling(o),     loss_gradients(o),   network_gradients(o),   digamma_accuracy(o),
          smd_decomposition(o), nig_decomposition(o), ensemble_monte_carlo(o), ensemble_identities(o),
          mixture_bound(o)};
}

}  // namespace volcast::verify
