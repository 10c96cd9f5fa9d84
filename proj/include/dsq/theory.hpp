#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsq/topology.hpp"
#include "dsq/trace.hpp"
#include "dsq/types.hpp"

namespace dsq::theory {

// Convergence-theorem constants and admissibility conditions:
//   C0 = eta (1 - lambda_n(W))
//   C1 = alpha^2 / ((1 - alpha^2 (1+C0)^2 (1+2C0)) C0^2)
//   C2 = 3 / (eta^2 (1 - lambda_2(W))^2) + 6 C1
//   C3 = C2 L^2 / (2 - 6 C2 L^2 gamma^2)
// feasible iff eta <= min{1/2, (alpha^{-2/3} - 1)/4}, 1 - 3 C2 L^2 gamma^2 >= 0,
// gamma <= 1/L, and the C1 denominator is positive.

class InfeasibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TheoryConstants {
  double C0 = 0, C1 = 0, C2 = 0, C3 = 0;
  double lambda2_W = 0, lambdaN_W = 0;
  double alpha2 = 0, eta = 0, gamma = 0, L = 0;
  bool feasible = false;
  std::vector<std::string> violated;  // names of failed admissibility conditions
};

// eta* = min{1/2, (alpha^{-2/3} - 1)/4};  alpha = 0 returns the 1/2 limit.
inline double eta_star(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw std::domain_error("eta_star: alpha must lie in [0, 1)");
  if (alpha == 0.0) return 0.5;
  return std::min(0.5, (std::pow(alpha, -2.0 / 3.0) - 1.0) / 4.0);
}

// gamma* = 1 / (3 L sqrt(C2) + sigma sqrt(T/n) + zeta^{2/3} T^{1/3}).
inline double gamma_star(double L, double C2, double sigma, double zeta, long T,
                         long n) {
  if (!(L > 0) || C2 < 0 || sigma < 0 || zeta < 0 || T < 1 || n < 1)
    throw std::invalid_argument("gamma_star: invalid inputs");
  const double tn = static_cast<double>(T) / static_cast<double>(n);
  return 1.0 / (3.0 * L * std::sqrt(C2) + sigma * std::sqrt(tn) +
                std::pow(zeta, 2.0 / 3.0) * std::cbrt(static_cast<double>(T)));
}

inline TheoryConstants constants(double alpha2, double eta,
                                 const topology::SpectralInfo& W_spectrum, double L,
                                 double gamma) {
  if (!(std::isfinite(alpha2) && alpha2 >= 0) || !(eta > 0 && eta <= 1) ||
      !(L > 0) || !(gamma > 0))
    throw std::invalid_argument("theory::constants: invalid inputs");
  TheoryConstants c;
  c.alpha2 = alpha2;
  c.eta = eta;
  c.gamma = gamma;
  c.L = L;
  c.lambda2_W = W_spectrum.lambda2;
  c.lambdaN_W = W_spectrum.lambda_n;
  c.C0 = eta * (1.0 - c.lambdaN_W);

  const double c1_den = 1.0 - alpha2 * (1.0 + c.C0) * (1.0 + c.C0) * (1.0 + 2.0 * c.C0);
  if (alpha2 == 0.0) {
    c.C1 = 0.0;
  } else {
    if (c1_den <= 0.0)
      throw InfeasibilityError(
          "theory::constants: alpha^2 (1+C0)^2 (1+2C0) >= 1 (C1 denominator)");
    if (c.C0 == 0.0)
      throw InfeasibilityError("theory::constants: C0 = 0 with alpha > 0");
    c.C1 = alpha2 / (c1_den * c.C0 * c.C0);
  }

  const double gap = 1.0 - c.lambda2_W;
  c.C2 = 3.0 / (eta * eta * gap * gap) + 6.0 * c.C1;

  const double c3_den = 2.0 - 6.0 * c.C2 * L * L * gamma * gamma;
  if (c3_den <= 0.0)
    throw InfeasibilityError("theory::constants: 1 - 3 C2 L^2 gamma^2 <= 0 (C3 denominator)");
  c.C3 = c.C2 * L * L / c3_den;

  const double alpha = std::sqrt(alpha2);
  const double eta_cap = alpha > 0
      ? std::min(0.5, (std::pow(alpha, -2.0 / 3.0) - 1.0) / 4.0)
      : 0.5;
  if (eta > eta_cap) c.violated.push_back("eta <= min{1/2, (alpha^{-2/3}-1)/4}");
  if (1.0 - 3.0 * c.C2 * L * L * gamma * gamma < 0.0)
    c.violated.push_back("1 - 3 C2 L^2 gamma^2 >= 0");
  if (gamma > 1.0 / L) c.violated.push_back("gamma <= 1/L");
  if (c1_den <= 0.0) c.violated.push_back("alpha^2 (1+C0)^2 (1+2C0) < 1");
  c.feasible = c.violated.empty();
  return c;
}

// Per-term damping of the history compression error ||Delta_s||_F^2:
// ((1-lambda_n(W)) eta)^4 for DeepSqueeze, squared for the one-factor scheme,
// 1 for undamped model-difference sharing.
struct ContractionFactors {
  double deep = 0, choco = 0, dcd = 1;
};

inline ContractionFactors contraction_factors(const topology::SpectralInfo& W_spectrum,
                                              double eta) {
  const double c = eta * (1.0 - W_spectrum.lambda_n);
  return {c * c * c * c, c * c, 1.0};
}

// The same compression constants parametrized in the spectrum of W_eff;
// equals C1/C2 via 1 - lambda_n(W_eff) = C0.
inline double lemma_c4(double alpha2, double lambdaN_eff) {
  const double a = 2.0 - lambdaN_eff;
  const double b = 3.0 - 2.0 * lambdaN_eff;
  const double den = (1.0 - alpha2 * a * a * b) * (1.0 - lambdaN_eff) * (1.0 - lambdaN_eff);
  if (alpha2 == 0.0) return 0.0;
  if (den <= 0.0) throw InfeasibilityError("lemma_c4: nonpositive denominator");
  return alpha2 / den;
}

inline double lemma_c5(double alpha2, double lambda2_eff, double lambdaN_eff) {
  const double gap = 1.0 - lambda2_eff;
  return 3.0 / (gap * gap) + 6.0 * lemma_c4(alpha2, lambdaN_eff);
}

struct MonitorCheck {
  bool checked = false;
  bool passed = false;
  double lhs = 0, rhs = 0;
  long worst_t = -1;        // per-step checks: step with the smallest margin
  std::string skip_reason;  // non-empty when not checked
};

struct MonitorReport {
  MonitorCheck compress_error;          // sum ||Delta_t(W_eff-I)||^2 <= C4 g^2 sum ||G_t||^2
  MonitorCheck consensus_bound;         // sum ||X_t(I-A)||^2 <= lemma bound
  MonitorCheck gradient_decomposition;  // per-t ||G_t||^2 decomposition
  double c4 = 0, c5 = 0;
  double alpha2_pathwise = 0;
  double zeta2_max = 0;
  std::string skip_reason;  // non-empty when the whole monitor is skipped

  bool all_passed() const {
    const auto ok = [](const MonitorCheck& m) { return !m.checked || m.passed; };
    return skip_reason.empty() && compress_error.checked && ok(compress_error) &&
           ok(consensus_bound) && ok(gradient_decomposition);
  }
};

// Pathwise gradient-norm decomposition at every step:
//   ||G_t||_F^2 <= n sigma^2 + 3 L^2 ||X_t(I-A)||_F^2 + 3 n zeta_t^2
//                  + 3 n ||grad f(x_bar_t)||^2
// with sigma = 0 under the monitor preconditions and zeta_t measured at the
// iterate mean.
inline MonitorCheck gradient_decomposition_check(const RunArtifacts& art, double L) {
  MonitorCheck check;
  check.checked = true;
  check.passed = true;
  const double n = static_cast<double>(art.n);
  double worst_margin = std::numeric_limits<double>::infinity();
  for (long t = 0; t < art.steps; ++t) {
    const auto u = static_cast<std::size_t>(t);
    const double lhs = art.grad_fro2[u];
    const double rhs = 3.0 * L * L * art.consensus2[u] + 3.0 * n * art.zeta2_at_mean[u] +
                       3.0 * n * art.mean_grad_norm2[u];
    const double margin = rhs - lhs;
    if (margin < worst_margin) {
      worst_margin = margin;
      check.worst_t = t;
      check.lhs = lhs;
      check.rhs = rhs;
    }
    if (lhs > rhs * (1.0 + 1e-9) + 1e-12) check.passed = false;
  }
  return check;
}

// Runs the pathwise lemma monitors on recorded artifacts.  The bounds are
// asserted only for deterministic compressors with exact full-batch
// gradients and constant gamma, where they must hold along the realized
// path; on other runs both sides are still computed and reported with
// checked = false, so they can be logged without being asserted.
inline MonitorReport lemma_monitor(const RunArtifacts& art, double L) {
  MonitorReport report;
  if (art.steps < 1) {
    report.skip_reason = "skipped: empty run";
    return report;
  }
  if (!art.deterministic_compressor)
    report.skip_reason = "not asserted: precondition (stochastic compressor)";
  else if (!art.noise_free || !art.full_batch)
    report.skip_reason = "not asserted: precondition (stochastic gradients)";
  else if (!art.constant_gamma)
    report.skip_reason = "not asserted: precondition (gamma not constant)";

  report.alpha2_pathwise = art.max_compress_ratio2;
  const double ln = art.lambdaN_eff;
  const double cond = (2.0 - ln) * (2.0 - ln) * (3.0 - 2.0 * ln);
  const bool spectral_ok =
      report.alpha2_pathwise == 0 || cond <= 1.0 / report.alpha2_pathwise;
  if (spectral_ok) {
    report.c4 = lemma_c4(report.alpha2_pathwise, ln);
    report.c5 = lemma_c5(report.alpha2_pathwise, art.lambda2_eff, ln);
  } else if (report.skip_reason.empty()) {
    report.skip_reason =
        "skipped: precondition (2-lambda_n)^2 (3-2 lambda_n) > 1/alpha^2";
  }
  for (long t = 0; t < art.steps; ++t)
    report.zeta2_max = std::max(report.zeta2_max,
                                art.zeta2_at_mean[static_cast<std::size_t>(t)]);

  double sum_err = 0, sum_grad = 0, sum_cons = 0, sum_mean_grad = 0;
  for (long t = 0; t < art.steps; ++t) {
    const auto u = static_cast<std::size_t>(t);
    sum_err += art.err_weff_fro2[u];
    sum_grad += art.grad_fro2[u];
    sum_cons += art.consensus2[u];
    sum_mean_grad += art.mean_grad_norm2[u];
  }

  const bool assertable = report.skip_reason.empty();

  report.compress_error.lhs = sum_err;
  if (spectral_ok) {
    report.compress_error.rhs = report.c4 * art.gamma * art.gamma * sum_grad;
    report.compress_error.passed =
        report.compress_error.lhs <= report.compress_error.rhs * (1.0 + 1e-9) + 1e-12;
    report.compress_error.checked = assertable;
  }
  if (!assertable) report.compress_error.skip_reason = report.skip_reason;

  const double n = static_cast<double>(art.n);
  const double g2 = art.gamma * art.gamma;
  const double den = spectral_ok ? 1.0 - 3.0 * report.c5 * L * L * g2 : 0.0;
  report.consensus_bound.lhs = sum_cons;
  if (spectral_ok && den > 0.0) {
    const double T = static_cast<double>(art.steps);
    report.consensus_bound.rhs =
        (3.0 * n * report.c5 * g2 * report.zeta2_max * T +
         3.0 * n * report.c5 * g2 * sum_mean_grad) / den;
    report.consensus_bound.passed =
        report.consensus_bound.lhs <= report.consensus_bound.rhs * (1.0 + 1e-9) + 1e-12;
    report.consensus_bound.checked = assertable;
  } else if (spectral_ok) {
    report.consensus_bound.skip_reason = "skipped: 1 - 3 C5 L^2 gamma^2 <= 0";
  }
  if (!assertable) report.consensus_bound.skip_reason = report.skip_reason;

  report.gradient_decomposition = gradient_decomposition_check(art, L);
  report.gradient_decomposition.checked = assertable;
  return report;
}

}  // namespace dsq::theory
