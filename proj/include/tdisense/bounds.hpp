#pragma once

// Closed-form performance bounds for the sensing protocols: the biased
// Cramer-Rao bound and its optimal-bias relaxation, the Kraus-channel
// Fisher-information ceiling for free evolution (with the gauge
// minimisation done analytically), the two-branch free-evolution loss
// floor, and the error-budget based loss ceiling / bias ceiling for the
// steered protocol.  Everything here is scalar arithmetic; the simulator
// in strategies.hpp is the independent cross-check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "model.hpp"

namespace tdisense::bounds {

struct NonpositiveFisher : std::runtime_error {
  explicit NonpositiveFisher(const std::string& w) : std::runtime_error("NonpositiveFisher: " + w) {}
};
struct CscSingularity : std::runtime_error {
  explicit CscSingularity(const std::string& w) : std::runtime_error("CscSingularity: " + w) {}
};
struct DomainEdge : std::runtime_error {
  explicit DomainEdge(const std::string& w) : std::runtime_error("DomainEdge: " + w) {}
};

// Leading-order systematic-error floor when the probe is decoupled from
// the environment: timing jitter alone already costs (epsilon*omega)^2.
inline double hardware_limit(double epsilon, double omega) {
  if (epsilon < 0.0) throw std::invalid_argument("hardware_limit: epsilon must be >= 0");
  return epsilon * epsilon * omega * omega;
}

// Reference curve for the interaction-free protocol: shot-noise variance
// at the full interrogation time plus the hardware floor.
inline double if_reference(double nu, double T, double epsilon, double omega) {
  if (nu < 1.0) throw std::invalid_argument("if_reference: nu must be >= 1");
  return 1.0 / (nu * T * T) + hardware_limit(epsilon, omega);
}

// Mean-squared-error bound for an estimator with bias b(omega):
// (1 + db/domega)^2 / (nu F) + b^2.
inline double biased_crb(double fisher, double nu, double bias, double dbias_domega) {
  if (fisher <= 0.0) throw NonpositiveFisher("biased_crb needs F > 0, got " + std::to_string(fisher));
  if (nu < 1.0) throw std::invalid_argument("biased_crb: nu must be >= 1");
  const double s = 1.0 + dbias_domega;
  return s * s / (nu * fisher) + bias * bias;
}

// Best achievable MSE when the bias slope m may be tuned against the
// statistical term, with the truth omega near a reference omega0:
// minimising (1+m)^2/(nu F) + m^2 (omega-omega0)^2 over m.
struct OptBias {
  double mse_lower = 0.0;
  double m_star = 0.0;
};

inline OptBias opt_bias_mse_lower(double fisher, double nu, double omega, double omega0) {
  if (fisher <= 0.0) throw NonpositiveFisher("opt_bias_mse_lower needs F > 0, got " + std::to_string(fisher));
  if (nu < 1.0) throw std::invalid_argument("opt_bias_mse_lower: nu must be >= 1");
  const double d = omega - omega0;
  OptBias r;
  r.m_star = -1.0 / (1.0 + nu * fisher * d * d);
  // omega == omega0 pins the estimate exactly (the reference value is
  // assumed known there), so the floor degenerates to zero.
  r.mse_lower = (d == 0.0) ? 0.0 : 1.0 / (nu * fisher + 1.0 / (d * d));
  return r;
}

// Kraus pair of the exchange channel on the system qubit after tracing a
// ground-state environment qubit: K1 = diag(b, c), K2 = a |0><1|, together
// with the frequency derivatives and the gauge matrix h that minimises
// Tr A(h).  Effective time is T (1 + xi) throughout.
struct KrausPair {
  cx a, b, c;
  cx da, db, dc;
  double h11 = 0.0, h22 = 0.0;
  cx h12 = 0.0;
};

inline KrausPair kraus_pair(const model::PhysicalParams& p, double xi) {
  const double t = p.T * (1.0 + xi);
  const double w = p.omega, g = p.g;
  const double Om = p.Omega();
  const double s = std::sin(t * Om), co = std::cos(t * Om);
  const cx i(0.0, 1.0);
  KrausPair k;
  k.a = -i * g * s / Om;
  k.b = std::exp(-i * (0.5 * t * (2.0 * g + w)));
  k.c = cx(co, 0.5 * w * s / Om);
  k.da = i * g * w * (s - t * Om * co) / (4.0 * Om * Om * Om);
  k.db = -i * (0.5 * t) * k.b;
  k.dc = (2.0 * i * t * w * w * Om * co - (t * w * w * w + 4.0 * g * g * (t * w - 2.0 * i)) * s) /
         (16.0 * Om * Om * Om);
  const double tp1 = std::abs(std::norm(k.b) - 1.0);
  const double tp2 = std::abs(std::norm(k.a) + std::norm(k.c) - 1.0);
  if (tp1 > 1e-10 || tp2 > 1e-10)
    throw std::logic_error("kraus_pair: trace preservation violated");
  return k;
}

// Tr A(h) = sum_j || K'_j - i sum_k h_jk K_k ||_F^2 for the pair above.
// Used by the brute-force gauge-grid cross-check.
inline double trace_a(const KrausPair& k, double h11, double h22, cx h12) {
  const cx i(0.0, 1.0);
  const cx e_b = k.db - i * h11 * k.b;
  const cx e_c = k.dc - i * h11 * k.c;
  const cx e_x = -i * h12 * k.a;              // off-diagonal of the first block
  const cx e_a = k.da - i * h22 * k.a;
  const cx e_f = -i * std::conj(h12) * k.b;   // diagonal leakage into the second block
  const cx e_g = -i * std::conj(h12) * k.c;
  return std::norm(e_b) + std::norm(e_c) + std::norm(e_x) + std::norm(e_a) + std::norm(e_f) +
         std::norm(e_g);
}

// Minimise Tr A(h) in closed form.  The two blocks decouple (K1, K2 and
// their derivatives are Frobenius-orthogonal, so the optimal h12 is 0) and
// each block is a scalar quadratic in its gauge angle.  Fills k.h* with
// the minimiser and returns the minimum.
inline double kraus_gauge_minimum(KrausPair& k) {
  const double na = std::norm(k.a);
  double term_a;
  if (std::abs(k.a) < 1e-12) {
    // K2 vanished (the exchange returned the excitation exactly); the
    // gauge has nothing to cancel against, so the block contributes |da|^2.
    k.h22 = 0.0;
    term_a = std::norm(k.da);
  } else {
    const double im_ada = std::imag(std::conj(k.a) * k.da);
    k.h22 = im_ada / na;
    term_a = std::norm(k.da) - im_ada * im_ada / na;
  }
  const double nbc = std::norm(k.b) + std::norm(k.c);
  const double im_bc = std::imag(std::conj(k.b) * k.db) + std::imag(std::conj(k.c) * k.dc);
  k.h11 = im_bc / nbc;
  k.h12 = 0.0;
  return term_a + std::norm(k.db) + std::norm(k.dc) - im_bc * im_bc / nbc;
}

// Channel Fisher-information ceiling 4 min_h Tr A(h) at dilation xi.
inline double kraus_qfi_min(const model::PhysicalParams& p, double xi) {
  KrausPair k = kraus_pair(p, xi);
  return 4.0 * kraus_gauge_minimum(k);
}

// Leading term of the same ceiling in trigonometric form; the denominator
// stays inside [2, 4] so the expression is singularity-free.
inline double qfi_fe_upper(const model::PhysicalParams& p, double xi) {
  const double t = p.T * (1.0 + xi);
  const double x = t * p.Omega();
  const double c = std::cos(x);
  return 2.0 * t * t * c * c / (std::cos(2.0 * x) + 3.0);
}

enum class DilationRegime {
  BelowCritical,      // epsilon < epsilon*: decoupling points stay reachable
  AtOrAboveCritical,  // epsilon >= epsilon*: a quarter period fits inside the jitter
};

struct FeLossBound {
  double value = 0.0;
  DilationRegime regime = DilationRegime::BelowCritical;
};

// Two-branch floor on the worst-case MSE of any free-evolution strategy.
inline FeLossBound loss_fe_lower(const model::PhysicalParams& p, double nu, double epsilon) {
  if (nu < 1.0) throw std::invalid_argument("loss_fe_lower: nu must be >= 1");
  if (epsilon < 0.0) throw std::invalid_argument("loss_fe_lower: epsilon must be >= 0");
  const double w = p.omega, g = p.g, T = p.T;
  FeLossBound r;
  if (epsilon >= p.epsilon_star()) {
    r.regime = DilationRegime::AtOrAboveCritical;
    r.value = g * g * w * w / (nu * w * w * w * w * T * T + g * g);
  } else {
    r.regime = DilationRegime::BelowCritical;
    const double c = std::cos(epsilon * T * p.Omega());
    // 1/w^2 -> inf at w = 0 collapses the floor to zero, which is the
    // correct reference-value limit.
    r.value = 1.0 / (nu * T * T * (w * w / (g * g) + c * c) + 1.0 / (w * w));
  }
  return r;
}

// Phase budget of the steered protocol: how far the pre-measurement state
// can drift from its ideal location, to first order in the jitter bound
// epsilon and in omega/g.
struct ErrorBudget {
  double phi_c0 = 0.0;    // preparation pulse phase
  double phi_c1 = 0.0;    // second pulse phase (quarter-phase + half-flip)
  double eps_prime = 0.0; // pre-precession state error
  double eps1 = 0.0;      // imperfect partial-exchange windows
  double eps2 = 0.0;      // precession window + preparation
  double eps3 = 0.0;      // closing pulses + readout rotation
  double eta = 0.0;       // total first-order drift
};

inline ErrorBudget error_budget(const model::PhysicalParams& p, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("error_budget: epsilon must be >= 0");
  const double tp = p.TPrime();
  ErrorBudget b;
  b.phi_c0 = M_PI / 2.0;
  b.phi_c1 = 3.0 * M_PI / 4.0;
  b.eps1 = 3.0 * M_PI * std::abs(p.omega) / (8.0 * p.g);
  b.eps_prime = epsilon * M_PI / 4.0 + epsilon * (b.phi_c0 + b.phi_c1);
  b.eps2 = epsilon * std::abs(p.omega) * tp / 2.0 + b.eps_prime;
  b.eps3 = epsilon * M_PI / 2.0 + 3.0 * M_PI * epsilon / 4.0;
  b.eta = b.eps1 + b.eps2 + b.eps3;
  return b;
}

struct CeLossBound {
  double value = 0.0;
  ErrorBudget budget;
  // The quadratic bias term keeps only the leading order in eta; flag the
  // result when eta is too large for that truncation to be trustworthy.
  bool expansion_valid = true;
};

// Ceiling on the worst-case MSE of the steered protocol: shot noise at the
// shortened time T' plus the squared worst-case bias.
inline CeLossBound loss_ce_upper(const model::PhysicalParams& p, double nu, double epsilon) {
  if (nu < 1.0) throw std::invalid_argument("loss_ce_upper: nu must be >= 1");
  const double tp = p.TPrime();
  const double s = std::sin(p.omega * tp);
  if (std::abs(s) < 1e-6)
    throw CscSingularity("loss_ce_upper: omega * T' too close to a multiple of pi");
  CeLossBound r;
  r.budget = error_budget(p, epsilon);
  r.value = 1.0 / (nu * tp * tp) + 16.0 * r.budget.eta * r.budget.eta / (s * s * tp * tp);
  r.expansion_valid = r.budget.eta < 0.1;
  return r;
}

// Worst-case bias magnitude of the steered protocol, 4 |csc(omega T')| eta / T'.
inline double ce_bias_bound(const model::PhysicalParams& p, double epsilon) {
  const double tp = p.TPrime();
  const double s = std::sin(p.omega * tp);
  if (std::abs(s) < 1e-6)
    throw CscSingularity("ce_bias_bound: omega * T' too close to a multiple of pi");
  return 4.0 * error_budget(p, epsilon).eta / (std::abs(s) * tp);
}

// Total pulse-phase budget of the fitted controlled-flip protocol
// (both ansatz applications plus the readout rotation).
inline constexpr double kCtrlFlipPhaseBudget = 4.366657005;

// Bias ceiling for the fitted estimator of the controlled-flip protocol,
// evaluated at observable mean o_ce.  The estimator slope diverges at
// |o_ce| = 1/2 (the fitted amplitude), hence the domain edge.
inline double cnot_bias_bound(const model::PhysicalParams& p, double epsilon, double o_ce) {
  if (epsilon < 0.0) throw std::invalid_argument("cnot_bias_bound: epsilon must be >= 0");
  if (std::abs(o_ce) >= 0.5)
    throw DomainEdge("cnot_bias_bound: |o_ce| must be < 0.5, got " + std::to_string(o_ce));
  const double phases = std::abs(p.omega) * p.T / 2.0 + kCtrlFlipPhaseBudget;
  return 8.0 * epsilon * phases / (p.T * std::sqrt(1.0 - 4.0 * o_ce * o_ce));
}

// One-stop evaluation of every closed-form quantity at a working point,
// serialisable for the CLI `bounds` command.
struct BoundReport {
  double nu = 0.0;
  double epsilon = 0.0;
  double omega = 0.0, g = 0.0, T = 0.0;
  double hardware_limit = 0.0;
  double if_reference = 0.0;
  std::vector<double> xi_grid;
  std::vector<double> qfi_fe_upper;  // envelope on xi_grid
  std::vector<double> kraus_qfi;     // exact gauge-minimised ceiling on xi_grid
  double loss_fe_lower = 0.0;
  DilationRegime regime = DilationRegime::BelowCritical;
  double loss_ce_upper = 0.0;
  double eta = 0.0;
  bool ce_expansion_valid = true;
  double ce_bias_bound = 0.0;
  double opt_bias_lower = 0.0;  // floor using the envelope minimum over the grid
  double m_star = 0.0;
};

inline BoundReport evaluate_bounds(const model::PhysicalParams& p, double nu, double epsilon,
                                   int xi_points = 41) {
  if (xi_points < 1) throw std::invalid_argument("evaluate_bounds: xi_points must be >= 1");
  BoundReport r;
  r.nu = nu;
  r.epsilon = epsilon;
  r.omega = p.omega;
  r.g = p.g;
  r.T = p.T;
  r.hardware_limit = bounds::hardware_limit(epsilon, p.omega);
  r.if_reference = bounds::if_reference(nu, p.T, epsilon, p.omega);
  r.xi_grid.reserve(xi_points);
  double env_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < xi_points; ++i) {
    const double xi =
        (xi_points == 1) ? 0.0 : -epsilon + 2.0 * epsilon * static_cast<double>(i) / (xi_points - 1);
    r.xi_grid.push_back(xi);
    const double env = bounds::qfi_fe_upper(p, xi);
    r.qfi_fe_upper.push_back(env);
    r.kraus_qfi.push_back(bounds::kraus_qfi_min(p, xi));
    env_min = std::min(env_min, env);
  }
  const FeLossBound fe = loss_fe_lower(p, nu, epsilon);
  r.loss_fe_lower = fe.value;
  r.regime = fe.regime;
  const CeLossBound ce = loss_ce_upper(p, nu, epsilon);
  r.loss_ce_upper = ce.value;
  r.eta = ce.budget.eta;
  r.ce_expansion_valid = ce.expansion_valid;
  r.ce_bias_bound = bounds::ce_bias_bound(p, epsilon);
  // Envelope-based floor with reference value 0: the worst dilation on the
  // grid caps the usable Fisher information.
  if (env_min > 0.0) {
    const OptBias ob = opt_bias_mse_lower(env_min, nu, p.omega, 0.0);
    r.opt_bias_lower = ob.mse_lower;
    r.m_star = ob.m_star;
  } else {
    r.opt_bias_lower = p.omega * p.omega;  // Fisher info exhausted; only the prior term is left
    r.m_star = -1.0;
  }
  return r;
}

inline nlohmann::json to_json(const BoundReport& r) {
  return nlohmann::json{
      {"nu", r.nu},
      {"epsilon", r.epsilon},
      {"omega", r.omega},
      {"g", r.g},
      {"T", r.T},
      {"hardware_limit", r.hardware_limit},
      {"if_reference", r.if_reference},
      {"xi_grid", r.xi_grid},
      {"qfi_fe_upper", r.qfi_fe_upper},
      {"kraus_qfi", r.kraus_qfi},
      {"loss_fe_lower", r.loss_fe_lower},
      {"regime", r.regime == DilationRegime::AtOrAboveCritical ? "at_or_above_critical"
                                                               : "below_critical"},
      {"loss_ce_upper", r.loss_ce_upper},
      {"eta", r.eta},
      {"ce_expansion_valid", r.ce_expansion_valid},
      {"ce_bias_bound", r.ce_bias_bound},
      {"opt_bias_lower", r.opt_bias_lower},
      {"m_star", r.m_star},
  };
}

}  // namespace tdisense::bounds
