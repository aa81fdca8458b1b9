#pragma once

// Ramsey protocols on an electron coupled to N phonon modes through
// number-conditioned displacements.  Because the coupling is n ⊗ x with no
// phonon self-energy, the joint state stays a two-branch superposition of
// product coherent states, which this engine tracks exactly:
//   evolve t on the excited branch:  coeff *= e^{-i t g Re(alpha)} per mode,
//                                    alpha += -i t g, global phase e^{-i w t}
//   parity pulse (phase pi(1+u)):    alpha -> -e^{i pi u} alpha, every mode
// The steered protocol interleaves parity echoes so the displacements
// refocus; the free protocol lets them run away and pays with contrast.
// A truncated-Fock statevector engine (per-mode factored propagators)
// provides the independent convergence cross-check.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "core.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "strategies.hpp"
#include "tdi.hpp"

namespace tdisense::multilevel {

// <alpha|beta> for normalized coherent states, written as
// exp(-|alpha-beta|^2/2 + i Im(conj(alpha) beta)) so that large displacements
// do not cancel catastrophically in the real exponent
inline cx coherent_overlap(cx alpha, cx beta) {
  const double re = -0.5 * std::norm(alpha - beta);
  const double im = std::imag(std::conj(alpha) * beta);
  return std::exp(cx(re, im));
}

struct MlProtocol {
  double omega = 0.0;
  double T = 0.0;
  model::EnvironmentSpec env;
  bool steered = false;  // parity-echo refocusing between evolution windows
  int windows = 1;       // evolution windows (even for the steered protocol)
  strategies::Estimator estimator;

  // one dilation per timed knob: prep pulse, then each evolution window,
  // and for the steered protocol one parity pulse after every window
  int timed_op_count() const { return steered ? 1 + 2 * windows : 1 + windows; }
  double window_length() const { return T / windows; }
};

// Even window count with per-window coupling angle near pi/8 for the
// strongest mode, so intra-window displacements stay small.
inline int default_windows(double T, double g_max) {
  int w = static_cast<int>(std::lround(8.0 * T * g_max / M_PI));
  w += w % 2;
  return std::max(w, 2);
}

inline strategies::Estimator ml_estimator(double omega, double T) {
  strategies::Estimator e;
  e.kind = strategies::Estimator::Kind::AcosOverTime;
  e.tau = T;
  e.factor = 1.0;
  e.branch = strategies::Estimator::branch_of(omega * T);
  return e;
}

inline MlProtocol build_fe_multilevel(const model::PhysicalParams& p,
                                      const model::EnvironmentSpec& env) {
  if (env.couplings.empty()) throw std::invalid_argument("build_fe_multilevel: no phonon modes");
  MlProtocol m;
  m.omega = p.omega;
  m.T = p.T;
  m.env = env;
  m.steered = false;
  m.windows = 1;
  m.estimator = ml_estimator(p.omega, p.T);
  return m;
}

inline MlProtocol build_ce_multilevel(const model::PhysicalParams& p,
                                      const model::EnvironmentSpec& env, int windows = 0) {
  if (env.couplings.empty()) throw std::invalid_argument("build_ce_multilevel: no phonon modes");
  MlProtocol m;
  m.omega = p.omega;
  m.T = p.T;
  m.env = env;
  m.steered = true;
  const double g_max = *std::max_element(env.couplings.begin(), env.couplings.end());
  m.windows = windows > 0 ? windows + (windows % 2) : default_windows(p.T, g_max);
  m.estimator = ml_estimator(p.omega, p.T);
  return m;
}

// Two-branch coherent-state walk.  Branch 0 never displaces (the electron
// ground level decouples), so only its prep amplitude matters.
struct BranchState {
  cx c0{1.0, 0.0}, c1{0.0, 0.0};
  std::vector<cx> alpha1;  // excited-branch coherent parameters, one per mode
};

inline BranchState evolve_branches(const MlProtocol& m, const tdi::DilationDraw& draw) {
  if (static_cast<int>(draw.u.size()) != m.timed_op_count())
    throw tdi::DrawLengthMismatch("multilevel draw has " + std::to_string(draw.u.size()) +
                                  " entries, protocol has " + std::to_string(m.timed_op_count()));
  const int n_modes = static_cast<int>(m.env.couplings.size());
  BranchState s;
  s.alpha1.assign(n_modes, cx(0.0, 0.0));
  size_t idx = 0;

  const double theta = 0.5 * M_PI * (1.0 + draw.u[idx++]);
  s.c0 = std::cos(0.5 * theta);
  s.c1 = std::sin(0.5 * theta);

  const double dt = m.window_length();
  for (int w = 0; w < m.windows; ++w) {
    const double t = tdi::dilate(dt, draw.u[idx++]);
    double disp_phase = 0.0;
    for (int k = 0; k < n_modes; ++k) {
      const double g = m.env.couplings[k];
      disp_phase += t * g * s.alpha1[k].real();
      s.alpha1[k] += cx(0.0, -t * g);
    }
    s.c1 *= std::exp(cx(0.0, -(m.omega * t + disp_phase)));
    if (m.steered) {
      const cx flip = -std::exp(cx(0.0, M_PI * draw.u[idx++]));
      for (auto& a : s.alpha1) a *= flip;
    }
  }
  return s;
}

// reference coherent parameters from the undilated, zero-frequency walk;
// they depend only on the protocol shape, so callers evaluating many draws
// should compute this once
inline BranchState reference_walk(const MlProtocol& m) {
  MlProtocol m0 = m;
  m0.omega = 0.0;
  const tdi::DilationDraw zero{std::vector<double>(static_cast<size_t>(m.timed_op_count()), 0.0)};
  return evolve_branches(m0, zero);
}

// Amplitudes of the final state against the dressed reference basis
// (|0>|ref0>, |1>|ref1>).  Branch 0's reference is the vacuum it never
// leaves.
inline std::pair<cx, cx> branch_amplitudes(const MlProtocol& m, const BranchState& ref,
                                           const tdi::DilationDraw& draw) {
  const BranchState s = evolve_branches(m, draw);
  cx v0 = s.c0;
  cx v1 = s.c1;
  for (size_t k = 0; k < s.alpha1.size(); ++k)
    v1 *= coherent_overlap(ref.alpha1[k], s.alpha1[k]);
  return {v0, v1};
}

inline std::pair<cx, cx> branch_amplitudes(const MlProtocol& m, const tdi::DilationDraw& draw) {
  return branch_amplitudes(m, reference_walk(m), draw);
}

struct MlOutcome {
  double xbar = 0.0;
  double omega_hat = 0.0;
  std::array<double, 3> probabilities{};  // (+1, -1, inconclusive) coding
  long nu = 0;
};

// law of the projection onto (|0,ref0> ± |1,ref1>)/sqrt(2) plus the
// orthogonal rest; the signed mean of the ±1 outcomes is 2 Re(conj(v0) v1)
inline std::array<double, 3> outcome_law(cx v0, cx v1) {
  const double p_plus = 0.5 * std::norm(v0 + v1);
  const double p_minus = 0.5 * std::norm(v0 - v1);
  return {p_plus, p_minus, std::max(0.0, 1.0 - p_plus - p_minus)};
}

inline MlOutcome outcome_from_law(const MlProtocol& m, const std::array<double, 3>& law, long nu,
                                  SplitRng& rng, strategies::RunMode mode) {
  MlOutcome out;
  out.nu = nu;
  out.probabilities = law;
  if (mode == strategies::RunMode::Exact) {
    out.xbar = law[0] - law[1];
  } else {
    const std::vector<double> probs(law.begin(), law.end());
    const auto counts = multinomial(nu, probs, rng);
    out.xbar = static_cast<double>(counts[0] - counts[1]) / static_cast<double>(nu);
  }
  out.omega_hat = m.estimator.apply(out.xbar);
  return out;
}

inline MlOutcome run_ml_once(const MlProtocol& m, const tdi::DilationDraw& draw, long nu,
                             SplitRng& rng, strategies::RunMode mode) {
  const auto [v0, v1] = branch_amplitudes(m, draw);
  return outcome_from_law(m, outcome_law(v0, v1), nu, rng, mode);
}

// Truncated-Fock statevector cross-check.  The Hamiltonian is block
// diagonal in the electron level and a sum of commuting per-mode terms in
// the excited block, so each window applies one small dense propagator per
// mode instead of exponentiating the joint matrix.
class FockEngine {
 public:
  FockEngine(MlProtocol m, int fock_dim) : m_(std::move(m)), d_(fock_dim) {
    if (d_ < 2) throw std::invalid_argument("FockEngine: fock_dim must be >= 2");
    const int n = static_cast<int>(m_.env.couplings.size());
    block_ = 1;
    for (int k = 0; k < n; ++k) {
      if (block_ > m_.env.dim_cap / d_)
        throw model::DimensionOverflow("FockEngine: truncated space exceeds dim_cap");
      block_ *= d_;
    }
    x_eigen_ = std::make_unique<HermEigen>(model::bosonic::position(d_));
  }

  // final statevector split into electron blocks (each of length d^N)
  std::pair<Vec, Vec> run(const tdi::DilationDraw& draw) const {
    if (static_cast<int>(draw.u.size()) != m_.timed_op_count())
      throw tdi::DrawLengthMismatch("fock draw length mismatch");
    Vec psi0 = Vec::Zero(block_), psi1 = Vec::Zero(block_);
    psi0(0) = 1.0;
    size_t idx = 0;

    const double theta = 0.5 * M_PI * (1.0 + draw.u[idx++]);
    psi1 = std::sin(0.5 * theta) * psi0;
    psi0 *= std::cos(0.5 * theta);

    const double dt = m_.window_length();
    const int n = static_cast<int>(m_.env.couplings.size());
    for (int w = 0; w < m_.windows; ++w) {
      const double t = tdi::dilate(dt, draw.u[idx++]);
      for (int k = 0; k < n; ++k) {
        const Mat u = x_eigen_->unitary(t * m_.env.couplings[k]);
        apply_mode(psi1, k, u);
      }
      psi1 *= std::exp(cx(0.0, -m_.omega * t));
      if (m_.steered) {
        const double phi = M_PI * (1.0 + draw.u[idx++]);
        for (int k = 0; k < n; ++k) {
          Mat rot = Mat::Zero(d_, d_);
          for (int q = 0; q < d_; ++q) rot(q, q) = std::exp(cx(0.0, phi * q));
          apply_mode(psi0, k, rot);
          apply_mode(psi1, k, rot);
        }
      }
    }
    return {psi0, psi1};
  }

  // same dressed-projector readout as the coherent engine, with the
  // reference taken from this engine's own undilated zero-frequency walk
  // so that truncation effects cancel at u = 0
  MlOutcome outcome(const tdi::DilationDraw& draw, long nu, SplitRng& rng,
                    strategies::RunMode mode) const {
    if (!have_ref_) {
      MlProtocol m0 = m_;
      m0.omega = 0.0;
      FockEngine ref_engine(m0, d_);
      const tdi::DilationDraw zero{
          std::vector<double>(static_cast<size_t>(m_.timed_op_count()), 0.0)};
      std::tie(ref0_, ref1_) = ref_engine.run(zero);
      ref0_.normalize();
      ref1_.normalize();
      have_ref_ = true;
    }
    const auto [p0, p1] = run(draw);
    return outcome_from_law(m_, outcome_law(ref0_.dot(p0), ref1_.dot(p1)), nu, rng, mode);
  }

  int fock_dim() const { return d_; }

 private:
  // contract the d x d matrix into mode k of a length-d^N block
  void apply_mode(Vec& psi, int mode, const Mat& u) const {
    const int n = static_cast<int>(m_.env.couplings.size());
    long stride = 1;
    for (int k = n - 1; k > mode; --k) stride *= d_;
    const long outer = block_ / (stride * d_);
    Vec scratch(d_);
    for (long o = 0; o < outer; ++o) {
      for (long s = 0; s < stride; ++s) {
        const long base = o * stride * d_ + s;
        for (int q = 0; q < d_; ++q) scratch(q) = psi(base + q * stride);
        for (int q = 0; q < d_; ++q) {
          cx acc(0.0, 0.0);
          for (int r = 0; r < d_; ++r) acc += u(q, r) * scratch(r);
          psi(base + q * stride) = acc;
        }
      }
    }
  }

  MlProtocol m_;
  int d_;
  long block_ = 1;
  std::unique_ptr<HermEigen> x_eigen_;
  mutable Vec ref0_, ref1_;
  mutable bool have_ref_ = false;
};

}  // namespace tdisense::multilevel
