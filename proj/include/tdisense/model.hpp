#pragma once

// Physical setup: a sensing qubit precessing at the unknown frequency while
// coupled to an environment qubit (exchange or controlled-flip coupling), or
// to a set of bosonic modes. Circuits are lists of timed segments: pulses
// (finite rotations, dilation scales the phase) and precession intervals
// (dilation scales the duration).

#include <cmath>
#include <variant>
#include <vector>

#include "core.hpp"

namespace tdisense::model {

struct DimensionOverflow : std::runtime_error {
  explicit DimensionOverflow(const std::string& w) : std::runtime_error("DimensionOverflow: " + w) {}
};

struct PhysicalParams {
  double omega = 0.0;  // precession frequency to estimate
  double g = 1.0;      // coupling strength
  double T = 1.0;      // total interrogation time

  PhysicalParams() = default;
  PhysicalParams(double w, double gg, double tt) : omega(w), g(gg), T(tt) {
    if (g <= 0.0) throw std::runtime_error("coupling must be positive");
    if (T <= 3.0 * M_PI / (4.0 * g))
      throw std::runtime_error("interrogation time too short for the control sequence");
  }

  double Omega() const { return std::sqrt(g * g + 0.25 * omega * omega); }
  double OmegaPrime() const { return std::sqrt(4.0 * g * g + omega * omega); }
  double TPrime() const { return T - 3.0 * M_PI / (4.0 * g); }
  // dilation scale beyond which a point mass can park the readout at the
  // worst phase of the free-evolution fringe
  double epsilon_star() const { return M_PI / (2.0 * Omega() * T); }
  bool strong_coupling() const { return g >= 100.0 * std::abs(omega); }
};

// ---- gate library ----

namespace gates {

inline Mat I2() { return Mat::Identity(2, 2); }
inline Mat X() {
  Mat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}
inline Mat Y() {
  Mat m(2, 2);
  m << 0, cx(0, -1), cx(0, 1), 0;
  return m;
}
inline Mat Z() {
  Mat m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}
inline Mat H() {
  Mat m(2, 2);
  m << 1, 1, 1, -1;
  return m / std::sqrt(2.0);
}
inline Mat SWAP() {
  Mat m = Mat::Zero(4, 4);
  m(0, 0) = 1;
  m(1, 2) = 1;
  m(2, 1) = 1;
  m(3, 3) = 1;
  return m;
}
// control on the first factor, flip on the second
inline Mat CNOT() {
  Mat m = Mat::Zero(4, 4);
  m(0, 0) = 1;
  m(1, 1) = 1;
  m(2, 3) = 1;
  m(3, 2) = 1;
  return m;
}

inline Mat rx(double th) { return (Mat(2, 2) << std::cos(th / 2), cx(0, -std::sin(th / 2)), cx(0, -std::sin(th / 2)), std::cos(th / 2)).finished(); }
inline Mat ry(double th) { return (Mat(2, 2) << std::cos(th / 2), -std::sin(th / 2), std::sin(th / 2), std::cos(th / 2)).finished(); }
inline Mat rxx(double th) {
  Mat g = kron(X(), X());
  Mat m = std::cos(th) * Mat::Identity(4, 4);
  m -= cx(0, 1) * std::sin(th) * g;
  return m;
}
inline Mat rzz(double th) {
  Mat g = kron(Z(), Z());
  Mat m = std::cos(th) * Mat::Identity(4, 4);
  m -= cx(0, 1) * std::sin(th) * g;
  return m;
}

}  // namespace gates

// system (x) environment, basis |s e>
inline Operator h_swap(const PhysicalParams& p) {
  Mat h = p.g * gates::SWAP() + 0.5 * p.omega * kron(gates::Z(), gates::I2());
  return Operator::hermitian_op(std::move(h));
}

inline Operator h_cnot(const PhysicalParams& p) {
  Mat h = p.g * gates::CNOT() + 0.5 * p.omega * kron(gates::Z(), gates::I2());
  return Operator::hermitian_op(std::move(h));
}

// ---- bosonic environment ----

struct EnvironmentSpec {
  std::vector<double> couplings;  // one per mode, descending by convention
  int fock_dim = 8;
  int dim_cap = 4096;
};

namespace bosonic {

inline Mat lowering(int d) {
  Mat b = Mat::Zero(d, d);
  for (int n = 1; n < d; ++n) b(n - 1, n) = std::sqrt(static_cast<double>(n));
  return b;
}
inline Mat position(int d) {
  Mat b = lowering(d);
  return b + b.adjoint();
}
inline Mat number(int d) {
  Mat n = Mat::Zero(d, d);
  for (int k = 0; k < d; ++k) n(k, k) = k;
  return n;
}

}  // namespace bosonic

// omega n (x) 1 + sum_nu g_nu n (x) (b_nu + b_nu'), n = diag(0,1) on the
// electron factor; total dimension 2 * fock_dim^N
inline Operator electron_phonon(double omega, const EnvironmentSpec& env) {
  const int d = env.fock_dim;
  const int nmodes = static_cast<int>(env.couplings.size());
  long dim = 2;
  for (int m = 0; m < nmodes; ++m) {
    dim *= d;
    if (dim > env.dim_cap)
      throw DimensionOverflow("2*" + std::to_string(d) + "^" + std::to_string(nmodes) +
                              " exceeds cap " + std::to_string(env.dim_cap));
  }
  Mat nhat = Mat::Zero(2, 2);
  nhat(1, 1) = 1.0;
  long denv = dim / 2;
  Mat h = omega * kron(nhat, Mat::Identity(denv, denv));
  for (int m = 0; m < nmodes; ++m) {
    Mat term = nhat;
    for (int k = 0; k < nmodes; ++k)
      term = kron(term, k == m ? bosonic::position(d) : Mat::Identity(d, d));
    h += env.couplings[m] * term;
  }
  return Operator::hermitian_op(std::move(h));
}

// ---- circuit segments ----

// a finite rotation exp(-i gen * phase); dilation multiplies the phase
struct Rotation {
  Operator gen;  // hermitian, unit spectral norm
  double phase;

  Rotation(Operator gg, double ph) : gen(std::move(gg)), phase(ph) {
    if (!gen.hermitian) throw NonHermitianInput("pulse generator");
    double n = operator_norm(gen);
    if (std::abs(n - 1.0) > 1e-9)
      throw std::runtime_error("pulse generator must have unit spectral norm, got " + std::to_string(n));
  }
};

// pulse = one timed operation; its rotations share a single dilation draw
struct Pulse {
  std::vector<Rotation> rotations;

  double phase_budget() const {
    double s = 0.0;
    for (const auto& r : rotations) s += std::abs(r.phase);
    return s;
  }
};

enum class PrecessionRole { Interaction, Encode };

struct Precession {
  Operator h;
  double duration;
  PrecessionRole role = PrecessionRole::Encode;
};

using Segment = std::variant<Pulse, Precession>;

inline int timed_op_count(const std::vector<Segment>& segs) { return static_cast<int>(segs.size()); }

inline double total_precession(const std::vector<Segment>& segs) {
  double t = 0.0;
  for (const auto& s : segs)
    if (auto* p = std::get_if<Precession>(&s)) t += p->duration;
  return t;
}

}  // namespace tdisense::model
