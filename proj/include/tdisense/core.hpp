#pragma once

// Dense complex linear algebra for small multi-qubit / few-mode registers:
// operators, states, tensor products, Hermitian matrix exponentials and
// partial traces. Everything is value-semantic; subsystem bookkeeping rides
// along with the state.

#include <Eigen/Dense>
#include <complex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdisense {

using cx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

constexpr double kHermTol = 1e-12;
constexpr double kUnitaryTol = 1e-10;
constexpr double kTraceTol = 1e-10;
constexpr double kNormTol = 1e-10;
constexpr double kPsdTol = 1e-10;
constexpr double kProbTol = 1e-8;

struct DimMismatch : std::runtime_error {
  explicit DimMismatch(const std::string& w) : std::runtime_error("DimMismatch: " + w) {}
};
struct NonHermitianInput : std::runtime_error {
  explicit NonHermitianInput(const std::string& w) : std::runtime_error("NonHermitianInput: " + w) {}
};
struct BadSubsystemIndex : std::runtime_error {
  explicit BadSubsystemIndex(const std::string& w) : std::runtime_error("BadSubsystemIndex: " + w) {}
};
struct InvalidDistribution : std::runtime_error {
  explicit InvalidDistribution(const std::string& w) : std::runtime_error("InvalidDistribution: " + w) {}
};

// square operator with optional structure tags; tags are checked, not trusted
struct Operator {
  Mat m;
  bool hermitian = false;
  bool unitary = false;

  Operator() = default;
  Operator(Mat mm, bool herm, bool unit) : m(std::move(mm)), hermitian(herm), unitary(unit) {
    if (m.rows() != m.cols()) throw DimMismatch("operator must be square");
    if (hermitian && (m - m.adjoint()).cwiseAbs().maxCoeff() > kHermTol)
      throw NonHermitianInput("hermitian tag violated");
    if (unitary) {
      Mat r = m.adjoint() * m;
      r -= Mat::Identity(m.rows(), m.cols());
      if (r.cwiseAbs().maxCoeff() > kUnitaryTol)
        throw std::runtime_error("unitary tag violated");
    }
  }
  Eigen::Index dim() const { return m.rows(); }

  static Operator hermitian_op(Mat mm) { return Operator(std::move(mm), true, false); }
  static Operator unitary_op(Mat mm) { return Operator(std::move(mm), false, true); }
  static Operator identity(Eigen::Index d) { return Operator(Mat::Identity(d, d), true, true); }
};

inline Eigen::Index product_dim(const std::vector<int>& dims) {
  Eigen::Index d = 1;
  for (int k : dims) d *= k;
  return d;
}

struct StateVector {
  Vec a;
  std::vector<int> subsystem_dims;

  StateVector() = default;
  StateVector(Vec v, std::vector<int> dims) : a(std::move(v)), subsystem_dims(std::move(dims)) {
    if (a.size() != product_dim(subsystem_dims))
      throw DimMismatch("amplitude count != product of subsystem dims");
    if (std::abs(a.norm() - 1.0) > kNormTol)
      throw std::runtime_error("state norm deviates from 1 beyond tolerance");
  }
  Eigen::Index dim() const { return a.size(); }
};

struct DensityMatrix {
  Mat rho;
  std::vector<int> subsystem_dims;

  DensityMatrix() = default;
  DensityMatrix(Mat r, std::vector<int> dims) : rho(std::move(r)), subsystem_dims(std::move(dims)) {
    if (rho.rows() != rho.cols() || rho.rows() != product_dim(subsystem_dims))
      throw DimMismatch("density matrix dims");
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-10)
      throw NonHermitianInput("density matrix not hermitian");
    if (std::abs(rho.trace().real() - 1.0) > kTraceTol || std::abs(rho.trace().imag()) > kTraceTol)
      throw std::runtime_error("density matrix trace deviates from 1");
    Eigen::SelfAdjointEigenSolver<Mat> es(rho, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -kPsdTol)
      throw std::runtime_error("density matrix has negative eigenvalue beyond tolerance");
  }
  Eigen::Index dim() const { return rho.rows(); }

  static DensityMatrix from_state(const StateVector& s) {
    return DensityMatrix(s.a * s.a.adjoint(), s.subsystem_dims);
  }
};

// ---- tensor products ----

inline Mat kron(const Mat& A, const Mat& B) {
  Mat out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

inline Operator kron(const Operator& A, const Operator& B) {
  return Operator(kron(A.m, B.m), A.hermitian && B.hermitian, A.unitary && B.unitary);
}

inline StateVector kron(const StateVector& x, const StateVector& y) {
  Vec out(x.dim() * y.dim());
  for (Eigen::Index i = 0; i < x.dim(); ++i)
    out.segment(i * y.dim(), y.dim()) = x.a(i) * y.a;
  std::vector<int> dims = x.subsystem_dims;
  dims.insert(dims.end(), y.subsystem_dims.begin(), y.subsystem_dims.end());
  return StateVector(std::move(out), std::move(dims));
}

// eigendecomposition of a Hermitian operator, reusable for many durations
struct HermEigen {
  Mat vectors;
  Eigen::VectorXd values;

  explicit HermEigen(const Mat& h) {
    if ((h - h.adjoint()).cwiseAbs().maxCoeff() > 1e-9)
      throw NonHermitianInput("matexp input");
    Eigen::SelfAdjointEigenSolver<Mat> es(h);
    vectors = es.eigenvectors();
    values = es.eigenvalues();
  }

  // exp(-i (h + shift*I) t)
  Mat unitary(double t, double shift = 0.0) const {
    Vec phases(values.size());
    for (Eigen::Index k = 0; k < values.size(); ++k)
      phases(k) = std::exp(cx(0.0, -(values(k) + shift) * t));
    return vectors * phases.asDiagonal() * vectors.adjoint();
  }
  void apply(Vec& v, double t) const {
    Vec w = vectors.adjoint() * v;
    for (Eigen::Index k = 0; k < values.size(); ++k)
      w(k) *= std::exp(cx(0.0, -values(k) * t));
    v = vectors * w;
  }
};

// exp(-i h t) for Hermitian h; eigendecomposition, not a Pade ladder, so that
// very long durations (t ~ 1e3) lose no accuracy
inline Operator matexp_hermitian(const Operator& h, double t) {
  if (!h.hermitian) throw NonHermitianInput("matexp_hermitian needs a hermitian operator");
  HermEigen eig(h.m);
  return Operator(eig.unitary(t), false, true);
}

// ---- reductions ----

// keep the listed subsystems (ascending original order), trace the rest
inline DensityMatrix partial_trace(const DensityMatrix& in, const std::vector<int>& keep) {
  const auto& dims = in.subsystem_dims;
  const int n = static_cast<int>(dims.size());
  std::vector<char> keep_mask(n, 0);
  for (int k : keep) {
    if (k < 0 || k >= n) throw BadSubsystemIndex("keep index " + std::to_string(k));
    if (keep_mask[k]) throw BadSubsystemIndex("duplicate keep index");
    keep_mask[k] = 1;
  }
  std::vector<int> kept, traced;
  for (int i = 0; i < n; ++i) (keep_mask[i] ? kept : traced).push_back(i);

  Eigen::Index dk = 1, dt = 1;
  for (int i : kept) dk *= dims[i];
  for (int i : traced) dt *= dims[i];

  // strides of each subsystem in the flattened index
  std::vector<Eigen::Index> stride(n, 1);
  for (int i = n - 2; i >= 0; --i) stride[i] = stride[i + 1] * dims[i + 1];

  auto offset = [&](const std::vector<int>& subs, Eigen::Index flat) {
    Eigen::Index off = 0;
    for (int j = static_cast<int>(subs.size()) - 1; j >= 0; --j) {
      off += (flat % dims[subs[j]]) * stride[subs[j]];
      flat /= dims[subs[j]];
    }
    return off;
  };

  Mat out = Mat::Zero(dk, dt > 0 ? dk : dk);
  for (Eigen::Index r = 0; r < dk; ++r) {
    Eigen::Index ro = offset(kept, r);
    for (Eigen::Index c = 0; c < dk; ++c) {
      Eigen::Index co = offset(kept, c);
      cx acc = 0.0;
      for (Eigen::Index t = 0; t < dt; ++t) {
        Eigen::Index to = offset(traced, t);
        acc += in.rho(ro + to, co + to);
      }
      out(r, c) = acc;
    }
  }
  std::vector<int> out_dims;
  for (int i : kept) out_dims.push_back(dims[i]);
  return DensityMatrix(std::move(out), std::move(out_dims));
}

inline DensityMatrix partial_trace(const StateVector& s, const std::vector<int>& keep) {
  return partial_trace(DensityMatrix::from_state(s), keep);
}

// ---- scalar observables ----

inline double expectation(const StateVector& s, const Operator& obs) {
  if (!obs.hermitian) throw NonHermitianInput("expectation observable");
  if (obs.dim() != s.dim()) throw DimMismatch("expectation");
  cx v = s.a.dot(obs.m * s.a);  // Eigen dot conjugates the left argument
  if (std::abs(v.imag()) > 1e-10)
    throw std::runtime_error("expectation of hermitian observable came out complex");
  return v.real();
}

inline double expectation(const DensityMatrix& r, const Operator& obs) {
  if (!obs.hermitian) throw NonHermitianInput("expectation observable");
  if (obs.dim() != r.dim()) throw DimMismatch("expectation");
  cx v = (obs.m * r.rho).trace();
  if (std::abs(v.imag()) > 1e-10)
    throw std::runtime_error("expectation of hermitian observable came out complex");
  return v.real();
}

// spectral norm (largest singular value)
inline double operator_norm(const Mat& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}
inline double operator_norm(const Operator& op) { return operator_norm(op.m); }

// draw one outcome index from a finite distribution; Rng must yield uniform01()
template <typename Rng>
int sample_outcome(const std::vector<double>& probs, Rng& rng) {
  double sum = 0.0;
  for (double p : probs) {
    if (p < -kPsdTol) throw InvalidDistribution("negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbTol) throw InvalidDistribution("probabilities sum to " + std::to_string(sum));
  double u = rng.uniform01() * sum;
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += std::max(probs[i], 0.0);
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

// largest |<x|y>| alignment: distance between states ignoring global phase
inline double phase_invariant_distance(const Vec& x, const Vec& y) {
  cx ov = x.dot(y);
  double c = std::abs(ov);
  if (c == 0.0) return (x - y).norm();
  cx phase = ov / c;
  return (x * phase - y).norm();
}

}  // namespace tdisense
