#pragma once

// Timing-dilation model: every timed operation of nominal duration t runs for
// t(1+u), u drawn per operation from a bounded distribution f supported on
// [-eps, eps]. Families: point mass, uniform, and finite grids (mixtures).
// Averages over f are taken either by sampling or by quadrature.

#include <cmath>
#include <functional>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace tdisense::tdi {

constexpr double kMaxSupport = 0.5;

struct TdiDistribution {
  enum class Kind { Delta, Uniform, DiscreteGrid };
  Kind kind = Kind::Delta;
  double xi = 0.0;       // Delta location
  double epsilon = 0.0;  // Uniform halfwidth
  std::vector<double> points;
  std::vector<double> weights;

  static TdiDistribution delta(double xi) {
    if (std::abs(xi) > kMaxSupport) throw InvalidDistribution("delta location beyond 0.5");
    TdiDistribution f;
    f.kind = Kind::Delta;
    f.xi = xi;
    return f;
  }
  static TdiDistribution uniform(double eps) {
    if (eps < 0.0 || eps > kMaxSupport) throw InvalidDistribution("uniform halfwidth outside [0, 0.5]");
    TdiDistribution f;
    f.kind = Kind::Uniform;
    f.epsilon = eps;
    return f;
  }
  static TdiDistribution discrete_grid(std::vector<double> pts, std::vector<double> wts) {
    if (pts.size() != wts.size() || pts.empty()) throw InvalidDistribution("grid points/weights mismatch");
    double sum = 0.0;
    for (double w : wts) {
      if (w < -1e-12) throw InvalidDistribution("negative grid weight");
      sum += w;
    }
    if (sum <= 0.0) throw InvalidDistribution("grid weights must have positive mass");
    for (double& w : wts) w = std::max(w, 0.0) / sum;
    for (double p : pts)
      if (std::abs(p) > kMaxSupport) throw InvalidDistribution("grid point beyond 0.5");
    TdiDistribution f;
    f.kind = Kind::DiscreteGrid;
    f.points = std::move(pts);
    f.weights = std::move(wts);
    return f;
  }

  double support_bound() const {
    switch (kind) {
      case Kind::Delta:
        return std::abs(xi);
      case Kind::Uniform:
        return epsilon;
      case Kind::DiscreteGrid: {
        double b = 0.0;
        for (double p : points) b = std::max(b, std::abs(p));
        return b;
      }
    }
    return 0.0;
  }

  double sample_one(SplitRng& rng) const {
    switch (kind) {
      case Kind::Delta:
        return xi;
      case Kind::Uniform:
        return rng.uniform_sym(epsilon);
      case Kind::DiscreteGrid: {
        double u = rng.uniform01();
        double acc = 0.0;
        for (size_t i = 0; i < points.size(); ++i) {
          acc += weights[i];
          if (u <= acc) return points[i];
        }
        return points.back();
      }
    }
    return 0.0;
  }
};

// one u value per timed operation of a circuit
struct DilationDraw {
  std::vector<double> u;
};

struct DrawLengthMismatch : std::runtime_error {
  explicit DrawLengthMismatch(const std::string& w) : std::runtime_error("DrawLengthMismatch: " + w) {}
};

inline DilationDraw sample(const TdiDistribution& f, int n, SplitRng& rng) {
  DilationDraw d;
  d.u.resize(n);
  for (int i = 0; i < n; ++i) d.u[i] = f.sample_one(rng);
  return d;
}

// draw where every timed op shares one u (correlated-clock variant)
inline DilationDraw sample_shared(const TdiDistribution& f, int n, SplitRng& rng) {
  DilationDraw d;
  d.u.assign(n, f.sample_one(rng));
  return d;
}

inline double dilate(double t, double u) { return t * (1.0 + u); }

// ---- Gauss-Legendre ----

// nodes/weights on [-1,1]; Newton iteration on the Legendre recurrence
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

// quadrature representation of the average over f: points u_k, weights w_k
// with sum w_k = 1.  nodes_per_dim only matters for the uniform family.
inline void quad_nodes(const TdiDistribution& f, int nodes_per_dim,
                       std::vector<double>& u, std::vector<double>& w) {
  switch (f.kind) {
    case TdiDistribution::Kind::Delta:
      u = {f.xi};
      w = {1.0};
      return;
    case TdiDistribution::Kind::Uniform: {
      if (f.epsilon == 0.0) {
        u = {0.0};
        w = {1.0};
        return;
      }
      std::vector<double> gx, gw;
      gauss_legendre(std::max(nodes_per_dim, 1), gx, gw);
      u.resize(gx.size());
      w.resize(gx.size());
      for (size_t i = 0; i < gx.size(); ++i) {
        u[i] = f.epsilon * gx[i];
        w[i] = 0.5 * gw[i];  // density 1/(2 eps), jacobian eps
      }
      return;
    }
    case TdiDistribution::Kind::DiscreteGrid:
      u = f.points;
      w = f.weights;
      return;
  }
}

// E_f[ fn(u) ]
inline double quadrature(const TdiDistribution& f, const std::function<double(double)>& fn,
                         int nodes_per_dim = 8) {
  std::vector<double> u, w;
  quad_nodes(f, nodes_per_dim, u, w);
  double acc = 0.0;
  for (size_t i = 0; i < u.size(); ++i) acc += w[i] * fn(u[i]);
  return acc;
}

}  // namespace tdisense::tdi
