#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tdisense/rng.hpp"
#include "tdisense/tdi.hpp"

using namespace tdisense;
using namespace tdisense::tdi;
using Catch::Matchers::WithinAbs;

TEST_CASE("distribution factories validate their parameters") {
  CHECK_THROWS(TdiDistribution::delta(0.7));     // beyond the support cap
  CHECK_THROWS(TdiDistribution::uniform(-0.1));  // negative half width
  CHECK_THROWS(TdiDistribution::uniform(0.6));
  CHECK_THROWS(TdiDistribution::discrete_grid({0.1, 0.9}, {0.5, 0.5}));
  CHECK_THROWS(TdiDistribution::discrete_grid({0.1}, {0.5, 0.5}));
  CHECK_THROWS(TdiDistribution::discrete_grid({0.1, 0.2}, {-0.2, 1.2}));

  auto d = TdiDistribution::delta(-0.3);
  CHECK_THAT(d.support_bound(), WithinAbs(0.3, 1e-15));
  auto u = TdiDistribution::uniform(0.25);
  CHECK_THAT(u.support_bound(), WithinAbs(0.25, 1e-15));
  auto g = TdiDistribution::discrete_grid({-0.2, 0.4}, {0.7, 0.3});
  CHECK_THAT(g.support_bound(), WithinAbs(0.4, 1e-15));
}

TEST_CASE("grid weights are normalized on construction") {
  auto g = TdiDistribution::discrete_grid({0.0, 0.1}, {2.0, 6.0});
  CHECK_THAT(g.weights[0], WithinAbs(0.25, 1e-15));
  CHECK_THAT(g.weights[1], WithinAbs(0.75, 1e-15));
}

TEST_CASE("sampling stays inside the support") {
  SplitRng rng = SplitRng::keyed(7, 1, 2, 3);
  auto d = TdiDistribution::delta(0.125);
  for (int i = 0; i < 10; ++i) CHECK(d.sample_one(rng) == 0.125);

  auto u = TdiDistribution::uniform(0.01);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double v = u.sample_one(rng);
    REQUIRE(std::abs(v) <= 0.01);
    mean += v;
  }
  CHECK_THAT(mean / 20000.0, WithinAbs(0.0, 3e-4));

  auto g = TdiDistribution::discrete_grid({-0.2, 0.4}, {0.75, 0.25});
  long hi = 0;
  for (int i = 0; i < 40000; ++i) hi += g.sample_one(rng) > 0.0 ? 1 : 0;
  CHECK_THAT(static_cast<double>(hi) / 40000.0, WithinAbs(0.25, 0.01));
}

TEST_CASE("draw helpers") {
  SplitRng rng = SplitRng::keyed(11, 0, 0, 0);
  auto u = TdiDistribution::uniform(0.05);
  auto d = sample(u, 6, rng);
  REQUIRE(d.u.size() == 6);
  auto s = sample_shared(u, 6, rng);
  for (double v : s.u) CHECK(v == s.u[0]);
  CHECK_THAT(dilate(3.0, 0.1), WithinAbs(3.3, 1e-15));
}

TEST_CASE("gauss legendre nodes integrate polynomials exactly") {
  std::vector<double> x, w;
  gauss_legendre(5, x, w);
  REQUIRE(x.size() == 5);
  double s0 = 0, s2 = 0, s8 = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    s0 += w[i];
    s2 += w[i] * x[i] * x[i];
    s8 += w[i] * std::pow(x[i], 8);
  }
  CHECK_THAT(s0, WithinAbs(2.0, 1e-13));            // integral of 1 on [-1,1]
  CHECK_THAT(s2, WithinAbs(2.0 / 3.0, 1e-13));      // x^2
  CHECK_THAT(s8, WithinAbs(2.0 / 9.0, 1e-13));      // x^8 (exact up to degree 9)

  // degree 10 is no longer exact with 5 nodes
  double s10 = 0;
  for (size_t i = 0; i < x.size(); ++i) s10 += w[i] * std::pow(x[i], 10);
  CHECK(std::abs(s10 - 2.0 / 11.0) > 1e-6);
}

TEST_CASE("quadrature nodes reproduce moments of each family") {
  std::vector<double> u, w;

  quad_nodes(TdiDistribution::delta(0.2), 8, u, w);
  REQUIRE(u.size() == 1);
  CHECK_THAT(u[0], WithinAbs(0.2, 1e-15));
  CHECK_THAT(w[0], WithinAbs(1.0, 1e-15));

  double eps = 0.03;
  quad_nodes(TdiDistribution::uniform(eps), 12, u, w);
  double m0 = 0, m2 = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    m0 += w[i];
    m2 += w[i] * u[i] * u[i];
  }
  CHECK_THAT(m0, WithinAbs(1.0, 1e-13));
  CHECK_THAT(m2, WithinAbs(eps * eps / 3.0, 1e-15));  // uniform second moment

  auto g = TdiDistribution::discrete_grid({-0.1, 0.0, 0.3}, {0.2, 0.5, 0.3});
  quad_nodes(g, 4, u, w);
  REQUIRE(u.size() == 3);
  CHECK_THAT(w[2], WithinAbs(0.3, 1e-15));
}

TEST_CASE("quadrature integrates a smooth function against uniform f") {
  double eps = 0.04;
  auto f = TdiDistribution::uniform(eps);
  double got = quadrature(f, [](double v) { return std::cos(40.0 * v); }, 16);
  double want = std::sin(40.0 * eps) / (40.0 * eps);  // mean of cos over [-eps, eps]
  CHECK_THAT(got, WithinAbs(want, 1e-12));
}

TEST_CASE("keyed rng streams are reproducible and distinct") {
  auto a = SplitRng::keyed(5, 1, 2, 3);
  auto b = SplitRng::keyed(5, 1, 2, 3);
  CHECK(a.next() == b.next());
  auto c = SplitRng::keyed(5, 1, 2, 4);
  SplitRng a2 = SplitRng::keyed(5, 1, 2, 3);
  CHECK(a2.next() != c.next());
}

TEST_CASE("multinomial counts sum to the shot count") {
  SplitRng rng = SplitRng::keyed(13, 0, 0, 0);
  std::vector<double> p{0.05, 0.45, 0.45, 0.05};
  auto counts = multinomial(100000, p, rng);
  long total = 0;
  for (long c : counts) total += c;
  REQUIRE(total == 100000);
  CHECK_THAT(static_cast<double>(counts[1]) / 100000.0, WithinAbs(0.45, 0.01));
  CHECK_THAT(static_cast<double>(counts[0]) / 100000.0, WithinAbs(0.05, 0.005));
}
