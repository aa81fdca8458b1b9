#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tdisense/multilevel.hpp"

using namespace tdisense;
using namespace tdisense::multilevel;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

model::PhysicalParams ml_params() { return {1e-2, 10.0, 80.0 * M_PI}; }

model::EnvironmentSpec env_of(std::vector<double> gs) {
  model::EnvironmentSpec e;
  e.couplings = std::move(gs);
  return e;
}

tdi::DilationDraw zeros(int n) { return tdi::DilationDraw{std::vector<double>(static_cast<size_t>(n), 0.0)}; }

}  // namespace

TEST_CASE("coherent overlap identities") {
  const cx a(0.3, -1.2), b(-0.7, 0.4);
  CHECK_THAT(std::abs(coherent_overlap(a, a)), WithinRel(1.0, 1e-12));
  CHECK_THAT(std::abs(coherent_overlap(a, b)), WithinRel(std::exp(-0.5 * std::norm(a - b)), 1e-12));
  CHECK_THAT(std::abs(coherent_overlap(cx(0.0, 0.0), b)), WithinRel(std::exp(-0.5 * std::norm(b)), 1e-12));
  // conjugate symmetry
  const cx ab = coherent_overlap(a, b), ba = coherent_overlap(b, a);
  CHECK_THAT(std::abs(ab - std::conj(ba)), WithinAbs(0.0, 1e-15));
}

TEST_CASE("protocol builders fix the window layout") {
  const auto p = ml_params();
  const auto env = env_of({10.0, 2.5, 1.25});

  const auto fe = build_fe_multilevel(p, env);
  CHECK_FALSE(fe.steered);
  CHECK(fe.windows == 1);
  CHECK(fe.timed_op_count() == 2);
  CHECK_THAT(fe.window_length(), WithinRel(p.T, 1e-12));

  const auto ce = build_ce_multilevel(p, env);
  CHECK(ce.steered);
  // per-window angle pi/8 for the strongest mode: 8 T g_max / pi windows
  CHECK(ce.windows == 6400);
  CHECK(ce.timed_op_count() == 1 + 2 * 6400);
  CHECK_THAT(ce.windows * ce.window_length(), WithinRel(p.T, 1e-12));

  // an explicit odd window request is bumped to keep echo pairs whole
  const auto ce_odd = build_ce_multilevel(p, env, 31);
  CHECK(ce_odd.windows == 32);

  // a single mode keeps the same structure with N = 1
  const auto ce_one = build_ce_multilevel(p, env_of({10.0}));
  CHECK(ce_one.windows == 6400);
  CHECK(ce_one.timed_op_count() == 1 + 2 * 6400);

  const auto empty = model::EnvironmentSpec{};
  CHECK_THROWS_AS(build_fe_multilevel(p, empty), std::invalid_argument);
  CHECK_THROWS_AS(build_ce_multilevel(p, empty), std::invalid_argument);

  SplitRng rng = SplitRng::keyed(1);
  CHECK_THROWS_AS(run_ml_once(ce, zeros(5), 10, rng, strategies::RunMode::Exact),
                  tdi::DrawLengthMismatch);
}

TEST_CASE("free protocol matches the closed-form contrast law") {
  const auto p = ml_params();
  const auto env = env_of({10.0, 2.5});
  const auto fe = build_fe_multilevel(p, env);
  const double g2 = 10.0 * 10.0 + 2.5 * 2.5;
  SplitRng rng = SplitRng::keyed(2);

  for (double u : {0.0, 1e-4, -3e-4, 1e-3}) {
    const tdi::DilationDraw d{{0.0, u}};
    const auto out = run_ml_once(fe, d, 1, rng, strategies::RunMode::Exact);
    const double tt = p.T * (1.0 + u);
    const double expect = std::cos(p.omega * tt) * std::exp(-0.5 * u * u * p.T * p.T * g2);
    CHECK_THAT(out.xbar, WithinAbs(expect, 1e-12));
  }

  // a dilated prep pulse only shrinks the interference amplitude
  const tdi::DilationDraw d{{2e-3, 0.0}};
  const auto out = run_ml_once(fe, d, 1, rng, strategies::RunMode::Exact);
  CHECK_THAT(out.xbar, WithinAbs(std::cos(M_PI * 1e-3) * std::cos(p.omega * p.T), 1e-12));
}

TEST_CASE("steered protocol refocuses exactly on the nominal clock") {
  const auto p = ml_params();
  const auto ce = build_ce_multilevel(p, env_of({10.0, 2.5, 1.25}));
  SplitRng rng = SplitRng::keyed(3);

  const auto s = evolve_branches(ce, zeros(ce.timed_op_count()));
  for (const auto& a : s.alpha1) CHECK(std::abs(a) < 1e-10);

  const auto out = run_ml_once(ce, zeros(ce.timed_op_count()), 1, rng, strategies::RunMode::Exact);
  CHECK_THAT(out.xbar, WithinAbs(std::cos(p.omega * p.T), 1e-12));
  CHECK_THAT(out.omega_hat, WithinRel(p.omega, 1e-12));
  CHECK_THAT(out.probabilities[0] + out.probabilities[1], WithinRel(1.0, 1e-12));
  CHECK(out.probabilities[2] < 1e-12);
}

TEST_CASE("echoes keep accuracy where the free protocol has lost it") {
  const auto p = ml_params();
  const auto env = env_of({10.0, 2.5});
  const auto ce = build_ce_multilevel(p, env);
  const auto fe = build_fe_multilevel(p, env);
  const auto f = tdi::TdiDistribution::uniform(1e-3);

  double ce_sq = 0.0, fe_sq = 0.0;
  const int trials = 40;
  for (int i = 0; i < trials; ++i) {
    SplitRng rng = SplitRng::keyed(77, static_cast<uint64_t>(i));
    const auto dce = tdi::sample(f, ce.timed_op_count(), rng);
    const auto oce = run_ml_once(ce, dce, 1, rng, strategies::RunMode::Exact);
    ce_sq += (oce.omega_hat - p.omega) * (oce.omega_hat - p.omega) / trials;
    const auto dfe = tdi::sample(f, fe.timed_op_count(), rng);
    const auto ofe = run_ml_once(fe, dfe, 1, rng, strategies::RunMode::Exact);
    fe_sq += (ofe.omega_hat - p.omega) * (ofe.omega_hat - p.omega) / trials;
  }
  // conditional (infinite-shot) error: echoes suppress the dilation damage
  // by orders of magnitude at this support width
  CHECK(ce_sq * 100.0 < fe_sq);
  CHECK(ce_sq < 1e-7);
  CHECK(fe_sq > 1e-6);
}

TEST_CASE("vanishing couplings reduce both protocols to bare precession") {
  const auto p = ml_params();
  const auto env = env_of({1e-12});
  const auto ce = build_ce_multilevel(p, env);
  const auto fe = build_fe_multilevel(p, env);
  CHECK(ce.windows == 2);
  SplitRng rng = SplitRng::keyed(4);

  const double u = 5e-4;
  tdi::DilationDraw dfe{std::vector<double>(static_cast<size_t>(fe.timed_op_count()), u)};
  tdi::DilationDraw dce{std::vector<double>(static_cast<size_t>(ce.timed_op_count()), u)};
  const auto ofe = run_ml_once(fe, dfe, 1, rng, strategies::RunMode::Exact);
  const auto oce = run_ml_once(ce, dce, 1, rng, strategies::RunMode::Exact);
  const double bare = std::cos(M_PI * u / 2.0) * std::cos(p.omega * p.T * (1.0 + u));
  CHECK_THAT(ofe.xbar, WithinAbs(bare, 1e-9));
  CHECK_THAT(oce.xbar, WithinAbs(bare, 1e-9));
}

TEST_CASE("sampled runs are reproducible and consistent with the exact law") {
  const auto p = ml_params();
  const auto ce = build_ce_multilevel(p, env_of({10.0}));
  const auto f = tdi::TdiDistribution::uniform(5e-4);

  SplitRng draw_rng = SplitRng::keyed(9, 0);
  const auto d = tdi::sample(f, ce.timed_op_count(), draw_rng);

  SplitRng r1 = SplitRng::keyed(9, 1), r2 = SplitRng::keyed(9, 1);
  const long nu = 10000;
  const auto a = run_ml_once(ce, d, nu, r1, strategies::RunMode::Sampled);
  const auto b = run_ml_once(ce, d, nu, r2, strategies::RunMode::Sampled);
  CHECK(a.xbar == b.xbar);
  CHECK(a.omega_hat == b.omega_hat);

  SplitRng r3 = SplitRng::keyed(9, 2);
  const auto ex = run_ml_once(ce, d, nu, r3, strategies::RunMode::Exact);
  CHECK_THAT(a.xbar, WithinAbs(ex.xbar, 5.0 / std::sqrt(static_cast<double>(nu))));
}

TEST_CASE("fock backend converges to the coherent-state result") {
  // shorter interrogation keeps the truncated space honest while the
  // window structure stays identical to the long protocol
  const model::PhysicalParams p{1e-2, 10.0, 2.0 * M_PI};
  const auto f = tdi::TdiDistribution::uniform(1e-3);

  SECTION("two modes") {
    const auto ce = build_ce_multilevel(p, env_of({10.0, 2.5}));
    CHECK(ce.windows == 160);
    SplitRng rng = SplitRng::keyed(21);
    const auto d = tdi::sample(f, ce.timed_op_count(), rng);

    const auto exact = run_ml_once(ce, d, 1, rng, strategies::RunMode::Exact);
    const FockEngine small(ce, 8), big(ce, 16);
    const auto o8 = small.outcome(d, 1, rng, strategies::RunMode::Exact);
    const auto o16 = big.outcome(d, 1, rng, strategies::RunMode::Exact);

    CHECK_THAT(o16.xbar, WithinAbs(exact.xbar, 1e-6));
    CHECK(std::abs(o16.xbar - exact.xbar) <= std::abs(o8.xbar - exact.xbar) + 1e-12);
    CHECK(std::abs(o16.xbar - o8.xbar) < 1e-4);

    // undilated run agrees with the ideal fringe inside the truncated model
    const auto o0 = small.outcome(zeros(ce.timed_op_count()), 1, rng, strategies::RunMode::Exact);
    CHECK_THAT(o0.xbar, WithinAbs(std::cos(p.omega * p.T), 1e-9));
  }

  SECTION("three modes") {
    const auto ce = build_ce_multilevel(p, env_of({10.0, 2.5, 1.25}));
    SplitRng rng = SplitRng::keyed(22);
    const auto d = tdi::sample(f, ce.timed_op_count(), rng);

    const auto exact = run_ml_once(ce, d, 1, rng, strategies::RunMode::Exact);
    const FockEngine small(ce, 6), big(ce, 12);
    const auto o6 = small.outcome(d, 1, rng, strategies::RunMode::Exact);
    const auto o12 = big.outcome(d, 1, rng, strategies::RunMode::Exact);

    CHECK_THAT(o12.xbar, WithinAbs(exact.xbar, 1e-5));
    CHECK(std::abs(o12.xbar - exact.xbar) <= std::abs(o6.xbar - exact.xbar) + 1e-12);
  }
}

TEST_CASE("fock engine rejects oversized spaces") {
  const auto p = ml_params();
  const auto ce = build_ce_multilevel(p, env_of({10.0, 2.5, 1.25}));
  CHECK_THROWS_AS(FockEngine(ce, 20), model::DimensionOverflow);  // 2*20^3 > 4096 cap
  CHECK_THROWS_AS(FockEngine(ce, 1), std::invalid_argument);
}
