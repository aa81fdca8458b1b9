#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tdisense/bounds.hpp"
#include "tdisense/experiment.hpp"

using namespace tdisense;
using namespace tdisense::experiment;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ExperimentConfig bench_cfg() {
  ExperimentConfig c;
  c.p = model::PhysicalParams(1.0 / 300.0, 10.0, 80.0 * M_PI);
  c.nu = 10000;
  c.M = 100;
  c.eps_grid = {1e-4};
  c.seed = 42;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config json round trip and validation") {
  auto c = bench_cfg();
  c.sample_omega = true;
  c.omega_lo = 1.0 / 500.0;
  c.omega_hi = 1.0 / 100.0;
  c.env.couplings = {10.0, 2.5};
  c.mode = Mode::ExactQuadrature;
  c.control = strategies::Control::Idealized;
  c.label = "roundtrip";

  const auto j = c.to_json();
  const auto back = ExperimentConfig::from_json(j);
  CHECK(back.p.omega == c.p.omega);
  CHECK(back.p.g == c.p.g);
  CHECK(back.p.T == c.p.T);
  CHECK(back.sample_omega);
  CHECK(back.omega_lo == c.omega_lo);
  CHECK(back.omega_hi == c.omega_hi);
  CHECK(back.env.couplings == c.env.couplings);
  CHECK(back.mode == Mode::ExactQuadrature);
  CHECK(back.control == strategies::Control::Idealized);
  CHECK(back.seed == c.seed);
  CHECK(back.label == "roundtrip");

  auto bad = bench_cfg();
  bad.eps_grid = {1e-4, 1e-4};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.eps_grid = {1e-3, 1e-4};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = bench_cfg();
  bad.nu = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = bench_cfg();
  bad.strategies = {"nope"};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  CHECK(parse_kind("ce_ml") == StrategyKind::CeMultilevel);
  CHECK(kind_name(StrategyKind::FeSwap) == "fe");
  CHECK_THROWS_AS(parse_kind("xx"), std::invalid_argument);
}

TEST_CASE("exact estimates reproduce the reference floors") {
  auto cfg = bench_cfg();
  cfg.mode = Mode::ExactQuadrature;

  // with idealized gates the steered strategy at zero dilation sits exactly
  // on the shot-noise floor
  cfg.control = strategies::Control::Idealized;
  const auto ce = estimate_mse(cfg, StrategyKind::CeSwap, 0.0, cfg.p.omega);
  const double tp = cfg.p.TPrime();
  CHECK_THAT(ce.mse, WithinRel(1.0 / (cfg.nu * tp * tp), 1e-10));
  CHECK_THAT(ce.bias, WithinAbs(0.0, 1e-12));

  // physical gates leave a small zero-dilation offset from the system
  // precessing through the interaction windows; the analytic bias budget
  // covers it because its first term survives at zero support
  cfg.control = strategies::Control::Physical;
  const auto ce_phys = estimate_mse(cfg, StrategyKind::CeSwap, 0.0, cfg.p.omega);
  CHECK(std::abs(ce_phys.bias) > 1e-8);
  CHECK(std::abs(ce_phys.bias) <= bounds::ce_bias_bound(cfg.p, 0.0));
  // the offset is buried orders of magnitude under the shot floor
  CHECK_THAT(ce_phys.mse, WithinRel(1.0 / (cfg.nu * tp * tp), 1e-3));

  // free reference is the analytic floor in both modes
  const auto iref = estimate_mse(cfg, StrategyKind::IfReference, 1e-3, cfg.p.omega);
  CHECK_THAT(iref.mse,
             WithinRel(1.0 / (cfg.nu * cfg.p.T * cfg.p.T) + 1e-6 * cfg.p.omega * cfg.p.omega,
                       1e-12));
  cfg.mode = Mode::MonteCarlo;
  const auto iref_mc = estimate_mse(cfg, StrategyKind::IfReference, 1e-3, cfg.p.omega);
  CHECK(iref_mc.mse == iref.mse);

  // free strategy at zero dilation saturates its own information floor
  // 4/(nu T^2), i.e. the entangled probe's quantum limit
  cfg.mode = Mode::ExactQuadrature;
  const auto fe = estimate_mse(cfg, StrategyKind::FeSwap, 0.0, cfg.p.omega);
  CHECK_THAT(fe.mse, WithinRel(4.0 / (cfg.nu * cfg.p.T * cfg.p.T), 1e-6));
}

TEST_CASE("monte carlo and exact modes agree on the steered strategy") {
  auto cfg = bench_cfg();
  cfg.M = 200;
  cfg.mode = Mode::ExactQuadrature;
  const double eps = 1e-4;
  const auto ex = estimate_mse(cfg, StrategyKind::CeSwap, eps, cfg.p.omega);
  cfg.mode = Mode::MonteCarlo;
  const auto mc = estimate_mse(cfg, StrategyKind::CeSwap, eps, cfg.p.omega);
  // chi-squared-ish spread of the M-sample MSE estimate
  const double se = ex.mse * std::sqrt(2.0 / cfg.M);
  CHECK_THAT(mc.mse, WithinAbs(ex.mse, 5.0 * se));
  // population identity holds exactly in monte-carlo mode
  CHECK_THAT(mc.mse, WithinAbs(mc.variance + mc.bias * mc.bias, 1e-18 + 1e-12 * mc.mse));
}

TEST_CASE("monte carlo estimates are reproducible under the seed") {
  auto cfg = bench_cfg();
  const auto a = estimate_mse(cfg, StrategyKind::CeSwap, 1e-4, cfg.p.omega, 7);
  const auto b = estimate_mse(cfg, StrategyKind::CeSwap, 1e-4, cfg.p.omega, 7);
  CHECK(a.mse == b.mse);
  CHECK(a.bias == b.bias);
  const auto c = estimate_mse(cfg, StrategyKind::CeSwap, 1e-4, cfg.p.omega, 8);
  CHECK(a.mse != c.mse);  // different grid point, different repetition stream
}

TEST_CASE("quadrature order is converged for the free strategy") {
  auto cfg = bench_cfg();
  cfg.mode = Mode::ExactQuadrature;
  cfg.quad_nodes = 8;
  const double eps = 1e-2;  // many decoupling periods across the support
  const auto coarse = estimate_mse(cfg, StrategyKind::FeSwap, eps, cfg.p.omega);
  cfg.quad_nodes = 16;  // raises the adaptive order further
  const auto fine = estimate_mse(cfg, StrategyKind::FeSwap, eps, cfg.p.omega);
  CHECK_THAT(coarse.bias, WithinAbs(fine.bias, 1e-8 + 1e-6 * std::abs(fine.bias)));
  CHECK_THAT(coarse.mse, WithinAbs(fine.mse, 1e-12 + 1e-6 * fine.mse));
}

TEST_CASE("epsilon sweep reproduces the strategy ordering") {
  ExperimentConfig cfg = bench_cfg();
  cfg.sample_omega = true;
  cfg.omega_lo = 1.0 / 500.0;
  cfg.omega_hi = 1.0 / 100.0;
  cfg.omega_samples = 12;
  cfg.M = 30;
  cfg.eps_grid = {1e-6, 1e-3};
  cfg.strategies = {"fe", "ce", "if"};
  cfg.label = "ordering";

  const auto res = sweep_epsilon(cfg);
  REQUIRE(res.records.size() == 2 * 12 * 3);
  REQUIRE(res.aggregates.size() == 2 * 3);

  const auto agg = [&](double eps, const std::string& s) {
    for (const auto& a : res.aggregates)
      if (a.eps == eps && a.strategy == s) return a.mean_mse;
    FAIL("missing aggregate");
    return 0.0;
  };
  // wide-support dilations wreck the free strategy but not the steered one
  CHECK(agg(1e-3, "fe") >= 100.0 * agg(1e-3, "ce"));
  // at negligible dilation the steered strategy sits near its shot floor
  const double tp = cfg.p.TPrime();
  CHECK(agg(1e-6, "ce") < 3.0 / (cfg.nu * tp * tp));
  CHECK(agg(1e-6, "ce") > 1.0 / (3.0 * cfg.nu * tp * tp));

  // every record carries consistent moments; the sampled estimate respects
  // the steered ceiling up to its own chi-squared spread
  const double mc_slack = 1.0 + 5.0 * std::sqrt(2.0 / cfg.M);
  for (const auto& r : res.records) {
    CHECK(r.mse >= r.bias * r.bias - 1e-15);
    CHECK_THAT(r.mse, WithinAbs(r.variance + r.bias * r.bias, 1e-15 + 1e-9 * r.mse));
    if (r.strategy == "ce") CHECK(r.mse <= r.loss_ce_upper * mc_slack);
  }

  // in exact accounting the ceiling holds strictly at every record
  cfg.mode = Mode::ExactQuadrature;
  cfg.label = "ordering_exact";
  const auto res_ex = sweep_epsilon(cfg);
  for (const auto& r : res_ex.records) {
    if (r.strategy != "ce") continue;
    CHECK(r.mse <= r.loss_ce_upper);
    const model::PhysicalParams pw(r.omega, cfg.p.g, cfg.p.T);
    CHECK(std::abs(r.bias) <= bounds::ce_bias_bound(pw, r.eps));
  }
}

TEST_CASE("worst case bias search") {
  auto cfg = bench_cfg();
  cfg.mode = Mode::ExactQuadrature;
  cfg.worst_grids = 16;

  SECTION("zero support gives zero bias") {
    // roundoff of long matrix-exponential products sets the noise floor
    const auto ce = worst_case_bias(cfg, StrategyKind::CeSwap, 0.0);
    CHECK_THAT(ce.value(), WithinAbs(0.0, 1e-6));
    const auto fe = worst_case_bias(cfg, StrategyKind::FeSwap, 0.0);
    CHECK_THAT(fe.value(), WithinAbs(0.0, 1e-6));
  }

  SECTION("steered strategy stays below its bias ceiling") {
    const double eps = 1e-4;
    const auto wc = worst_case_bias(cfg, StrategyKind::CeSwap, eps);
    const double ceiling = bounds::ce_bias_bound(cfg.p, eps) / cfg.p.omega;
    CHECK(wc.value() <= ceiling);
    CHECK(wc.value() > 0.0);
  }

  SECTION("free strategy fails by an order-unity margin above threshold") {
    const auto wc = worst_case_bias(cfg, StrategyKind::FeSwap, 1e-3);
    CHECK(wc.value() >= 0.5);
    // a point mass achieves the worst case
    CHECK(wc.achieving().kind == tdi::TdiDistribution::Kind::Delta);
  }

  SECTION("rejects the analytic reference") {
    CHECK_THROWS_AS(worst_case_bias(cfg, StrategyKind::IfReference, 1e-4),
                    std::invalid_argument);
  }
}

TEST_CASE("multilevel sweep keeps the steered advantage and converges") {
  ExperimentConfig cfg;
  cfg.p = model::PhysicalParams(1e-2, 10.0, 2.0 * M_PI);  // short clock keeps tests fast
  cfg.nu = 10000;
  cfg.M = 40;
  cfg.eps_grid = {1e-4, 2e-3};
  cfg.env.couplings = {10.0, 2.5};
  cfg.env.fock_dim = 8;
  cfg.law_samples = 64;
  cfg.trunc_samples = 3;
  cfg.runs = 4;
  cfg.seed = 7;
  cfg.label = "ml";

  const auto res = multilevel_sweep(cfg);
  REQUIRE(res.records.size() == 2 * 2 * 3);  // modes x eps x strategies
  REQUIRE(res.truncation.size() == 2);

  const auto rec = [&](int modes, double eps, const std::string& s) -> const SweepRecord& {
    for (const auto& r : res.records)
      if (r.modes == modes && r.eps == eps && r.strategy == s) return r;
    FAIL("missing record");
    return res.records.front();
  };
  for (int n : {1, 2}) {
    CHECK(rec(n, 2e-3, "ce_ml").mse < rec(n, 2e-3, "fe_ml").mse);
    CHECK(std::isnan(rec(n, 2e-3, "ce_ml").loss_ce_upper));
    CHECK(rec(n, 2e-3, "if").mse > 0.0);
  }
  for (const auto& t : res.truncation) {
    CHECK(t.doubled_dim == 16);
    CHECK(t.rel_mse_change < 0.01);
    CHECK(t.max_abs_dxbar < 1e-3);
  }
  // aggregate blocks give a scatter for the fixed-frequency records
  bool found = false;
  for (const auto& a : res.aggregates)
    if (a.strategy == "ce_ml" && a.std_mse > 0.0) found = true;
  CHECK(found);
}

TEST_CASE("emit writes deterministic artifacts") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "tdisense_emit_test").string();
  fs::remove_all(dir);

  ExperimentConfig cfg = bench_cfg();
  cfg.sample_omega = true;
  cfg.omega_lo = 1.0 / 500.0;
  cfg.omega_hi = 1.0 / 100.0;
  cfg.omega_samples = 3;
  cfg.M = 5;
  cfg.eps_grid = {1e-5, 1e-4};
  cfg.label = "det";

  const auto r1 = sweep_epsilon(cfg);
  const auto p1 = emit(r1, dir + "/a");
  const auto r2 = sweep_epsilon(cfg);
  const auto p2 = emit(r2, dir + "/b");

  const std::string csv1 = slurp(p1.csv), csv2 = slurp(p2.csv);
  CHECK(csv1 == csv2);
  CHECK(csv1.rfind("epsilon,omega,modes,strategy,", 0) == 0);
  // row count: header + eps x omega x strategies
  CHECK(std::count(csv1.begin(), csv1.end(), '\n') == 1 + 2 * 3 * 3);

  const auto manifest = nlohmann::json::parse(slurp(p1.manifest));
  CHECK(manifest.at("seed").get<uint64_t>() == cfg.seed);
  CHECK(manifest.at("rows").get<size_t>() == r1.records.size());
  CHECK(manifest.at("csv_hash").get<std::string>() ==
        nlohmann::json::parse(slurp(p2.manifest)).at("csv_hash").get<std::string>());
  CHECK(manifest.at("config").at("epsilon_grid").size() == 2);

  // empty sweep: header-only CSV plus manifest
  SweepResult empty;
  empty.cfg = cfg;
  empty.cfg.label = "empty";
  const auto pe = emit(empty, dir + "/c");
  CHECK(slurp(pe.csv) ==
        "epsilon,omega,modes,strategy,mse,bias,variance,loss_fe_lower,loss_ce_upper,if_reference\n");
  CHECK(fs::exists(pe.manifest));

  // worst-case artifacts
  auto wcfg = bench_cfg();
  wcfg.mode = Mode::ExactQuadrature;
  wcfg.worst_grids = 4;
  wcfg.label = "wc";
  const auto wc = worst_case_bias(wcfg, StrategyKind::CeSwap, 1e-4);
  const auto pw = emit_worst_case(wc, dir + "/d");
  const auto wm = nlohmann::json::parse(slurp(pw.manifest));
  CHECK(wm.at("strategy").get<std::string>() == "ce");
  CHECK(wm.at("candidates").get<size_t>() == wc.table.size());
  CHECK(slurp(pw.csv).rfind("candidate,bias,rel_bias\n", 0) == 0);

  fs::remove_all(dir);
}

TEST_CASE("content hash matches a known vector") {
  // git blob hash of the empty file and of "hello\n" are well known
  CHECK(experiment::detail::blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(experiment::detail::blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("thread count never changes the numbers") {
  // streams are keyed by grid point, not by worker, so parallel runs must be
  // bit-identical even in sampling mode
  ExperimentConfig cfg = bench_cfg();
  cfg.sample_omega = true;
  cfg.omega_lo = 1.0 / 500.0;
  cfg.omega_hi = 1.0 / 100.0;
  cfg.omega_samples = 6;
  cfg.nu = 1000;
  cfg.M = 15;
  cfg.eps_grid = {1e-5, 1e-3};
  cfg.mode = Mode::MonteCarlo;
  cfg.seed = 31;

  auto run = [&](int threads) {
    ExperimentConfig c = cfg;
    c.threads = threads;
    return sweep_epsilon(c);
  };
  const auto one = run(1), three = run(3);
  REQUIRE(one.records.size() == three.records.size());
  for (size_t i = 0; i < one.records.size(); ++i) {
    CHECK(one.records[i].mse == three.records[i].mse);
    CHECK(one.records[i].bias == three.records[i].bias);
    CHECK(one.records[i].variance == three.records[i].variance);
  }
}
