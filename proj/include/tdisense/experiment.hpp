#pragma once

// Experiment engine: MSE sweeps over the dilation scale, worst-case bias
// search over dilation families, multi-mode sweeps with truncation
// cross-checks, and CSV/JSON persistence.
//
// Sampling design: within one nu-shot experiment every shot draws its own
// per-operation dilations, so the shots are i.i.d. with the f-averaged
// outcome law as their marginal.  Monte-Carlo mode therefore computes that
// averaged law once per grid point (tensor quadrature for the compiled
// circuits, a keyed sample average for the coherent-state protocols) and
// draws multinomial counts from it, which is exact and keeps deep circuits
// affordable.  All randomness is keyed by (seed, stream, point, repetition)
// so results do not depend on scheduling.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bounds.hpp"
#include "core.hpp"
#include "model.hpp"
#include "multilevel.hpp"
#include "rng.hpp"
#include "strategies.hpp"
#include "tdi.hpp"

namespace tdisense::experiment {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& w) : std::runtime_error("IoError: " + w) {}
};

enum class Mode { MonteCarlo, ExactQuadrature };

enum class StrategyKind { FeSwap, CeSwap, IfReference, FeMultilevel, CeMultilevel };

inline std::string kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::FeSwap: return "fe";
    case StrategyKind::CeSwap: return "ce";
    case StrategyKind::IfReference: return "if";
    case StrategyKind::FeMultilevel: return "fe_ml";
    case StrategyKind::CeMultilevel: return "ce_ml";
  }
  return "?";
}

inline StrategyKind parse_kind(const std::string& s) {
  if (s == "fe") return StrategyKind::FeSwap;
  if (s == "ce") return StrategyKind::CeSwap;
  if (s == "if") return StrategyKind::IfReference;
  if (s == "fe_ml") return StrategyKind::FeMultilevel;
  if (s == "ce_ml") return StrategyKind::CeMultilevel;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

// ---- configuration ----

struct ExperimentConfig {
  model::PhysicalParams p{1.0 / 300.0, 10.0, 80.0 * M_PI};
  bool sample_omega = false;
  double omega_lo = 0.0, omega_hi = 0.0;
  int omega_samples = 100;

  long nu = 10000;  // shots per experiment
  int M = 100;      // experiment repetitions per grid point
  std::vector<double> eps_grid{0.0};
  std::string family = "uniform";  // dilation family: uniform | delta
  std::vector<std::string> strategies{"fe", "ce", "if"};

  model::EnvironmentSpec env;  // multi-mode runs
  int ml_windows = 0;          // 0 = derived from the strongest coupling
  int law_samples = 1024;      // draws for the averaged multi-mode law
  int trunc_samples = 12;      // common draws for the truncation cross-check
  int runs = 10;               // aggregate blocks for fixed-frequency sweeps

  uint64_t seed = 1;
  Mode mode = Mode::MonteCarlo;
  // gate model for the two-qubit strategies: physical keeps the system
  // precessing during the interaction windows, idealized freezes it
  strategies::Control control = strategies::Control::Physical;
  int threads = 1;
  int quad_nodes = 8;  // baseline per-operation quadrature order
  int worst_grids = 64;
  std::string out_dir = "out";
  std::string label = "sweep";

  void validate() const {
    if (nu < 1) throw std::invalid_argument("nu must be >= 1");
    if (M < 1) throw std::invalid_argument("M must be >= 1");
    if (eps_grid.empty()) throw std::invalid_argument("epsilon grid is empty");
    for (size_t i = 0; i < eps_grid.size(); ++i) {
      if (eps_grid[i] < 0.0 || eps_grid[i] > tdi::kMaxSupport)
        throw std::invalid_argument("epsilon outside [0, 0.5]");
      if (i > 0 && eps_grid[i] <= eps_grid[i - 1])
        throw std::invalid_argument("epsilon grid must be strictly increasing");
    }
    if (sample_omega && !(omega_lo < omega_hi))
      throw std::invalid_argument("omega interval must be nonempty");
    if (omega_samples < 1 || threads < 1 || law_samples < 1 || runs < 1 || quad_nodes < 2)
      throw std::invalid_argument("counts must be positive");
    if (family != "uniform" && family != "delta")
      throw std::invalid_argument("family must be uniform or delta");
    for (const auto& s : strategies) parse_kind(s);
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"omega", p.omega},
                     {"g", p.g},
                     {"T", p.T},
                     {"omega_samples", omega_samples},
                     {"nu", nu},
                     {"M", M},
                     {"epsilon_grid", eps_grid},
                     {"family", family},
                     {"strategies", strategies},
                     {"ml_windows", ml_windows},
                     {"law_samples", law_samples},
                     {"trunc_samples", trunc_samples},
                     {"runs", runs},
                     {"seed", seed},
                     {"mode", mode == Mode::MonteCarlo ? "mc" : "exact"},
                     {"control", control == strategies::Control::Physical ? "physical" : "idealized"},
                     {"threads", threads},
                     {"quad_nodes", quad_nodes},
                     {"worst_grids", worst_grids},
                     {"out_dir", out_dir},
                     {"label", label}};
    if (sample_omega) j["omega_interval"] = {omega_lo, omega_hi};
    if (!env.couplings.empty()) {
      j["couplings"] = env.couplings;
      j["fock_dim"] = env.fock_dim;
    }
    return j;
  }

  static Mode parse_mode(const std::string& s) {
    if (s == "mc" || s == "monte_carlo") return Mode::MonteCarlo;
    if (s == "exact" || s == "exact_quadrature") return Mode::ExactQuadrature;
    throw std::invalid_argument("mode must be mc or exact");
  }

  static strategies::Control parse_control(const std::string& s) {
    if (s == "physical") return strategies::Control::Physical;
    if (s == "idealized") return strategies::Control::Idealized;
    throw std::invalid_argument("control must be physical or idealized");
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.p = model::PhysicalParams(j.value("omega", 1.0 / 300.0), j.value("g", 10.0),
                                j.value("T", 80.0 * M_PI));
    if (j.contains("omega_interval")) {
      const auto& iv = j.at("omega_interval");
      c.sample_omega = true;
      c.omega_lo = iv.at(0).get<double>();
      c.omega_hi = iv.at(1).get<double>();
    }
    c.omega_samples = j.value("omega_samples", c.omega_samples);
    c.nu = j.value("nu", c.nu);
    c.M = j.value("M", c.M);
    if (j.contains("epsilon_grid")) c.eps_grid = j.at("epsilon_grid").get<std::vector<double>>();
    c.family = j.value("family", c.family);
    if (j.contains("strategies")) c.strategies = j.at("strategies").get<std::vector<std::string>>();
    if (j.contains("couplings")) c.env.couplings = j.at("couplings").get<std::vector<double>>();
    c.env.fock_dim = j.value("fock_dim", c.env.fock_dim);
    c.ml_windows = j.value("ml_windows", c.ml_windows);
    c.law_samples = j.value("law_samples", c.law_samples);
    c.trunc_samples = j.value("trunc_samples", c.trunc_samples);
    c.runs = j.value("runs", c.runs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("control")) c.control = parse_control(j.at("control").get<std::string>());
    c.threads = j.value("threads", c.threads);
    c.quad_nodes = j.value("quad_nodes", c.quad_nodes);
    c.worst_grids = j.value("worst_grids", c.worst_grids);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.label = j.value("label", c.label);
    c.validate();
    return c;
  }
};

// ---- plumbing ----

namespace detail {

// rng stream tags; combined with grid-point and repetition indices
inline constexpr uint64_t kStreamOmega = 11;
inline constexpr uint64_t kStreamLaw = 20;
inline constexpr uint64_t kStreamRep = 40;
inline constexpr uint64_t kStreamWorst = 60;
inline constexpr uint64_t kStreamTrunc = 70;

inline void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  const int nt = static_cast<int>(std::min<long>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t)
    pool.emplace_back([&] {
      long i;
      while ((i = next.fetch_add(1)) < n) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline std::string sha1_hex(const std::string& msg) {
  uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
  std::string m = msg;
  const uint64_t ml = static_cast<uint64_t>(msg.size()) * 8ULL;
  m.push_back('\x80');
  while (m.size() % 64 != 56) m.push_back('\0');
  for (int i = 7; i >= 0; --i) m.push_back(static_cast<char>((ml >> (8 * i)) & 0xff));
  const auto rol = [](uint32_t v, int s) { return (v << s) | (v >> (32 - s)); };
  for (size_t off = 0; off < m.size(); off += 64) {
    uint32_t w[80];
    for (int t = 0; t < 16; ++t)
      w[t] = (static_cast<uint32_t>(static_cast<uint8_t>(m[off + 4 * t])) << 24) |
             (static_cast<uint32_t>(static_cast<uint8_t>(m[off + 4 * t + 1])) << 16) |
             (static_cast<uint32_t>(static_cast<uint8_t>(m[off + 4 * t + 2])) << 8) |
             static_cast<uint32_t>(static_cast<uint8_t>(m[off + 4 * t + 3]));
    for (int t = 16; t < 80; ++t) w[t] = rol(w[t - 3] ^ w[t - 8] ^ w[t - 14] ^ w[t - 16], 1);
    uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int t = 0; t < 80; ++t) {
      uint32_t f, k;
      if (t < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (t < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (t < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const uint32_t tmp = rol(a, 5) + f + e + k + w[t];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }
  char buf[41];
  std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x%08x", h[0], h[1], h[2], h[3], h[4]);
  return buf;
}

// content hash in git blob style: sha1("blob <len>\0" + content)
inline std::string blob_hash(const std::string& content) {
  std::string pre = "blob " + std::to_string(content.size());
  pre.push_back('\0');
  return sha1_hex(pre + content);
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline tdi::TdiDistribution make_family(const std::string& family, double eps) {
  if (family == "delta") return tdi::TdiDistribution::delta(eps);
  return tdi::TdiDistribution::uniform(eps);
}

// quadrature order that tracks the fastest phase across the support
// (the free protocol's decoupling phase g T u is the worst offender;
// measured convergence needs about 1.9 nodes per unit of eps*g*T)
inline int effective_nodes(const model::PhysicalParams& p, double eps, int base) {
  const double rate = eps * p.g * p.T;
  const int n = base + static_cast<int>(std::ceil(2.0 * rate));
  return std::clamp(n, base, 4096);
}

}  // namespace detail

// ---- point estimation ----

struct PointEstimate {
  double mse = 0.0;
  double bias = 0.0;
  double variance = 0.0;
};

namespace detail {

struct MomentLaw {
  std::vector<double> probs;
  double xbar = 0.0;
  double second = 0.0;  // sum of coding^2 * prob, per-shot second moment
};

inline PointEstimate from_law(const MomentLaw& law, const strategies::Estimator& est, double omega,
                              long nu, int M, Mode mode, const std::vector<int>& coding,
                              uint64_t seed, uint64_t stream, uint64_t point,
                              std::vector<double>* omega_hats = nullptr) {
  PointEstimate out;
  if (mode == Mode::ExactQuadrature) {
    // infinite-shot bias plus error-propagation variance
    const double bias = est.apply(law.xbar) - omega;
    const double dv = est.derivative(law.xbar);
    const double var_x = (law.second - law.xbar * law.xbar) / static_cast<double>(nu);
    out.bias = bias;
    out.variance = dv * dv * var_x;
    out.mse = out.variance + bias * bias;
    return out;
  }
  double sum = 0.0, sq = 0.0;
  std::vector<double> hats;
  hats.reserve(M);
  for (int m = 0; m < M; ++m) {
    SplitRng rng = SplitRng::keyed(seed, stream, point, static_cast<uint64_t>(m));
    const auto counts = multinomial(nu, law.probs, rng);
    double acc = 0.0;
    for (size_t i = 0; i < counts.size(); ++i)
      acc += coding[i] * static_cast<double>(counts[i]);
    const double xm = acc / static_cast<double>(nu);
    const double oh = est.apply(xm);
    hats.push_back(oh);
    sum += oh - omega;
    sq += (oh - omega) * (oh - omega);
  }
  out.mse = sq / M;
  out.bias = sum / M;
  out.variance = out.mse - out.bias * out.bias;  // population identity
  if (omega_hats) *omega_hats = std::move(hats);
  return out;
}

inline MomentLaw qubit_law(const strategies::Compiled& comp, const tdi::TdiDistribution& f,
                           int nodes) {
  MomentLaw law;
  law.probs = comp.averaged_probabilities(f, nodes);
  const auto& coding = comp.strategy().coding;
  for (size_t i = 0; i < law.probs.size(); ++i) {
    law.xbar += coding[i] * law.probs[i];
    law.second += static_cast<double>(coding[i] * coding[i]) * law.probs[i];
  }
  return law;
}

inline MomentLaw ml_law(const multilevel::MlProtocol& proto, const multilevel::BranchState& ref,
                        const tdi::TdiDistribution& f, int samples, uint64_t seed, uint64_t stream,
                        uint64_t point) {
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  for (int j = 0; j < samples; ++j) {
    SplitRng rng = SplitRng::keyed(seed, stream, point, static_cast<uint64_t>(j));
    const auto d = tdi::sample(f, proto.timed_op_count(), rng);
    const auto [v0, v1] = multilevel::branch_amplitudes(proto, ref, d);
    const auto law = multilevel::outcome_law(v0, v1);
    for (int k = 0; k < 3; ++k) acc[k] += law[k];
  }
  MomentLaw law;
  law.probs.assign(acc.begin(), acc.end());
  for (auto& p : law.probs) p /= samples;
  law.xbar = law.probs[0] - law.probs[1];
  law.second = law.probs[0] + law.probs[1];
  return law;
}

}  // namespace detail

// grid-point MSE for one strategy; `point` keys the repetition streams
inline PointEstimate estimate_mse(const ExperimentConfig& cfg, StrategyKind kind, double eps,
                                  double omega, uint64_t point = 0,
                                  std::vector<double>* omega_hats = nullptr) {
  const model::PhysicalParams p(omega, cfg.p.g, cfg.p.T);
  if (kind == StrategyKind::IfReference) {
    // modeled free-reference floor: shot noise plus the hardware limit
    PointEstimate out;
    out.variance = 1.0 / (static_cast<double>(cfg.nu) * p.T * p.T);
    out.bias = eps * omega;
    out.mse = out.variance + out.bias * out.bias;
    if (omega_hats) omega_hats->clear();
    return out;
  }
  const auto f = detail::make_family(cfg.family, eps);
  const auto s_idx = static_cast<uint64_t>(kind);
  if (kind == StrategyKind::FeMultilevel || kind == StrategyKind::CeMultilevel) {
    const auto proto = kind == StrategyKind::CeMultilevel
                           ? multilevel::build_ce_multilevel(p, cfg.env, cfg.ml_windows)
                           : multilevel::build_fe_multilevel(p, cfg.env);
    const auto ref = multilevel::reference_walk(proto);
    const auto law = detail::ml_law(proto, ref, f, cfg.law_samples, cfg.seed,
                                    detail::kStreamLaw + s_idx, point);
    const std::vector<int> coding{1, -1, 0};
    return detail::from_law(law, proto.estimator, omega, cfg.nu, cfg.M, cfg.mode, coding, cfg.seed,
                            detail::kStreamRep + s_idx, point, omega_hats);
  }
  const auto strat = kind == StrategyKind::CeSwap ? strategies::build_ce_swap(p, cfg.control)
                                                  : strategies::build_fe_swap(p, cfg.control);
  const strategies::Compiled comp(strat);
  const int nodes = detail::effective_nodes(p, f.support_bound(), cfg.quad_nodes);
  const auto law = detail::qubit_law(comp, f, nodes);
  return detail::from_law(law, strat.estimator, omega, cfg.nu, cfg.M, cfg.mode,
                          strat.coding, cfg.seed, detail::kStreamRep + s_idx, point, omega_hats);
}

// ---- sweep results ----

struct SweepRecord {
  double eps = 0.0;
  double omega = 0.0;
  int modes = 0;  // phonon mode count; 0 for the two-qubit protocols
  std::string strategy;
  double mse = 0.0, bias = 0.0, variance = 0.0;
  double loss_fe_lower = 0.0, loss_ce_upper = 0.0, if_reference = 0.0;
};

struct Aggregate {
  double eps = 0.0;
  int modes = 0;
  std::string strategy;
  double mean_mse = 0.0;
  double std_mse = 0.0;
};

struct TruncationRecord {
  int modes = 0;
  int fock_dim = 0;
  int doubled_dim = 0;
  int draws = 0;
  double max_abs_dxbar = 0.0;  // conditional-law shift at common draws
  double mse_lo = 0.0, mse_hi = 0.0;
  double rel_mse_change = 0.0;
};

struct SweepResult {
  ExperimentConfig cfg;
  std::vector<SweepRecord> records;
  std::vector<Aggregate> aggregates;
  std::vector<TruncationRecord> truncation;
  double wall_seconds = 0.0;
};

namespace detail {

inline void fill_bounds(SweepRecord& r, const ExperimentConfig& cfg) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.if_reference = bounds::if_reference(cfg.nu, cfg.p.T, r.eps, r.omega);
  if (r.modes != 0) {
    r.loss_fe_lower = nan;
    r.loss_ce_upper = nan;
    return;
  }
  const model::PhysicalParams p(r.omega, cfg.p.g, cfg.p.T);
  try {
    r.loss_fe_lower = bounds::loss_fe_lower(p, cfg.nu, r.eps).value;
  } catch (const std::exception&) {
    r.loss_fe_lower = nan;
  }
  try {
    r.loss_ce_upper = bounds::loss_ce_upper(p, cfg.nu, r.eps).value;
  } catch (const std::exception&) {
    r.loss_ce_upper = nan;
  }
}

inline std::vector<Aggregate> aggregate_over_omega(const std::vector<SweepRecord>& recs) {
  // group by (eps, modes, strategy) preserving first-appearance order
  std::vector<Aggregate> out;
  std::vector<std::vector<double>> groups;
  for (const auto& r : recs) {
    size_t gi = 0;
    for (; gi < out.size(); ++gi)
      if (out[gi].eps == r.eps && out[gi].modes == r.modes && out[gi].strategy == r.strategy) break;
    if (gi == out.size()) {
      Aggregate a;
      a.eps = r.eps;
      a.modes = r.modes;
      a.strategy = r.strategy;
      out.push_back(a);
      groups.emplace_back();
    }
    groups[gi].push_back(r.mse);
  }
  for (size_t gi = 0; gi < out.size(); ++gi) {
    const auto& v = groups[gi];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    out[gi].mean_mse = mean;
    out[gi].std_mse = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size())) : 0.0;
  }
  return out;
}

}  // namespace detail

// ---- epsilon sweep over sampled frequencies ----

inline SweepResult sweep_epsilon(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const size_t n_eps = cfg.eps_grid.size();
  const size_t n_omega = cfg.sample_omega ? static_cast<size_t>(cfg.omega_samples) : 1;
  std::vector<StrategyKind> kinds;
  for (const auto& s : cfg.strategies) kinds.push_back(parse_kind(s));

  SweepResult result;
  result.cfg = cfg;
  result.records.resize(n_eps * n_omega * kinds.size());

  detail::parallel_for(static_cast<long>(n_eps * n_omega), cfg.threads, [&](long pi) {
    const size_t e = static_cast<size_t>(pi) / n_omega;
    const size_t i = static_cast<size_t>(pi) % n_omega;
    const double eps = cfg.eps_grid[e];
    double omega = cfg.p.omega;
    if (cfg.sample_omega) {
      SplitRng rng = SplitRng::keyed(cfg.seed, detail::kStreamOmega, e, i);
      omega = cfg.omega_lo + rng.uniform01() * (cfg.omega_hi - cfg.omega_lo);
    }
    for (size_t s = 0; s < kinds.size(); ++s) {
      SweepRecord rec;
      rec.eps = eps;
      rec.omega = omega;
      rec.modes = 0;
      rec.strategy = kind_name(kinds[s]);
      const auto est = estimate_mse(cfg, kinds[s], eps, omega, static_cast<uint64_t>(pi));
      rec.mse = est.mse;
      rec.bias = est.bias;
      rec.variance = est.variance;
      detail::fill_bounds(rec, cfg);
      result.records[static_cast<size_t>(pi) * kinds.size() + s] = std::move(rec);
    }
  });

  result.aggregates = detail::aggregate_over_omega(result.records);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---- worst-case bias search ----

struct CandidateBias {
  std::string description;
  tdi::TdiDistribution f;
  double bias = 0.0;
  double rel_bias = 0.0;
};

struct WorstCaseResult {
  ExperimentConfig cfg;
  StrategyKind kind = StrategyKind::CeSwap;
  double eps = 0.0;
  std::vector<CandidateBias> table;
  size_t best = 0;  // index into table
  double wall_seconds = 0.0;

  double value() const { return table.empty() ? 0.0 : table[best].rel_bias; }
  const tdi::TdiDistribution& achieving() const { return table[best].f; }
};

// maximize |bias/omega| over point masses on a xi grid, the uniform family,
// and random discrete mixtures; infinite-shot bias via quadrature
inline WorstCaseResult worst_case_bias(const ExperimentConfig& cfg, StrategyKind kind,
                                       double eps) {
  cfg.validate();
  if (kind == StrategyKind::IfReference || kind == StrategyKind::FeMultilevel ||
      kind == StrategyKind::CeMultilevel)
    throw std::invalid_argument("worst-case search targets the compiled two-qubit strategies");
  const auto t0 = std::chrono::steady_clock::now();
  const model::PhysicalParams p(cfg.p.omega, cfg.p.g, cfg.p.T);
  // idealized gates: the search isolates dilation-induced bias, so the
  // (dilation-independent) finite-g compilation offset is kept out of the max
  const auto strat = kind == StrategyKind::CeSwap
                         ? strategies::build_ce_swap(p, strategies::Control::Idealized)
                         : strategies::build_fe_swap(p, strategies::Control::Idealized);
  const strategies::Compiled comp(strat);

  WorstCaseResult out;
  out.cfg = cfg;
  out.kind = kind;
  out.eps = eps;

  const int n_xi = 41;
  for (int k = 0; k < n_xi; ++k) {
    const double xi = eps == 0.0 ? 0.0 : -eps + 2.0 * eps * k / (n_xi - 1);
    CandidateBias c;
    c.description = "delta(" + detail::fmt(xi) + ")";
    c.f = tdi::TdiDistribution::delta(xi);
    out.table.push_back(std::move(c));
  }
  {
    CandidateBias c;
    c.description = "uniform(" + detail::fmt(eps) + ")";
    c.f = tdi::TdiDistribution::uniform(eps);
    out.table.push_back(std::move(c));
  }
  for (int k = 0; k < cfg.worst_grids; ++k) {
    SplitRng rng = SplitRng::keyed(cfg.seed, detail::kStreamWorst, static_cast<uint64_t>(k));
    const int npts = 2 + static_cast<int>(rng.next() % 4);
    std::vector<double> pts(npts), wts(npts);
    for (int q = 0; q < npts; ++q) {
      pts[q] = rng.uniform_sym(eps);
      wts[q] = -std::log(std::max(rng.uniform01(), 1e-300));
    }
    CandidateBias c;
    c.description = "grid#" + std::to_string(k);
    c.f = tdi::TdiDistribution::discrete_grid(std::move(pts), std::move(wts));
    out.table.push_back(std::move(c));
  }

  detail::parallel_for(static_cast<long>(out.table.size()), cfg.threads, [&](long i) {
    auto& c = out.table[static_cast<size_t>(i)];
    const int nodes = detail::effective_nodes(p, c.f.support_bound(), cfg.quad_nodes);
    const auto law = detail::qubit_law(comp, c.f, nodes);
    c.bias = strat.estimator.apply(law.xbar) - p.omega;
    c.rel_bias = std::abs(c.bias / p.omega);
  });

  for (size_t i = 0; i < out.table.size(); ++i)
    if (out.table[i].rel_bias > out.table[out.best].rel_bias) out.best = i;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---- multi-mode sweep ----

namespace detail {

inline TruncationRecord truncation_check(const ExperimentConfig& cfg,
                                         const model::EnvironmentSpec& env, int n_modes,
                                         double eps) {
  const model::PhysicalParams p(cfg.p.omega, cfg.p.g, cfg.p.T);
  const auto proto = multilevel::build_ce_multilevel(p, env, cfg.ml_windows);
  TruncationRecord rec;
  rec.modes = n_modes;
  rec.fock_dim = env.fock_dim;
  rec.doubled_dim = 2 * env.fock_dim;
  rec.draws = cfg.trunc_samples;
  const multilevel::FockEngine lo(proto, rec.fock_dim), hi(proto, rec.doubled_dim);
  const auto f = make_family(cfg.family, eps);

  SplitRng dummy = SplitRng::keyed(0);
  std::array<double, 3> acc_lo{}, acc_hi{};
  for (int j = 0; j < cfg.trunc_samples; ++j) {
    SplitRng rng = SplitRng::keyed(cfg.seed, kStreamTrunc, static_cast<uint64_t>(n_modes),
                                   static_cast<uint64_t>(j));
    const auto d = tdi::sample(f, proto.timed_op_count(), rng);
    const auto o_lo = lo.outcome(d, 1, dummy, strategies::RunMode::Exact);
    const auto o_hi = hi.outcome(d, 1, dummy, strategies::RunMode::Exact);
    rec.max_abs_dxbar = std::max(rec.max_abs_dxbar, std::abs(o_hi.xbar - o_lo.xbar));
    for (int k = 0; k < 3; ++k) {
      acc_lo[k] += o_lo.probabilities[k] / cfg.trunc_samples;
      acc_hi[k] += o_hi.probabilities[k] / cfg.trunc_samples;
    }
  }
  // infinite-shot MSE at the common draws, truncated vs doubled
  const auto mse_of = [&](const std::array<double, 3>& pr) {
    MomentLaw law;
    law.probs.assign(pr.begin(), pr.end());
    law.xbar = pr[0] - pr[1];
    law.second = pr[0] + pr[1];
    const std::vector<int> coding{1, -1, 0};
    return from_law(law, proto.estimator, p.omega, cfg.nu, 1, Mode::ExactQuadrature, coding,
                    cfg.seed, 0, 0)
        .mse;
  };
  rec.mse_lo = mse_of(acc_lo);
  rec.mse_hi = mse_of(acc_hi);
  rec.rel_mse_change =
      std::abs(rec.mse_hi - rec.mse_lo) / std::max(rec.mse_hi, 1e-300);
  return rec;
}

}  // namespace detail

// same sweep shape with the electron-phonon protocols for every mode-count
// prefix of the configured couplings; frequency stays at the nominal value,
// aggregates are over repetition blocks, and each mode count carries a
// Fock-truncation convergence record
inline SweepResult multilevel_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.env.couplings.empty())
    throw std::invalid_argument("multilevel sweep needs couplings");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<StrategyKind> kinds;
  for (const auto& s : cfg.strategies) {
    auto k = parse_kind(s);
    if (k == StrategyKind::FeSwap) k = StrategyKind::FeMultilevel;
    if (k == StrategyKind::CeSwap) k = StrategyKind::CeMultilevel;
    kinds.push_back(k);
  }
  const size_t n_modes = cfg.env.couplings.size();
  const size_t n_eps = cfg.eps_grid.size();

  SweepResult result;
  result.cfg = cfg;
  result.records.resize(n_modes * n_eps * kinds.size());
  std::vector<std::vector<double>> hats(result.records.size());

  detail::parallel_for(static_cast<long>(n_modes * n_eps), cfg.threads, [&](long pi) {
    const size_t n = static_cast<size_t>(pi) / n_eps;  // modes - 1
    const size_t e = static_cast<size_t>(pi) % n_eps;
    ExperimentConfig sub = cfg;
    sub.env.couplings.assign(cfg.env.couplings.begin(), cfg.env.couplings.begin() + n + 1);
    for (size_t s = 0; s < kinds.size(); ++s) {
      SweepRecord rec;
      rec.eps = cfg.eps_grid[e];
      rec.omega = cfg.p.omega;
      rec.modes = static_cast<int>(n + 1);
      rec.strategy = kind_name(kinds[s]);
      std::vector<double> oh;
      const auto est = estimate_mse(sub, kinds[s], rec.eps, rec.omega, static_cast<uint64_t>(pi),
                                    &oh);
      rec.mse = est.mse;
      rec.bias = est.bias;
      rec.variance = est.variance;
      detail::fill_bounds(rec, cfg);
      const size_t slot = static_cast<size_t>(pi) * kinds.size() + s;
      result.records[slot] = std::move(rec);
      hats[slot] = std::move(oh);
    }
  });

  // aggregates: mean MSE with scatter over repetition blocks
  for (size_t slot = 0; slot < result.records.size(); ++slot) {
    const auto& rec = result.records[slot];
    Aggregate a;
    a.eps = rec.eps;
    a.modes = rec.modes;
    a.strategy = rec.strategy;
    a.mean_mse = rec.mse;
    a.std_mse = 0.0;
    const auto& oh = hats[slot];
    const int runs = std::min(cfg.runs, static_cast<int>(std::max<size_t>(oh.size(), 1)));
    if (!oh.empty() && runs > 1) {
      std::vector<double> block(runs, 0.0);
      std::vector<int> cnt(runs, 0);
      for (size_t m = 0; m < oh.size(); ++m) {
        const int r = static_cast<int>(m % runs);
        const double d = oh[m] - rec.omega;
        block[r] += d * d;
        ++cnt[r];
      }
      double mean = 0.0;
      for (int r = 0; r < runs; ++r) {
        block[r] /= std::max(cnt[r], 1);
        mean += block[r] / runs;
      }
      double var = 0.0;
      for (int r = 0; r < runs; ++r) var += (block[r] - mean) * (block[r] - mean) / runs;
      a.std_mse = std::sqrt(var);
    }
    result.aggregates.push_back(std::move(a));
  }

  if (cfg.trunc_samples > 0) {
    const double eps_ref = cfg.eps_grid.back();
    for (size_t n = 0; n < n_modes; ++n) {
      model::EnvironmentSpec env = cfg.env;
      env.couplings.assign(cfg.env.couplings.begin(), cfg.env.couplings.begin() + n + 1);
      result.truncation.push_back(
          detail::truncation_check(cfg, env, static_cast<int>(n + 1), eps_ref));
    }
  }

  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---- persistence ----

struct EmitPaths {
  std::string csv;
  std::string aggregates_csv;
  std::string manifest;
};

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path);
  if (!content.empty() && std::fwrite(content.data(), 1, content.size(), fp) != content.size()) {
    std::fclose(fp);
    throw IoError("short write to " + path);
  }
  if (std::fclose(fp) != 0) throw IoError("close failed for " + path);
}

}  // namespace detail

inline EmitPaths emit(const SweepResult& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  std::string csv = "epsilon,omega,modes,strategy,mse,bias,variance,loss_fe_lower,loss_ce_upper,if_reference\n";
  for (const auto& rec : r.records) {
    csv += detail::fmt(rec.eps) + "," + detail::fmt(rec.omega) + "," + std::to_string(rec.modes) +
           "," + rec.strategy + "," + detail::fmt(rec.mse) + "," + detail::fmt(rec.bias) + "," +
           detail::fmt(rec.variance) + "," + detail::fmt(rec.loss_fe_lower) + "," +
           detail::fmt(rec.loss_ce_upper) + "," + detail::fmt(rec.if_reference) + "\n";
  }
  std::string agg = "epsilon,modes,strategy,mean_mse,std_mse\n";
  for (const auto& a : r.aggregates)
    agg += detail::fmt(a.eps) + "," + std::to_string(a.modes) + "," + a.strategy + "," +
           detail::fmt(a.mean_mse) + "," + detail::fmt(a.std_mse) + "\n";

  EmitPaths paths;
  paths.csv = (fs::path(out_dir) / (r.cfg.label + ".csv")).string();
  paths.aggregates_csv = (fs::path(out_dir) / (r.cfg.label + "_aggregates.csv")).string();
  paths.manifest = (fs::path(out_dir) / (r.cfg.label + "_manifest.json")).string();
  detail::write_file(paths.csv, csv);
  detail::write_file(paths.aggregates_csv, agg);

  nlohmann::json manifest{{"label", r.cfg.label},
                          {"config", r.cfg.to_json()},
                          {"seed", r.cfg.seed},
                          {"rows", r.records.size()},
                          {"csv", fs::path(paths.csv).filename().string()},
                          {"csv_hash", detail::blob_hash(csv)},
                          {"aggregates_csv", fs::path(paths.aggregates_csv).filename().string()},
                          {"aggregates_hash", detail::blob_hash(agg)},
                          {"wall_seconds", r.wall_seconds}};
  if (!r.truncation.empty()) {
    nlohmann::json tr = nlohmann::json::array();
    for (const auto& t : r.truncation)
      tr.push_back({{"modes", t.modes},
                    {"fock_dim", t.fock_dim},
                    {"doubled_dim", t.doubled_dim},
                    {"draws", t.draws},
                    {"max_abs_dxbar", t.max_abs_dxbar},
                    {"mse_lo", t.mse_lo},
                    {"mse_hi", t.mse_hi},
                    {"rel_mse_change", t.rel_mse_change}});
    manifest["truncation"] = std::move(tr);
  }
  detail::write_file(paths.manifest, manifest.dump(2) + "\n");
  return paths;
}

inline EmitPaths emit_worst_case(const WorstCaseResult& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  std::string csv = "candidate,bias,rel_bias\n";
  for (const auto& c : r.table)
    csv += c.description + "," + detail::fmt(c.bias) + "," + detail::fmt(c.rel_bias) + "\n";

  EmitPaths paths;
  paths.csv = (fs::path(out_dir) / (r.cfg.label + "_candidates.csv")).string();
  paths.manifest = (fs::path(out_dir) / (r.cfg.label + "_manifest.json")).string();
  detail::write_file(paths.csv, csv);

  nlohmann::json manifest{{"label", r.cfg.label},
                          {"config", r.cfg.to_json()},
                          {"strategy", kind_name(r.kind)},
                          {"epsilon", r.eps},
                          {"worst_rel_bias", r.value()},
                          {"worst_candidate", r.table.empty() ? "" : r.table[r.best].description},
                          {"candidates", r.table.size()},
                          {"csv", fs::path(paths.csv).filename().string()},
                          {"csv_hash", detail::blob_hash(csv)},
                          {"wall_seconds", r.wall_seconds}};
  detail::write_file(paths.manifest, manifest.dump(2) + "\n");
  return paths;
}

}  // namespace tdisense::experiment
