// Command-line runner around the sweep, bounds, worst-case and multi-mode
// entry points. Every run is driven by a JSON config; a handful of flags
// override the config for scripting convenience.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tdisense/bounds.hpp"
#include "tdisense/experiment.hpp"

namespace ex = tdisense::experiment;
using tdisense::model::PhysicalParams;

namespace {

ex::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ex::IoError("cannot read config " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  return ex::ExperimentConfig::from_json(j);
}

// per-subcommand flag set; only flags the user actually passed win over the file
struct CommonFlags {
  std::string config_path;
  uint64_t seed = 0;
  int threads = 1;
  std::string mode;
  std::string out_dir;
  CLI::Option *seed_opt = nullptr, *threads_opt = nullptr, *mode_opt = nullptr,
              *out_dir_opt = nullptr;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    seed_opt = sub->add_option("--seed", seed, "override the config seed");
    threads_opt = sub->add_option("--threads", threads, "override the worker thread count")
                      ->check(CLI::PositiveNumber);
    mode_opt = sub->add_option("--mode", mode, "estimation mode: exact or mc")
                   ->check(CLI::IsMember({"exact", "mc"}));
    out_dir_opt = sub->add_option("--out-dir", out_dir, "override the output directory");
  }

  ex::ExperimentConfig load() const {
    auto cfg = load_config(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (threads_opt->count()) cfg.threads = threads;
    if (mode_opt->count()) cfg.mode = ex::ExperimentConfig::parse_mode(mode);
    if (out_dir_opt->count()) cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
  }
};

int run_sweep(const ex::ExperimentConfig& cfg) {
  const auto res = ex::sweep_epsilon(cfg);
  const auto paths = ex::emit(res, cfg.out_dir);
  std::printf("sweep '%s': %zu records in %.2fs\n", cfg.label.c_str(), res.records.size(),
              res.wall_seconds);
  for (const auto& a : res.aggregates)
    std::printf("  eps=%-12.6g %-6s mean_mse=%-13.6g std_mse=%.6g\n", a.eps, a.strategy.c_str(),
                a.mean_mse, a.std_mse);
  std::printf("wrote %s\nwrote %s\nwrote %s\n", paths.csv.c_str(), paths.aggregates_csv.c_str(),
              paths.manifest.c_str());
  return 0;
}

int run_multilevel(const ex::ExperimentConfig& cfg) {
  const auto res = ex::multilevel_sweep(cfg);
  const auto paths = ex::emit(res, cfg.out_dir);
  std::printf("multilevel '%s': %zu records in %.2fs\n", cfg.label.c_str(), res.records.size(),
              res.wall_seconds);
  for (const auto& a : res.aggregates)
    std::printf("  modes=%d eps=%-12.6g %-6s mean_mse=%-13.6g std_mse=%.6g\n", a.modes, a.eps,
                a.strategy.c_str(), a.mean_mse, a.std_mse);
  for (const auto& t : res.truncation)
    std::printf("  truncation modes=%d dim %d->%d max|dxbar|=%.3g rel_mse_change=%.3g\n", t.modes,
                t.fock_dim, t.doubled_dim, t.max_abs_dxbar, t.rel_mse_change);
  std::printf("wrote %s\nwrote %s\nwrote %s\n", paths.csv.c_str(), paths.aggregates_csv.c_str(),
              paths.manifest.c_str());
  return 0;
}

int run_worst_case(ex::ExperimentConfig cfg) {
  const std::string base = cfg.label;
  int emitted = 0;
  for (const auto& name : cfg.strategies) {
    const auto kind = ex::parse_kind(name);
    if (kind != ex::StrategyKind::FeSwap && kind != ex::StrategyKind::CeSwap) continue;
    for (size_t i = 0; i < cfg.eps_grid.size(); ++i) {
      cfg.label = base + "_" + name + "_e" + std::to_string(i);
      const auto wc = ex::worst_case_bias(cfg, kind, cfg.eps_grid[i]);
      const auto paths = ex::emit_worst_case(wc, cfg.out_dir);
      std::printf("worst-case %-3s eps=%-12.6g rel_bias=%-13.6g via %s\n", name.c_str(),
                  cfg.eps_grid[i], wc.value(), wc.table[wc.best].description.c_str());
      std::printf("wrote %s\nwrote %s\n", paths.csv.c_str(), paths.manifest.c_str());
      ++emitted;
    }
  }
  if (emitted == 0) {
    std::fprintf(stderr, "worst-case: no two-qubit strategy (fe/ce) in the config list\n");
    return 2;
  }
  return 0;
}

int run_bounds(const ex::ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  namespace bd = tdisense::bounds;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw ex::IoError("cannot create " + cfg.out_dir + ": " + ec.message());

  std::string csv =
      "epsilon,hardware_limit,if_reference,loss_fe_lower,regime,loss_ce_upper,eta,"
      "ce_expansion_valid,ce_bias_bound,opt_bias_lower,m_star\n";
  nlohmann::json reports = nlohmann::json::array();
  for (double eps : cfg.eps_grid) {
    const auto r = bd::evaluate_bounds(cfg.p, static_cast<double>(cfg.nu), eps);
    const char* regime =
        r.regime == bd::DilationRegime::AtOrAboveCritical ? "at_or_above_critical"
                                                          : "below_critical";
    csv += ex::detail::fmt(r.epsilon) + "," + ex::detail::fmt(r.hardware_limit) + "," +
           ex::detail::fmt(r.if_reference) + "," + ex::detail::fmt(r.loss_fe_lower) + "," +
           regime + "," + ex::detail::fmt(r.loss_ce_upper) + "," + ex::detail::fmt(r.eta) + "," +
           (r.ce_expansion_valid ? "1" : "0") + "," + ex::detail::fmt(r.ce_bias_bound) + "," +
           ex::detail::fmt(r.opt_bias_lower) + "," + ex::detail::fmt(r.m_star) + "\n";
    reports.push_back(bd::to_json(r));
    std::printf("bounds eps=%-12.6g fe_floor=%-13.6g ce_ceiling=%-13.6g bias_ceiling=%-13.6g %s\n",
                eps, r.loss_fe_lower, r.loss_ce_upper, r.ce_bias_bound, regime);
  }

  const std::string csv_path = (fs::path(cfg.out_dir) / (cfg.label + "_bounds.csv")).string();
  const std::string man_path =
      (fs::path(cfg.out_dir) / (cfg.label + "_bounds_manifest.json")).string();
  ex::detail::write_file(csv_path, csv);
  nlohmann::json manifest{{"label", cfg.label},
                          {"config", cfg.to_json()},
                          {"csv", fs::path(csv_path).filename().string()},
                          {"csv_hash", ex::detail::blob_hash(csv)},
                          {"reports", std::move(reports)}};
  ex::detail::write_file(man_path, manifest.dump(2) + "\n");
  std::printf("wrote %s\nwrote %s\n", csv_path.c_str(), man_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clock-dilation sensing: sweeps, analytic bounds, worst-case bias"};
  app.require_subcommand(1);

  CommonFlags sweep_flags, bounds_flags, worst_flags, ml_flags;
  auto* sweep = app.add_subcommand("sweep", "MSE sweep over the dilation grid");
  sweep_flags.attach(sweep);
  auto* bnd = app.add_subcommand("bounds", "evaluate every analytic bound on the dilation grid");
  bounds_flags.attach(bnd);
  auto* worst = app.add_subcommand("worst-case", "maximize |bias/omega| over dilation families");
  worst_flags.attach(worst);
  auto* ml = app.add_subcommand("multilevel", "multi-mode environment sweep");
  ml_flags.attach(ml);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(sweep)) return run_sweep(sweep_flags.load());
    if (app.got_subcommand(bnd)) return run_bounds(bounds_flags.load());
    if (app.got_subcommand(worst)) return run_worst_case(worst_flags.load());
    if (app.got_subcommand(ml)) return run_multilevel(ml_flags.load());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
