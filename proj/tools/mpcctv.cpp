// mpcctv: closed-loop lane-change runs, variant comparison and tyre fitting.
//
// Exit codes: 0 clean run, 2 ran but the vehicle collided, 1 error.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "mpcctv/run_config.hpp"
#include "mpcctv/tyre_model.hpp"

using namespace mpcctv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitCollision = 2;

void setup_logging() {
  spdlog::set_pattern("[%l] %v");
  if (const char* lvl = std::getenv("MPCCTV_LOG")) {
    spdlog::set_level(spdlog::level::from_str(lvl));
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

std::string out_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

RunConfig load(const Common& o) {
  RunConfig c = o.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(o.config);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.sim.seed = *o.seed;
  return c;
}

void log_event(Variant v, const ControllerEvent& e, const TraceRow& r) {
  spdlog::debug("{} t={:.2f} X={:.1f} Y={:.2f} vx={:.2f} iters={} {}", display_name(v), e.t,
                r.state.X, r.state.Y, r.state.vx, e.iterations, r.solve_status);
}

void write_run(const RunConfig& c, Variant v, const SimTrace& t, const RunMetrics& m) {
  const std::string name(to_string(v));
  write_file_atomic(out_path(c.out_dir, "trace_" + name + ".csv"), trace_csv(t));
  write_file_atomic(out_path(c.out_dir, "metrics_" + name + ".json"), metrics_json(m).dump(2) + "\n");
}

int cmd_simulate(const Common& o, const std::string& variant_flag) {
  RunConfig c = load(o);
  if (!variant_flag.empty()) {
    c.variant = parse_variant(variant_flag);
    if (!c.variant) throw ConfigError("unknown variant '" + variant_flag + "'");
  }
  const Variant v = c.variant.value_or(Variant::kWtvWca);
  spdlog::info("simulating {} (seed {})", display_name(v), c.sim.seed);
  const Scenario sc = build_dlc_scenario(c.scenario);
  const SimTrace t = run_closed_loop(sc, v, c.controller, c.sim,
                                     [v](const ControllerEvent& e, const TraceRow& r) { log_event(v, e, r); });
  const RunMetrics m = compute_metrics(t);
  write_run(c, v, t, m);
  spdlog::info("{}: end {}, collided {}, sideslip peak {:.2f} deg, min speed {:.2f} m/s",
               display_name(v), m.end_reason, m.collided, m.sideslip_peak_deg, m.min_speed);
  return m.collided ? kExitCollision : kExitOk;
}

int cmd_compare(const Common& o) {
  const RunConfig c = load(o);
  spdlog::info("comparing {} variants (seed {})", std::size(kAllVariants), c.sim.seed);
  const Comparison cmp = run_comparison(c, log_event);
  for (const auto& r : cmp.results) {
    if (r.error.empty()) {
      write_run(c, r.variant, *r.trace, r.metrics);
      spdlog::info("{}: end {}, collided {}, sideslip peak {:.2f} deg", display_name(r.variant),
                   r.metrics.end_reason, r.metrics.collided, r.metrics.sideslip_peak_deg);
    } else {
      spdlog::error("{}: {}", display_name(r.variant), r.error);
    }
  }
  write_file_atomic(out_path(c.out_dir, "comparison.json"), comparison_json(cmp).dump(2) + "\n");
  return cmp.ok() ? kExitOk : kExitError;
}

int cmd_fit_tyre(const Common& o, const std::string& samples, double fz0) {
  const auto data = read_tyre_samples_csv(samples);
  if (data.empty()) throw std::runtime_error("tyre sample file has no rows: " + samples);
  const TyreFitReport rep = fit_tyre_params(data, fz0);
  const std::string dir = o.out.empty() ? "." : o.out;
  write_file_atomic(out_path(dir, "tyre_fit.json"), tyre_fit_report_json(rep) + "\n");
  std::cout << "param   value\n";
  std::cout << "c1      " << rep.params.c1 << "\n";
  std::cout << "c2      " << rep.params.c2 << "\n";
  std::cout << "c3      " << rep.params.c3 << "\n";
  std::cout << "Fz0     " << rep.params.Fz0 << "\n";
  std::cout << "mu      " << rep.params.mu << "\n";
  std::cout << "zeta    " << rep.params.zeta << "\n";
  std::cout << "rms [N] " << rep.rms_residual_n << " over " << rep.n_samples << " samples\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"MPCC with torque vectoring: lane-change simulation and tyre fitting"};
  app.require_subcommand(1);

  Common common;
  std::string variant;
  std::string samples;
  double fz0 = 4300.0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output directory");
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { common.seed = s; },
                                            "plant perturbation seed");
  };

  CLI::App* sim = app.add_subcommand("simulate", "run one controller variant");
  add_common(sim);
  add_seed(sim);
  sim->add_option("--variant", variant, "wtv-wca, wotv-wca or wtv-woca");

  CLI::App* cmp = app.add_subcommand("compare", "run all three variants");
  add_common(cmp);
  add_seed(cmp);

  CLI::App* fit = app.add_subcommand("fit-tyre", "fit tyre parameters to samples");
  fit->add_option("samples", samples, "CSV with alpha_rad,fx_n,fz_n,fy_n")->required();
  fit->add_option("--out", common.out, "output directory");
  fit->add_option("--fz0", fz0, "nominal load held fixed [N]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Missing files and bad flags are operational errors, not collisions.
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(common, variant);
    if (cmp->parsed()) return cmd_compare(common);
    if (fit->parsed()) return cmd_fit_tyre(common, samples, fz0);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitError;
  }
  return kExitError;
}
