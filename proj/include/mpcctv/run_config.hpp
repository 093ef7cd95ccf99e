#pragma once

// One JSON file drives a whole run or comparison. Every section is optional
// and defaults to the library defaults; unknown keys are errors.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpcctv/sim_loop.hpp"
#include "mpcctv/track_scenario.hpp"

namespace mpcctv {

struct RunConfig {
  ControllerConfig controller;  // vehicle, tyre, weights, constraints, horizon, solver
  DlcConfig scenario;
  SimConfig sim;
  std::optional<Variant> variant;
  std::string out_dir = ".";
};

/// Throws ConfigError naming "section.key" on a bad or unknown entry.
RunConfig parse_run_config(const nlohmann::json& j);
/// Reads and parses a file; the message names the path when it is unreadable.
RunConfig load_run_config(const std::string& path);
/// Full config with every field spelled out.
nlohmann::json run_config_json(const RunConfig& c);

nlohmann::json metrics_json(const RunMetrics& m);

struct VariantResult {
  Variant variant = Variant::kWtvWca;
  std::optional<SimTrace> trace;  // empty when the run failed
  RunMetrics metrics;
  std::string error;
};

struct Comparison {
  std::uint64_t seed = 0;
  std::vector<VariantResult> results;
  bool ok() const;
};

using ProgressHook = std::function<void(Variant, const ControllerEvent&, const TraceRow&)>;

/// Runs the three variants in the fixed order of kAllVariants. A failing run
/// is recorded and the others still run.
Comparison run_comparison(const RunConfig& c, const ProgressHook& hook = {});

/// Side-by-side metrics and the orderings the lane-change study looks at.
nlohmann::json comparison_json(const Comparison& c);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace mpcctv
