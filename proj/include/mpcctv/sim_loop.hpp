#pragma once

// Closed-loop simulation: double-track plant at a fine step behind actuator
// lags, MPC controller at the horizon sampling time, trace and metrics.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpcctv/nlp_solver.hpp"
#include "mpcctv/ocp.hpp"
#include "mpcctv/track_scenario.hpp"
#include "mpcctv/vehicle_model.hpp"

namespace mpcctv {

// --- Actuators ---------------------------------------------------------------

struct ActuatorParams {
  double steer_wn = 25.0;      // [rad/s]
  double steer_zeta = 0.7;
  double motor_tau = 0.006;    // [s]

  void validate() const;
};

struct ActuatorCommand {
  double delta = 0.0;
  WheelQuad<double> fx{0.0, 0.0, 0.0, 0.0};
};

struct ActuatorState {
  double delta = 0.0;
  double delta_rate = 0.0;
  WheelQuad<double> fx{0.0, 0.0, 0.0, 0.0};
};

/// Steering: second-order lag integrated with RK4 under a held command.
/// Motors: exact first-order update.
ActuatorState actuator_step(const ActuatorState& a, const ActuatorCommand& cmd, double dt,
                            const ActuatorParams& p);

// --- Runs --------------------------------------------------------------------

enum class Variant { kWtvWca, kWotvWca, kWtvWoca };

inline constexpr Variant kAllVariants[] = {Variant::kWtvWca, Variant::kWotvWca, Variant::kWtvWoca};

/// "wtv-wca", "wotv-wca", "wtv-woca".
std::string_view to_string(Variant v);
/// Display name used in reports, e.g. "wTV_wCA".
std::string_view display_name(Variant v);
std::optional<Variant> parse_variant(std::string_view s);
OcpVariant ocp_variant(Variant v);

struct PlantPerturbation {
  bool enabled = true;
  double mass_range = 0.05;       // relative half-width
  double stiffness_range = 0.10;  // relative half-width on the cornering stiffness scale
};

struct SimConfig {
  double plant_dt = 0.001;     // [s]
  double max_time = 20.0;      // [s]
  int trace_every = 10;        // plant steps per trace row
  bool actuator_lags = true;
  bool warm_start = true;      // false: every solve starts from a zero-rate rollout
  ActuatorParams actuators;
  PlantPerturbation perturbation;
  std::uint64_t seed = 1;
  double start_theta = 0.0;    // [m] along the path
  /// The run ends this far before the path end so the horizon never runs off
  /// the reference; negative means one horizon at vdes.
  double end_margin = -1.0;    // [m]

  void validate(double controller_dt) const;
};

struct ControllerConfig {
  OcpModel model;       // variant field is overwritten per run
  SqpOptions solver;
};

/// Plant parameters after the seeded perturbation.
struct PlantParams {
  VehicleParams vehicle;
  TyreParams tyre;
  double mass_scale = 1.0;
  double stiffness_scale = 1.0;
};

PlantParams perturbed_plant(const VehicleParams& v, const TyreParams& t,
                            const PlantPerturbation& pert, std::uint64_t seed);

struct TraceRow {
  double t = 0.0;
  VehicleState state;          // plant state; delta and Fx are the actuated values
  ActuatorCommand command;     // commanded values
  std::vector<double> d_obs;   // clearance to each obstacle [m]
  std::vector<double> d_edge;  // clearance to each edge [m]
  double beta_deg = 0.0;
  double mz_tv = 0.0;          // [Nm]
  double ay = 0.0;             // plant lateral acceleration [m/s^2]
  double path_curvature = 0.0; // [1/m] at the projected theta
  WheelLoads loads;            // plant quasi-static loads
  int solve_iters = 0;
  std::string solve_status;
};

struct ControllerEvent {
  double t = 0.0;
  int iterations = 0;
  SolveStatus status = SolveStatus::kConverged;
  double objective = 0.0;
  double kkt = 0.0;
  bool held = false;  // solver output unusable, previous command held
};

enum class EndReason { kPathEnd, kCollision, kTimeLimit, kEmpty };
std::string_view to_string(EndReason r);

struct SimTrace {
  Variant variant = Variant::kWtvWca;
  std::vector<TraceRow> rows;
  std::vector<ControllerEvent> events;
  EndReason end = EndReason::kEmpty;
  PlantParams plant;
};

/// Called after every controller event; used for progress logging.
using EventHook = std::function<void(const ControllerEvent&, const TraceRow&)>;

SimTrace run_closed_loop(const Scenario& sc, Variant variant, const ControllerConfig& ctrl,
                         const SimConfig& cfg, const EventHook& hook = {});

/// Initial plant state: on the path at start_theta, aligned with it, at vdes,
/// wheel forces balancing the resistance.
VehicleState initial_state(const Scenario& sc, const VehicleParams& p, double start_theta);

struct RunMetrics {
  bool empty = true;
  std::vector<double> min_clearance;  // per obstacle [m]
  std::vector<double> min_clearance_x;  // X where each minimum occurs [m]
  bool collided = false;
  double sideslip_peak_deg = 0.0;
  double min_speed = 0.0;
  double max_tv_moment = 0.0;   // [Nm]
  double max_lateral_accel = 0.0;
  double mean_solve_iters = 0.0;
  int max_solve_iters = 0;
  double final_x = 0.0;
  double duration = 0.0;
  std::string end_reason;
};

RunMetrics compute_metrics(const SimTrace& t);

/// Fixed-column CSV of the trace rows.
std::string trace_csv(const SimTrace& t);

}  // namespace mpcctv
