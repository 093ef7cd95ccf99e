#include "mpcctv/sim_loop.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace mpcctv {

void ActuatorParams::validate() const {
  if (!(steer_wn > 0.0) || !(steer_zeta > 0.0) || !(motor_tau > 0.0)) {
    throw std::invalid_argument("actuator parameters must be positive");
  }
}

ActuatorState actuator_step(const ActuatorState& a, const ActuatorCommand& cmd, double dt,
                            const ActuatorParams& p) {
  ActuatorState out = a;
  const double wn2 = p.steer_wn * p.steer_wn;
  const double c = 2.0 * p.steer_zeta * p.steer_wn;
  auto f = [&](double d, double v) { return std::array<double, 2>{v, wn2 * (cmd.delta - d) - c * v}; };
  const auto k1 = f(a.delta, a.delta_rate);
  const auto k2 = f(a.delta + 0.5 * dt * k1[0], a.delta_rate + 0.5 * dt * k1[1]);
  const auto k3 = f(a.delta + 0.5 * dt * k2[0], a.delta_rate + 0.5 * dt * k2[1]);
  const auto k4 = f(a.delta + dt * k3[0], a.delta_rate + dt * k3[1]);
  out.delta = a.delta + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
  out.delta_rate = a.delta_rate + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);

  const double g = -std::expm1(-dt / p.motor_tau);
  out.fx.fl = a.fx.fl + (cmd.fx.fl - a.fx.fl) * g;
  out.fx.fr = a.fx.fr + (cmd.fx.fr - a.fx.fr) * g;
  out.fx.rl = a.fx.rl + (cmd.fx.rl - a.fx.rl) * g;
  out.fx.rr = a.fx.rr + (cmd.fx.rr - a.fx.rr) * g;
  return out;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kWtvWca: return "wtv-wca";
    case Variant::kWotvWca: return "wotv-wca";
    case Variant::kWtvWoca: return "wtv-woca";
  }
  return "?";
}

std::string_view display_name(Variant v) {
  switch (v) {
    case Variant::kWtvWca: return "wTV_wCA";
    case Variant::kWotvWca: return "woTV_wCA";
    case Variant::kWtvWoca: return "wTV_woCA";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view s) {
  for (Variant v : kAllVariants) {
    if (s == to_string(v) || s == display_name(v)) return v;
  }
  return std::nullopt;
}

OcpVariant ocp_variant(Variant v) {
  return {v != Variant::kWotvWca, v != Variant::kWtvWoca};
}

std::string_view to_string(EndReason r) {
  switch (r) {
    case EndReason::kPathEnd: return "path_end";
    case EndReason::kCollision: return "collision";
    case EndReason::kTimeLimit: return "time_limit";
    case EndReason::kEmpty: return "empty";
  }
  return "?";
}

void SimConfig::validate(double controller_dt) const {
  if (!(plant_dt > 0.0) || plant_dt > 1e-3 + 1e-15) {
    throw std::invalid_argument("plant_dt must lie in (0, 1 ms]");
  }
  const double ratio = controller_dt / plant_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    throw std::invalid_argument("controller dt must be a whole number of plant steps");
  }
  if (!(max_time >= 0.0)) throw std::invalid_argument("max_time must be >= 0");
  if (trace_every < 1) throw std::invalid_argument("trace_every must be >= 1");
  if (!(perturbation.mass_range >= 0.0 && perturbation.mass_range < 1.0) ||
      !(perturbation.stiffness_range >= 0.0 && perturbation.stiffness_range < 1.0)) {
    throw std::invalid_argument("perturbation ranges must lie in [0, 1)");
  }
  actuators.validate();
}

namespace {

// splitmix64: a fixed generator keeps perturbations identical across
// standard-library implementations.
std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double symmetric_unit(std::uint64_t& state) {
  const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
  return 2.0 * u - 1.0;
}

bool finite_trajectory(const Eigen::VectorXd& z) { return z.allFinite(); }

}  // namespace

PlantParams perturbed_plant(const VehicleParams& v, const TyreParams& t,
                            const PlantPerturbation& pert, std::uint64_t seed) {
  PlantParams p{v, t, 1.0, 1.0};
  if (!pert.enabled) return p;
  std::uint64_t state = seed;
  p.mass_scale = 1.0 + pert.mass_range * symmetric_unit(state);
  p.stiffness_scale = 1.0 + pert.stiffness_range * symmetric_unit(state);
  p.vehicle.m *= p.mass_scale;
  p.tyre.c1 *= p.stiffness_scale;
  return p;
}

VehicleState initial_state(const Scenario& sc, const VehicleParams& p, double start_theta) {
  const auto ref = sc.path.sample(start_theta);
  VehicleState s;
  s.X = ref.X;
  s.Y = ref.Y;
  s.psi = ref.psi;
  s.vx = sc.vdes;
  s.theta = start_theta;
  const double f = 0.25 * resistance_force(sc.vdes, p);
  s.Fx_fl = s.Fx_fr = s.Fx_rl = s.Fx_rr = f;
  return s;
}

namespace {

struct Recorder {
  const Scenario& sc;
  const PlantParams& plant;

  TraceRow row(double t, const VehicleState& s, const ActuatorCommand& cmd,
               const ControllerEvent* last) const {
    TraceRow r;
    r.t = t;
    r.state = s;
    r.state.theta = sc.path.project(s.X, s.Y);
    r.command = cmd;
    for (const auto& o : sc.obstacles) r.d_obs.push_back(v2o_distance(s.X, s.Y, o, sc.rveh));
    const auto ref = sc.path.sample(r.state.theta);
    const double lat = lateral_offset(s.X, s.Y, ref);
    for (double e : sc.edges) r.d_edge.push_back(v2e_distance(lat, e, sc.rveh));
    r.beta_deg = std::atan2(s.vy, s.vx) * 180.0 / M_PI;
    r.mz_tv = tv_yaw_moment(s, plant.vehicle);
    const StateVec<double> d =
        model_derivative<double>(s.to_vector(), InputVec<double>::Zero(), plant.tyre, plant.vehicle);
    r.ay = d[kVy] + s.vx * s.r;
    r.path_curvature = sc.path.curvature(r.state.theta);
    r.loads = state_loads(s, plant.vehicle);
    if (last) {
      r.solve_iters = last->iterations;
      r.solve_status = last->held ? "held" : to_string(last->status);
    }
    return r;
  }

  bool collided(const VehicleState& s) const {
    for (const auto& o : sc.obstacles)
      if (v2o_distance(s.X, s.Y, o, sc.rveh) < 0.0) return true;
    return false;
  }
};

void symmetrise_axles(ControlRates& u) {
  const double f = 0.5 * (u.dFx_fl + u.dFx_fr);
  const double r = 0.5 * (u.dFx_rl + u.dFx_rr);
  u.dFx_fl = u.dFx_fr = f;
  u.dFx_rl = u.dFx_rr = r;
}

}  // namespace

SimTrace run_closed_loop(const Scenario& sc, Variant variant, const ControllerConfig& ctrl,
                         const SimConfig& cfg, const EventHook& hook) {
  const double ctrl_dt = ctrl.model.horizon.dt;
  cfg.validate(ctrl_dt);
  sc.validate();

  SimTrace trace;
  trace.variant = variant;
  trace.plant = perturbed_plant(ctrl.model.vehicle, ctrl.model.tyre, cfg.perturbation, cfg.seed);
  const PlantParams& plant = trace.plant;

  OcpModel model = ctrl.model;
  model.variant = ocp_variant(variant);
  const bool tv = model.variant.enable_tv;

  const double margin = cfg.end_margin >= 0.0
                            ? cfg.end_margin
                            : model.horizon.N * model.horizon.dt * sc.vdes;
  const double theta_end = sc.path.theta_max() - margin;
  if (sc.path.empty() || cfg.max_time <= 0.0 || cfg.start_theta >= theta_end) {
    trace.end = EndReason::kEmpty;
    return trace;
  }

  const int substeps = static_cast<int>(std::lround(ctrl_dt / cfg.plant_dt));
  const double h = cfg.plant_dt;
  const Recorder rec{sc, plant};

  VehicleState s = initial_state(sc, model.vehicle, cfg.start_theta);
  ActuatorCommand cmd{s.delta, {s.Fx_fl, s.Fx_fr, s.Fx_rl, s.Fx_rr}};
  ActuatorState act{s.delta, 0.0, cmd.fx};

  std::optional<OcpTrajectory> previous;
  long step = 0;
  double t = 0.0;

  for (;;) {
    // Controller: measured motion states, projected progress, commanded
    // actuator targets as the integrated inputs.
    VehicleState x0 = s;
    x0.theta = sc.path.project(s.X, s.Y);
    x0.delta = cmd.delta;
    x0.Fx_fl = cmd.fx.fl;
    x0.Fx_fr = cmd.fx.fr;
    x0.Fx_rl = cmd.fx.rl;
    x0.Fx_rr = cmd.fx.rr;

    ControllerEvent ev;
    ev.t = t;
    ControlRates u;
    try {
      const OcpTrajectory guess =
          previous && cfg.warm_start ? shift_warm_start(*previous, x0) : zero_rate_rollout(x0, model);
      const OcpProblem ocp(x0, sc, model, guess);
      const SolveReport rep = solve(ocp.nlp_spec(), ctrl.solver);
      ev.iterations = rep.iterations;
      ev.status = rep.status;
      ev.objective = rep.objective;
      ev.kkt = rep.kkt.max();
      if (finite_trajectory(rep.x)) {
        OcpTrajectory sol = ocp.unpack(rep.x);
        u = sol.u.front();
        previous = std::move(sol);
      } else {
        ev.held = true;
      }
    } catch (const NonFiniteEvaluation&) {
      ev.held = true;
    }
    if (ev.held) {
      u = ControlRates{};
      previous.reset();
    }
    if (!tv) symmetrise_axles(u);
    trace.events.push_back(ev);
    const ControllerEvent& last = trace.events.back();
    if (trace.rows.empty()) trace.rows.push_back(rec.row(t, s, cmd, &last));

    // Plant: actuated values move along the actuator response; the motion
    // states see them through the same RK2 code path as the prediction.
    EndReason end = EndReason::kEmpty;
    for (int i = 0; i < substeps; ++i) {
      ActuatorCommand next = cmd;
      next.delta += u.ddelta * h;
      next.fx.fl += u.dFx_fl * h;
      next.fx.fr += u.dFx_fr * h;
      next.fx.rl += u.dFx_rl * h;
      next.fx.rr += u.dFx_rr * h;

      ActuatorState act_next;
      if (cfg.actuator_lags) {
        act_next = actuator_step(act, next, h, cfg.actuators);
      } else {
        act_next = {next.delta, u.ddelta, next.fx};
      }
      ControlRates slope;
      if (cfg.actuator_lags) {
        slope = {(act_next.delta - act.delta) / h, (act_next.fx.fl - act.fx.fl) / h,
                 (act_next.fx.fr - act.fx.fr) / h, (act_next.fx.rl - act.fx.rl) / h,
                 (act_next.fx.rr - act.fx.rr) / h};
      } else {
        slope = u;
      }
      s = rk2_step(s, slope, h, plant.tyre, plant.vehicle);
      s.delta = act_next.delta;
      s.Fx_fl = act_next.fx.fl;
      s.Fx_fr = act_next.fx.fr;
      s.Fx_rl = act_next.fx.rl;
      s.Fx_rr = act_next.fx.rr;
      act = act_next;
      cmd = next;
      ++step;
      t = static_cast<double>(step) * h;

      const bool hit = rec.collided(s);
      if (hit || step % cfg.trace_every == 0) {
        trace.rows.push_back(rec.row(t, s, cmd, &last));
        if (hit) {
          end = EndReason::kCollision;
          break;
        }
        if (trace.rows.back().state.theta >= theta_end) {
          end = EndReason::kPathEnd;
          break;
        }
      }
      if (!s.to_vector().allFinite()) {
        throw std::runtime_error("plant state became non-finite at t = " + std::to_string(t));
      }
    }
    if (hook) hook(last, trace.rows.back());
    if (end != EndReason::kEmpty) {
      trace.end = end;
      break;
    }
    if (t >= cfg.max_time - 0.5 * h) {
      trace.end = EndReason::kTimeLimit;
      break;
    }
  }
  return trace;
}

RunMetrics compute_metrics(const SimTrace& t) {
  RunMetrics m;
  m.end_reason = to_string(t.end);
  if (t.rows.empty()) return m;
  m.empty = false;
  const std::size_t nobs = t.rows.front().d_obs.size();
  m.min_clearance.assign(nobs, std::numeric_limits<double>::infinity());
  m.min_clearance_x.assign(nobs, 0.0);
  m.min_speed = std::numeric_limits<double>::infinity();
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < nobs && i < r.d_obs.size(); ++i) {
      if (r.d_obs[i] < m.min_clearance[i]) {
        m.min_clearance[i] = r.d_obs[i];
        m.min_clearance_x[i] = r.state.X;
      }
    }
    // Sideslip and TV moment come from the recorded state so synthetic traces
    // need no derived columns.
    const double beta = std::atan2(r.state.vy, r.state.vx) * 180.0 / M_PI;
    m.sideslip_peak_deg = std::max(m.sideslip_peak_deg, std::abs(beta));
    m.min_speed = std::min(m.min_speed, r.state.vx);
    m.max_tv_moment = std::max(m.max_tv_moment, std::abs(tv_yaw_moment(r.state, t.plant.vehicle)));
    m.max_lateral_accel = std::max(m.max_lateral_accel, std::abs(r.ay));
  }
  for (double c : m.min_clearance) m.collided = m.collided || c < 0.0;
  if (!t.events.empty()) {
    double sum = 0.0;
    for (const auto& e : t.events) {
      sum += e.iterations;
      m.max_solve_iters = std::max(m.max_solve_iters, e.iterations);
    }
    m.mean_solve_iters = sum / static_cast<double>(t.events.size());
  }
  m.final_x = t.rows.back().state.X;
  m.duration = t.rows.back().t;
  return m;
}

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  std::snprintf(buf, sizeof buf, "%.9g", v);
  out += buf;
}

}  // namespace

std::string trace_csv(const SimTrace& t) {
  std::string out =
      "t_s,x_m,y_m,psi_rad,vx_mps,vy_mps,r_radps,theta_m,delta_rad,fx_fl_n,fx_fr_n,fx_rl_n,"
      "fx_rr_n,d_obs1_m,d_obs2_m,beta_deg,mz_tv_nm,solve_iters,solve_status\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : t.rows) {
    const auto& s = r.state;
    const double cols[] = {r.t,     s.X,     s.Y,     s.psi,   s.vx,    s.vy,
                           s.r,     s.theta, s.delta, s.Fx_fl, s.Fx_fr, s.Fx_rl,
                           s.Fx_rr, r.d_obs.size() > 0 ? r.d_obs[0] : nan,
                           r.d_obs.size() > 1 ? r.d_obs[1] : nan, r.beta_deg, r.mz_tv};
    for (double c : cols) {
      append_number(out, c);
      out += ',';
    }
    out += std::to_string(r.solve_iters);
    out += ',';
    out += r.solve_status;
    out += '\n';
  }
  return out;
}

}  // namespace mpcctv
