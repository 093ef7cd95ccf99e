#include "mpcctv/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace mpcctv {

namespace {

using nlohmann::json;

// Reads the keys of one object and rejects anything it was not asked for.
class Section {
 public:
  Section(const json& parent, const std::string& key) : Section(&parent, key, key) {}

  void num(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "must be a number");
      out = v->get<double>();
    }
  }
  void integer(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "must be an integer");
      out = v->get<int>();
    }
  }
  void u64(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void flag(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "must be true or false");
      out = v->get<bool>();
    }
  }
  void text(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "must be a string");
      out = v->get<std::string>();
    }
  }
  const json* take(const char* key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &obj_->at(key);
  }
  Section sub(const char* key) {
    seen_.insert(key);
    return Section(obj_, key, name_ + "." + key);
  }

  void finish() const {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError("config " + name_ + (key.empty() ? "" : "." + key) + ": " + msg);
  }

 private:
  Section(const json* parent, const std::string& key, std::string name) : name_(std::move(name)) {
    if (!parent || !parent->contains(key)) return;
    obj_ = &parent->at(key);
    if (!obj_->is_object()) fail("", "must be an object");
  }

  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

template <typename F>
void checked(const std::string& section, F&& validate) {
  try {
    validate();
  } catch (const std::exception& e) {
    throw ConfigError("config " + section + ": " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  {
    static const std::set<std::string> kTop{"vehicle", "tyre",  "controller", "solver",
                                             "scenario", "sim", "variant",    "out_dir"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!kTop.count(it.key())) throw ConfigError("config " + it.key() + ": unknown section");
    }
  }

  VehicleParams& v = c.controller.model.vehicle;
  Section sv(j, "vehicle");
  sv.num("m", v.m);
  sv.num("Izz", v.Izz);
  sv.num("lf", v.lf);
  sv.num("lr", v.lr);
  sv.num("tf", v.tf);
  sv.num("tr", v.tr);
  sv.num("rho", v.rho);
  sv.num("Cd1", v.Cd1);
  sv.num("Cd0", v.Cd0);
  sv.num("Af", v.Af);
  sv.num("hcog", v.hcog);
  sv.num("g", v.g);
  sv.finish();
  checked("vehicle", [&] { v.validate(); });

  TyreParams& t = c.controller.model.tyre;
  Section st(j, "tyre");
  st.num("c1", t.c1);
  st.num("c2", t.c2);
  st.num("c3", t.c3);
  st.num("Fz0", t.Fz0);
  st.num("mu", t.mu);
  st.num("zeta", t.zeta);
  st.finish();
  checked("tyre", [&] { t.validate(); });

  OcpModel& m = c.controller.model;
  Section sc(j, "controller");
  {
    Section w = sc.sub("weights");
    w.num("qCon", m.weights.qCon);
    w.num("qLag", m.weights.qLag);
    w.num("qVel", m.weights.qVel);
    w.num("qddelta", m.weights.qddelta);
    w.num("qdFx_fl", m.weights.qdFx_fl);
    w.num("qdFx_fr", m.weights.qdFx_fr);
    w.num("qdFx_rl", m.weights.qdFx_rl);
    w.num("qdFx_rr", m.weights.qdFx_rr);
    w.num("Pk", m.weights.Pk);
    w.finish();
    Section k = sc.sub("constraints");
    k.num("Sf", m.constraints.Sf);
    k.num("Ts_tv", m.constraints.Ts_tv);
    k.num("delta_max", m.constraints.delta_max);
    k.num("fx_max", m.constraints.fx_max);
    k.num("ddelta_max", m.constraints.ddelta_max);
    k.num("dfx_max", m.constraints.dfx_max);
    k.finish();
    Section h = sc.sub("horizon");
    h.integer("N", m.horizon.N);
    h.num("dt", m.horizon.dt);
    h.finish();
  }
  sc.finish();
  checked("controller.weights", [&] { m.weights.validate(); });
  checked("controller.constraints", [&] { m.constraints.validate(); });
  checked("controller.horizon", [&] { m.horizon.validate(); });

  SqpOptions& so = c.controller.solver;
  Section ss(j, "solver");
  ss.integer("max_iter", so.max_iter);
  ss.num("kkt_tol", so.kkt_tol);
  ss.flag("soft_constraints", so.soft_constraints);
  ss.num("soft_penalty", so.soft_penalty);
  ss.integer("ls_max_backtracks", so.ls_max_backtracks);
  ss.finish();
  if (so.max_iter < 1 || !(so.kkt_tol > 0.0) || !(so.soft_penalty > 0.0) || so.ls_max_backtracks < 1) {
    throw ConfigError("config solver: iteration limits and tolerances must be positive");
  }

  DlcConfig& d = c.scenario;
  Section sd(j, "scenario");
  sd.num("x_begin", d.x_begin);
  sd.num("x_end", d.x_end);
  sd.num("lane_offset", d.lane_offset);
  sd.num("road_width", d.road_width);
  sd.num("lc1_start", d.lc1_start);
  sd.num("lc1_length", d.lc1_length);
  sd.num("lc2_start", d.lc2_start);
  sd.num("lc2_length", d.lc2_length);
  sd.num("obstacle1_x", d.obstacle1_x);
  sd.num("obstacle2_x", d.obstacle2_x);
  sd.num("obstacle_radius", d.obstacle_radius);
  sd.num("vehicle_radius", d.vehicle_radius);
  sd.num("vdes", d.vdes);
  sd.num("dsft_obstacle", d.dsft_obstacle);
  sd.num("dsft_edge", d.dsft_edge);
  sd.num("sample_spacing", d.sample_spacing);
  sd.finish();
  checked("scenario", [&] { build_dlc_scenario(d).validate(); });

  SimConfig& s = c.sim;
  Section sm(j, "sim");
  sm.num("plant_dt", s.plant_dt);
  sm.num("max_time", s.max_time);
  sm.integer("trace_every", s.trace_every);
  sm.flag("actuator_lags", s.actuator_lags);
  sm.flag("warm_start", s.warm_start);
  sm.u64("seed", s.seed);
  sm.num("start_theta", s.start_theta);
  sm.num("end_margin", s.end_margin);
  {
    Section a = sm.sub("actuators");
    a.num("steer_wn", s.actuators.steer_wn);
    a.num("steer_zeta", s.actuators.steer_zeta);
    a.num("motor_tau", s.actuators.motor_tau);
    a.finish();
    Section p = sm.sub("perturbation");
    p.flag("enabled", s.perturbation.enabled);
    p.num("mass_range", s.perturbation.mass_range);
    p.num("stiffness_range", s.perturbation.stiffness_range);
    p.finish();
  }
  sm.finish();
  checked("sim", [&] { s.validate(m.horizon.dt); });

  if (j.contains("variant")) {
    const json& jv = j.at("variant");
    if (!jv.is_string()) throw ConfigError("config variant: must be a string");
    c.variant = parse_variant(jv.get<std::string>());
    if (!c.variant) {
      throw ConfigError("config variant: unknown variant '" + jv.get<std::string>() +
                        "' (expected wtv-wca, wotv-wca or wtv-woca)");
    }
  }
  if (j.contains("out_dir")) {
    if (!j.at("out_dir").is_string()) throw ConfigError("config out_dir: must be a string");
    c.out_dir = j.at("out_dir").get<std::string>();
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json run_config_json(const RunConfig& c) {
  const auto& v = c.controller.model.vehicle;
  const auto& t = c.controller.model.tyre;
  const auto& m = c.controller.model;
  const auto& so = c.controller.solver;
  const auto& d = c.scenario;
  const auto& s = c.sim;
  json j;
  j["vehicle"] = {{"m", v.m},     {"Izz", v.Izz}, {"lf", v.lf},   {"lr", v.lr},
                  {"tf", v.tf},   {"tr", v.tr},   {"rho", v.rho}, {"Cd1", v.Cd1},
                  {"Cd0", v.Cd0}, {"Af", v.Af},   {"hcog", v.hcog}, {"g", v.g}};
  j["tyre"] = {{"c1", t.c1}, {"c2", t.c2}, {"c3", t.c3}, {"Fz0", t.Fz0}, {"mu", t.mu}, {"zeta", t.zeta}};
  j["controller"] = {
      {"weights",
       {{"qCon", m.weights.qCon},
        {"qLag", m.weights.qLag},
        {"qVel", m.weights.qVel},
        {"qddelta", m.weights.qddelta},
        {"qdFx_fl", m.weights.qdFx_fl},
        {"qdFx_fr", m.weights.qdFx_fr},
        {"qdFx_rl", m.weights.qdFx_rl},
        {"qdFx_rr", m.weights.qdFx_rr},
        {"Pk", m.weights.Pk}}},
      {"constraints",
       {{"Sf", m.constraints.Sf},
        {"Ts_tv", m.constraints.Ts_tv},
        {"delta_max", m.constraints.delta_max},
        {"fx_max", m.constraints.fx_max},
        {"ddelta_max", m.constraints.ddelta_max},
        {"dfx_max", m.constraints.dfx_max}}},
      {"horizon", {{"N", m.horizon.N}, {"dt", m.horizon.dt}}}};
  j["solver"] = {{"max_iter", so.max_iter},
                 {"kkt_tol", so.kkt_tol},
                 {"soft_constraints", so.soft_constraints},
                 {"soft_penalty", so.soft_penalty},
                 {"ls_max_backtracks", so.ls_max_backtracks}};
  j["scenario"] = {{"x_begin", d.x_begin},
                   {"x_end", d.x_end},
                   {"lane_offset", d.lane_offset},
                   {"road_width", d.road_width},
                   {"lc1_start", d.lc1_start},
                   {"lc1_length", d.lc1_length},
                   {"lc2_start", d.lc2_start},
                   {"lc2_length", d.lc2_length},
                   {"obstacle1_x", d.obstacle1_x},
                   {"obstacle2_x", d.obstacle2_x},
                   {"obstacle_radius", d.obstacle_radius},
                   {"vehicle_radius", d.vehicle_radius},
                   {"vdes", d.vdes},
                   {"dsft_obstacle", d.dsft_obstacle},
                   {"dsft_edge", d.dsft_edge},
                   {"sample_spacing", d.sample_spacing}};
  j["sim"] = {{"plant_dt", s.plant_dt},
              {"max_time", s.max_time},
              {"trace_every", s.trace_every},
              {"actuator_lags", s.actuator_lags},
              {"warm_start", s.warm_start},
              {"seed", s.seed},
              {"start_theta", s.start_theta},
              {"end_margin", s.end_margin},
              {"actuators",
               {{"steer_wn", s.actuators.steer_wn},
                {"steer_zeta", s.actuators.steer_zeta},
                {"motor_tau", s.actuators.motor_tau}}},
              {"perturbation",
               {{"enabled", s.perturbation.enabled},
                {"mass_range", s.perturbation.mass_range},
                {"stiffness_range", s.perturbation.stiffness_range}}}};
  if (c.variant) j["variant"] = std::string(to_string(*c.variant));
  j["out_dir"] = c.out_dir;
  return j;
}

json metrics_json(const RunMetrics& m) {
  return {{"empty", m.empty},
          {"collided", m.collided},
          {"min_clearance_m", m.min_clearance},
          {"min_clearance_x_m", m.min_clearance_x},
          {"sideslip_peak_deg", m.sideslip_peak_deg},
          {"min_speed_mps", m.min_speed},
          {"max_tv_moment_nm", m.max_tv_moment},
          {"max_lateral_accel_mps2", m.max_lateral_accel},
          {"mean_solve_iters", m.mean_solve_iters},
          {"max_solve_iters", m.max_solve_iters},
          {"final_x_m", m.final_x},
          {"duration_s", m.duration},
          {"end_reason", m.end_reason}};
}

bool Comparison::ok() const {
  for (const auto& r : results)
    if (!r.error.empty()) return false;
  return results.size() == std::size(kAllVariants);
}

Comparison run_comparison(const RunConfig& c, const ProgressHook& hook) {
  Comparison out;
  out.seed = c.sim.seed;
  const Scenario sc = build_dlc_scenario(c.scenario);
  for (Variant v : kAllVariants) {
    VariantResult r;
    r.variant = v;
    try {
      EventHook h;
      if (hook) h = [&](const ControllerEvent& e, const TraceRow& row) { hook(v, e, row); };
      r.trace = run_closed_loop(sc, v, c.controller, c.sim, h);
      r.metrics = compute_metrics(*r.trace);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    out.results.push_back(std::move(r));
  }
  return out;
}

json comparison_json(const Comparison& c) {
  json j;
  j["seed"] = c.seed;
  json runs = json::array();
  const RunMetrics* by_variant[3] = {nullptr, nullptr, nullptr};
  for (const auto& r : c.results) {
    json e{{"variant", std::string(display_name(r.variant))}};
    if (r.error.empty()) {
      e["metrics"] = metrics_json(r.metrics);
      by_variant[static_cast<int>(r.variant)] = &r.metrics;
    } else {
      e["error"] = r.error;
    }
    runs.push_back(std::move(e));
  }
  j["runs"] = std::move(runs);

  json collided = json::object();
  json sideslip = json::object();
  for (const auto& r : c.results) {
    if (!r.error.empty()) continue;
    collided[std::string(display_name(r.variant))] = r.metrics.collided;
    sideslip[std::string(display_name(r.variant))] = r.metrics.sideslip_peak_deg;
  }
  json ord{{"collided", collided}, {"sideslip_peak_deg", sideslip}};

  const RunMetrics* wtv = by_variant[static_cast<int>(Variant::kWtvWca)];
  const RunMetrics* wotv = by_variant[static_cast<int>(Variant::kWotvWca)];
  const RunMetrics* woca = by_variant[static_cast<int>(Variant::kWtvWoca)];
  auto clear = [](const RunMetrics* m, std::size_t i) {
    return m && m->min_clearance.size() > i ? m->min_clearance[i] : -1.0;
  };
  if (woca && !woca->min_clearance.empty()) {
    const double x = woca->min_clearance_x[0];
    ord["wtv_woca_collides_at_obstacle1"] = woca->min_clearance[0] < 0.0 && x >= 95.0 && x <= 105.0;
  }
  if (wtv) {
    ord["wtv_wca_clears_both"] = clear(wtv, 0) > 0.0 && clear(wtv, 1) > 0.0;
    ord["wtv_wca_max_tv_moment_in_band"] = wtv->max_tv_moment >= 1000.0 && wtv->max_tv_moment <= 3000.0;
  }
  if (wtv && wotv) {
    ord["wotv_wca_clears_obstacle1"] = clear(wotv, 0) > 0.0;
    ord["wotv_obstacle2_clearance_below_wtv"] = clear(wotv, 1) < clear(wtv, 1);
    ord["sideslip_wtv_below_wotv"] = wtv->sideslip_peak_deg < wotv->sideslip_peak_deg;
    ord["sideslip_ratio_wotv_over_wtv"] =
        wtv->sideslip_peak_deg > 0.0 ? wotv->sideslip_peak_deg / wtv->sideslip_peak_deg : 0.0;
    ord["wtv_min_speed_above_wotv"] = wtv->min_speed > wotv->min_speed;
  }
  j["orderings"] = std::move(ord);
  return j;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

}  // namespace mpcctv
