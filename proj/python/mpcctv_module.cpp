#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

#include "mpcctv/run_config.hpp"
#include "mpcctv/tyre_model.hpp"
#include "mpcctv/vehicle_model.hpp"

namespace py = pybind11;
using namespace mpcctv;

namespace {

py::dict metrics_dict(const RunMetrics& m) {
  return py::module_::import("json").attr("loads")(metrics_json(m).dump());
}

RunConfig config_from(const std::string& json_text) {
  return parse_run_config(json_text.empty() ? nlohmann::json::object() : nlohmann::json::parse(json_text));
}

}  // namespace

PYBIND11_MODULE(_mpcctv, m) {
  m.doc() = "MPCC with torque vectoring: tyre model, vehicle model and closed-loop runs";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IllPosedFitError>(m, "IllPosedFitError", PyExc_RuntimeError);

  py::class_<TyreParams>(m, "TyreParams")
      .def(py::init<>())
      .def_readwrite("c1", &TyreParams::c1)
      .def_readwrite("c2", &TyreParams::c2)
      .def_readwrite("c3", &TyreParams::c3)
      .def_readwrite("Fz0", &TyreParams::Fz0)
      .def_readwrite("mu", &TyreParams::mu)
      .def_readwrite("zeta", &TyreParams::zeta)
      .def("validate", &TyreParams::validate);

  m.def("lateral_force",
        [](double alpha, double fx, double fz, const TyreParams& p) {
          return lateral_force(TyreQuery{alpha, fx, fz}, p);
        },
        py::arg("alpha"), py::arg("fx"), py::arg("fz"), py::arg("params") = TyreParams{});
  m.def("cornering_stiffness_fx", &cornering_stiffness_fx, py::arg("fx"), py::arg("fz"),
        py::arg("params") = TyreParams{});
  m.def("fy_max", &fy_max, py::arg("fx"), py::arg("fz"), py::arg("params") = TyreParams{});
  m.def("slip_angle_threshold", &slip_angle_threshold, py::arg("fx"), py::arg("fz"),
        py::arg("params") = TyreParams{});

  m.def("fit_tyre_csv",
        [](const std::string& path, double fz0) {
          const auto rep = fit_tyre_params(read_tyre_samples_csv(path), fz0);
          return py::make_tuple(rep.params, rep.rms_residual_n);
        },
        py::arg("path"), py::arg("fz0") = 4300.0);
  m.def("tyre_samples_csv",
        [](const TyreParams& p) { return tyre_samples_to_csv(generate_tyre_samples(p)); },
        py::arg("params") = TyreParams{});

  py::class_<VehicleParams>(m, "VehicleParams")
      .def(py::init<>())
      .def_readwrite("m", &VehicleParams::m)
      .def_readwrite("Izz", &VehicleParams::Izz)
      .def_readwrite("lf", &VehicleParams::lf)
      .def_readwrite("lr", &VehicleParams::lr)
      .def_readwrite("tf", &VehicleParams::tf)
      .def_readwrite("tr", &VehicleParams::tr)
      .def_readwrite("hcog", &VehicleParams::hcog);

  py::class_<VehicleState>(m, "VehicleState")
      .def(py::init<>())
      .def_readwrite("X", &VehicleState::X)
      .def_readwrite("Y", &VehicleState::Y)
      .def_readwrite("psi", &VehicleState::psi)
      .def_readwrite("vx", &VehicleState::vx)
      .def_readwrite("vy", &VehicleState::vy)
      .def_readwrite("r", &VehicleState::r)
      .def_readwrite("theta", &VehicleState::theta)
      .def_readwrite("delta", &VehicleState::delta)
      .def_readwrite("Fx_fl", &VehicleState::Fx_fl)
      .def_readwrite("Fx_fr", &VehicleState::Fx_fr)
      .def_readwrite("Fx_rl", &VehicleState::Fx_rl)
      .def_readwrite("Fx_rr", &VehicleState::Fx_rr);

  py::class_<ControlRates>(m, "ControlRates")
      .def(py::init<>())
      .def(py::init([](double dd, double fl, double fr, double rl, double rr) {
             return ControlRates{dd, fl, fr, rl, rr};
           }),
           py::arg("ddelta"), py::arg("dFx_fl"), py::arg("dFx_fr"), py::arg("dFx_rl"), py::arg("dFx_rr"))
      .def_readwrite("ddelta", &ControlRates::ddelta)
      .def_readwrite("dFx_fl", &ControlRates::dFx_fl)
      .def_readwrite("dFx_fr", &ControlRates::dFx_fr)
      .def_readwrite("dFx_rl", &ControlRates::dFx_rl)
      .def_readwrite("dFx_rr", &ControlRates::dFx_rr);

  m.def("rk2_step",
        [](const VehicleState& s, const ControlRates& u, double dt, const TyreParams& t,
           const VehicleParams& v) { return rk2_step(s, u, dt, t, v); },
        py::arg("state"), py::arg("rates"), py::arg("dt"), py::arg("tyre") = TyreParams{},
        py::arg("vehicle") = VehicleParams{});
  m.def("tv_yaw_moment", &tv_yaw_moment, py::arg("state"), py::arg("vehicle") = VehicleParams{});

  m.def("default_config", [] { return run_config_json(config_from("")).dump(2); });
  m.def("validate_config", [](const std::string& text) { config_from(text); }, py::arg("json_text"));

  m.def("simulate",
        [](const std::string& config_json, const std::string& variant) {
          const RunConfig c = config_from(config_json);
          const auto v = parse_variant(variant);
          if (!v) throw ConfigError("unknown variant '" + variant + "'");
          SimTrace t;
          {
            py::gil_scoped_release release;
            t = run_closed_loop(build_dlc_scenario(c.scenario), *v, c.controller, c.sim);
          }
          return py::make_tuple(trace_csv(t), metrics_dict(compute_metrics(t)));
        },
        py::arg("config_json") = "", py::arg("variant") = "wtv-wca",
        "Runs one variant; returns (trace CSV text, metrics dict).");
}
