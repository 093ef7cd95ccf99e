#pragma once

// Planar double-track vehicle model used both for prediction inside the
// controller and (at a finer step) as the simulation plant.
//
// State: pose, body velocities, yaw rate, travelled distance, and the
// integrated inputs (road-wheel angle, four longitudinal wheel forces).
// Inputs are the rates of the integrated quantities.

#include <array>
#include <cmath>

#include <Eigen/Core>

#include "mpcctv/tyre_model.hpp"

namespace mpcctv {

struct VehicleParams {
  double m = 1997.0;     // [kg]
  double Izz = 3198.0;   // [kg m^2]
  double lf = 1.430;     // [m]
  double lr = 1.455;     // [m]
  double tf = 1.540;     // [m]
  double tr = 1.576;     // [m]
  double rho = 1.204;    // [kg/m^3]
  double Cd1 = 0.25;     // drag coefficient
  double Cd0 = 45.0;     // rolling resistance [N]
  double Af = 2.4;       // frontal area [m^2]
  double hcog = 0.52;    // CoG height [m]
  double g = 9.81;       // [m/s^2]

  double wheelbase() const { return lf + lr; }
  void validate() const;
};

inline constexpr int kStateDim = 12;
inline constexpr int kInputDim = 5;

// Index layout shared by the vector form of the state.
enum StateIndex : int {
  kX = 0, kY, kPsi, kVx, kVy, kR, kTheta, kDelta, kFxFL, kFxFR, kFxRL, kFxRR
};
enum InputIndex : int { kDDelta = 0, kDFxFL, kDFxFR, kDFxRL, kDFxRR };

template <typename T>
using StateVec = Eigen::Matrix<T, kStateDim, 1>;
template <typename T>
using InputVec = Eigen::Matrix<T, kInputDim, 1>;

template <typename T>
struct BasicVehicleState {
  T X{0.0}, Y{0.0}, psi{0.0};
  T vx{0.0}, vy{0.0}, r{0.0};
  T theta{0.0};
  T delta{0.0};
  T Fx_fl{0.0}, Fx_fr{0.0}, Fx_rl{0.0}, Fx_rr{0.0};

  StateVec<T> to_vector() const {
    StateVec<T> v;
    v << X, Y, psi, vx, vy, r, theta, delta, Fx_fl, Fx_fr, Fx_rl, Fx_rr;
    return v;
  }
  static BasicVehicleState from_vector(const StateVec<T>& v) {
    return {v[kX], v[kY], v[kPsi], v[kVx], v[kVy], v[kR], v[kTheta],
            v[kDelta], v[kFxFL], v[kFxFR], v[kFxRL], v[kFxRR]};
  }
};
using VehicleState = BasicVehicleState<double>;

template <typename T>
struct BasicControlRates {
  T ddelta{0.0};
  T dFx_fl{0.0}, dFx_fr{0.0}, dFx_rl{0.0}, dFx_rr{0.0};

  InputVec<T> to_vector() const {
    InputVec<T> v;
    v << ddelta, dFx_fl, dFx_fr, dFx_rl, dFx_rr;
    return v;
  }
  static BasicControlRates from_vector(const InputVec<T>& v) {
    return {v[kDDelta], v[kDFxFL], v[kDFxFR], v[kDFxRL], v[kDFxRR]};
  }
};
using ControlRates = BasicControlRates<double>;

template <typename T>
struct BasicWheelLoads {
  T fl{0.0}, fr{0.0}, rl{0.0}, rr{0.0};
  T sum() const { return fl + fr + rl + rr; }
};
using WheelLoads = BasicWheelLoads<double>;

template <typename T>
struct WheelQuad {
  T fl, fr, rl, rr;
};

inline constexpr double kMinWheelSpeed = 0.5;  // slip-angle guard [m/s]

template <typename T>
T resistance_force(const T& vx, const VehicleParams& p) {
  return 0.5 * p.rho * p.Af * p.Cd1 * vx * vx + p.Cd0;
}

template <typename T>
WheelQuad<T> wheel_slip_angles(const BasicVehicleState<T>& s, const VehicleParams& p) {
  using std::atan2;
  auto guard = [](const T& u) { return u < kMinWheelSpeed ? T(kMinWheelSpeed) : u; };
  const T vy_f = s.vy + p.lf * s.r;
  const T vy_r = s.vy - p.lr * s.r;
  const T half_tf_r = 0.5 * p.tf * s.r;
  const T half_tr_r = 0.5 * p.tr * s.r;
  return {atan2(vy_f, guard(s.vx - half_tf_r)) - s.delta,
          atan2(vy_f, guard(s.vx + half_tf_r)) - s.delta,
          atan2(vy_r, guard(s.vx - half_tr_r)),
          atan2(vy_r, guard(s.vx + half_tr_r))};
}

/// Quasi-static vertical loads. Longitudinal transfer moves load between axles;
/// lateral transfer is split per axle by static axle load. Positive ay loads
/// the right-hand wheels. Each load is clamped at zero afterwards.
template <typename T>
BasicWheelLoads<T> wheel_vertical_loads_unclamped(const T& ax, const T& ay,
                                                  const VehicleParams& p) {
  const double L = p.wheelbase();
  const double weight = p.m * p.g;
  const double front_share = p.lr / L;
  const double rear_share = p.lf / L;
  const T long_transfer = p.m * ax * p.hcog / L;  // total, front -> rear
  const T lat_f = p.m * front_share * ay * p.hcog / p.tf;
  const T lat_r = p.m * rear_share * ay * p.hcog / p.tr;
  const T front = 0.5 * (weight * front_share - long_transfer);
  const T rear = 0.5 * (weight * rear_share + long_transfer);
  return {front - lat_f, front + lat_f, rear - lat_r, rear + lat_r};
}

template <typename T>
BasicWheelLoads<T> wheel_vertical_loads(const T& ax, const T& ay, const VehicleParams& p) {
  auto l = wheel_vertical_loads_unclamped(ax, ay, p);
  auto clamp0 = [](const T& v) { return v < 0.0 ? T(0.0) : v; };
  return {clamp0(l.fl), clamp0(l.fr), clamp0(l.rl), clamp0(l.rr)};
}

/// Acceleration estimate used to evaluate loads without an algebraic loop:
/// longitudinal from the commanded wheel forces, lateral from vx * r.
template <typename T>
std::array<T, 2> load_acceleration_estimate(const BasicVehicleState<T>& s,
                                            const VehicleParams& p) {
  using std::cos;
  const T ax = ((s.Fx_fl + s.Fx_fr) * cos(s.delta) + s.Fx_rl + s.Fx_rr -
                resistance_force(s.vx, p)) / p.m;
  const T ay = s.vx * s.r;
  return {ax, ay};
}

template <typename T>
BasicWheelLoads<T> state_loads(const BasicVehicleState<T>& s, const VehicleParams& p) {
  const auto a = load_acceleration_estimate(s, p);
  return wheel_vertical_loads(a[0], a[1], p);
}

template <typename T>
WheelQuad<T> lateral_forces(const BasicVehicleState<T>& s, const BasicWheelLoads<T>& loads,
                            const TyreParams& tyre, const VehicleParams& p) {
  const auto a = wheel_slip_angles(s, p);
  return {lateral_force(BasicTyreQuery<T>{a.fl, s.Fx_fl, loads.fl}, tyre),
          lateral_force(BasicTyreQuery<T>{a.fr, s.Fx_fr, loads.fr}, tyre),
          lateral_force(BasicTyreQuery<T>{a.rl, s.Fx_rl, loads.rl}, tyre),
          lateral_force(BasicTyreQuery<T>{a.rr, s.Fx_rr, loads.rr}, tyre)};
}

/// Time derivative of the full state.
template <typename T>
BasicVehicleState<T> state_derivative(const BasicVehicleState<T>& s,
                                      const BasicControlRates<T>& u,
                                      const BasicWheelLoads<T>& loads, const TyreParams& tyre,
                                      const VehicleParams& p) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const auto fy = lateral_forces(s, loads, tyre, p);
  const T cd = cos(s.delta);
  const T sd = sin(s.delta);
  const T cpsi = cos(s.psi);
  const T spsi = sin(s.psi);
  const T fx_front = s.Fx_fl + s.Fx_fr;
  const T fy_front = fy.fl + fy.fr;
  const T fy_rear = fy.rl + fy.rr;

  BasicVehicleState<T> d;
  d.X = s.vx * cpsi - s.vy * spsi;
  d.Y = s.vx * spsi + s.vy * cpsi;
  d.psi = s.r;
  d.vx = (fx_front * cd - fy_front * sd + s.Fx_rl + s.Fx_rr - resistance_force(s.vx, p)) / p.m +
         s.r * s.vy;
  d.vy = (fx_front * sd + fy_front * cd + fy_rear) / p.m - s.r * s.vx;
  d.r = (p.lf * cd * fy_front - p.lr * fy_rear + p.lf * sd * fx_front +
         0.5 * p.tf * cd * (s.Fx_fr - s.Fx_fl) + 0.5 * p.tf * sd * (fy.fl - fy.fr) +
         0.5 * p.tr * (s.Fx_rr - s.Fx_rl)) /
        p.Izz;
  d.theta = sqrt(s.vx * s.vx + s.vy * s.vy);
  d.delta = u.ddelta;
  d.Fx_fl = u.dFx_fl;
  d.Fx_fr = u.dFx_fr;
  d.Fx_rl = u.dFx_rl;
  d.Fx_rr = u.dFx_rr;
  return d;
}

/// Derivative with loads evaluated from the state itself.
template <typename T>
StateVec<T> model_derivative(const StateVec<T>& x, const InputVec<T>& u, const TyreParams& tyre,
                             const VehicleParams& p) {
  const auto s = BasicVehicleState<T>::from_vector(x);
  const auto loads = state_loads(s, p);
  return state_derivative(s, BasicControlRates<T>::from_vector(u), loads, tyre, p).to_vector();
}

/// Explicit midpoint step.
template <typename T, typename Field>
StateVec<T> rk2_step(const StateVec<T>& x, double dt, Field&& f) {
  const StateVec<T> k1 = f(x);
  const StateVec<T> mid = x + (0.5 * dt) * k1;
  return x + dt * f(mid);
}

template <typename T>
StateVec<T> rk2_step(const StateVec<T>& x, const InputVec<T>& u, double dt, const TyreParams& tyre,
                     const VehicleParams& p) {
  return rk2_step<T>(x, dt, [&](const StateVec<T>& xs) { return model_derivative(xs, u, tyre, p); });
}

/// Midpoint step for a time-dependent field f(t, x).
template <typename T, typename Field>
StateVec<T> rk2_step_t(const StateVec<T>& x, double t, double dt, Field&& f) {
  const StateVec<T> k1 = f(t, x);
  const StateVec<T> mid = x + (0.5 * dt) * k1;
  return x + dt * f(t + 0.5 * dt, mid);
}

/// Classic fourth-order step, used as a high-accuracy reference.
template <typename T, typename Field>
StateVec<T> rk4_step(const StateVec<T>& x, double dt, Field&& f) {
  const StateVec<T> k1 = f(x);
  const StateVec<T> k2 = f(StateVec<T>(x + (0.5 * dt) * k1));
  const StateVec<T> k3 = f(StateVec<T>(x + (0.5 * dt) * k2));
  const StateVec<T> k4 = f(StateVec<T>(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <typename T, typename Field>
StateVec<T> rk4_step_t(const StateVec<T>& x, double t, double dt, Field&& f) {
  const double h = 0.5 * dt;
  const StateVec<T> k1 = f(t, x);
  const StateVec<T> k2 = f(t + h, StateVec<T>(x + h * k1));
  const StateVec<T> k3 = f(t + h, StateVec<T>(x + h * k2));
  const StateVec<T> k4 = f(t + dt, StateVec<T>(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Convenience double overloads.
VehicleState rk2_step(const VehicleState& s, const ControlRates& u, double dt,
                      const TyreParams& tyre, const VehicleParams& p);

/// Yaw moment produced by left/right force differences alone [Nm].
double tv_yaw_moment(const VehicleState& s, const VehicleParams& p);

}  // namespace mpcctv
