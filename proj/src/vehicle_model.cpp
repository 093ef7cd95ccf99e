#include "mpcctv/vehicle_model.hpp"

#include <stdexcept>

namespace mpcctv {

void VehicleParams::validate() const {
  const double fields[] = {m, Izz, lf, lr, tf, tr, rho, Cd1, Cd0, Af, hcog, g};
  for (double f : fields) {
    if (!(f > 0.0)) throw std::invalid_argument("vehicle parameters must all be positive");
  }
}

VehicleState rk2_step(const VehicleState& s, const ControlRates& u, double dt,
                      const TyreParams& tyre, const VehicleParams& p) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk2_step: dt must be positive");
  return VehicleState::from_vector(rk2_step<double>(s.to_vector(), u.to_vector(), dt, tyre, p));
}

double tv_yaw_moment(const VehicleState& s, const VehicleParams& p) {
  return 0.5 * p.tf * (s.Fx_fr - s.Fx_fl) * std::cos(s.delta) + 0.5 * p.tr * (s.Fx_rr - s.Fx_rl);
}

}  // namespace mpcctv
