#pragma once

// Contouring-control optimal control problem over an N-step horizon.
//
// Decision vector, stage by stage: [u_k (5), x_{k+1} (12)] for k = 0..N-1.
// Force states and force rates are stored in kN and kN/s inside the vector;
// everything handed to or returned from the public API is in SI units.
//
// Objective: sum over stages of squared weighted residuals
//   tracking (contouring, lag, speed), input rates, obstacle/edge clearance.
// Equalities: RK2 dynamics, plus per-axle equal force rates without TV.
// Inequalities per stage: friction circle (8), straight-line TV limit (4),
// road disc (1).

#include <span>
#include <vector>

#include "mpcctv/nlp_solver.hpp"
#include "mpcctv/track_scenario.hpp"
#include "mpcctv/vehicle_model.hpp"

namespace mpcctv {

struct CostWeights {
  double qCon = 1.0;
  double qLag = 10.0;
  double qVel = 0.05;
  double qddelta = 1e-4;
  double qdFx_fl = 1e-8;
  double qdFx_fr = 1e-8;
  double qdFx_rl = 1e-8;
  double qdFx_rr = 1e-8;
  double Pk = 100.0;

  void validate() const;
};

struct ConstraintParams {
  double Sf = 0.9;
  double Ts_tv = 2.0;
  double delta_max = 18.0 * M_PI / 180.0;    // [rad]
  double fx_max = 3600.0;                    // [N]
  double ddelta_max = 90.0 * M_PI / 180.0;   // [rad/s]
  double dfx_max = 7200.0;                   // [N/s]

  void validate() const;
};

struct HorizonConfig {
  int N = 30;
  double dt = 0.05;

  void validate() const;
};

struct OcpVariant {
  bool enable_tv = true;
  bool enable_ca = true;
};

// --- Cost and constraint building blocks ------------------------------------

template <typename T>
struct ContouringErrors {
  T eCon, eLag;
};

template <typename T>
ContouringErrors<T> contouring_lag_errors(const T& X, const T& Y, const PathPoint<T>& ref) {
  using std::cos;
  using std::sin;
  const T dx = X - ref.X;
  const T dy = Y - ref.Y;
  return {sin(ref.psi) * dx - cos(ref.psi) * dy, -cos(ref.psi) * dx - sin(ref.psi) * dy};
}

template <typename T>
ContouringErrors<T> contouring_lag_errors(const T& X, const T& Y, const T& theta,
                                          const ReferencePath& path) {
  return contouring_lag_errors(X, Y, path.sample(theta));
}

struct StageErrors {
  double eCon = 0.0;
  double eLag = 0.0;
  double eVel = 0.0;
};

double tracking_cost(std::span<const StageErrors> stages, const CostWeights& w);
double input_cost(std::span<const ControlRates> stages, const CostWeights& w);

/// Gaussian prioritisation weight: Pk inside a collision, decaying over
/// [0, dsft], zero beyond.
double dynamic_weight(double D, double dsft, double Pk);

struct StageClearances {
  std::vector<double> obstacles;  // one per scenario obstacle [m]
  std::vector<double> edges;      // one per scenario edge [m]
};

double obstacle_cost(std::span<const StageClearances> stages, const Scenario& sc,
                     const CostWeights& w);

/// Largest admissible |Fx| per wheel: min(Sf mu Fz, box).
WheelQuad<double> friction_circle_bounds(const WheelLoads& loads, const ConstraintParams& cp,
                                         double mu);

/// Squared distance from the centreline point at theta minus (Wt/2)^2.
template <typename T>
T road_boundary_residual(const T& X, const T& Y, const PathPoint<T>& centre, double width) {
  const T dx = X - centre.X;
  const T dy = Y - centre.Y;
  return dx * dx + dy * dy - 0.25 * width * width;
}

template <typename T>
T road_boundary_residual(const T& X, const T& Y, const T& theta, const ReferencePath& path) {
  return road_boundary_residual(X, Y, path.sample(theta), path.width());
}

/// |Fx_l - Fx_r| - Ts |Fz_l - Fz_r| for the front and rear axle.
template <typename T>
std::array<T, 2> tv_straight_residuals(const BasicVehicleState<T>& s, const BasicWheelLoads<T>& l,
                                       const ConstraintParams& cp) {
  using tyre_detail::abs_of;
  return {abs_of(T(s.Fx_fl - s.Fx_fr)) - cp.Ts_tv * abs_of(T(l.fl - l.fr)),
          abs_of(T(s.Fx_rl - s.Fx_rr)) - cp.Ts_tv * abs_of(T(l.rl - l.rr))};
}

// --- Problem assembly --------------------------------------------------------

struct OcpTrajectory {
  std::vector<ControlRates> u;   // N entries
  std::vector<VehicleState> x;   // N + 1 entries, x[0] is the initial state
};

struct CostBreakdown {
  double track = 0.0;
  double inp = 0.0;
  double obs = 0.0;
  double total() const { return track + inp + obs; }
};

struct OcpModel {
  VehicleParams vehicle;
  TyreParams tyre;
  CostWeights weights;
  ConstraintParams constraints;
  HorizonConfig horizon;
  OcpVariant variant;
};

inline constexpr int kStageVars = kInputDim + kStateDim;
inline constexpr int kStageIneq = 13;

class OcpProblem {
 public:
  OcpProblem(const VehicleState& x0, const Scenario& scenario, const OcpModel& model,
             const OcpTrajectory& guess);

  int num_vars() const { return N_ * kStageVars; }
  int num_eq() const { return N_ * kStateDim + (model_.variant.enable_tv ? 0 : 2 * N_); }
  int num_ineq() const { return N_ * kStageIneq; }
  int horizon() const { return N_; }

  Eigen::VectorXd pack(const OcpTrajectory& traj) const;
  OcpTrajectory unpack(const Eigen::VectorXd& z) const;

  NlpValues values(const Eigen::VectorXd& z) const;
  NlpDerivatives derivatives(const Eigen::VectorXd& z) const;
  /// Block-diagonal Gauss-Newton approximation of the objective Hessian.
  Eigen::MatrixXd gauss_newton_hessian(const Eigen::VectorXd& z) const;
  CostBreakdown cost_breakdown(const Eigen::VectorXd& z) const;

  Eigen::VectorXd lower_bounds() const;
  Eigen::VectorXd upper_bounds() const;
  const Eigen::VectorXd& initial_guess() const { return z0_; }

  /// Obstacle/edge weights frozen from the initial guess, [stage][obstacle..., edge...].
  const std::vector<std::vector<double>>& frozen_weights() const { return frozen_; }

  /// Solver interface; the returned spec refers to this object.
  NlpSpec nlp_spec() const;

  const VehicleState& initial_state() const { return x0_; }
  const OcpModel& model() const { return model_; }

 private:
  template <typename T>
  void stage_residuals(int k, const StateVec<T>& x, const InputVec<T>& u, T* out) const;
  template <typename T>
  void stage_inequalities(const StateVec<T>& x, T* out) const;
  int num_stage_residuals() const;

  VehicleState x0_;
  const Scenario* scenario_;
  OcpModel model_;
  int N_;
  InputVec<double> u_scale_;
  StateVec<double> x_scale_;
  std::vector<std::vector<double>> frozen_;
  Eigen::VectorXd z0_;
};

OcpProblem build_ocp(const VehicleState& x0, const Scenario& sc, const OcpModel& model,
                     const OcpTrajectory& warm);

/// Rolls the model forward with zero rates from x0; once a state spins out
/// or stalls the last plausible one is repeated.
OcpTrajectory zero_rate_rollout(const VehicleState& x0, const OcpModel& model);

/// Previous solution moved one stage ahead, last stage duplicated; x[0] is
/// replaced by the new initial state.
OcpTrajectory shift_warm_start(const OcpTrajectory& previous, const VehicleState& x0);

}  // namespace mpcctv
