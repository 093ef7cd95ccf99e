#include "mpcctv/ocp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mpcctv/autodiff.hpp"

namespace mpcctv {

void CostWeights::validate() const {
  const double all[] = {qCon, qLag, qVel, qddelta, qdFx_fl, qdFx_fr, qdFx_rl, qdFx_rr, Pk};
  for (double v : all) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("cost weights must be finite and >= 0");
  }
}

void ConstraintParams::validate() const {
  if (!(Sf > 0.0 && Sf <= 1.0)) throw std::invalid_argument("Sf must lie in (0, 1]");
  if (!(Ts_tv > 0.0)) throw std::invalid_argument("Ts_tv must be positive");
  if (!(delta_max > 0.0 && fx_max > 0.0 && ddelta_max > 0.0 && dfx_max > 0.0)) {
    throw std::invalid_argument("box bounds must be positive");
  }
}

void HorizonConfig::validate() const {
  if (N < 1) throw std::invalid_argument("horizon N must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("horizon dt must be positive");
}

double tracking_cost(std::span<const StageErrors> stages, const CostWeights& w) {
  double J = 0.0;
  for (const auto& e : stages) J += w.qCon * e.eCon * e.eCon + w.qLag * e.eLag * e.eLag + w.qVel * e.eVel * e.eVel;
  return J;
}

double input_cost(std::span<const ControlRates> stages, const CostWeights& w) {
  double J = 0.0;
  for (const auto& u : stages) {
    J += w.qddelta * u.ddelta * u.ddelta + w.qdFx_fl * u.dFx_fl * u.dFx_fl +
         w.qdFx_fr * u.dFx_fr * u.dFx_fr + w.qdFx_rl * u.dFx_rl * u.dFx_rl +
         w.qdFx_rr * u.dFx_rr * u.dFx_rr;
  }
  return J;
}

double dynamic_weight(double D, double dsft, double Pk) {
  if (D < 0.0) return Pk;
  if (D <= dsft) return Pk * std::exp(-2.0 * D * D / (dsft * dsft));
  return 0.0;
}

double obstacle_cost(std::span<const StageClearances> stages, const Scenario& sc,
                     const CostWeights& w) {
  double J = 0.0;
  for (const auto& st : stages) {
    for (double D : st.obstacles) {
      const double e = D - sc.dsft_obstacle;
      J += dynamic_weight(D, sc.dsft_obstacle, w.Pk) * e * e;
    }
    for (double D : st.edges) {
      const double e = D - sc.dsft_edge;
      J += dynamic_weight(D, sc.dsft_edge, w.Pk) * e * e;
    }
  }
  return J;
}

WheelQuad<double> friction_circle_bounds(const WheelLoads& loads, const ConstraintParams& cp,
                                         double mu) {
  auto b = [&](double fz) { return std::min(cp.Sf * mu * std::max(fz, 0.0), cp.fx_max); };
  return {b(loads.fl), b(loads.fr), b(loads.rl), b(loads.rr)};
}

// -----------------------------------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kForceScale = 1000.0;
constexpr double kTvSmoothing = 50.0;  // [N]

template <typename T>
StateVec<T> physical_state(const Eigen::VectorXd& z, int offset, const StateVec<double>& s) {
  StateVec<T> x;
  for (int i = 0; i < kStateDim; ++i) x[i] = T(z[offset + i] * s[i]);
  return x;
}

}  // namespace

OcpProblem::OcpProblem(const VehicleState& x0, const Scenario& scenario, const OcpModel& model,
                       const OcpTrajectory& guess)
    : x0_(x0), scenario_(&scenario), model_(model), N_(model.horizon.N) {
  model_.horizon.validate();
  model_.weights.validate();
  model_.constraints.validate();
  if (!x0.to_vector().allFinite()) throw std::invalid_argument("initial state must be finite");
  if (static_cast<int>(guess.u.size()) != N_ || static_cast<int>(guess.x.size()) != N_ + 1) {
    throw std::invalid_argument("initial guess must have N inputs and N + 1 states");
  }
  u_scale_ << 1.0, kForceScale, kForceScale, kForceScale, kForceScale;
  x_scale_.setOnes();
  for (int i = kFxFL; i <= kFxRR; ++i) x_scale_[i] = kForceScale;

  z0_ = pack(guess).cwiseMax(lower_bounds()).cwiseMin(upper_bounds());

  const Scenario& sc = *scenario_;
  frozen_.assign(static_cast<std::size_t>(N_), {});
  if (model_.variant.enable_ca) {
    for (int k = 0; k < N_; ++k) {
      const VehicleState& s = guess.x[static_cast<std::size_t>(k + 1)];
      auto& w = frozen_[static_cast<std::size_t>(k)];
      for (const auto& o : sc.obstacles) {
        w.push_back(dynamic_weight(v2o_distance(s.X, s.Y, o, sc.rveh), sc.dsft_obstacle, model_.weights.Pk));
      }
      const auto ref = sc.path.sample(s.theta);
      const double lat = lateral_offset(s.X, s.Y, ref);
      for (double e : sc.edges) {
        w.push_back(dynamic_weight(v2e_distance(lat, e, sc.rveh), sc.dsft_edge, model_.weights.Pk));
      }
    }
  }
}

Eigen::VectorXd OcpProblem::pack(const OcpTrajectory& traj) const {
  Eigen::VectorXd z(num_vars());
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    z.segment<kInputDim>(o) = traj.u[static_cast<std::size_t>(k)].to_vector().cwiseQuotient(u_scale_);
    z.segment<kStateDim>(o + kInputDim) =
        traj.x[static_cast<std::size_t>(k + 1)].to_vector().cwiseQuotient(x_scale_);
  }
  return z;
}

OcpTrajectory OcpProblem::unpack(const Eigen::VectorXd& z) const {
  OcpTrajectory t;
  t.x.push_back(x0_);
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    t.u.push_back(ControlRates::from_vector(z.segment<kInputDim>(o).cwiseProduct(u_scale_)));
    t.x.push_back(VehicleState::from_vector(z.segment<kStateDim>(o + kInputDim).cwiseProduct(x_scale_)));
  }
  return t;
}

Eigen::VectorXd OcpProblem::lower_bounds() const { return -upper_bounds(); }

Eigen::VectorXd OcpProblem::upper_bounds() const {
  const auto& cp = model_.constraints;
  Eigen::VectorXd ub = Eigen::VectorXd::Constant(num_vars(), kInf);
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    ub[o + kDDelta] = cp.ddelta_max;
    for (int i = kDFxFL; i <= kDFxRR; ++i) ub[o + i] = cp.dfx_max / kForceScale;
    ub[o + kInputDim + kDelta] = cp.delta_max;
    for (int i = kFxFL; i <= kFxRR; ++i) ub[o + kInputDim + i] = cp.fx_max / kForceScale;
  }
  return ub;
}

int OcpProblem::num_stage_residuals() const {
  int n = 3 + kInputDim;
  if (model_.variant.enable_ca) {
    n += static_cast<int>(scenario_->obstacles.size() + scenario_->edges.size());
  }
  return n;
}

// Weighted residuals of stage k; squared and summed they give the stage cost.
template <typename T>
void OcpProblem::stage_residuals(int k, const StateVec<T>& x, const InputVec<T>& u, T* out) const {
  using std::sqrt;
  const auto& w = model_.weights;
  const Scenario& sc = *scenario_;
  const PathPoint<T> ref = sc.path.sample(x[kTheta]);
  const auto e = contouring_lag_errors(x[kX], x[kY], ref);
  out[0] = std::sqrt(w.qCon) * e.eCon;
  out[1] = std::sqrt(w.qLag) * e.eLag;
  out[2] = std::sqrt(w.qVel) * (x[kVx] - sc.vdes);
  const double qu[kInputDim] = {w.qddelta, w.qdFx_fl, w.qdFx_fr, w.qdFx_rl, w.qdFx_rr};
  for (int i = 0; i < kInputDim; ++i) out[3 + i] = std::sqrt(qu[i]) * u[i];
  if (!model_.variant.enable_ca) return;
  const auto& q = frozen_[static_cast<std::size_t>(k)];
  int r = 3 + kInputDim;
  std::size_t j = 0;
  for (const auto& o : sc.obstacles) {
    out[r++] = std::sqrt(q[j++]) * (v2o_distance(x[kX], x[kY], o, sc.rveh) - sc.dsft_obstacle);
  }
  if (!sc.edges.empty()) {
    const T lat = lateral_offset(x[kX], x[kY], ref);
    for (double edge : sc.edges) {
      out[r++] = std::sqrt(q[j++]) * (v2e_distance(lat, edge, sc.rveh) - sc.dsft_edge);
    }
  }
}

template <typename T>
void OcpProblem::stage_inequalities(const StateVec<T>& x, T* out) const {
  const auto& cp = model_.constraints;
  const double mu = model_.tyre.mu;
  const auto s = BasicVehicleState<T>::from_vector(x);
  // Unclamped loads: the rows stay smooth and |Fx| <= Sf mu Fz keeps every
  // wheel on the ground.
  const auto acc = load_acceleration_estimate(s, model_.vehicle);
  const auto loads = wheel_vertical_loads_unclamped(acc[0], acc[1], model_.vehicle);
  const T fx[4] = {s.Fx_fl, s.Fx_fr, s.Fx_rl, s.Fx_rr};
  const T fz[4] = {loads.fl, loads.fr, loads.rl, loads.rr};
  for (int i = 0; i < 4; ++i) {
    const T cap = cp.Sf * mu * fz[i];
    out[2 * i] = (fx[i] - cap) / kForceScale;
    out[2 * i + 1] = (-fx[i] - cap) / kForceScale;
  }
  // |dFz| rounded off as sqrt(dFz^2 + e^2) - e: never above |dFz| and smooth
  // at the straight-line point where the rows are active.
  using std::sqrt;
  const auto smooth_abs = [](const T& a) { return T(sqrt(a * a + kTvSmoothing * kTvSmoothing) - kTvSmoothing); };
  const T dfx_f = s.Fx_fl - s.Fx_fr;
  const T dfx_r = s.Fx_rl - s.Fx_rr;
  const T allow_f = cp.Ts_tv * smooth_abs(T(loads.fl - loads.fr));
  const T allow_r = cp.Ts_tv * smooth_abs(T(loads.rl - loads.rr));
  out[8] = (dfx_f - allow_f) / kForceScale;
  out[9] = (-dfx_f - allow_f) / kForceScale;
  out[10] = (dfx_r - allow_r) / kForceScale;
  out[11] = (-dfx_r - allow_r) / kForceScale;
  out[12] = road_boundary_residual(x[kX], x[kY], x[kTheta], scenario_->path);
}

NlpValues OcpProblem::values(const Eigen::VectorXd& z) const {
  NlpValues v;
  v.eq.resize(num_eq());
  v.ineq.resize(num_ineq());
  const int nr = num_stage_residuals();
  std::vector<double> r(static_cast<std::size_t>(nr));
  StateVec<double> xk = x0_.to_vector();
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    const InputVec<double> u = z.segment<kInputDim>(o).cwiseProduct(u_scale_);
    const StateVec<double> xn = physical_state<double>(z, o + kInputDim, x_scale_);
    const StateVec<double> f = rk2_step<double>(xk, u, model_.horizon.dt, model_.tyre, model_.vehicle);
    v.eq.segment<kStateDim>(k * kStateDim) = (xn - f).cwiseQuotient(x_scale_);
    stage_residuals<double>(k, xn, u, r.data());
    for (double ri : r) v.objective += ri * ri;
    stage_inequalities<double>(xn, v.ineq.data() + k * kStageIneq);
    xk = xn;
  }
  if (!model_.variant.enable_tv) {
    for (int k = 0; k < N_; ++k) {
      const int o = k * kStageVars;
      v.eq[N_ * kStateDim + 2 * k] = z[o + kDFxFR] - z[o + kDFxFL];
      v.eq[N_ * kStateDim + 2 * k + 1] = z[o + kDFxRR] - z[o + kDFxRL];
    }
  }
  return v;
}

CostBreakdown OcpProblem::cost_breakdown(const Eigen::VectorXd& z) const {
  CostBreakdown c;
  const int nr = num_stage_residuals();
  std::vector<double> r(static_cast<std::size_t>(nr));
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    const InputVec<double> u = z.segment<kInputDim>(o).cwiseProduct(u_scale_);
    const StateVec<double> xn = physical_state<double>(z, o + kInputDim, x_scale_);
    stage_residuals<double>(k, xn, u, r.data());
    for (int i = 0; i < nr; ++i) {
      const double sq = r[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)];
      if (i < 3) c.track += sq;
      else if (i < 3 + kInputDim) c.inp += sq;
      else c.obs += sq;
    }
  }
  return c;
}

NlpDerivatives OcpProblem::derivatives(const Eigen::VectorXd& z) const {
  using D17 = Dual<kStageVars>;
  using D12 = Dual<kStateDim>;
  NlpDerivatives d;
  d.gradient = Eigen::VectorXd::Zero(num_vars());
  const int nr = num_stage_residuals();
  std::vector<D17> r(static_cast<std::size_t>(nr));
  std::vector<Eigen::Triplet<double>> te, ti;
  te.reserve(static_cast<std::size_t>(N_) * 12 * 30);
  ti.reserve(static_cast<std::size_t>(N_) * kStageIneq * kStateDim);

  StateVec<double> xk = x0_.to_vector();
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    const InputVec<double> u = z.segment<kInputDim>(o).cwiseProduct(u_scale_);
    const StateVec<double> xn = physical_state<double>(z, o + kInputDim, x_scale_);

    // Dynamics: seed [x_k, u_k].
    {
      Eigen::Matrix<double, kStageVars, 1> seedv;
      seedv << xk, u;
      const auto dual = seed_duals<kStageVars>(seedv);
      const StateVec<D17> xd = dual.template head<kStateDim>();
      const InputVec<D17> ud = dual.template tail<kInputDim>();
      const StateVec<D17> f = rk2_step<D17>(xd, ud, model_.horizon.dt, model_.tyre, model_.vehicle);
      for (int i = 0; i < kStateDim; ++i) {
        const int row = k * kStateDim + i;
        const auto& g = f[i].derivatives();
        te.emplace_back(row, o + kInputDim + i, 1.0);
        if (k > 0) {
          const int po = (k - 1) * kStageVars + kInputDim;
          for (int j = 0; j < kStateDim; ++j) {
            if (g[j] != 0.0) te.emplace_back(row, po + j, -g[j] * x_scale_[j] / x_scale_[i]);
          }
        }
        for (int j = 0; j < kInputDim; ++j) {
          if (g[kStateDim + j] != 0.0) te.emplace_back(row, o + j, -g[kStateDim + j] * u_scale_[j] / x_scale_[i]);
        }
      }
    }

    // Objective: seed [u_k, x_{k+1}] in decision-vector order.
    {
      Eigen::Matrix<double, kStageVars, 1> seedv;
      seedv << u, xn;
      const auto dual = seed_duals<kStageVars>(seedv);
      const StateVec<D17> xd = dual.template tail<kStateDim>();
      const InputVec<D17> ud = dual.template head<kInputDim>();
      stage_residuals<D17>(k, xd, ud, r.data());
      for (const auto& ri : r) {
        for (int j = 0; j < kStageVars; ++j) {
          const double sc = j < kInputDim ? u_scale_[j] : x_scale_[j - kInputDim];
          d.gradient[o + j] += 2.0 * ri.value() * ri.derivatives()[j] * sc;
        }
      }
    }

    // Inequalities depend on x_{k+1} only.
    {
      const auto xd = seed_duals<kStateDim>(xn);
      D12 out[kStageIneq];
      stage_inequalities<D12>(xd, out);
      for (int i = 0; i < kStageIneq; ++i) {
        for (int j = 0; j < kStateDim; ++j) {
          const double g = out[i].derivatives()[j];
          if (g != 0.0) ti.emplace_back(k * kStageIneq + i, o + kInputDim + j, g * x_scale_[j]);
        }
      }
    }
    xk = xn;
  }
  if (!model_.variant.enable_tv) {
    for (int k = 0; k < N_; ++k) {
      const int o = k * kStageVars;
      const int row = N_ * kStateDim + 2 * k;
      te.emplace_back(row, o + kDFxFR, 1.0);
      te.emplace_back(row, o + kDFxFL, -1.0);
      te.emplace_back(row + 1, o + kDFxRR, 1.0);
      te.emplace_back(row + 1, o + kDFxRL, -1.0);
    }
  }
  d.eq_jacobian.resize(num_eq(), num_vars());
  d.eq_jacobian.setFromTriplets(te.begin(), te.end());
  d.ineq_jacobian.resize(num_ineq(), num_vars());
  d.ineq_jacobian.setFromTriplets(ti.begin(), ti.end());
  return d;
}

Eigen::MatrixXd OcpProblem::gauss_newton_hessian(const Eigen::VectorXd& z) const {
  using D17 = Dual<kStageVars>;
  const int nr = num_stage_residuals();
  std::vector<D17> r(static_cast<std::size_t>(nr));
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(num_vars(), num_vars());
  Eigen::Matrix<double, kStageVars, 1> scale;
  scale << u_scale_, x_scale_;
  for (int k = 0; k < N_; ++k) {
    const int o = k * kStageVars;
    Eigen::Matrix<double, kStageVars, 1> seedv;
    seedv << z.segment<kInputDim>(o).cwiseProduct(u_scale_),
        z.segment<kStateDim>(o + kInputDim).cwiseProduct(x_scale_);
    const auto dual = seed_duals<kStageVars>(seedv);
    const StateVec<D17> xd = dual.template tail<kStateDim>();
    const InputVec<D17> ud = dual.template head<kInputDim>();
    stage_residuals<D17>(k, xd, ud, r.data());
    Eigen::Matrix<double, Eigen::Dynamic, kStageVars> J(nr, kStageVars);
    for (int i = 0; i < nr; ++i) J.row(i) = r[static_cast<std::size_t>(i)].derivatives().cwiseProduct(scale).transpose();
    H.block<kStageVars, kStageVars>(o, o) = 2.0 * J.transpose() * J;
  }
  return H;
}

NlpSpec OcpProblem::nlp_spec() const {
  NlpSpec s;
  s.num_vars = num_vars();
  s.num_eq = num_eq();
  s.num_ineq = num_ineq();
  s.lower = lower_bounds();
  s.upper = upper_bounds();
  s.x0 = z0_;
  s.values = [this](const Eigen::VectorXd& z) { return values(z); };
  s.derivatives = [this](const Eigen::VectorXd& z) { return derivatives(z); };
  s.hessian_seed = [this](const Eigen::VectorXd& z) {
    Eigen::MatrixXd H = gauss_newton_hessian(z);
    H.diagonal().array() += 1e-4;
    return H;
  };
  for (int k = 0; k < N_; ++k) {
    for (int i = 0; i < kStateDim; ++i) s.dependent_vars.push_back(k * kStageVars + kInputDim + i);
  }
  if (!model_.variant.enable_tv) {
    for (int k = 0; k < N_; ++k) {
      s.dependent_vars.push_back(k * kStageVars + kDFxFR);
      s.dependent_vars.push_back(k * kStageVars + kDFxRR);
    }
  }
  for (int k = 0; k < N_; ++k) {
    for (int i = 0; i < kStageIneq; ++i) s.soft_group.push_back(k);
  }
  // The Lagrangian couples x_k only with u_k, and in the decision vector x_k
  // directly precedes u_k; blocks are [u_0], [x_k, u_k] ..., [x_N].
  s.hessian_blocks.emplace_back(0, kInputDim);
  for (int k = 1; k < N_; ++k) s.hessian_blocks.emplace_back(k * kStageVars - kStateDim, kStageVars);
  s.hessian_blocks.emplace_back(N_ * kStageVars - kStateDim, kStateDim);
  return s;
}

OcpProblem build_ocp(const VehicleState& x0, const Scenario& sc, const OcpModel& model,
                     const OcpTrajectory& warm) {
  return OcpProblem(x0, sc, model, warm);
}

OcpTrajectory zero_rate_rollout(const VehicleState& x0, const OcpModel& model) {
  model.horizon.validate();
  // An open-loop rollout from a yawing state can spin out and, at low speed,
  // leave the stability region of the explicit step. Such states are useless
  // as a guess, so the last plausible one is repeated instead.
  auto plausible = [&](const VehicleState& s) {
    return s.to_vector().allFinite() && s.vx > 0.5 * std::max(x0.vx, 2.0) &&
           std::abs(s.vy) < s.vx && std::abs(s.r) < 2.0;
  };
  OcpTrajectory t;
  t.x.push_back(x0);
  bool frozen = false;
  for (int k = 0; k < model.horizon.N; ++k) {
    t.u.push_back(ControlRates{});
    VehicleState next = t.x.back();
    if (!frozen) {
      next = rk2_step(t.x.back(), ControlRates{}, model.horizon.dt, model.tyre, model.vehicle);
      if (!plausible(next)) {
        frozen = true;
        next = t.x.back();
      }
    }
    t.x.push_back(next);
  }
  return t;
}

OcpTrajectory shift_warm_start(const OcpTrajectory& previous, const VehicleState& x0) {
  if (previous.u.empty() || previous.x.size() != previous.u.size() + 1) {
    throw std::invalid_argument("warm start needs N inputs and N + 1 states");
  }
  OcpTrajectory t;
  t.x.push_back(x0);
  const std::size_t n = previous.u.size();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = std::min(k + 1, n - 1);
    t.u.push_back(previous.u[src]);
    t.x.push_back(previous.x[src + 1]);
  }
  return t;
}

}  // namespace mpcctv
