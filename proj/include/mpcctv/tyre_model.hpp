#pragma once

// Extended Fiala lateral tyre model.
//
// The cornering stiffness depends on vertical load and longitudinal force, the
// lateral capacity follows the friction circle, and the saturated region has a
// slope controlled by zeta (zeta < 1 falls off after the peak, zeta > 1 keeps
// rising, zeta == 1 is the classic flat Fiala saturation).
//
// All kernels are templated on the scalar type so the same code is used with
// double and with Eigen::AutoDiffScalar when Jacobians are needed.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpcctv {

struct TyreParams {
  double c1 = 49.3;     // stiffness scale
  double c2 = 3.5;      // peak-load factor
  double c3 = 4.1;      // longitudinal/lateral coupling exponent
  double Fz0 = 4300.0;  // nominal load [N]
  double mu = 0.95;     // friction coefficient
  double zeta = 0.9;    // saturation gradient, in [0, 2]

  void validate() const;
};

template <typename T>
struct BasicTyreQuery {
  T alpha;  // slip angle [rad]
  T Fx;     // longitudinal force [N]
  T Fz;     // vertical load [N]
};
using TyreQuery = BasicTyreQuery<double>;

/// Raised when a stiffness or capacity is requested outside the friction circle.
class SaturatedInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateStiffnessError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IllPosedFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace tyre_detail {

template <typename T>
T sign_of(const T& v) {
  if (v > 0.0) return T(1.0);
  if (v < 0.0) return T(-1.0);
  return T(0.0);
}

template <typename T>
T abs_of(const T& v) {
  return v < 0.0 ? T(-v) : v;
}

}  // namespace tyre_detail

// Load-dependent cornering stiffness [N/rad].
template <typename T>
T cornering_stiffness_fz(const T& Fz, const TyreParams& p) {
  // sin(2 atan(x)) written as 2x / (1 + x^2).
  const T x = Fz / (p.c2 * p.Fz0);
  return p.c1 * p.Fz0 * (2.0 * x / (1.0 + x * x));
}

// Stiffness reduced by longitudinal utilisation. Falls to zero when |Fx|
// reaches mu*Fz. Unchecked: callers must keep |Fx| < mu*Fz.
template <typename T>
T cornering_stiffness_fx_unchecked(const T& Fx, const T& Fz, const TyreParams& p) {
  using std::pow;
  const T cap = p.mu * Fz;
  const T ax = tyre_detail::abs_of(Fx);
  const T ratio = ax / cap;
  const T coupling = pow(T(1.0 - pow(ratio, p.c3)), p.c3);
  return 0.5 * (cap - ax) + coupling * (cornering_stiffness_fz(Fz, p) - 0.5 * cap);
}

template <typename T>
T fy_max_unchecked(const T& Fx, const T& Fz, const TyreParams& p) {
  using std::sqrt;
  const T cap = p.mu * Fz;
  const T d = cap * cap - Fx * Fx;
  return d > 0.0 ? T(sqrt(d)) : T(0.0);
}

/// Lateral force [N]. Positive slip gives a negative force. Returns 0 for an
/// unloaded tyre or when the longitudinal force consumes the whole friction
/// circle.
template <typename T>
T lateral_force(const BasicTyreQuery<T>& q, const TyreParams& p) {
  using std::tan;
  using tyre_detail::abs_of;
  if (!(q.Fz > 0.0)) return T(0.0);
  if (!(abs_of(q.Fx) < p.mu * q.Fz)) return T(0.0);

  const T cym = cornering_stiffness_fx_unchecked(q.Fx, q.Fz, p);
  const T fymax = fy_max_unchecked(q.Fx, q.Fz, p);
  if (!(cym > 0.0) || !(fymax > 0.0)) return T(0.0);

  const T t = tan(q.alpha);
  const T at = abs_of(t);
  const T tan_thr = 3.0 * fymax / cym;
  if (at <= tan_thr) {
    return -cym * t + cym * cym * t * at / (3.0 * fymax) -
           cym * cym * cym * t * t * t / (27.0 * fymax * fymax);
  }
  return 2.0 * cym * (p.zeta - 1.0) * t / 3.0 -
         cym * cym * (p.zeta - 1.0) * t * at / (9.0 * fymax) -
         fymax * p.zeta * tyre_detail::sign_of(q.alpha);
}

// Checked double-precision entry points.
double cornering_stiffness_fx(double Fx, double Fz, const TyreParams& p);
double fy_max(double Fx, double Fz, const TyreParams& p);
/// Threshold on tan(alpha) where the cubic branch peaks.
double slip_threshold(double cym, double fymax);
/// Slip angle [rad] at which the peak is reached for the given query loads.
double slip_angle_threshold(double Fx, double Fz, const TyreParams& p);

// ---------------------------------------------------------------------------
// Parameter identification

struct TyreSample {
  double alpha = 0.0;
  double Fx = 0.0;
  double Fz = 0.0;
  double Fy = 0.0;
};

struct TyreFitOptions {
  int starts = 8;
  int max_iterations = 200;
  std::size_t min_samples = 50;
  unsigned long long seed = 20231;
};

struct TyreFitReport {
  TyreParams params;
  double rms_residual_n = 0.0;
  std::size_t n_samples = 0;
  int best_start = -1;
};

/// Least-squares fit of (c1, c2, c3, mu, zeta) with Fz0 held at `fz0`.
/// Multi-start Levenberg-Marquardt from a Latin-hypercube start set; the
/// result is deterministic for a given option set.
TyreFitReport fit_tyre_params(std::span<const TyreSample> samples, double fz0 = 4300.0,
                              const TyreFitOptions& options = {});

/// Generates samples from a parameter set on a regular (alpha, Fx, Fz) grid.
std::vector<TyreSample> generate_tyre_samples(const TyreParams& p,
                                              double max_alpha_rad = 0.26,
                                              int n_alpha = 27);

// CSV with header `alpha_rad,fx_n,fz_n,fy_n`.
std::vector<TyreSample> read_tyre_samples_csv(const std::string& path);
std::string tyre_samples_to_csv(std::span<const TyreSample> samples);
std::string tyre_fit_report_json(const TyreFitReport& report);

}  // namespace mpcctv
