#pragma once

// Sequential quadratic programming with a damped BFGS Hessian approximation
// and an l1 merit line search.
//
// Problem form:
//   min f(x)  s.t.  c_eq(x) = 0,  c_in(x) <= 0,  lower <= x <= upper
//
// Sparse structure is exploited in two optional ways:
//  * `dependent_vars` names one variable per equality row such that the
//    square Jacobian block on those columns is nonsingular (for an optimal
//    control problem: the states). Each QP is then solved in the reduced
//    space of the remaining variables after a sparse LU elimination.
//  * `hessian_seed` replaces the identity start of the BFGS matrix, e.g. with
//    a Gauss-Newton approximation of a least-squares objective.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace mpcctv {

using SparseMat = Eigen::SparseMatrix<double>;

struct NlpValues {
  double objective = 0.0;
  Eigen::VectorXd eq;
  Eigen::VectorXd ineq;
};

struct NlpDerivatives {
  Eigen::VectorXd gradient;
  SparseMat eq_jacobian;
  SparseMat ineq_jacobian;
};

struct NlpSpec {
  int num_vars = 0;
  int num_eq = 0;
  int num_ineq = 0;
  Eigen::VectorXd lower;  // +-infinity allowed
  Eigen::VectorXd upper;
  Eigen::VectorXd x0;
  std::function<NlpValues(const Eigen::VectorXd&)> values;
  std::function<NlpDerivatives(const Eigen::VectorXd&)> derivatives;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian_seed;  // optional
  std::vector<int> dependent_vars;  // optional, size num_eq
  std::vector<int> soft_group;      // optional, group id per inequality row
  // Optional partition of the variables into contiguous (start, size) blocks.
  // When given, the Lagrangian Hessian is assumed block diagonal and each
  // block keeps its own BFGS approximation.
  std::vector<std::pair<int, int>> hessian_blocks;

  void validate() const;
};

struct SqpOptions {
  int max_iter = 100;
  double kkt_tol = 1e-6;
  bool soft_constraints = false;
  double soft_penalty = 1e4;
  int ls_max_backtracks = 30;
};

enum class SolveStatus { kConverged, kMaxIter, kLineSearchFailure };

const char* to_string(SolveStatus s);

struct KktResiduals {
  double stationarity = 0.0;  // relative to max(1, |grad f|_inf)
  double primal = 0.0;        // equality and hard inequality violation
  double complementarity = 0.0;
  double max() const { return std::max({stationarity, primal, complementarity}); }
};

struct SolveReport {
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd lambda_eq;  // grad f + J_eq' lambda + J_in' mu (+ bounds) = 0
  Eigen::VectorXd mu_ineq;
  KktResiduals kkt;
  int iterations = 0;
  SolveStatus status = SolveStatus::kMaxIter;
  int qp_restorations = 0;
  // Merit before and after every accepted step, evaluated with the penalty in
  // force for that step.
  std::vector<std::pair<double, double>> merit_steps;
  double min_bfgs_eigenvalue = 0.0;  // smallest eigenvalue seen after an update
  bool track_bfgs_spectrum = false;
};

/// Thrown when an evaluator returns a non-finite value; carries the point.
class NonFiniteEvaluation : public std::runtime_error {
 public:
  NonFiniteEvaluation(const std::string& what, Eigen::VectorXd point)
      : std::runtime_error(what), point_(std::move(point)) {}
  const Eigen::VectorXd& point() const { return point_; }

 private:
  Eigen::VectorXd point_;
};

SolveReport solve(const NlpSpec& spec, const SqpOptions& options = {},
                  bool track_bfgs_spectrum = false);

/// Largest relative error between central differences and the analytic
/// gradient/Jacobians, |fd - an| / max(1, |an|), over the objective and every
/// constraint row.
double gradient_check(const NlpSpec& spec, const Eigen::VectorXd& point, double h = 1e-6);

}  // namespace mpcctv
