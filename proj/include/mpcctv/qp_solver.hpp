#pragma once

// Dense strictly convex QP:
//
//   min  1/2 x'Hx + g'x
//   s.t. Aeq x  = beq
//        Ain x <= bin
//
// Solved with the Goldfarb-Idnani dual active-set method, which starts from
// the unconstrained minimiser and adds violated constraints one at a time.
// Infeasibility is detected when no dual step can restore a violated row.

#include <Eigen/Dense>

namespace mpcctv {

enum class QpStatus { kOptimal, kInfeasible, kEqualityDependent, kIterationLimit };

const char* to_string(QpStatus s);

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd Aeq;
  Eigen::VectorXd beq;
  Eigen::MatrixXd Ain;
  Eigen::VectorXd bin;
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_eq;  // H x + g + Aeq' lambda + Ain' mu = 0
  Eigen::VectorXd mu_in;      // >= 0
  double objective = 0.0;
  int iterations = 0;
  QpStatus status = QpStatus::kOptimal;
};

QpResult solve_qp(const QpProblem& qp, int max_iterations = 0);

}  // namespace mpcctv
