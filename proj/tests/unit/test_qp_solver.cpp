#include <doctest.h>

#include <cmath>

#include "mpcctv/qp_solver.hpp"
#include "test_support.hpp"

using namespace mpcctv;
using testing_support::Gen;

namespace {

struct KktError {
  double stationarity, primal, dual, complementarity;
};

KktError kkt_error(const QpProblem& qp, const QpResult& r) {
  KktError e{};
  Eigen::VectorXd g = qp.H * r.x + qp.g;
  if (qp.beq.size()) g += qp.Aeq.transpose() * r.lambda_eq;
  if (qp.bin.size()) g += qp.Ain.transpose() * r.mu_in;
  e.stationarity = g.lpNorm<Eigen::Infinity>();
  if (qp.beq.size()) e.primal = (qp.Aeq * r.x - qp.beq).lpNorm<Eigen::Infinity>();
  for (Eigen::Index i = 0; i < qp.bin.size(); ++i) {
    const double s = qp.Ain.row(i).dot(r.x) - qp.bin[i];
    e.primal = std::max(e.primal, s);
    e.dual = std::max(e.dual, -r.mu_in[i]);
    e.complementarity = std::max(e.complementarity, std::abs(r.mu_in[i] * s));
  }
  return e;
}

QpProblem random_qp(Gen& gen, int n, int p, int m) {
  QpProblem qp;
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = gen.uniform(-1, 1);
  qp.H = M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  qp.g.resize(n);
  for (int i = 0; i < n; ++i) qp.g[i] = gen.uniform(-5, 5);
  // Constraints built around a known feasible point.
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0[i] = gen.uniform(-1, 1);
  qp.Aeq.resize(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) qp.Aeq(i, j) = gen.uniform(-1, 1);
  qp.beq = qp.Aeq * x0;
  qp.Ain.resize(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) qp.Ain(i, j) = gen.uniform(-1, 1);
  qp.bin = qp.Ain * x0;
  for (int i = 0; i < m; ++i) qp.bin[i] += gen.uniform(0.0, 0.5);
  return qp;
}

}  // namespace

TEST_CASE("unconstrained minimiser") {
  QpProblem qp;
  qp.H = Eigen::Matrix2d{{2.0, 0.0}, {0.0, 4.0}};
  qp.g = Eigen::Vector2d{-2.0, 4.0};
  const auto r = solve_qp(qp);
  CHECK(r.status == QpStatus::kOptimal);
  CHECK(r.x[0] == doctest::Approx(1.0));
  CHECK(r.x[1] == doctest::Approx(-1.0));
}

TEST_CASE("equality and inequality constrained by hand") {
  // min x^2 + y^2  s.t. x + y = 1, x <= 0.2  ->  (0.2, 0.8)
  QpProblem qp;
  qp.H = 2.0 * Eigen::Matrix2d::Identity();
  qp.g = Eigen::Vector2d::Zero();
  qp.Aeq = Eigen::RowVector2d{1.0, 1.0};
  qp.beq = Eigen::VectorXd::Constant(1, 1.0);
  qp.Ain = Eigen::RowVector2d{1.0, 0.0};
  qp.bin = Eigen::VectorXd::Constant(1, 0.2);
  const auto r = solve_qp(qp);
  REQUIRE(r.status == QpStatus::kOptimal);
  CHECK(r.x[0] == doctest::Approx(0.2));
  CHECK(r.x[1] == doctest::Approx(0.8));
  // Stationarity: 2y + lambda = 0 -> lambda = -1.6; 2x + lambda + mu = 0 -> mu = 1.2.
  CHECK(r.lambda_eq[0] == doctest::Approx(-1.6));
  CHECK(r.mu_in[0] == doctest::Approx(1.2));
  CHECK(r.objective == doctest::Approx(0.68));
}

TEST_CASE("random strictly convex problems satisfy KKT") {
  Gen gen(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = gen.integer(2, 12);
    const int p = gen.integer(0, n - 1);
    const int m = gen.integer(0, 3 * n);
    const QpProblem qp = random_qp(gen, n, p, m);
    const auto r = solve_qp(qp);
    REQUIRE(r.status == QpStatus::kOptimal);
    const auto e = kkt_error(qp, r);
    const double scale = 1.0 + qp.g.lpNorm<Eigen::Infinity>();
    CHECK(e.stationarity < 1e-8 * scale);
    CHECK(e.primal < 1e-9);
    CHECK(e.dual < 1e-12);
    CHECK(e.complementarity < 1e-8 * scale);
  }
}

TEST_CASE("infeasible constraints are reported") {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Identity(1, 1);
  qp.g = Eigen::VectorXd::Zero(1);
  qp.Ain = Eigen::MatrixXd(2, 1);
  qp.Ain << 1.0, -1.0;
  qp.bin = Eigen::Vector2d{0.0, -1.0};  // x <= 0 and x >= 1
  CHECK(solve_qp(qp).status == QpStatus::kInfeasible);
}

TEST_CASE("dependent equality rows are reported") {
  QpProblem qp;
  qp.H = Eigen::Matrix2d::Identity();
  qp.g = Eigen::Vector2d::Zero();
  qp.Aeq = Eigen::Matrix2d{{1.0, 1.0}, {2.0, 2.0}};
  qp.beq = Eigen::Vector2d{1.0, 3.0};
  CHECK(solve_qp(qp).status == QpStatus::kEqualityDependent);
}

TEST_CASE("size mismatches throw") {
  QpProblem qp;
  qp.H = Eigen::Matrix2d::Identity();
  qp.g = Eigen::Vector3d::Zero();
  CHECK_THROWS(solve_qp(qp));
}
