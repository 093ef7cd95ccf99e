#include <doctest.h>

#include <cmath>
#include <limits>

#include "mpcctv/nlp_solver.hpp"

using namespace mpcctv;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SparseMat dense_to_sparse(const Eigen::MatrixXd& m) { return m.sparseView(); }

NlpSpec unconstrained(int n) {
  NlpSpec s;
  s.num_vars = n;
  s.lower = Eigen::VectorXd::Constant(n, -kInf);
  s.upper = Eigen::VectorXd::Constant(n, kInf);
  s.x0 = Eigen::VectorXd::Zero(n);
  return s;
}

NlpSpec scalar_quadratic() {
  NlpSpec s = unconstrained(1);
  s.values = [](const Eigen::VectorXd& x) {
    return NlpValues{(x[0] - 3.0) * (x[0] - 3.0), {}, {}};
  };
  s.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    d.gradient = Eigen::VectorXd::Constant(1, 2.0 * (x[0] - 3.0));
    d.eq_jacobian.resize(0, 1);
    d.ineq_jacobian.resize(0, 1);
    return d;
  };
  return s;
}

NlpSpec circle_on_line() {
  NlpSpec s = unconstrained(2);
  s.num_eq = 1;
  s.x0 << 2.0, -3.0;
  s.values = [](const Eigen::VectorXd& x) {
    return NlpValues{x.squaredNorm(), Eigen::VectorXd::Constant(1, x[0] + x[1] - 1.0), {}};
  };
  s.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    d.gradient = 2.0 * x;
    d.eq_jacobian = dense_to_sparse(Eigen::RowVector2d{1.0, 1.0});
    d.ineq_jacobian.resize(0, 2);
    return d;
  };
  return s;
}

NlpSpec rosenbrock() {
  NlpSpec s = unconstrained(2);
  s.x0 << -1.2, 1.0;
  s.values = [](const Eigen::VectorXd& x) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    return NlpValues{a * a + 100.0 * b * b, {}, {}};
  };
  s.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    const double b = x[1] - x[0] * x[0];
    d.gradient = Eigen::Vector2d{-2.0 * (1.0 - x[0]) - 400.0 * x[0] * b, 200.0 * b};
    d.eq_jacobian.resize(0, 2);
    d.ineq_jacobian.resize(0, 2);
    return d;
  };
  return s;
}

// Two-step chain x_{k+1} = x_k + u_k with a bound on u and an inequality on x1.
NlpSpec chain(bool reduced) {
  NlpSpec s;
  s.num_vars = 4;  // u0, x1, u1, x2
  s.num_eq = 2;
  s.num_ineq = 1;
  s.lower = Eigen::VectorXd::Constant(4, -kInf);
  s.upper = Eigen::VectorXd::Constant(4, kInf);
  s.upper[0] = 0.3;
  s.upper[2] = 0.3;
  s.x0 = Eigen::VectorXd::Zero(4);
  s.values = [](const Eigen::VectorXd& v) {
    NlpValues out;
    out.objective = v[0] * v[0] + v[2] * v[2] + 10.0 * (v[3] - 1.0) * (v[3] - 1.0);
    out.eq = Eigen::Vector2d{v[1] - v[0], v[3] - v[1] - v[2]};
    out.ineq = Eigen::VectorXd::Constant(1, v[1] - 0.2);
    return out;
  };
  s.derivatives = [](const Eigen::VectorXd& v) {
    NlpDerivatives d;
    d.gradient = Eigen::Vector4d{2.0 * v[0], 0.0, 2.0 * v[2], 20.0 * (v[3] - 1.0)};
    Eigen::MatrixXd je(2, 4);
    je << -1, 1, 0, 0, 0, -1, -1, 1;
    d.eq_jacobian = dense_to_sparse(je);
    d.ineq_jacobian = dense_to_sparse(Eigen::RowVector4d{0, 1, 0, 0});
    return d;
  };
  if (reduced) s.dependent_vars = {1, 3};
  return s;
}

}  // namespace

TEST_CASE("scalar quadratic") {
  const auto r = solve(scalar_quadratic());
  CHECK(r.status == SolveStatus::kConverged);
  CHECK(r.x[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(r.kkt.max() < 1e-6);
  CHECK(r.kkt.primal == 0.0);
}

TEST_CASE("closest point on a line") {
  const auto r = solve(circle_on_line());
  CHECK(r.status == SolveStatus::kConverged);
  CHECK(r.x[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(r.x[1] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(r.lambda_eq[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(r.kkt.max() < 1e-6);
}

TEST_CASE("rosenbrock") {
  const auto r = solve(rosenbrock());
  CHECK(r.status == SolveStatus::kConverged);
  CHECK(std::abs(r.x[0] - 1.0) < 1e-6);
  CHECK(std::abs(r.x[1] - 1.0) < 1e-6);
  CHECK(r.kkt.max() < 1e-6);
  CHECK(r.iterations <= 100);
}

TEST_CASE("iteration cap is respected") {
  SqpOptions o;
  o.max_iter = 3;
  const auto r = solve(rosenbrock(), o);
  CHECK(r.status == SolveStatus::kMaxIter);
  CHECK(r.iterations == 3);
}

TEST_CASE("reduced-space and full-space subproblems agree") {
  const auto full = solve(chain(false));
  const auto red = solve(chain(true));
  REQUIRE(full.status == SolveStatus::kConverged);
  REQUIRE(red.status == SolveStatus::kConverged);
  CHECK((full.x - red.x).lpNorm<Eigen::Infinity>() < 1e-7);
  CHECK((full.lambda_eq - red.lambda_eq).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(red.x[0] == doctest::Approx(0.2));
  CHECK(red.x[2] == doctest::Approx(0.3));
  CHECK(red.mu_ineq[0] > 0.0);
  CHECK(red.kkt.max() < 1e-6);
}

TEST_CASE("merit decreases and BFGS stays positive definite") {
  const auto r = solve(rosenbrock(), {}, true);
  REQUIRE(!r.merit_steps.empty());
  for (const auto& [before, after] : r.merit_steps) CHECK(after <= before);
  CHECK(r.min_bfgs_eigenvalue > 0.0);
  const auto c = solve(chain(true), {}, true);
  CHECK(c.min_bfgs_eigenvalue > 0.0);
}

TEST_CASE("identical inputs give bit-identical iterates") {
  const auto a = solve(rosenbrock());
  const auto b = solve(rosenbrock());
  CHECK(a.iterations == b.iterations);
  CHECK(a.x[0] == b.x[0]);
  CHECK(a.x[1] == b.x[1]);
}

TEST_CASE("infeasible linearisation triggers restoration") {
  // min (x - 0.5)^2 s.t. 1 - x^2 <= 0; at x = 0 the linearised row is 1 <= 0.
  NlpSpec s = unconstrained(1);
  s.num_ineq = 1;
  s.values = [](const Eigen::VectorXd& x) {
    return NlpValues{(x[0] - 0.5) * (x[0] - 0.5), {}, Eigen::VectorXd::Constant(1, 1.0 - x[0] * x[0])};
  };
  s.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    d.gradient = Eigen::VectorXd::Constant(1, 2.0 * (x[0] - 0.5));
    d.eq_jacobian.resize(0, 1);
    d.ineq_jacobian = dense_to_sparse(Eigen::MatrixXd::Constant(1, 1, -2.0 * x[0]));
    return d;
  };
  const auto r = solve(s);
  CHECK(r.qp_restorations >= 1);
  CHECK(r.status == SolveStatus::kConverged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("soft constraints return a point when the problem is infeasible") {
  // x <= -1 and x >= 1 cannot both hold.
  NlpSpec s = unconstrained(1);
  s.num_ineq = 2;
  s.values = [](const Eigen::VectorXd& x) {
    return NlpValues{x[0] * x[0], {}, Eigen::Vector2d{x[0] + 1.0, 1.0 - x[0]}};
  };
  s.derivatives = [](const Eigen::VectorXd&) {
    NlpDerivatives d;
    d.gradient = Eigen::VectorXd::Zero(1);
    d.eq_jacobian.resize(0, 1);
    d.ineq_jacobian = dense_to_sparse(Eigen::Vector2d{1.0, -1.0});
    return d;
  };
  s.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    d.gradient = Eigen::VectorXd::Constant(1, 2.0 * x[0]);
    d.eq_jacobian.resize(0, 1);
    d.ineq_jacobian = dense_to_sparse(Eigen::Vector2d{1.0, -1.0});
    return d;
  };
  SqpOptions o;
  o.soft_constraints = true;
  const auto r = solve(s, o);
  CHECK(std::isfinite(r.x[0]));
  CHECK(std::abs(r.x[0]) < 1.0 + 1e-6);
}

TEST_CASE("non-finite evaluation aborts with the point") {
  NlpSpec s = scalar_quadratic();
  s.x0[0] = -1.0;
  s.values = [](const Eigen::VectorXd& x) { return NlpValues{std::log(x[0]), {}, {}}; };
  try {
    solve(s);
    FAIL("expected NonFiniteEvaluation");
  } catch (const NonFiniteEvaluation& e) {
    CHECK(e.point()[0] == -1.0);
  }
}

TEST_CASE("gradient check") {
  CHECK(gradient_check(circle_on_line(), Eigen::Vector2d{0.3, -0.7}) < 1e-9);
  CHECK(gradient_check(scalar_quadratic(), Eigen::VectorXd::Constant(1, 1.5)) < 1e-9);

  // Smooth non-polynomial objective: error falls as h^2 until rounding takes over.
  NlpSpec s = unconstrained(2);
  s.values = [](const Eigen::VectorXd& x) {
    return NlpValues{std::exp(x[0]) * std::sin(3.0 * x[1]), {}, {}};
  };
  s.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    d.gradient = Eigen::Vector2d{std::exp(x[0]) * std::sin(3.0 * x[1]),
                                 3.0 * std::exp(x[0]) * std::cos(3.0 * x[1])};
    d.eq_jacobian.resize(0, 2);
    d.ineq_jacobian.resize(0, 2);
    return d;
  };
  const Eigen::Vector2d pt{0.4, 0.3};
  const double e4 = gradient_check(s, pt, 1e-2);
  const double e3 = gradient_check(s, pt, 1e-3);
  const double e2 = gradient_check(s, pt, 1e-4);
  CHECK(e4 / e3 == doctest::Approx(100.0).epsilon(0.05));
  CHECK(e3 / e2 == doctest::Approx(100.0).epsilon(0.05));
  CHECK(gradient_check(s, pt, 1e-6) < 1e-8);

  // A wrong derivative is caught.
  NlpSpec bad = circle_on_line();
  bad.derivatives = [](const Eigen::VectorXd& x) {
    NlpDerivatives d;
    d.gradient = 2.5 * x;
    d.eq_jacobian = dense_to_sparse(Eigen::RowVector2d{1.0, 1.0});
    d.ineq_jacobian.resize(0, 2);
    return d;
  };
  CHECK(gradient_check(bad, Eigen::Vector2d{1.0, 2.0}) > 0.05);
}

TEST_CASE("spec validation") {
  NlpSpec s = circle_on_line();
  s.dependent_vars = {0, 1};
  CHECK_THROWS(solve(s));
  s = circle_on_line();
  s.lower[0] = 2.0;
  s.upper[0] = 1.0;
  CHECK_THROWS(solve(s));
}
