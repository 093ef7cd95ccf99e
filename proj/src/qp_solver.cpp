#include "mpcctv/qp_solver.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mpcctv {

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kEqualityDependent: return "equality_dependent";
    case QpStatus::kIterationLimit: return "iteration_limit";
  }
  return "unknown";
}

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kInf = std::numeric_limits<double>::infinity();

// Working storage of the dual active-set iteration. Constraints are held in
// the internal form n'x + c0 (= 0 for equalities, >= 0 for inequalities).
class DualActiveSet {
 public:
  DualActiveSet(const Eigen::MatrixXd& H, int n) : n_(n), R_(Eigen::MatrixXd::Zero(n, n)) {
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    double shift = 0.0;
    while (llt.info() != Eigen::Success) {
      shift = shift == 0.0 ? 1e-10 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : 10.0 * shift;
      llt.compute(H + shift * Eigen::MatrixXd::Identity(n, n));
    }
    llt_ = llt;
    J_ = llt_.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  }

  Eigen::VectorXd unconstrained_minimiser(const Eigen::VectorXd& g) const { return -llt_.solve(g); }

  // d = J' np, z = J2 d2, r = R^-1 d1
  void directions(const Eigen::VectorXd& np, int iq) {
    d_ = J_.transpose() * np;
    z_ = J_.rightCols(n_ - iq) * d_.tail(n_ - iq);
    r_ = R_.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d_.head(iq));
  }

  bool add_constraint(int& iq) {
    for (int j = n_ - 1; j >= iq + 1; --j) {
      double cc = d_[j - 1];
      double ss = d_[j];
      const double h = std::hypot(cc, ss);
      if (h < kEps) continue;
      d_[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_[j - 1] = -h;
      } else {
        d_[j - 1] = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j - 1);
        const double t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++iq;
    R_.col(iq - 1).head(iq) = d_.head(iq);
    if (std::abs(d_[iq - 1]) <= kEps * r_norm_) return false;
    r_norm_ = std::max(r_norm_, std::abs(d_[iq - 1]));
    return true;
  }

  void delete_constraint(std::vector<int>& A, Eigen::VectorXd& u, int p, int& iq, int l) {
    int qq = -1;
    for (int i = p; i < iq; ++i) {
      if (A[static_cast<std::size_t>(i)] == l) {
        qq = i;
        break;
      }
    }
    if (qq < 0) return;
    for (int i = qq; i < iq - 1; ++i) {
      A[static_cast<std::size_t>(i)] = A[static_cast<std::size_t>(i + 1)];
      u[i] = u[i + 1];
      R_.col(i) = R_.col(i + 1);
    }
    A[static_cast<std::size_t>(iq - 1)] = A[static_cast<std::size_t>(iq)];
    u[iq - 1] = u[iq];
    A[static_cast<std::size_t>(iq)] = 0;
    u[iq] = 0.0;
    R_.col(iq - 1).head(iq).setZero();
    --iq;
    if (iq == 0) return;
    for (int j = qq; j < iq; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h < kEps) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < iq; ++k) {
        const double t1 = R_(j, k);
        const double t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j);
        const double t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  const Eigen::VectorXd& z() const { return z_; }
  const Eigen::VectorXd& r() const { return r_; }

 private:
  int n_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::MatrixXd J_;
  Eigen::MatrixXd R_;
  Eigen::VectorXd d_, z_, r_;
  double r_norm_ = 1.0;
};

}  // namespace

QpResult solve_qp(const QpProblem& qp, int max_iterations) {
  const int n = static_cast<int>(qp.g.size());
  const int p = static_cast<int>(qp.beq.size());
  const int m = static_cast<int>(qp.bin.size());
  if (qp.H.rows() != n || qp.H.cols() != n) throw std::invalid_argument("solve_qp: H size");
  if (p > 0 && (qp.Aeq.rows() != p || qp.Aeq.cols() != n)) throw std::invalid_argument("solve_qp: Aeq size");
  if (m > 0 && (qp.Ain.rows() != m || qp.Ain.cols() != n)) throw std::invalid_argument("solve_qp: Ain size");
  if (max_iterations <= 0) max_iterations = 50 * (n + m + p) + 100;

  QpResult res;
  res.lambda_eq = Eigen::VectorXd::Zero(p);
  res.mu_in = Eigen::VectorXd::Zero(m);

  DualActiveSet ws(qp.H, n);
  Eigen::VectorXd x = ws.unconstrained_minimiser(qp.g);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n + p + 1);
  std::vector<int> A(static_cast<std::size_t>(n + p + 1), 0);
  int iq = 0;

  auto finish = [&](QpStatus status) {
    res.status = status;
    res.x = x;
    res.objective = 0.5 * x.dot(qp.H * x) + qp.g.dot(x);
    for (int i = 0; i < iq; ++i) {
      const int a = A[static_cast<std::size_t>(i)];
      if (a < 0) {
        res.lambda_eq[-a - 1] = -u[i];
      } else if (a < m) {
        res.mu_in[a] = u[i];
      }
    }
    return res;
  };

  // Equalities first.
  for (int i = 0; i < p; ++i) {
    const Eigen::VectorXd np = qp.Aeq.row(i).transpose();
    ws.directions(np, iq);
    double t2 = 0.0;
    const double znp = ws.z().dot(np);
    if (ws.z().squaredNorm() > kEps) t2 = (qp.beq[i] - np.dot(x)) / znp;
    x += t2 * ws.z();
    u[iq] = t2;
    u.head(iq) -= t2 * ws.r();
    A[static_cast<std::size_t>(iq)] = -i - 1;
    if (!ws.add_constraint(iq)) return finish(QpStatus::kEqualityDependent);
  }
  if (m == 0) return finish(QpStatus::kOptimal);

  auto slack = [&](int i) { return qp.bin[i] - qp.Ain.row(i).dot(x); };

  std::vector<int> iai(static_cast<std::size_t>(m));
  std::vector<bool> iaexcl(static_cast<std::size_t>(m), true);
  for (int i = 0; i < m; ++i) iai[static_cast<std::size_t>(i)] = i;
  Eigen::VectorXd s(m);
  Eigen::VectorXd tol(m);
  const Eigen::VectorXd row_norm = qp.Ain.rowwise().lpNorm<Eigen::Infinity>();
  Eigen::VectorXd u_old(n + p + 1);
  std::vector<int> A_old(A.size());
  Eigen::VectorXd x_old(n);

  int iterations = 0;
  while (true) {  // outer: recompute all slacks
    if (++iterations > max_iterations) {
      res.iterations = iterations;
      return finish(QpStatus::kIterationLimit);
    }
    for (int i = p; i < iq; ++i) iai[static_cast<std::size_t>(A[static_cast<std::size_t>(i)])] = -1;
    s.noalias() = qp.bin - qp.Ain * x;
    // A row counts as violated only beyond roundoff in its own scale.
    const double xnorm = x.lpNorm<Eigen::Infinity>();
    for (int i = 0; i < m; ++i) {
      iaexcl[static_cast<std::size_t>(i)] = true;
      tol[i] = 1e-10 * (1.0 + std::abs(qp.bin[i]) + row_norm[i] * xnorm);
    }
    if (((s + tol).array() >= 0.0).all()) {
      res.iterations = iterations;
      return finish(QpStatus::kOptimal);
    }
    u_old.head(iq) = u.head(iq);
    std::copy(A.begin(), A.begin() + iq, A_old.begin());
    x_old = x;

  choose:  // pick the most violated admissible constraint
    int ip = -1;
    double ss = 0.0;
    for (int i = 0; i < m; ++i) {
      if (s[i] < ss && s[i] < -tol[i] && iai[static_cast<std::size_t>(i)] != -1 &&
          iaexcl[static_cast<std::size_t>(i)]) {
        ss = s[i];
        ip = i;
      }
    }
    if (ip < 0) {
      res.iterations = iterations;
      return finish(QpStatus::kOptimal);
    }
    const Eigen::VectorXd np = -qp.Ain.row(ip).transpose();
    u[iq] = 0.0;
    A[static_cast<std::size_t>(iq)] = ip;

    while (true) {  // step in primal and dual space for constraint ip
      if (++iterations > max_iterations) {
        res.iterations = iterations;
        return finish(QpStatus::kIterationLimit);
      }
      ws.directions(np, iq);
      const Eigen::VectorXd& z = ws.z();
      const Eigen::VectorXd& r = ws.r();
      int l = -1;
      double t1 = kInf;
      for (int k = p; k < iq; ++k) {
        if (r[k] > 0.0 && u[k] / r[k] < t1) {
          t1 = u[k] / r[k];
          l = A[static_cast<std::size_t>(k)];
        }
      }
      const double znp = z.dot(np);
      const double t2 = z.squaredNorm() > kEps ? -s[ip] / znp : kInf;
      const double t = std::min(t1, t2);
      if (t >= kInf) {
        res.iterations = iterations;
        return finish(QpStatus::kInfeasible);
      }
      if (t2 >= kInf) {
        u.head(iq) -= t * r;
        u[iq] += t;
        iai[static_cast<std::size_t>(l)] = l;
        ws.delete_constraint(A, u, p, iq, l);
        continue;
      }
      x += t * z;
      u.head(iq) -= t * r;
      u[iq] += t;
      if (std::abs(t - t2) < kEps) {
        if (!ws.add_constraint(iq)) {
          iaexcl[static_cast<std::size_t>(ip)] = false;
          ws.delete_constraint(A, u, p, iq, ip);
          for (int i = 0; i < m; ++i) iai[static_cast<std::size_t>(i)] = i;
          for (int i = p; i < iq; ++i) {
            A[static_cast<std::size_t>(i)] = A_old[static_cast<std::size_t>(i)];
            u[i] = u_old[i];
            iai[static_cast<std::size_t>(A[static_cast<std::size_t>(i)])] = -1;
          }
          x = x_old;
          goto choose;
        }
        iai[static_cast<std::size_t>(ip)] = -1;
        break;
      }
      iai[static_cast<std::size_t>(l)] = l;
      ws.delete_constraint(A, u, p, iq, l);
      s[ip] = slack(ip);
    }
  }
}

}  // namespace mpcctv
