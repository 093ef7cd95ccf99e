#include "mpcctv/nlp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <Eigen/SparseLU>

#include "mpcctv/qp_solver.hpp"

namespace mpcctv {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kConverged: return "converged";
    case SolveStatus::kMaxIter: return "max_iter";
    case SolveStatus::kLineSearchFailure: return "line_search_failure";
  }
  return "unknown";
}

void NlpSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("NlpSpec: " + m); };
  if (num_vars <= 0) fail("num_vars must be positive");
  if (lower.size() != num_vars || upper.size() != num_vars || x0.size() != num_vars) {
    fail("bounds and initial point must have num_vars entries");
  }
  if ((lower.array() > upper.array()).any()) fail("lower bound exceeds upper bound");
  if (!values || !derivatives) fail("values and derivatives evaluators are required");
  if (!dependent_vars.empty() && static_cast<int>(dependent_vars.size()) != num_eq) {
    fail("dependent_vars must name one variable per equality row");
  }
  if (!soft_group.empty() && static_cast<int>(soft_group.size()) != num_ineq) {
    fail("soft_group must have one entry per inequality row");
  }
  if (!hessian_blocks.empty()) {
    int next = 0;
    for (const auto& [start, size] : hessian_blocks) {
      if (start != next || size <= 0) fail("hessian_blocks must tile the variables in order");
      next = start + size;
    }
    if (next != num_vars) fail("hessian_blocks must cover every variable");
  }
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

// Quasi-Newton Hessian, either one dense block or a block-diagonal partition.
class Hessian {
 public:
  Hessian(const NlpSpec& spec, const Eigen::MatrixXd& init) : n_(spec.num_vars) {
    blocks_ = spec.hessian_blocks;
    if (blocks_.empty()) blocks_.emplace_back(0, n_);
    for (const auto& [st, sz] : blocks_) {
      Eigen::MatrixXd b = init.block(st, st, sz, sz);
      b = 0.5 * (b + b.transpose()).eval();
      const double floor = 1e-8 * std::max(1.0, b.diagonal().cwiseAbs().maxCoeff());
      b.diagonal() = b.diagonal().cwiseMax(floor);
      B_.push_back(std::move(b));
    }
  }

  Eigen::MatrixXd operator*(const Eigen::MatrixXd& M) const {
    Eigen::MatrixXd out(n_, M.cols());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto [st, sz] = blocks_[b];
      out.middleRows(st, sz).noalias() = B_[b] * M.middleRows(st, sz);
    }
    return out;
  }

  Eigen::VectorXd operator*(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(n_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto [st, sz] = blocks_[b];
      out.segment(st, sz).noalias() = B_[b] * v.segment(st, sz);
    }
    return out;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n_, n_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto [st, sz] = blocks_[b];
      D.block(st, st, sz, sz) = B_[b];
    }
    return D;
  }

  // Shanno-Phua scaling, used once when no seed was supplied.
  void scale_identity(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto [st, sz] = blocks_[b];
      const double sy = s.segment(st, sz).dot(y.segment(st, sz));
      if (sy > 0.0) {
        B_[b] = Eigen::MatrixXd::Identity(sz, sz) * (y.segment(st, sz).squaredNorm() / sy);
      }
    }
  }

  // Powell-damped BFGS update, block by block. Returns true if any block changed.
  bool update(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    bool changed = false;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto [st, sz] = blocks_[b];
      const Eigen::VectorXd sb = s.segment(st, sz);
      if (!(sb.lpNorm<Eigen::Infinity>() > 0.0)) continue;
      const Eigen::VectorXd yb = y.segment(st, sz);
      Eigen::MatrixXd& B = B_[b];
      const Eigen::VectorXd Bs = B * sb;
      const double sBs = sb.dot(Bs);
      if (!(sBs > 1e-300)) continue;
      const double sy = sb.dot(yb);
      Eigen::VectorXd r = yb;
      if (sy < 0.2 * sBs) {
        const double th = 0.8 * sBs / (sBs - sy);
        r = th * yb + (1.0 - th) * Bs;
      }
      const double sr = sb.dot(r);
      if (!(sr > 1e-300)) continue;
      B.noalias() -= (Bs * Bs.transpose()) / sBs;
      B.noalias() += (r * r.transpose()) / sr;
      B = 0.5 * (B + B.transpose()).eval();
      changed = true;
    }
    return changed;
  }

  double min_eigenvalue() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& B : B_) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B, Eigen::EigenvaluesOnly);
      m = std::min(m, es.eigenvalues().minCoeff());
    }
    return m;
  }

 private:
  int n_;
  std::vector<std::pair<int, int>> blocks_;
  std::vector<Eigen::MatrixXd> B_;
};

NlpValues checked_values(const NlpSpec& spec, const Eigen::VectorXd& x) {
  NlpValues v = spec.values(x);
  if (!std::isfinite(v.objective) || !all_finite(v.eq) || !all_finite(v.ineq)) {
    throw NonFiniteEvaluation("non-finite objective or constraint value", x);
  }
  if (v.eq.size() != spec.num_eq || v.ineq.size() != spec.num_ineq) {
    throw std::invalid_argument("NlpSpec evaluator returned wrong constraint sizes");
  }
  return v;
}

NlpDerivatives checked_derivatives(const NlpSpec& spec, const Eigen::VectorXd& x) {
  NlpDerivatives d = spec.derivatives(x);
  auto finite_sparse = [](const SparseMat& m) {
    for (int k = 0; k < m.outerSize(); ++k)
      for (SparseMat::InnerIterator it(m, k); it; ++it)
        if (!std::isfinite(it.value())) return false;
    return true;
  };
  if (!all_finite(d.gradient) || !finite_sparse(d.eq_jacobian) || !finite_sparse(d.ineq_jacobian)) {
    throw NonFiniteEvaluation("non-finite gradient or Jacobian", x);
  }
  return d;
}

// Soft-group bookkeeping: maps inequality rows to contiguous slack indices.
struct SoftLayout {
  std::vector<int> slack_of_row;  // -1 for hard rows
  int num_slacks = 0;

  static SoftLayout build(const NlpSpec& spec, bool soft) {
    SoftLayout s;
    s.slack_of_row.assign(static_cast<std::size_t>(spec.num_ineq), -1);
    if (!soft) return s;
    std::map<int, int> ids;
    for (int i = 0; i < spec.num_ineq; ++i) {
      const int g = spec.soft_group.empty() ? i : spec.soft_group[static_cast<std::size_t>(i)];
      auto [it, inserted] = ids.emplace(g, s.num_slacks);
      if (inserted) ++s.num_slacks;
      s.slack_of_row[static_cast<std::size_t>(i)] = it->second;
    }
    return s;
  }

  static SoftLayout hard_rows(int rows) {
    SoftLayout s;
    s.slack_of_row.assign(static_cast<std::size_t>(rows), -1);
    return s;
  }

  static SoftLayout each_row(int rows) {
    SoftLayout s;
    s.slack_of_row.resize(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) s.slack_of_row[static_cast<std::size_t>(i)] = i;
    s.num_slacks = rows;
    return s;
  }

  // Soft penalty per unit weight: sum over groups of w + w^2/2 with
  // w = max(0, worst row). Matches the slack cost of the subproblem.
  double violation(const Eigen::VectorXd& c) const {
    if (num_slacks == 0) return 0.0;
    Eigen::VectorXd worst = Eigen::VectorXd::Zero(num_slacks);
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const int g = slack_of_row[static_cast<std::size_t>(i)];
      if (g >= 0) worst[g] = std::max(worst[g], c[i]);
    }
    return worst.sum() + 0.5 * worst.squaredNorm();
  }

  double hard_violation(const Eigen::VectorXd& c) const {
    double v = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i)
      if (slack_of_row[static_cast<std::size_t>(i)] < 0) v += std::max(0.0, c[i]);
    return v;
  }
};

struct Subproblem {
  Eigen::VectorXd p;
  Eigen::VectorXd lambda_eq;
  Eigen::VectorXd mu_in;
  QpStatus status = QpStatus::kOptimal;
  bool restored = false;
};

class SqpWorkspace {
 public:
  SqpWorkspace(const NlpSpec& spec, const SqpOptions& opt) : spec_(spec), opt_(opt) {
    n_ = spec.num_vars;
    if (!spec.dependent_vars.empty()) {
      std::vector<bool> dep(static_cast<std::size_t>(n_), false);
      for (int v : spec.dependent_vars) dep[static_cast<std::size_t>(v)] = true;
      dependent_ = spec.dependent_vars;
      for (int j = 0; j < n_; ++j)
        if (!dep[static_cast<std::size_t>(j)]) independent_.push_back(j);
    }
  }

  bool reduced() const { return !dependent_.empty(); }

  /// Second-order correction: least-change step that cancels the equality
  /// residual c at a trial point, using the Jacobian of the current iterate.
  /// Reduced mode moves only the dependent variables.
  Eigen::VectorXd equality_correction(const NlpDerivatives& d, const Eigen::VectorXd& c) const {
    Eigen::VectorXd corr = Eigen::VectorXd::Zero(n_);
    if (c.size() == 0) return corr;
    if (reduced()) {
      std::vector<int> col_pos(static_cast<std::size_t>(n_), -1);
      for (std::size_t k = 0; k < dependent_.size(); ++k)
        col_pos[static_cast<std::size_t>(dependent_[k])] = static_cast<int>(k);
      std::vector<Eigen::Triplet<double>> tb;
      const SparseMat& Je = d.eq_jacobian;
      for (int k = 0; k < Je.outerSize(); ++k)
        for (SparseMat::InnerIterator it(Je, k); it; ++it) {
          const int pos = col_pos[static_cast<std::size_t>(it.col())];
          if (pos >= 0) tb.emplace_back(static_cast<int>(it.row()), pos, it.value());
        }
      const auto nB = static_cast<Eigen::Index>(dependent_.size());
      SparseMat AB(nB, nB);
      AB.setFromTriplets(tb.begin(), tb.end());
      AB.makeCompressed();
      Eigen::SparseLU<SparseMat> lu;
      lu.compute(AB);
      if (lu.info() != Eigen::Success) return corr;
      const Eigen::VectorXd dB = lu.solve(Eigen::VectorXd(-c));
      for (Eigen::Index k = 0; k < nB; ++k) corr[dependent_[static_cast<std::size_t>(k)]] = dB[k];
      return corr;
    }
    const Eigen::MatrixXd A(d.eq_jacobian);
    const Eigen::MatrixXd AAt = A * A.transpose();
    corr = -A.transpose() * AAt.ldlt().solve(c);
    return corr;
  }

  Subproblem solve_subproblem(const Eigen::VectorXd& x, const NlpValues& v, const NlpDerivatives& d,
                              const Hessian& B, const SoftLayout& soft) const {
    Subproblem sp;
    if (soft.num_slacks > 0) {
      // Slack groups make the QP highly degenerate; most subproblems are
      // feasible without them.
      const SoftLayout hard = SoftLayout::hard_rows(spec_.num_ineq);
      sp = reduced() ? reduced_qp(x, v, d, B, hard, false) : full_qp(x, v, d, B, hard, false);
      if (sp.status == QpStatus::kOptimal) return sp;
    }
    sp = reduced() ? reduced_qp(x, v, d, B, soft, false) : full_qp(x, v, d, B, soft, false);
    if (sp.status == QpStatus::kOptimal) return sp;
    // Feasibility restoration: minimise the l1 violation of every general row.
    const SoftLayout all = SoftLayout::each_row(spec_.num_ineq);
    sp = reduced() ? reduced_qp(x, v, d, B, all, false) : full_qp(x, v, d, B, all, false);
    if (sp.status != QpStatus::kOptimal && reduced()) sp = reduced_qp(x, v, d, B, all, true);
    sp.restored = true;
    return sp;
  }

 private:
  // Appends slack columns and rows to a QP whose general inequality rows are
  // the first `general_rows` rows of Ain.
  static void add_slacks(QpProblem& qp, const std::vector<int>& slack_of_row, int num_slacks,
                         double penalty) {
    if (num_slacks == 0) return;
    const Eigen::Index nq = qp.g.size();
    const Eigen::Index rows = qp.Ain.rows();
    const Eigen::Index n_total = nq + num_slacks;
    const double reg = penalty;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n_total, n_total);
    H.topLeftCorner(nq, nq) = qp.H;
    H.bottomRightCorner(num_slacks, num_slacks).diagonal().setConstant(reg);
    Eigen::VectorXd g(n_total);
    g << qp.g, Eigen::VectorXd::Constant(num_slacks, penalty);
    Eigen::MatrixXd Ain = Eigen::MatrixXd::Zero(rows + num_slacks, n_total);
    Ain.topLeftCorner(rows, nq) = qp.Ain;
    for (std::size_t i = 0; i < slack_of_row.size(); ++i) {
      const int s = slack_of_row[i];
      if (s >= 0) Ain(static_cast<Eigen::Index>(i), nq + s) = -1.0;
    }
    for (int s = 0; s < num_slacks; ++s) Ain(rows + s, nq + s) = -1.0;
    Eigen::VectorXd bin(rows + num_slacks);
    bin << qp.bin, Eigen::VectorXd::Zero(num_slacks);
    if (qp.Aeq.rows() > 0) {
      Eigen::MatrixXd Aeq = Eigen::MatrixXd::Zero(qp.Aeq.rows(), n_total);
      Aeq.leftCols(nq) = qp.Aeq;
      qp.Aeq = std::move(Aeq);
    } else {
      qp.Aeq.resize(0, n_total);
    }
    qp.H = std::move(H);
    qp.g = std::move(g);
    qp.Ain = std::move(Ain);
    qp.bin = std::move(bin);
  }

  Subproblem full_qp(const Eigen::VectorXd& x, const NlpValues& v, const NlpDerivatives& d,
                     const Hessian& B, const SoftLayout& soft, bool) const {
    const int mi = spec_.num_ineq;
    std::vector<int> bound_var;
    std::vector<double> bound_sign;
    for (int j = 0; j < n_; ++j) {
      if (std::isfinite(spec_.upper[j])) { bound_var.push_back(j); bound_sign.push_back(1.0); }
      if (std::isfinite(spec_.lower[j])) { bound_var.push_back(j); bound_sign.push_back(-1.0); }
    }
    const auto nb = static_cast<Eigen::Index>(bound_var.size());
    QpProblem qp;
    qp.H = B.dense();
    qp.g = d.gradient;
    qp.Aeq = Eigen::MatrixXd(d.eq_jacobian);
    qp.beq = -v.eq;
    qp.Ain = Eigen::MatrixXd::Zero(mi + nb, n_);
    qp.bin.resize(mi + nb);
    if (mi > 0) {
      qp.Ain.topRows(mi) = Eigen::MatrixXd(d.ineq_jacobian);
      qp.bin.head(mi) = -v.ineq;
    }
    for (Eigen::Index k = 0; k < nb; ++k) {
      const int j = bound_var[static_cast<std::size_t>(k)];
      const double sg = bound_sign[static_cast<std::size_t>(k)];
      qp.Ain(mi + k, j) = sg;
      qp.bin[mi + k] = sg > 0 ? spec_.upper[j] - x[j] : x[j] - spec_.lower[j];
    }
    std::vector<int> slack_rows = soft.slack_of_row;
    slack_rows.resize(static_cast<std::size_t>(mi + nb), -1);
    add_slacks(qp, slack_rows, soft.num_slacks, opt_.soft_penalty);

    const QpResult r = solve_qp(qp);
    Subproblem sp;
    sp.status = r.status;
    sp.p = r.x.head(n_);
    sp.lambda_eq = r.lambda_eq;
    sp.mu_in = r.mu_in.head(mi);
    return sp;
  }

  Subproblem reduced_qp(const Eigen::VectorXd& x, const NlpValues& v, const NlpDerivatives& d,
                        const Hessian& B, const SoftLayout& soft,
                        bool soften_dependent_bounds) const {
    const auto nB = static_cast<Eigen::Index>(dependent_.size());
    const auto nN = static_cast<Eigen::Index>(independent_.size());
    const int mi = spec_.num_ineq;

    // Column split of the equality Jacobian.
    std::vector<int> col_pos(static_cast<std::size_t>(n_));
    for (Eigen::Index k = 0; k < nB; ++k) col_pos[static_cast<std::size_t>(dependent_[static_cast<std::size_t>(k)])] = static_cast<int>(k);
    for (Eigen::Index k = 0; k < nN; ++k) col_pos[static_cast<std::size_t>(independent_[static_cast<std::size_t>(k)])] = static_cast<int>(k);
    std::vector<bool> is_dep(static_cast<std::size_t>(n_), false);
    for (int j : dependent_) is_dep[static_cast<std::size_t>(j)] = true;

    std::vector<Eigen::Triplet<double>> tb;
    Eigen::MatrixXd AN = Eigen::MatrixXd::Zero(nB, nN);
    const SparseMat& Je = d.eq_jacobian;
    for (int k = 0; k < Je.outerSize(); ++k) {
      for (SparseMat::InnerIterator it(Je, k); it; ++it) {
        const auto col = static_cast<std::size_t>(it.col());
        if (is_dep[col]) {
          tb.emplace_back(static_cast<int>(it.row()), col_pos[col], it.value());
        } else {
          AN(it.row(), col_pos[col]) = it.value();
        }
      }
    }
    SparseMat AB(nB, nB);
    AB.setFromTriplets(tb.begin(), tb.end());
    AB.makeCompressed();
    Eigen::SparseLU<SparseMat> lu;
    lu.compute(AB);
    if (lu.info() != Eigen::Success) {
      Subproblem sp;
      sp.status = QpStatus::kEqualityDependent;
      sp.p = Eigen::VectorXd::Zero(n_);
      sp.lambda_eq = Eigen::VectorXd::Zero(spec_.num_eq);
      sp.mu_in = Eigen::VectorXd::Zero(mi);
      return sp;
    }
    const Eigen::MatrixXd ZB = -lu.solve(AN);
    const Eigen::VectorXd pB0 = lu.solve(Eigen::VectorXd(-v.eq));

    // Full null-space basis and particular step.
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n_, nN);
    Eigen::VectorXd p0 = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index k = 0; k < nB; ++k) {
      const auto j = dependent_[static_cast<std::size_t>(k)];
      Z.row(j) = ZB.row(k);
      p0[j] = pB0[k];
    }
    for (Eigen::Index k = 0; k < nN; ++k) Z(independent_[static_cast<std::size_t>(k)], k) = 1.0;

    const Eigen::MatrixXd BZ = B * Z;
    QpProblem qp;
    qp.H = Z.transpose() * BZ;
    qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();
    qp.g = Z.transpose() * (d.gradient + B * p0);
    qp.Aeq.resize(0, nN);
    qp.beq.resize(0);

    // Rows: general inequalities, then bounds.
    struct BoundRow { int var; double sign; };
    std::vector<BoundRow> bounds;
    for (int j = 0; j < n_; ++j) {
      if (std::isfinite(spec_.upper[j])) bounds.push_back({j, 1.0});
      if (std::isfinite(spec_.lower[j])) bounds.push_back({j, -1.0});
    }
    const auto nb = static_cast<Eigen::Index>(bounds.size());
    qp.Ain.resize(mi + nb, nN);
    qp.bin.resize(mi + nb);
    if (mi > 0) {
      qp.Ain.topRows(mi) = d.ineq_jacobian * Z;
      qp.bin.head(mi) = -v.ineq - d.ineq_jacobian * p0;
    }
    std::vector<int> slack_rows = soft.slack_of_row;
    slack_rows.resize(static_cast<std::size_t>(mi + nb), -1);
    int num_slacks = soft.num_slacks;
    for (Eigen::Index k = 0; k < nb; ++k) {
      const auto& b = bounds[static_cast<std::size_t>(k)];
      qp.Ain.row(mi + k) = b.sign * Z.row(b.var);
      qp.bin[mi + k] = b.sign > 0 ? spec_.upper[b.var] - x[b.var] - p0[b.var]
                                  : x[b.var] - spec_.lower[b.var] + p0[b.var];
      if (soften_dependent_bounds && is_dep[static_cast<std::size_t>(b.var)]) {
        slack_rows[static_cast<std::size_t>(mi + k)] = num_slacks++;
      }
    }
    add_slacks(qp, slack_rows, num_slacks, opt_.soft_penalty);

    const QpResult r = solve_qp(qp);
    Subproblem sp;
    sp.status = r.status;
    const Eigen::VectorXd q = r.x.head(nN);
    sp.p = p0 + Z * q;
    sp.mu_in = r.mu_in.head(mi);

    // Equality multipliers from the dependent block of QP stationarity.
    Eigen::VectorXd resid = B * sp.p + d.gradient;
    if (mi > 0) resid += d.ineq_jacobian.transpose() * sp.mu_in;
    for (Eigen::Index k = 0; k < nb; ++k) {
      const auto& b = bounds[static_cast<std::size_t>(k)];
      resid[b.var] += b.sign * r.mu_in[mi + k];
    }
    Eigen::VectorXd rB(nB);
    for (Eigen::Index k = 0; k < nB; ++k) rB[k] = resid[dependent_[static_cast<std::size_t>(k)]];
    SparseMat ABt = AB.transpose();
    ABt.makeCompressed();
    Eigen::SparseLU<SparseMat> lut;
    lut.compute(ABt);
    sp.lambda_eq = lut.info() == Eigen::Success ? Eigen::VectorXd(-lut.solve(rB))
                                                : Eigen::VectorXd::Zero(nB);
    return sp;
  }

  const NlpSpec& spec_;
  const SqpOptions& opt_;
  int n_ = 0;
  std::vector<int> dependent_;
  std::vector<int> independent_;
};

Eigen::VectorXd lagrangian_gradient(const NlpDerivatives& d, const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& mu) {
  Eigen::VectorXd g = d.gradient;
  if (lambda.size() > 0) g += d.eq_jacobian.transpose() * lambda;
  if (mu.size() > 0) g += d.ineq_jacobian.transpose() * mu;
  return g;
}

KktResiduals kkt_residuals(const NlpSpec& spec, const Eigen::VectorXd& x, const NlpValues& v,
                           const NlpDerivatives& d, const Eigen::VectorXd& lambda,
                           const Eigen::VectorXd& mu, const SoftLayout& soft) {
  KktResiduals k;
  Eigen::VectorXd r = lagrangian_gradient(d, lambda, mu);
  for (int j = 0; j < spec.num_vars; ++j) {
    const double lo = spec.lower[j], hi = spec.upper[j];
    if (std::isfinite(lo) && x[j] - lo <= 1e-8 * std::max(1.0, std::abs(lo))) {
      r[j] = std::min(r[j], 0.0);
    } else if (std::isfinite(hi) && hi - x[j] <= 1e-8 * std::max(1.0, std::abs(hi))) {
      r[j] = std::max(r[j], 0.0);
    }
  }
  k.stationarity = r.lpNorm<Eigen::Infinity>() / std::max(1.0, d.gradient.lpNorm<Eigen::Infinity>());

  double primal = v.eq.size() > 0 ? v.eq.lpNorm<Eigen::Infinity>() : 0.0;
  Eigen::VectorXd worst = Eigen::VectorXd::Zero(soft.num_slacks);
  for (Eigen::Index i = 0; i < v.ineq.size(); ++i) {
    const int g = soft.slack_of_row[static_cast<std::size_t>(i)];
    if (g < 0) primal = std::max(primal, v.ineq[i]);
    else worst[g] = std::max(worst[g], v.ineq[i]);
  }
  k.primal = std::max(0.0, primal);
  double comp = 0.0;
  for (Eigen::Index i = 0; i < v.ineq.size(); ++i) {
    const int g = soft.slack_of_row[static_cast<std::size_t>(i)];
    const double active_level = g < 0 ? 0.0 : worst[g];
    comp = std::max(comp, std::abs(mu[i] * (v.ineq[i] - active_level)));
  }
  k.complementarity = comp;
  return k;
}

}  // namespace

SolveReport solve(const NlpSpec& spec, const SqpOptions& opt, bool track_bfgs_spectrum) {
  spec.validate();
  const int n = spec.num_vars;
  const SoftLayout soft = SoftLayout::build(spec, opt.soft_constraints);
  SqpWorkspace ws(spec, opt);

  Eigen::VectorXd x = spec.x0.cwiseMax(spec.lower).cwiseMin(spec.upper);
  NlpValues v = checked_values(spec, x);
  NlpDerivatives d = checked_derivatives(spec, x);

  const bool seeded = static_cast<bool>(spec.hessian_seed);
  Hessian B(spec, seeded ? spec.hessian_seed(x) : Eigen::MatrixXd::Identity(n, n));
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(spec.num_eq);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(spec.num_ineq);
  double nu = 1.0;

  SolveReport rep;
  rep.track_bfgs_spectrum = track_bfgs_spectrum;
  rep.min_bfgs_eigenvalue = std::numeric_limits<double>::infinity();
  rep.status = SolveStatus::kMaxIter;

  auto merit = [&](const NlpValues& vals, double penalty_nu, const SoftLayout& layout) {
    double m = vals.objective;
    if (vals.eq.size() > 0) m += penalty_nu * vals.eq.lpNorm<1>();
    m += penalty_nu * layout.hard_violation(vals.ineq);
    m += opt.soft_penalty * layout.violation(vals.ineq);
    return m;
  };

  int iter = 0;
  for (;; ++iter) {
    rep.kkt = kkt_residuals(spec, x, v, d, lambda, mu, soft);
    if (rep.kkt.max() <= opt.kkt_tol) {
      rep.status = SolveStatus::kConverged;
      break;
    }
    if (iter >= opt.max_iter) {
      rep.status = SolveStatus::kMaxIter;
      break;
    }

    Subproblem sp = ws.solve_subproblem(x, v, d, B, soft);
    if (sp.restored) ++rep.qp_restorations;
    const Eigen::VectorXd& p = sp.p;

    // Restoration steps weigh every general row with the soft penalty.
    const SoftLayout restore_layout = sp.restored ? SoftLayout::each_row(spec.num_ineq) : SoftLayout{};
    const SoftLayout& merit_layout = sp.restored ? restore_layout : soft;

    double max_mult = sp.lambda_eq.size() > 0 ? sp.lambda_eq.lpNorm<Eigen::Infinity>() : 0.0;
    for (Eigen::Index i = 0; i < sp.mu_in.size(); ++i)
      if (merit_layout.slack_of_row[static_cast<std::size_t>(i)] < 0) max_mult = std::max(max_mult, sp.mu_in[i]);
    // Powell's rule: raise at once, relax halfway, so one large multiplier
    // estimate (typically from a restoration step) does not freeze the steps.
    const double nu_need = 1.1 * max_mult + 1e-6;
    nu = nu < nu_need ? std::max(1.5 * nu, nu_need) : std::max(nu_need, 0.5 * (nu + nu_need));

    const Eigen::VectorXd c_in_lin = v.ineq + d.ineq_jacobian * p;
    const Eigen::VectorXd c_eq_lin = v.eq + d.eq_jacobian * p;
    double D = d.gradient.dot(p);
    D += nu * ((c_eq_lin.size() > 0 ? c_eq_lin.lpNorm<1>() : 0.0) - (v.eq.size() > 0 ? v.eq.lpNorm<1>() : 0.0));
    D += nu * (merit_layout.hard_violation(c_in_lin) - merit_layout.hard_violation(v.ineq));
    D += opt.soft_penalty * (merit_layout.violation(c_in_lin) - merit_layout.violation(v.ineq));
    if (!(D < 0.0)) D = -std::max(p.dot(B * p), 0.0);

    const double phi0 = merit(v, nu, merit_layout);
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd xt;
    NlpValues vt;
    for (int bt = 0; bt <= opt.ls_max_backtracks; ++bt) {
      xt = (x + alpha * p).cwiseMax(spec.lower).cwiseMin(spec.upper);
      vt = checked_values(spec, xt);
      const double phit = merit(vt, nu, merit_layout);
      if (phit <= phi0 + 1e-4 * alpha * D) {
        rep.merit_steps.emplace_back(phi0, phit);
        accepted = true;
        break;
      }
      if (bt == 0 && spec.num_eq > 0) {
        // Full step rejected: try it once more with the curvature of the
        // equalities removed before shortening.
        const Eigen::VectorXd xs =
            (xt + ws.equality_correction(d, vt.eq)).cwiseMax(spec.lower).cwiseMin(spec.upper);
        NlpValues vs = checked_values(spec, xs);
        const double phis = merit(vs, nu, merit_layout);
        if (phis <= phi0 + 1e-4 * D) {
          rep.merit_steps.emplace_back(phi0, phis);
          xt = xs;
          vt = std::move(vs);
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      rep.status = SolveStatus::kLineSearchFailure;
      break;
    }

    NlpDerivatives dt = checked_derivatives(spec, xt);
    const Eigen::VectorXd s = xt - x;
    const Eigen::VectorXd y = lagrangian_gradient(dt, sp.lambda_eq, sp.mu_in) -
                              lagrangian_gradient(d, sp.lambda_eq, sp.mu_in);
    if (iter == 0 && !seeded) B.scale_identity(s, y);
    if (B.update(s, y) && track_bfgs_spectrum) {
      rep.min_bfgs_eigenvalue = std::min(rep.min_bfgs_eigenvalue, B.min_eigenvalue());
    }

    x = std::move(xt);
    v = std::move(vt);
    d = std::move(dt);
    lambda = sp.lambda_eq;
    mu = sp.mu_in;
  }

  rep.x = x;
  rep.objective = v.objective;
  rep.lambda_eq = lambda;
  rep.mu_ineq = mu;
  rep.iterations = iter;
  return rep;
}

double gradient_check(const NlpSpec& spec, const Eigen::VectorXd& point, double h) {
  spec.validate();
  const NlpDerivatives d = checked_derivatives(spec, point);
  const Eigen::MatrixXd Je(d.eq_jacobian);
  const Eigen::MatrixXd Ji(d.ineq_jacobian);
  double worst = 0.0;
  auto rel = [](double fd, double an) { return std::abs(fd - an) / std::max(1.0, std::abs(an)); };
  for (int j = 0; j < spec.num_vars; ++j) {
    Eigen::VectorXd xp = point, xm = point;
    xp[j] += h;
    xm[j] -= h;
    const NlpValues vp = checked_values(spec, xp);
    const NlpValues vm = checked_values(spec, xm);
    worst = std::max(worst, rel((vp.objective - vm.objective) / (2.0 * h), d.gradient[j]));
    for (int i = 0; i < spec.num_eq; ++i)
      worst = std::max(worst, rel((vp.eq[i] - vm.eq[i]) / (2.0 * h), Je(i, j)));
    for (int i = 0; i < spec.num_ineq; ++i)
      worst = std::max(worst, rel((vp.ineq[i] - vm.ineq[i]) / (2.0 * h), Ji(i, j)));
  }
  return worst;
}

}  // namespace mpcctv
