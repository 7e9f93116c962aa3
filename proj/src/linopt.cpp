#include "lbmpc/linopt.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>

#include "lbmpc/error.hpp"

namespace lbmpc::linopt {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

void check_blocks(Eigen::Index n, const MatrixXd& g, const VectorXd& h, const MatrixXd& e,
                  const VectorXd& f, const VectorXd& lo, const VectorXd& up) {
  LBMPC_REQUIRE(g.rows() == h.size(), "ineq_lhs rows must equal ineq_rhs length");
  LBMPC_REQUIRE(g.rows() == 0 || g.cols() == n, "ineq_lhs column count mismatch");
  LBMPC_REQUIRE(e.rows() == f.size(), "eq_lhs rows must equal eq_rhs length");
  LBMPC_REQUIRE(e.rows() == 0 || e.cols() == n, "eq_lhs column count mismatch");
  LBMPC_REQUIRE(lo.size() == 0 || lo.size() == n, "lower bound length mismatch");
  LBMPC_REQUIRE(up.size() == 0 || up.size() == n, "upper bound length mismatch");
  LBMPC_REQUIRE(all_finite(g) && all_finite(h) && all_finite(e) && all_finite(f),
                "constraint data must be finite");
  for (Eigen::Index j = 0; j < lo.size(); ++j)
    LBMPC_REQUIRE(!std::isnan(lo[j]) && lo[j] != kInf, "lower bound must not be NaN or +inf");
  for (Eigen::Index j = 0; j < up.size(); ++j)
    LBMPC_REQUIRE(!std::isnan(up[j]) && up[j] != -kInf, "upper bound must not be NaN or -inf");
}

// Solves the equality system in the least-squares sense; nullopt if the rows
// are inconsistent.
std::optional<VectorXd> eq_point(const MatrixXd& e, const VectorXd& f, Eigen::Index n, double tol) {
  if (e.rows() == 0) return VectorXd::Zero(n);
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(e);
  VectorXd x = cod.solve(f);
  if ((e * x - f).lpNorm<Eigen::Infinity>() > tol * (1.0 + f.lpNorm<Eigen::Infinity>())) return std::nullopt;
  return x;
}

}  // namespace

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::NumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

void LinearProgram::validate() const {
  LBMPC_REQUIRE(cost.allFinite(), "LP cost must be finite");
  check_blocks(cost.size(), ineq_lhs, ineq_rhs, eq_lhs, eq_rhs, lower, upper);
}

void QuadraticProgram::validate() const {
  const auto n = linear.size();
  LBMPC_REQUIRE(hessian.rows() == n && hessian.cols() == n, "QP hessian must be n x n");
  LBMPC_REQUIRE(hessian.allFinite() && linear.allFinite(), "QP cost must be finite");
  LBMPC_REQUIRE((hessian - hessian.transpose()).lpNorm<Eigen::Infinity>() <=
                    1e-10 * std::max(1.0, hessian.lpNorm<Eigen::Infinity>()),
                "QP hessian must be symmetric");
  if (n > 0)
    LBMPC_REQUIRE(min_eigenvalue(0.5 * (hessian + hessian.transpose())) >= -1e-8,
                  "QP hessian must be positive semidefinite");
  check_blocks(n, ineq_lhs, ineq_rhs, eq_lhs, eq_rhs, lower, upper);
}

// ---------------------------------------------------------------------------
// LP: primal active-set method on unit-norm inequality rows.

struct LpSolver::Impl {
  Tolerances tol;
  Eigen::Index n = 0;
  Eigen::Index m_ext = 0;
  MatrixXd rows;  // unit-norm rows
  VectorXd rhs;
  VectorXd scale;
  std::vector<int> ext_id;
  std::vector<int> ext_to_int;
  MatrixXd eq;  // unit-norm independent equality rows
  VectorXd eq_rhs;
  VectorXd eq_scale;
  std::vector<int> eq_ext;
  Eigen::Index eq_ext_count = 0;
  bool trivially_infeasible = false;
  bool phase1_done = false;
  std::optional<VectorXd> feasible;

  Impl(const LinearProgram& lp, const Tolerances& t) : tol(t) {
    n = lp.num_variables();
    m_ext = lp.ineq_lhs.rows();
    eq_ext_count = lp.eq_lhs.rows();
    const Eigen::Index cap = m_ext + 2 * n;
    ext_to_int.assign(static_cast<size_t>(cap), -1);
    std::vector<VectorXd> r;
    std::vector<double> b, s;
    auto push = [&](const VectorXd& row, double rh, int id) {
      const double nrm = row.norm();
      if (nrm <= 1e-300) {
        if (rh < -tol.feasibility) trivially_infeasible = true;
        return;
      }
      ext_to_int[static_cast<size_t>(id)] = static_cast<int>(r.size());
      r.push_back(row / nrm);
      b.push_back(rh / nrm);
      s.push_back(nrm);
      ext_id.push_back(id);
    };
    for (Eigen::Index i = 0; i < m_ext; ++i)
      push(lp.ineq_lhs.row(i).transpose(), lp.ineq_rhs[i], static_cast<int>(i));
    for (Eigen::Index j = 0; j < n; ++j) {
      if (lp.upper.size() && std::isfinite(lp.upper[j]))
        push(VectorXd::Unit(n, j), lp.upper[j], static_cast<int>(m_ext + j));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (lp.lower.size() && std::isfinite(lp.lower[j]))
        push(-VectorXd::Unit(n, j), -lp.lower[j], static_cast<int>(m_ext + n + j));
    }
    rows.resize(static_cast<Eigen::Index>(r.size()), n);
    rhs.resize(static_cast<Eigen::Index>(r.size()));
    scale.resize(static_cast<Eigen::Index>(r.size()));
    for (size_t i = 0; i < r.size(); ++i) {
      rows.row(static_cast<Eigen::Index>(i)) = r[i].transpose();
      rhs[static_cast<Eigen::Index>(i)] = b[i];
      scale[static_cast<Eigen::Index>(i)] = s[i];
    }
    // Independent subset of the equality rows (Gram-Schmidt on unit rows).
    std::vector<VectorXd> basis;
    std::vector<VectorXd> er;
    std::vector<double> eb, es;
    for (Eigen::Index i = 0; i < eq_ext_count; ++i) {
      VectorXd row = lp.eq_lhs.row(i).transpose();
      const double nrm = row.norm();
      if (nrm <= 1e-300) {
        if (std::abs(lp.eq_rhs[i]) > tol.feasibility) trivially_infeasible = true;
        continue;
      }
      VectorXd u = row / nrm;
      VectorXd res = u;
      for (const auto& q : basis) res -= q.dot(res) * q;
      if (res.norm() <= 1e-10) continue;  // dependent; consistency checked in phase 1
      basis.push_back(res.normalized());
      er.push_back(u);
      eb.push_back(lp.eq_rhs[i] / nrm);
      es.push_back(nrm);
      eq_ext.push_back(static_cast<int>(i));
    }
    eq.resize(static_cast<Eigen::Index>(er.size()), n);
    eq_rhs.resize(static_cast<Eigen::Index>(er.size()));
    eq_scale.resize(static_cast<Eigen::Index>(er.size()));
    for (size_t i = 0; i < er.size(); ++i) {
      eq.row(static_cast<Eigen::Index>(i)) = er[i].transpose();
      eq_rhs[static_cast<Eigen::Index>(i)] = eb[i];
      eq_scale[static_cast<Eigen::Index>(i)] = es[i];
    }
    if (eq_ext_count > 0 && !trivially_infeasible) {
      if (!eq_point(lp.eq_lhs, lp.eq_rhs, n, 1e-9)) trivially_infeasible = true;
    }
  }

  bool is_feasible(const VectorXd& x, double slack_tol) const {
    if (rows.rows() && (rows * x - rhs).maxCoeff() > slack_tol) return false;
    if (eq.rows() && (eq * x - eq_rhs).lpNorm<Eigen::Infinity>() > slack_tol) return false;
    return true;
  }

  // Active-set loop from a feasible x with independent working set W.
  // On Optimal, `mult` holds multipliers of [eq rows; W rows] in internal scale.
  SolveStatus run(const VectorXd& c, VectorXd& x, std::vector<int>& W, int& iters, VectorXd& mult,
                  const std::function<bool(const VectorXd&)>& early_stop = {}) const {
    const Eigen::Index m = rows.rows();
    const Eigen::Index neq = eq.rows();
    const double cn = std::max(1.0, c.lpNorm<Eigen::Infinity>());
    std::vector<char> in_w(static_cast<size_t>(m), 0);
    for (int i : W) in_w[static_cast<size_t>(i)] = 1;
    VectorXd slack = m ? VectorXd(rhs - rows * x) : VectorXd();
    int degenerate = 0;
    bool bland = false;
    while (true) {
      if (early_stop && early_stop(x)) return SolveStatus::Optimal;
      if (++iters > tol.max_lp_iterations) return SolveStatus::NumericalFailure;
      const Eigen::Index k = neq + static_cast<Eigen::Index>(W.size());
      MatrixXd at(n, k);
      if (neq) at.leftCols(neq) = eq.transpose();
      for (size_t j = 0; j < W.size(); ++j) at.col(neq + static_cast<Eigen::Index>(j)) = rows.row(W[j]).transpose();
      VectorXd d;
      Eigen::HouseholderQR<MatrixXd> qr;
      MatrixXd q;
      if (k == 0) {
        d = -c;
      } else {
        qr.compute(at);
        q = qr.householderQ();
        if (k < n) {
          const auto z = q.rightCols(n - k);
          d = -(z * (z.transpose() * c));
        } else {
          d = VectorXd::Zero(n);
        }
      }
      if (d.lpNorm<Eigen::Infinity>() <= 1e-13 * cn) {
        // Stationary on the working face: multipliers decide.
        if (k == 0) {
          mult.resize(0);
          return SolveStatus::Optimal;
        }
        const MatrixXd r = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
        mult = r.triangularView<Eigen::Upper>().solve(-(q.leftCols(k).transpose() * c));
        int drop = -1;
        double worst = -tol.optimality * cn;
        for (size_t j = 0; j < W.size(); ++j) {
          const double mu = mult[neq + static_cast<Eigen::Index>(j)];
          if (mu < worst || (bland && mu < -tol.optimality * cn &&
                             (drop < 0 || ext_id[W[j]] < ext_id[W[static_cast<size_t>(drop)]]))) {
            if (!bland) worst = mu;
            drop = static_cast<int>(j);
          }
        }
        if (drop < 0) return SolveStatus::Optimal;
        in_w[static_cast<size_t>(W[static_cast<size_t>(drop)])] = 0;
        W.erase(W.begin() + drop);
        continue;
      }
      // Ratio test.
      const double dn = d.norm();
      VectorXd rd = m ? VectorXd(rows * d) : VectorXd();
      double alpha = kInf;
      int block = -1;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (in_w[static_cast<size_t>(i)] || rd[i] <= 1e-12 * dn) continue;
        const double a = std::max(slack[i], 0.0) / rd[i];
        bool take = false;
        if (block < 0 || a < alpha - 1e-14 * (1.0 + std::abs(alpha))) {
          take = true;
        } else if (a <= alpha + 1e-14 * (1.0 + std::abs(alpha))) {
          take = bland ? ext_id[static_cast<size_t>(i)] < ext_id[static_cast<size_t>(block)]
                       : rd[i] > rd[block];
        }
        if (take) {
          alpha = std::min(a, alpha);
          block = static_cast<int>(i);
        }
      }
      if (block < 0) return SolveStatus::Unbounded;
      x += alpha * d;
      slack -= alpha * rd;
      W.push_back(block);
      in_w[static_cast<size_t>(block)] = 1;
      if (alpha * dn <= 1e-13) {
        if (++degenerate > 30) bland = true;
      } else {
        degenerate = 0;
      }
      if (neq + static_cast<Eigen::Index>(W.size()) == n) {
        // Vertex: recompute x exactly from its defining rows.
        MatrixXd a(n, n);
        VectorXd b(n);
        if (neq) {
          a.topRows(neq) = eq;
          b.head(neq) = eq_rhs;
        }
        for (size_t j = 0; j < W.size(); ++j) {
          a.row(neq + static_cast<Eigen::Index>(j)) = rows.row(W[j]);
          b[neq + static_cast<Eigen::Index>(j)] = rhs[W[j]];
        }
        VectorXd xv = a.partialPivLu().solve(b);
        if (xv.allFinite()) {
          x = xv;
          slack = rhs - rows * x;
        }
      } else {
        slack[block] = 0.0;
      }
    }
  }

  // Phase 1: min t  s.t.  rows·x − t ≤ rhs, t ≥ 0, eq·x = eq_rhs.
  std::optional<VectorXd> find_feasible() {
    if (phase1_done) return feasible;
    phase1_done = true;
    if (trivially_infeasible) return std::nullopt;
    auto x0 = eq_point(eq, eq_rhs, n, 1e-9);
    if (!x0) return std::nullopt;
    if (is_feasible(*x0, 0.0)) return feasible = *x0;
    const Eigen::Index m = rows.rows();
    LinearProgram aux;
    aux.cost = VectorXd::Unit(n + 1, n);
    aux.ineq_lhs.resize(m, n + 1);
    aux.ineq_lhs << rows, -VectorXd::Ones(m);
    aux.ineq_rhs = rhs;
    if (eq.rows()) {
      aux.eq_lhs.resize(eq.rows(), n + 1);
      aux.eq_lhs << eq, VectorXd::Zero(eq.rows());
      aux.eq_rhs = eq_rhs;
    }
    aux.lower = VectorXd::Constant(n + 1, -kInf);
    aux.lower[n] = 0.0;
    Impl p1(aux, tol);
    VectorXd z(n + 1);
    z.head(n) = *x0;
    z[n] = std::max(0.0, (rows * *x0 - rhs).maxCoeff()) + 1.0;
    std::vector<int> w;
    int it = 0;
    VectorXd mult;
    const double ftol = tol.feasibility;
    auto done = [&](const VectorXd& v) { return v[n] <= 0.1 * ftol; };
    const SolveStatus st = p1.run(aux.cost, z, w, it, mult, done);
    if (st != SolveStatus::Optimal) return std::nullopt;
    VectorXd x = z.head(n);
    if (!is_feasible(x, ftol)) return std::nullopt;
    return feasible = x;
  }

  SolveReport minimize(const VectorXd& c, const LpWarmStart* warm, std::vector<int>& active_out) {
    SolveReport rep;
    LBMPC_REQUIRE(c.size() == n && c.allFinite(), "LP cost must be finite with n entries");
    if (trivially_infeasible) {
      rep.status = SolveStatus::Infeasible;
      return rep;
    }
    VectorXd x;
    std::vector<int> W;
    const double wtol = 10.0 * tol.feasibility;
    if (warm && warm->point.size() == n && is_feasible(warm->point, wtol)) {
      x = warm->point;
      // Keep tight, independent rows of the suggested working set.
      std::vector<VectorXd> basis;
      for (int i = 0; i < eq.rows(); ++i) {
        VectorXd res = eq.row(i).transpose();
        for (const auto& q : basis) res -= q.dot(res) * q;
        basis.push_back(res.normalized());
      }
      for (int id : warm->active) {
        if (id < 0 || static_cast<size_t>(id) >= ext_to_int.size()) continue;
        const int i = ext_to_int[static_cast<size_t>(id)];
        if (i < 0 || std::abs(rhs[i] - rows.row(i).dot(x)) > wtol) continue;
        if (std::find(W.begin(), W.end(), i) != W.end()) continue;
        VectorXd res = rows.row(i).transpose();
        for (const auto& q : basis) res -= q.dot(res) * q;
        if (res.norm() <= 1e-9) continue;
        basis.push_back(res.normalized());
        W.push_back(i);
        if (static_cast<Eigen::Index>(basis.size()) == n) break;
      }
    } else {
      auto f = find_feasible();
      if (!f) {
        rep.status = SolveStatus::Infeasible;
        return rep;
      }
      x = *f;
    }
    VectorXd mult;
    int it = 0;
    rep.status = run(c, x, W, it, mult);
    rep.iterations = it;
    if (rep.status != SolveStatus::Optimal) return rep;
    rep.argmin = x;
    rep.objective = c.dot(x);
    Multipliers& mu = rep.multipliers;
    mu.ineq = VectorXd::Zero(m_ext);
    mu.eq = VectorXd::Zero(eq_ext_count);
    mu.lower = VectorXd::Zero(n);
    mu.upper = VectorXd::Zero(n);
    const Eigen::Index neq = eq.rows();
    for (Eigen::Index i = 0; i < neq; ++i) mu.eq[eq_ext[static_cast<size_t>(i)]] = mult[i] / eq_scale[i];
    active_out.clear();
    for (size_t j = 0; j < W.size(); ++j) {
      const int i = W[j];
      const int id = ext_id[static_cast<size_t>(i)];
      const double v = std::max(0.0, mult[neq + static_cast<Eigen::Index>(j)]) / scale[i];
      if (id < m_ext) mu.ineq[id] = v;
      else if (id < m_ext + n) mu.upper[id - m_ext] = v;
      else mu.lower[id - m_ext - n] = v;
      active_out.push_back(id);
    }
    return rep;
  }
};

LpSolver::LpSolver(const LinearProgram& region, const Tolerances& tol) {
  LinearProgram r = region;
  if (r.cost.size() == 0) {
    const Eigen::Index n = std::max<Eigen::Index>(
        {region.ineq_lhs.cols(), region.eq_lhs.cols(), region.lower.size(), region.upper.size()});
    r.cost = VectorXd::Zero(n);
  }
  r.validate();
  impl_ = std::make_shared<Impl>(r, tol);
}

SolveReport LpSolver::minimize(const VectorXd& cost, const LpWarmStart* warm) {
  return impl_->minimize(cost, warm, last_active_);
}

std::optional<VectorXd> LpSolver::feasible_point() { return impl_->find_feasible(); }

SolveReport solve_lp(const LinearProgram& lp, const Tolerances& tol, const LpWarmStart* warm) {
  lp.validate();
  LpSolver s(lp, tol);
  return s.minimize(lp.cost, warm);
}

double lp_dual_bound(const LinearProgram& lp, const Multipliers& mult) {
  double b = 0.0;
  if (mult.ineq.size()) b -= lp.ineq_rhs.dot(mult.ineq);
  if (mult.eq.size()) b -= lp.eq_rhs.dot(mult.eq);
  for (Eigen::Index j = 0; j < mult.upper.size(); ++j)
    if (mult.upper[j] != 0.0) b -= lp.upper[j] * mult.upper[j];
  for (Eigen::Index j = 0; j < mult.lower.size(); ++j)
    if (mult.lower[j] != 0.0) b += lp.lower[j] * mult.lower[j];
  return b;
}

// ---------------------------------------------------------------------------
// QP: Mehrotra predictor-corrector on  Gx + s = h, s ≥ 0, Ex = f, bounds
// handled as diagonal barrier terms.

namespace {

struct BoundRow {
  Eigen::Index var;
  double sign;  // +1: x ≤ val, −1: −x ≤ −val
  double val;   // right-hand side in sign form
};

double max_step(const VectorXd& v, const VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

}  // namespace

SolveReport solve_qp(const QuadraticProgram& qp, const Tolerances& tol) {
  qp.validate();
  const Eigen::Index n = qp.num_variables();
  const MatrixXd& H = qp.hessian;
  const VectorXd& f = qp.linear;
  const MatrixXd& G = qp.ineq_lhs;
  const VectorXd& h = qp.ineq_rhs;
  const MatrixXd& E = qp.eq_lhs;
  const VectorXd& e = qp.eq_rhs;
  const Eigen::Index mg = G.rows();
  const Eigen::Index me = E.rows();

  std::vector<BoundRow> br;
  for (Eigen::Index j = 0; j < n; ++j)
    if (qp.upper.size() && std::isfinite(qp.upper[j])) br.push_back({j, 1.0, qp.upper[j]});
  for (Eigen::Index j = 0; j < n; ++j)
    if (qp.lower.size() && std::isfinite(qp.lower[j])) br.push_back({j, -1.0, -qp.lower[j]});
  const Eigen::Index mb = static_cast<Eigen::Index>(br.size());
  const Eigen::Index mt = mg + mb;

  // Columns touched by general rows or off-diagonal hessian terms cannot be
  // eliminated; the rest are "diagonal" variables solved in closed form.
  std::vector<Eigen::Index> gcols;
  std::vector<char> dense(static_cast<size_t>(n), 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    bool nz = mg > 0 && G.col(j).lpNorm<Eigen::Infinity>() > 0.0;
    if (nz) gcols.push_back(j);
    bool off = false;
    for (Eigen::Index i = 0; i < n && !off; ++i) off = i != j && H(i, j) != 0.0;
    dense[static_cast<size_t>(j)] = nz || off;
  }
  MatrixXd Gc(mg, static_cast<Eigen::Index>(gcols.size()));
  for (size_t c = 0; c < gcols.size(); ++c) Gc.col(static_cast<Eigen::Index>(c)) = G.col(gcols[c]);

  SolveReport rep;
  const double scale_f = 1.0 + f.lpNorm<Eigen::Infinity>();
  const double scale_h = 1.0 + (mg ? h.lpNorm<Eigen::Infinity>() : 0.0) + (me ? e.lpNorm<Eigen::Infinity>() : 0.0);

  VectorXd x = VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double lo = qp.lower.size() ? qp.lower[j] : -kInf;
    const double up = qp.upper.size() ? qp.upper[j] : kInf;
    if (std::isfinite(lo) && std::isfinite(up)) x[j] = 0.5 * (lo + up);
    else if (std::isfinite(lo)) x[j] = std::max(0.0, lo + 1.0);
    else if (std::isfinite(up)) x[j] = std::min(0.0, up - 1.0);
  }
  VectorXd s(mt), z = VectorXd::Ones(mt), y = VectorXd::Zero(me);
  auto ineq_val = [&](const VectorXd& xv) {
    VectorXd r(mt);
    if (mg) r.head(mg) = G * xv - h;
    for (Eigen::Index i = 0; i < mb; ++i) r[mg + i] = br[static_cast<size_t>(i)].sign * xv[br[static_cast<size_t>(i)].var] - br[static_cast<size_t>(i)].val;
    return r;
  };
  auto ineq_t = [&](const VectorXd& w) {  // Gᵀw for stacked rows
    VectorXd r = VectorXd::Zero(n);
    if (mg) r += G.transpose() * w.head(mg);
    for (Eigen::Index i = 0; i < mb; ++i) r[br[static_cast<size_t>(i)].var] += br[static_cast<size_t>(i)].sign * w[mg + i];
    return r;
  };
  auto ineq_mul = [&](const VectorXd& dx) {
    VectorXd r(mt);
    if (mg) r.head(mg) = G * dx;
    for (Eigen::Index i = 0; i < mb; ++i) r[mg + i] = br[static_cast<size_t>(i)].sign * dx[br[static_cast<size_t>(i)].var];
    return r;
  };
  {
    const VectorXd g0 = ineq_val(x);
    for (Eigen::Index i = 0; i < mt; ++i) s[i] = std::max(-g0[i], 1.0);
  }

  // Partition into dense (R) and diagonal (S) variables.
  std::vector<Eigen::Index> R, S;
  for (Eigen::Index j = 0; j < n; ++j) (dense[static_cast<size_t>(j)] ? R : S).push_back(j);
  const Eigen::Index nr = static_cast<Eigen::Index>(R.size());

  auto objective = [&](const VectorXd& xv) { return 0.5 * xv.dot(H * xv) + f.dot(xv); };

  int it = 0;
  bool converged = false;
  for (; it < tol.max_ipm_iterations; ++it) {
    const VectorXd rd = H * x + f + ineq_t(z) + (me ? VectorXd(E.transpose() * y) : VectorXd::Zero(n));
    const VectorXd req = me ? VectorXd(E * x - e) : VectorXd();
    const VectorXd rin = mt ? VectorXd(ineq_val(x) + s) : VectorXd();
    const double mu = mt ? s.dot(z) / static_cast<double>(mt) : 0.0;
    const double pres = std::max(me ? req.lpNorm<Eigen::Infinity>() : 0.0, mt ? rin.lpNorm<Eigen::Infinity>() : 0.0);
    const double dres = rd.lpNorm<Eigen::Infinity>();
    if (!x.allFinite() || !z.allFinite()) break;
    if (dres <= tol.ipm * scale_f && pres <= tol.ipm * scale_h &&
        mu <= tol.ipm * (1.0 + std::abs(objective(x)))) {
      converged = true;
      break;
    }
    if (x.lpNorm<Eigen::Infinity>() > 1e14 || (mt && z.lpNorm<Eigen::Infinity>() > 1e16)) break;

    // Assemble reduced KKT matrix.
    const VectorXd sig = mt ? VectorXd(z.cwiseQuotient(s)) : VectorXd();
    VectorXd kdiag = H.diagonal();
    for (Eigen::Index i = 0; i < mb; ++i) kdiag[br[static_cast<size_t>(i)].var] += sig[mg + i];
    MatrixXd Kg;
    if (mg && !gcols.empty()) Kg = Gc.transpose() * sig.head(mg).asDiagonal() * Gc;
    MatrixXd K = MatrixXd::Zero(nr + me, nr + me);
    std::vector<Eigen::Index> pos(static_cast<size_t>(n), -1);
    for (Eigen::Index a = 0; a < nr; ++a) pos[static_cast<size_t>(R[static_cast<size_t>(a)])] = a;
    for (Eigen::Index a = 0; a < nr; ++a)
      for (Eigen::Index b = 0; b < nr; ++b) K(a, b) = H(R[static_cast<size_t>(a)], R[static_cast<size_t>(b)]);
    for (Eigen::Index a = 0; a < nr; ++a) K(a, a) = kdiag[R[static_cast<size_t>(a)]];
    for (size_t c1 = 0; c1 < gcols.size(); ++c1)
      for (size_t c2 = 0; c2 < gcols.size(); ++c2)
        K(pos[static_cast<size_t>(gcols[c1])], pos[static_cast<size_t>(gcols[c2])]) +=
            Kg(static_cast<Eigen::Index>(c1), static_cast<Eigen::Index>(c2));
    VectorXd dS(static_cast<Eigen::Index>(S.size()));
    for (size_t a = 0; a < S.size(); ++a) dS[static_cast<Eigen::Index>(a)] = std::max(kdiag[S[a]], 1e-14);
    if (me) {
      for (Eigen::Index a = 0; a < nr; ++a) {
        K.block(nr, a, me, 1) = E.col(R[static_cast<size_t>(a)]);
        K.block(a, nr, 1, me) = E.col(R[static_cast<size_t>(a)]).transpose();
      }
      for (size_t a = 0; a < S.size(); ++a) {
        const VectorXd col = E.col(S[a]);
        K.bottomRightCorner(me, me).noalias() -= col * col.transpose() / dS[static_cast<Eigen::Index>(a)];
      }
    }
    Eigen::PartialPivLU<MatrixXd> lu;
    if (nr + me > 0) lu.compute(K);

    // Solve [H+GᵀΣG, Eᵀ; E, 0][dx; dy] = [bx; by].
    auto kkt_solve = [&](const VectorXd& bx, const VectorXd& by, VectorXd& dx, VectorXd& dy) {
      VectorXd rhs(nr + me);
      for (Eigen::Index a = 0; a < nr; ++a) rhs[a] = bx[R[static_cast<size_t>(a)]];
      if (me) {
        rhs.tail(me) = by;
        for (size_t a = 0; a < S.size(); ++a)
          rhs.tail(me) -= E.col(S[a]) * (bx[S[a]] / dS[static_cast<Eigen::Index>(a)]);
      }
      VectorXd sol = (nr + me > 0) ? VectorXd(lu.solve(rhs)) : VectorXd();
      dx.resize(n);
      for (Eigen::Index a = 0; a < nr; ++a) dx[R[static_cast<size_t>(a)]] = sol[a];
      dy = me ? VectorXd(sol.tail(me)) : VectorXd();
      for (size_t a = 0; a < S.size(); ++a) {
        double v = bx[S[a]];
        if (me) v -= E.col(S[a]).dot(dy);
        dx[S[a]] = v / dS[static_cast<Eigen::Index>(a)];
      }
    };
    auto direction = [&](const VectorXd& rc, VectorXd& dx, VectorXd& dy, VectorXd& ds, VectorXd& dz) {
      VectorXd bx = -rd;
      if (mt) bx -= ineq_t((z.cwiseProduct(rin) - rc).cwiseQuotient(s));
      kkt_solve(bx, me ? VectorXd(-req) : VectorXd(), dx, dy);
      if (mt) {
        ds = -rin - ineq_mul(dx);
        dz = (-rc - z.cwiseProduct(ds)).cwiseQuotient(s);
      }
    };

    VectorXd dx, dy, ds, dz;
    if (mt == 0) {
      direction(VectorXd(), dx, dy, ds, dz);
      x += dx;
      if (me) y += dy;
      continue;
    }
    direction(s.cwiseProduct(z), dx, dy, ds, dz);
    const double ap = max_step(s, ds), ad = max_step(z, dz);
    const double mu_aff = (s + ap * ds).dot(z + ad * dz) / static_cast<double>(mt);
    const double sigma = std::pow(std::clamp(mu_aff / std::max(mu, 1e-300), 0.0, 1.0), 3);
    const VectorXd rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - VectorXd::Constant(mt, sigma * mu);
    direction(rc, dx, dy, ds, dz);
    if (!dx.allFinite()) break;
    const double eta = std::max(0.9, 1.0 - 10.0 * mu);
    const double tp = std::min(1.0, eta * max_step(s, ds));
    const double td = std::min(1.0, eta * max_step(z, dz));
    x += tp * dx;
    s += tp * ds;
    z += td * dz;
    if (me) y += td * dy;
  }
  rep.iterations = it;
  if (!converged) {
    // Distinguish an empty feasible set from a solver breakdown.
    LinearProgram feas;
    feas.cost = VectorXd::Zero(n);
    feas.ineq_lhs = G;
    feas.ineq_rhs = h;
    feas.eq_lhs = E;
    feas.eq_rhs = e;
    feas.lower = qp.lower;
    feas.upper = qp.upper;
    const auto fr = solve_lp(feas, tol);
    rep.status = fr.status == SolveStatus::Infeasible ? SolveStatus::Infeasible : SolveStatus::NumericalFailure;
    return rep;
  }
  rep.status = SolveStatus::Optimal;
  rep.argmin = x;
  rep.objective = objective(x);
  rep.multipliers.ineq = mg ? VectorXd(z.head(mg)) : VectorXd();
  rep.multipliers.eq = y;
  rep.multipliers.lower = VectorXd::Zero(n);
  rep.multipliers.upper = VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < mb; ++i) {
    const auto& b = br[static_cast<size_t>(i)];
    (b.sign > 0 ? rep.multipliers.upper : rep.multipliers.lower)[b.var] = z[mg + i];
  }
  if (mt == 0) return rep;

  // Polish: solve the equality-constrained KKT system of the rows the
  // interior point identifies as active, keep it only if it is better.
  std::vector<Eigen::Index> act;
  for (Eigen::Index i = 0; i < mt; ++i)
    if (z[i] > s[i]) act.push_back(i);
  const Eigen::Index ka = static_cast<Eigen::Index>(act.size());
  const Eigen::Index dim = n + me + ka;
  MatrixXd kkt = MatrixXd::Zero(dim, dim);
  VectorXd rhs(dim);
  kkt.topLeftCorner(n, n) = H;
  rhs.head(n) = -f;
  if (me) {
    kkt.block(n, 0, me, n) = E;
    kkt.block(0, n, n, me) = E.transpose();
    rhs.segment(n, me) = e;
  }
  for (Eigen::Index a = 0; a < ka; ++a) {
    const Eigen::Index i = act[static_cast<size_t>(a)];
    VectorXd row = VectorXd::Zero(n);
    double rh;
    if (i < mg) {
      row = G.row(i).transpose();
      rh = h[i];
    } else {
      const auto& b = br[static_cast<size_t>(i - mg)];
      row[b.var] = b.sign;
      rh = b.val;
    }
    kkt.block(n + me + a, 0, 1, n) = row.transpose();
    kkt.block(0, n + me + a, n, 1) = row;
    rhs[n + me + a] = rh;
  }
  MatrixXd reg = kkt;
  const double delta = 1e-9;
  reg.diagonal().head(n).array() += delta;
  reg.diagonal().tail(me + ka).array() -= delta;
  Eigen::PartialPivLU<MatrixXd> plu(reg);
  VectorXd sol = VectorXd::Zero(dim);
  sol.head(n) = x;
  for (int k = 0; k < 10; ++k) sol += plu.solve(rhs - kkt * sol);
  if (!sol.allFinite()) return rep;
  SolveReport pol = rep;
  pol.argmin = sol.head(n);
  pol.objective = objective(sol.head(n));
  pol.multipliers.eq = me ? VectorXd(sol.segment(n, me)) : VectorXd();
  if (mg) pol.multipliers.ineq.setZero();
  pol.multipliers.lower.setZero();
  pol.multipliers.upper.setZero();
  for (Eigen::Index a = 0; a < ka; ++a) {
    const Eigen::Index i = act[static_cast<size_t>(a)];
    const double v = sol[n + me + a];
    if (i < mg) {
      pol.multipliers.ineq[i] = v;
    } else {
      const auto& b = br[static_cast<size_t>(i - mg)];
      (b.sign > 0 ? pol.multipliers.upper : pol.multipliers.lower)[b.var] = v;
    }
  }
  if (kkt_residual(qp, pol) <= kkt_residual(qp, rep)) return pol;
  return rep;
}

double kkt_residual(const QuadraticProgram& qp, const SolveReport& rep) {
  if (!rep.argmin) return kInf;
  const VectorXd& x = *rep.argmin;
  const auto& mu = rep.multipliers;
  const Eigen::Index n = x.size();
  VectorXd st = qp.hessian * x + qp.linear;
  double r = 0.0;
  if (qp.ineq_lhs.rows()) {
    st += qp.ineq_lhs.transpose() * mu.ineq;
    const VectorXd g = qp.ineq_lhs * x - qp.ineq_rhs;
    r = std::max(r, std::max(0.0, g.maxCoeff()));
    r = std::max(r, std::max(0.0, -mu.ineq.minCoeff()));
    r = std::max(r, mu.ineq.cwiseProduct(g).cwiseAbs().maxCoeff());
  }
  if (qp.eq_lhs.rows()) {
    st += qp.eq_lhs.transpose() * mu.eq;
    r = std::max(r, (qp.eq_lhs * x - qp.eq_rhs).lpNorm<Eigen::Infinity>());
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (qp.upper.size() && std::isfinite(qp.upper[j])) {
      st[j] += mu.upper[j];
      r = std::max({r, x[j] - qp.upper[j], -mu.upper[j], std::abs(mu.upper[j] * (qp.upper[j] - x[j]))});
    }
    if (qp.lower.size() && std::isfinite(qp.lower[j])) {
      st[j] -= mu.lower[j];
      r = std::max({r, qp.lower[j] - x[j], -mu.lower[j], std::abs(mu.lower[j] * (x[j] - qp.lower[j]))});
    }
  }
  return std::max(r, st.lpNorm<Eigen::Infinity>());
}

// ---------------------------------------------------------------------------
// Matrix equations and spectra.

double spectral_radius(const MatrixXd& a) {
  LBMPC_REQUIRE(a.rows() == a.cols(), "spectral_radius needs a square matrix");
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {
void check_symmetric(const MatrixXd& s) {
  LBMPC_REQUIRE(s.rows() == s.cols(), "matrix must be square");
  LBMPC_REQUIRE(s.allFinite(), "matrix must be finite");
  const double asym = (s - s.transpose()).lpNorm<Eigen::Infinity>();
  LBMPC_REQUIRE(asym <= 1e-8 * std::max(1.0, s.lpNorm<Eigen::Infinity>()),
                "matrix is not symmetric (asymmetry " + std::to_string(asym) + ")");
}
}  // namespace

double min_eigenvalue(const MatrixXd& s) {
  check_symmetric(s);
  LBMPC_REQUIRE(s.size() > 0, "empty matrix");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (s + s.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue(const MatrixXd& s) {
  check_symmetric(s);
  LBMPC_REQUIRE(s.size() > 0, "empty matrix");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (s + s.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

MatrixXd solve_dlyap(const MatrixXd& a, const MatrixXd& q) {
  LBMPC_REQUIRE(a.rows() == a.cols() && q.rows() == a.rows() && q.cols() == a.cols(),
                "solve_dlyap dimension mismatch");
  check_symmetric(q);
  const double rho = spectral_radius(a);
  LBMPC_REQUIRE(rho < 1.0, "closed-loop matrix is not Schur (spectral radius " + std::to_string(rho) + ")");
  const Eigen::Index n = a.rows();
  MatrixXd p;
  auto residual = [&](const MatrixXd& pm) -> MatrixXd { return a.transpose() * pm * a - pm + q; };
  if (n <= 30) {
    const MatrixXd at = a.transpose();
    MatrixXd kron(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) kron.block(i * n, j * n, n, n) = at(i, j) * at;
    const MatrixXd sys = MatrixXd::Identity(n * n, n * n) - kron;
    Eigen::PartialPivLU<MatrixXd> lu(sys);
    const VectorXd qv = Eigen::Map<const VectorXd>(q.data(), n * n);
    VectorXd pv = lu.solve(qv);
    for (int k = 0; k < 3; ++k) {
      MatrixXd pm = Eigen::Map<MatrixXd>(pv.data(), n, n);
      MatrixXd r = residual(pm);
      pv += lu.solve(Eigen::Map<const VectorXd>(r.data(), n * n));
    }
    p = Eigen::Map<MatrixXd>(pv.data(), n, n);
  } else {
    // Doubling: P = Σ (Aᵀ)^k Q A^k.
    p = q;
    MatrixXd ak = a;
    for (int k = 0; k < 200 && ak.lpNorm<Eigen::Infinity>() > 1e-18; ++k) {
      p += ak.transpose() * p * ak;
      ak = ak * ak;
    }
  }
  return 0.5 * (p + p.transpose());
}

MatrixXd solve_dare(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r) {
  const Eigen::Index n = a.rows();
  LBMPC_REQUIRE(a.cols() == n && b.rows() == n && q.rows() == n && q.cols() == n &&
                    r.rows() == b.cols() && r.cols() == b.cols(),
                "solve_dare dimension mismatch");
  check_symmetric(q);
  check_symmetric(r);
  LBMPC_REQUIRE(min_eigenvalue(r) > 0.0, "solve_dare needs R positive definite");
  LBMPC_REQUIRE(is_stabilizable(a, b), "(A, B) is not stabilizable");
  // Structure-preserving doubling.
  MatrixXd ak = a;
  MatrixXd gk = b * r.llt().solve(b.transpose());
  MatrixXd hk = q;
  const MatrixXd eye = MatrixXd::Identity(n, n);
  for (int it = 0; it < 100; ++it) {
    Eigen::PartialPivLU<MatrixXd> w(eye + gk * hk);
    const MatrixXd wa = w.solve(ak);
    const MatrixXd wg = w.solve(gk);
    const MatrixXd hn = hk + ak.transpose() * hk * wa;
    gk = gk + ak * wg * ak.transpose();
    ak = ak * wa;
    const double change = (hn - hk).lpNorm<Eigen::Infinity>();
    hk = 0.5 * (hn + hn.transpose());
    gk = 0.5 * (gk + gk.transpose());
    if (change <= 1e-13 * std::max(1.0, hk.lpNorm<Eigen::Infinity>())) {
      const MatrixXd x = hk;
      const MatrixXd btx = b.transpose() * x;
      const MatrixXd res = a.transpose() * x * a -
                           a.transpose() * x * b * (r + btx * b).ldlt().solve(btx * a) + q - x;
      if (!x.allFinite() || res.lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + x.lpNorm<Eigen::Infinity>()))
        throw Error(ErrorKind::Numerical, "Riccati residual too large");
      return x;
    }
  }
  throw Error(ErrorKind::Numerical, "Riccati doubling did not converge");
}

namespace {
bool pbh(const MatrixXd& a, const MatrixXd& b, bool right) {
  const Eigen::Index n = a.rows();
  Eigen::EigenSolver<MatrixXd> es(a, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()[i];
    if (std::abs(lam) < 1.0 - 1e-9) continue;
    Eigen::MatrixXcd m;
    const Eigen::MatrixXcd shift = a.cast<std::complex<double>>() - lam * Eigen::MatrixXcd::Identity(n, n);
    if (right) {
      m.resize(n, n + b.cols());
      m << shift, b.cast<std::complex<double>>();
    } else {
      m.resize(n + b.rows(), n);
      m << shift, b.cast<std::complex<double>>();
    }
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(m);
    lu.setThreshold(1e-10);
    if (lu.rank() < n) return false;
  }
  return true;
}
}  // namespace

bool is_stabilizable(const MatrixXd& a, const MatrixXd& b) { return pbh(a, b, true); }
bool is_detectable(const MatrixXd& a, const MatrixXd& c) { return pbh(a, c, false); }

}  // namespace lbmpc::linopt
