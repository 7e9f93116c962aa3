#include "lbmpc/setcalc.hpp"

#include <cmath>
#include <limits>

#include "lbmpc/dataio.hpp"
#include "lbmpc/error.hpp"
#include "lbmpc/linopt.hpp"

namespace lbmpc {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

double Zonotope::support(const VectorXd& c) const {
  LBMPC_REQUIRE(c.size() == center.size(), "direction dimension mismatch");
  double s = c.dot(center);
  if (generators.cols() > 0) s += (generators.transpose() * c).cwiseAbs().sum();
  return s;
}

VectorXd Zonotope::interval_radius() const {
  if (generators.cols() == 0) return VectorXd::Zero(dim());
  return generators.cwiseAbs().rowwise().sum();
}

bool Zonotope::contains(const VectorXd& x, double tol) const {
  LBMPC_REQUIRE(x.size() == center.size(), "point dimension mismatch");
  const Eigen::Index n = dim(), g = order();
  if (g == 0) return (x - center).lpNorm<Eigen::Infinity>() <= tol;
  // min t  s.t.  G λ = x − c,  −t ≤ λ_j ≤ t.
  linopt::LinearProgram lp;
  lp.cost = VectorXd::Zero(g + 1);
  lp.cost[g] = 1.0;
  lp.eq_lhs = MatrixXd::Zero(n, g + 1);
  lp.eq_lhs.leftCols(g) = generators;
  lp.eq_rhs = x - center;
  lp.ineq_lhs = MatrixXd::Zero(2 * g, g + 1);
  lp.ineq_rhs = VectorXd::Zero(2 * g);
  for (Eigen::Index j = 0; j < g; ++j) {
    lp.ineq_lhs(j, j) = 1.0;
    lp.ineq_lhs(j, g) = -1.0;
    lp.ineq_lhs(g + j, j) = -1.0;
    lp.ineq_lhs(g + j, g) = -1.0;
  }
  const auto rep = linopt::solve_lp(lp);
  if (rep.status == linopt::SolveStatus::Infeasible) return false;
  if (!rep.optimal()) throw Error(ErrorKind::Numerical, "zonotope membership LP failed");
  return rep.objective <= 1.0 + tol;
}

Zonotope Zonotope::point(const VectorXd& c) { return {c, MatrixXd::Zero(c.size(), 0)}; }

Zonotope Zonotope::interval(double lo, double hi) {
  LBMPC_REQUIRE(lo <= hi, "interval bounds out of order");
  Zonotope z{VectorXd::Constant(1, 0.5 * (lo + hi)), MatrixXd::Constant(1, 1, 0.5 * (hi - lo))};
  if (hi == lo) z.generators.resize(1, 0);
  return z;
}

Zonotope Zonotope::box(const VectorXd& radius) {
  LBMPC_REQUIRE((radius.array() >= 0.0).all(), "box radius must be non-negative");
  return zono_compact({VectorXd::Zero(radius.size()), MatrixXd(radius.asDiagonal())});
}

Zonotope zono_affine(const Zonotope& z, const MatrixXd& t) {
  LBMPC_REQUIRE(t.cols() == z.dim(), "map dimension mismatch");
  return {t * z.center, t * z.generators};
}

Zonotope zono_minkowski(const Zonotope& a, const Zonotope& b) {
  LBMPC_REQUIRE(a.dim() == b.dim(), "Minkowski sum of sets of different dimension");
  Zonotope out;
  out.center = a.center + b.center;
  out.generators.resize(a.dim(), a.order() + b.order());
  out.generators << a.generators, b.generators;
  return out;
}

Zonotope zono_compact(const Zonotope& z, double tol) {
  const Eigen::Index n = z.dim();
  std::vector<VectorXd> dirs;
  std::vector<double> lengths;
  for (Eigen::Index j = 0; j < z.order(); ++j) {
    VectorXd g = z.generators.col(j);
    const double len = g.norm();
    if (len <= tol) continue;
    g /= len;
    Eigen::Index lead = 0;
    g.cwiseAbs().maxCoeff(&lead);
    if (g[lead] < 0) g = -g;
    bool merged = false;
    for (size_t k = 0; k < dirs.size(); ++k) {
      if ((dirs[k] - g).lpNorm<Eigen::Infinity>() <= 1e-12) {
        lengths[k] += len;
        merged = true;
        break;
      }
    }
    if (!merged) {
      dirs.push_back(g);
      lengths.push_back(len);
    }
  }
  Zonotope out{z.center, MatrixXd(n, static_cast<Eigen::Index>(dirs.size()))};
  for (size_t k = 0; k < dirs.size(); ++k) out.generators.col(static_cast<Eigen::Index>(k)) = dirs[k] * lengths[k];
  return out;
}

MembershipRows zono_membership_rows(const Zonotope& z) {
  MembershipRows m;
  m.aux_lhs = -z.generators;
  m.rhs = z.center;
  m.aux_lower = VectorXd::Constant(z.order(), -1.0);
  m.aux_upper = VectorXd::Constant(z.order(), 1.0);
  return m;
}

namespace {
double norm2(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()[0];
}
}  // namespace

MrpiApproximation mrpi_outer(const MatrixXd& a_cl, const Zonotope& w_set, double tail_tol, int max_terms) {
  const Eigen::Index n = a_cl.rows();
  LBMPC_REQUIRE(a_cl.cols() == n && w_set.dim() == n, "mRPI dimension mismatch");
  LBMPC_REQUIRE(tail_tol > 0.0, "tail tolerance must be positive");
  const double rho = linopt::spectral_radius(a_cl);
  LBMPC_REQUIRE(rho < 1.0, "mRPI needs a Schur matrix, spectral radius is " + format_double(rho));

  MrpiApproximation out;
  const MatrixXd eye = MatrixXd::Identity(n, n);
  const VectorXd center = (eye - a_cl).partialPivLu().solve(w_set.center);
  double w_radius = 0.0;
  for (Eigen::Index j = 0; j < w_set.order(); ++j) w_radius += w_set.generators.col(j).norm();
  if (w_radius == 0.0) {
    out.set = Zonotope::point(center);
    return out;
  }

  // ‖A^m‖₂ ≤ ½ bounds the series tail by a geometric sum of m-blocks.
  std::vector<MatrixXd> pw{eye};
  std::vector<double> nrm{1.0};
  auto extend = [&](size_t upto) {
    while (pw.size() <= upto) {
      pw.push_back(pw.back() * a_cl);
      nrm.push_back(norm2(pw.back()));
    }
  };
  size_t m = 1;
  for (;; ++m) {
    extend(m);
    if (nrm[m] <= 0.5) break;
    if (static_cast<int>(m) > max_terms)
      throw Error(ErrorKind::Numerical, "mRPI: powers of the closed loop decay too slowly");
  }
  const double block_factor = 1.0 / (1.0 - nrm[m]);

  size_t s = 0;
  double tail = 0.0;
  for (;; ++s) {
    extend(s + m);
    double window = 0.0;
    for (size_t j = 0; j < m; ++j) window += nrm[s + j];
    tail = window * block_factor * w_radius;
    if (tail <= tail_tol) break;
    if (static_cast<int>(s) >= max_terms)
      throw Error(ErrorKind::Numerical, "mRPI truncation exceeds " + std::to_string(max_terms) + " terms");
  }

  MatrixXd gens(n, static_cast<Eigen::Index>(s) * w_set.order() + (tail > 0.0 ? n : 0));
  for (size_t i = 0; i < s; ++i)
    gens.middleCols(static_cast<Eigen::Index>(i) * w_set.order(), w_set.order()) = pw[i] * w_set.generators;
  if (tail > 0.0) gens.rightCols(n) = tail * eye;
  out.set = zono_compact({center, gens});
  out.terms = static_cast<int>(s);
  out.tail_radius = tail;
  return out;
}

bool Polytope::contains(const VectorXd& x, double tol) const { return violation(x) <= tol; }

double Polytope::violation(const VectorXd& x) const {
  LBMPC_REQUIRE(x.size() == G.cols(), "point dimension mismatch");
  if (G.rows() == 0) return -std::numeric_limits<double>::infinity();
  return (G * x - h).maxCoeff();
}

namespace {
linopt::LinearProgram region_of(const MatrixXd& g, const VectorXd& h) {
  linopt::LinearProgram lp;
  lp.cost = VectorXd::Zero(g.cols());
  lp.ineq_lhs = g;
  lp.ineq_rhs = h;
  return lp;
}
}  // namespace

bool Polytope::is_empty() const {
  if (G.rows() == 0) return false;
  linopt::LpSolver solver(region_of(G, h));
  return !solver.feasible_point().has_value();
}

std::optional<double> Polytope::support(const VectorXd& c) const {
  linopt::LpSolver solver(region_of(G, h));
  const auto rep = solver.minimize(-c);
  if (!rep.optimal()) return std::nullopt;
  return -rep.objective;
}

MatrixXd limit_map(const MatrixXd& f) {
  MatrixXd s = f;
  for (int i = 0; i < 80; ++i) {
    MatrixXd s2 = s * s;
    const double scale = 1.0 + s.lpNorm<Eigen::Infinity>();
    if ((s2 - s).lpNorm<Eigen::Infinity>() <= 1e-13 * scale) return s2;
    if (!s2.allFinite()) break;
    s = std::move(s2);
  }
  throw Error(ErrorKind::Numerical, "powers of the autonomous map do not converge");
}

namespace {

struct RowSet {
  std::vector<RowVectorXd> g;
  std::vector<double> h;
  std::vector<MoasRow> origin;

  MatrixXd lhs(std::optional<size_t> skip = std::nullopt) const {
    const auto n = g.empty() ? 0 : g.front().size();
    MatrixXd out(static_cast<Eigen::Index>(g.size() - (skip ? 1 : 0)), n);
    Eigen::Index r = 0;
    for (size_t i = 0; i < g.size(); ++i)
      if (!skip || *skip != i) out.row(r++) = g[i];
    return out;
  }
  VectorXd rhs(std::optional<size_t> skip = std::nullopt) const {
    VectorXd out(static_cast<Eigen::Index>(h.size() - (skip ? 1 : 0)));
    Eigen::Index r = 0;
    for (size_t i = 0; i < h.size(); ++i)
      if (!skip || *skip != i) out[r++] = h[i];
    return out;
  }
};

// True when gᵀx ≤ h holds on the whole region of `solver`.
bool implied(linopt::LpSolver& solver, const RowVectorXd& g, double h, double row_tol) {
  const auto rep = solver.minimize(-g.transpose());
  if (rep.status == linopt::SolveStatus::Unbounded) return false;
  if (rep.status == linopt::SolveStatus::Infeasible) return true;
  if (!rep.optimal()) throw Error(ErrorKind::Numerical, "redundancy LP failed");
  return -rep.objective <= h + row_tol;
}

}  // namespace

MoasResult moas(const MatrixXd& f, const MatrixXd& c_out, const VectorXd& lo, const VectorXd& hi, double eps,
                double row_tol, int max_steps, const std::optional<MatrixXd>& limit) {
  const Eigen::Index n = f.rows(), m = c_out.rows();
  LBMPC_REQUIRE(f.cols() == n && c_out.cols() == n, "MOAS dimension mismatch");
  LBMPC_REQUIRE(lo.size() == m && hi.size() == m, "one interval per output required");
  LBMPC_REQUIRE(eps >= 0.0, "eps must be non-negative");
  for (Eigen::Index j = 0; j < m; ++j)
    LBMPC_REQUIRE(lo[j] + eps < hi[j] - eps, "output interval " + std::to_string(j) + " is empty after shrinking");
  const MatrixXd f_inf = limit ? *limit : limit_map(f);
  LBMPC_REQUIRE(f_inf.rows() == n && f_inf.cols() == n, "limit map dimension mismatch");

  RowSet rows;
  auto push = [&](const RowVectorXd& g, double h, MoasRow origin) {
    if (g.lpNorm<Eigen::Infinity>() <= 1e-14) {
      if (h < -row_tol) throw Error(ErrorKind::EmptyTightenedSet, "output admissible set is empty");
      return;
    }
    rows.g.push_back(g);
    rows.h.push_back(h);
    rows.origin.push_back(origin);
  };
  auto push_outputs = [&](const MatrixXd& map, int step, double shrink) {
    for (Eigen::Index j = 0; j < m; ++j) {
      push(map.row(j), hi[j] - shrink, {step, static_cast<int>(j), true});
      push(-map.row(j), -(lo[j] + shrink), {step, static_cast<int>(j), false});
    }
  };
  push_outputs(c_out * f_inf, -1, eps);
  MatrixXd cf = c_out;
  push_outputs(cf, 0, 0.0);

  MoasResult out;
  for (int t = 0;; ++t) {
    if (t >= max_steps)
      throw Error(ErrorKind::Numerical, "MOAS not determined within " + std::to_string(max_steps) + " steps");
    linopt::LpSolver solver(region_of(rows.lhs(), rows.rhs()));
    if (!solver.feasible_point()) throw Error(ErrorKind::EmptyTightenedSet, "output admissible set is empty");
    cf = cf * f;
    bool all_redundant = true;
    for (Eigen::Index j = 0; j < m && all_redundant; ++j) {
      all_redundant = implied(solver, cf.row(j), hi[j], row_tol) && implied(solver, -cf.row(j), -lo[j], row_tol);
    }
    if (all_redundant) {
      out.t_star = t;
      break;
    }
    push_outputs(cf, t + 1, 0.0);
  }

  // Drop rows implied by the remaining ones.
  const size_t total = rows.g.size();
  for (size_t i = 0; i < rows.g.size();) {
    if (rows.g.size() == 1) break;
    linopt::LpSolver solver(region_of(rows.lhs(i), rows.rhs(i)));
    if (implied(solver, rows.g[i], rows.h[i], row_tol)) {
      rows.g.erase(rows.g.begin() + static_cast<std::ptrdiff_t>(i));
      rows.h.erase(rows.h.begin() + static_cast<std::ptrdiff_t>(i));
      rows.origin.erase(rows.origin.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  out.pruned = static_cast<int>(total - rows.g.size());
  out.set = {rows.lhs(), rows.rhs()};
  out.provenance = rows.origin;
  return out;
}

}  // namespace lbmpc
