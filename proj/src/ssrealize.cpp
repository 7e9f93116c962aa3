#include "lbmpc/ssrealize.hpp"

#include <cmath>

#include "lbmpc/error.hpp"
#include "lbmpc/linopt.hpp"

namespace lbmpc {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

MatrixXd PerturbedSSModel::E() const {
  MatrixXd e = MatrixXd::Zero(nx(), o);
  e.topRows(o).setIdentity();
  return e;
}

VectorXd PerturbedSSModel::state(const std::vector<double>& z_hist, const std::vector<double>& u_hist) const {
  LBMPC_REQUIRE(static_cast<int>(z_hist.size()) >= o && static_cast<int>(u_hist.size()) >= o - 1,
                "history too short for the model order");
  VectorXd x(nx());
  for (int i = 0; i < o; ++i) x[i] = z_hist[static_cast<size_t>(i)];
  for (int i = 0; i + 1 < o; ++i) x[o + i] = u_hist[static_cast<size_t>(i)];
  return x;
}

void PerturbedSSModel::validate() const {
  const int n = 2 * o - 1;
  LBMPC_REQUIRE(A.rows() == n && A.cols() == n && B1.size() == n && M1.size() == n && C.size() == n,
                "realization dimensions must be 2o-1");
  LBMPC_REQUIRE(w_bar >= 0.0 && d_bar >= 0.0, "disturbance bounds must be non-negative");
}

PerturbedSSModel realize(const MultiStepModel& m) {
  LBMPC_REQUIRE(m.p == 1, "realization needs the one-step model");
  m.validate();
  const int o = m.o, n = 2 * o - 1;
  PerturbedSSModel ss;
  ss.o = o;
  ss.A = MatrixXd::Zero(n, n);
  ss.B1 = VectorXd::Zero(n);
  ss.M1 = VectorXd::Unit(n, 0);
  ss.C = RowVectorXd::Unit(n, 0);
  ss.A.row(0) = m.theta.head(n).transpose();
  ss.B1[0] = m.theta[n];
  for (int i = 1; i < o; ++i) ss.A(i, i - 1) = 1.0;
  if (o > 1) {
    ss.B1[o] = 1.0;
    for (int i = o + 1; i < n; ++i) ss.A(i, i - 1) = 1.0;
  }
  const double rho = linopt::spectral_radius(ss.A);
  if (!(rho < 1.0))
    throw Error(ErrorKind::UnstableRealization,
                "identified one-step model has spectral radius " + format_double(rho) + " >= 1");
  return ss;
}

VectorXd iterated_theta(const PerturbedSSModel& ss, int p) {
  LBMPC_REQUIRE(p >= 1, "prediction step must be at least 1");
  const int n = ss.nx();
  VectorXd th(n + p);
  // Row C·A^i for i = 0…p.
  std::vector<RowVectorXd> ca(static_cast<size_t>(p + 1));
  ca[0] = ss.C;
  for (int i = 1; i <= p; ++i) ca[static_cast<size_t>(i)] = ca[static_cast<size_t>(i - 1)] * ss.A;
  th.head(n) = ca[static_cast<size_t>(p)].transpose();
  for (int j = 0; j < p; ++j) th[n + j] = ca[static_cast<size_t>(p - 1 - j)].dot(ss.B1);
  return th;
}

IteratedPredictor iterate_predictor(const PerturbedSSModel& ss, int p) {
  return {p, iterated_theta(ss, p), 0.0};
}

double disturbance_gain(const PerturbedSSModel& ss, int p) {
  LBMPC_REQUIRE(p >= 0, "step must be non-negative");
  double s = 0.0;
  RowVectorXd ca = ss.C;
  for (int i = 0; i < p; ++i) {
    s += std::abs(ca.dot(ss.M1));
    ca = ca * ss.A;
  }
  return s;
}

double noise_gain(const PerturbedSSModel& ss, int p) {
  LBMPC_REQUIRE(p >= 0, "step must be non-negative");
  RowVectorXd ca = ss.C;
  for (int i = 0; i < p; ++i) ca = ca * ss.A;
  return ca.head(ss.o).cwiseAbs().sum();
}

double estimate_wbar(const PerturbedSSModel& ss, const std::vector<double>& tau, double d_bar) {
  LBMPC_REQUIRE(!tau.empty(), "no bounds given");
  LBMPC_REQUIRE(d_bar >= 0.0, "noise bound must be non-negative");
  double w = 0.0;
  for (size_t i = 0; i < tau.size(); ++i) {
    LBMPC_REQUIRE(std::isfinite(tau[i]) && tau[i] > 0.0, "bounds must be finite and positive");
    const int p = static_cast<int>(i) + 1;
    const double den = disturbance_gain(ss, p);
    w = std::max(w, (tau[i] - noise_gain(ss, p) * d_bar) / den);
  }
  return w;
}

double estimate_wbar_lp(const PerturbedSSModel& ss, const std::vector<double>& tau, double d_bar) {
  const auto m = static_cast<Eigen::Index>(tau.size());
  linopt::LinearProgram lp;
  lp.cost = VectorXd::Ones(1);
  lp.ineq_lhs.resize(m, 1);
  lp.ineq_rhs.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int p = static_cast<int>(i) + 1;
    lp.ineq_lhs(i, 0) = -disturbance_gain(ss, p);
    lp.ineq_rhs[i] = noise_gain(ss, p) * d_bar - tau[static_cast<size_t>(i)];
  }
  lp.lower = VectorXd::Zero(1);
  const auto rep = linopt::solve_lp(lp);
  if (!rep.optimal()) throw Error(ErrorKind::Numerical, "disturbance-bound LP failed");
  return (*rep.argmin)[0];
}

double iterated_error_bound(const PerturbedSSModel& ss, double w_bar, double d_bar, int p) {
  LBMPC_REQUIRE(p >= 1, "step must be at least 1");
  return disturbance_gain(ss, p) * w_bar + noise_gain(ss, p) * d_bar;
}

double gain_estimate(const MultiStepModel& m) {
  m.validate();
  const double den = 1.0 - m.theta_ar().sum();
  if (std::abs(den) < 1e-9)
    throw Error(ErrorKind::SingularGain, "1 - sum(theta_AR) = " + format_double(den) + " is numerically zero");
  const double num = m.theta_ubar().sum() + (m.o > 1 ? m.theta_u().sum() : 0.0);
  return num / den;
}

double realization_dc_gain(const PerturbedSSModel& ss) {
  const MatrixXd eye = MatrixXd::Identity(ss.nx(), ss.nx());
  return ss.C * (eye - ss.A).partialPivLu().solve(ss.B1);
}

namespace {
int rank_of(const MatrixXd& m) {
  Eigen::FullPivLU<MatrixXd> lu(m);
  lu.setThreshold(1e-10);
  return static_cast<int>(lu.rank());
}
}  // namespace

int controllability_rank(const PerturbedSSModel& ss) {
  const int n = ss.nx();
  MatrixXd c(n, n);
  VectorXd col = ss.B1;
  for (int i = 0; i < n; ++i) {
    c.col(i) = col;
    col = ss.A * col;
  }
  return rank_of(c);
}

int observability_rank(const PerturbedSSModel& ss) {
  const int n = ss.nx();
  MatrixXd ob(n, n);
  RowVectorXd row = ss.C;
  for (int i = 0; i < n; ++i) {
    ob.row(i) = row;
    row = row * ss.A;
  }
  return rank_of(ob);
}

}  // namespace lbmpc
