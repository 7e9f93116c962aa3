#include "lbmpc/smid.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <thread>

#include "lbmpc/error.hpp"

namespace lbmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using linopt::LinearProgram;
using linopt::LpSolver;
using linopt::LpWarmStart;
using linopt::SolveStatus;

ParameterBox ParameterBox::symmetric(int dim, double magnitude) {
  LBMPC_REQUIRE(dim >= 1 && magnitude > 0.0, "parameter box needs positive dimension and magnitude");
  return {VectorXd::Constant(dim, -magnitude), VectorXd::Constant(dim, magnitude)};
}

void ParameterBox::validate() const {
  LBMPC_REQUIRE(lower.size() == upper.size() && lower.size() > 0, "parameter box size mismatch");
  LBMPC_REQUIRE(lower.allFinite() && upper.allFinite(), "parameter box must be finite");
  LBMPC_REQUIRE((lower.array() <= upper.array()).all(), "parameter box lower bound exceeds upper bound");
}

namespace {

double box_magnitude(const ParameterBox& b) {
  return std::max(b.lower.cwiseAbs().maxCoeff(), b.upper.cwiseAbs().maxCoeff());
}

VectorXd box_start(const ParameterBox& b) {
  return VectorXd::Zero(b.dim()).cwiseMax(b.lower).cwiseMin(b.upper);
}

[[noreturn]] void lp_failure(const char* what, SolveStatus st) {
  throw Error(ErrorKind::Numerical, std::string(what) + ": LP returned " + linopt::to_string(st));
}

}  // namespace

LambdaEstimate estimate_lambda(const RegressorDataset& ds, const ParameterBox& omega, double d_bar) {
  LBMPC_REQUIRE(ds.size() >= 1, "dataset is empty");
  LBMPC_REQUIRE(d_bar >= 0.0, "noise bound must be non-negative");
  omega.validate();
  LBMPC_REQUIRE(omega.dim() == ds.dim(), "parameter box dimension mismatch");
  const Eigen::Index n = ds.dim(), m = ds.size();
  LinearProgram lp;
  lp.cost = VectorXd::Unit(n + 1, n);
  lp.ineq_lhs.resize(2 * m, n + 1);
  lp.ineq_lhs << ds.phi, -VectorXd::Ones(m), -ds.phi, -VectorXd::Ones(m);
  lp.ineq_rhs.resize(2 * m);
  lp.ineq_rhs << ds.target.array() + d_bar, -ds.target.array() + d_bar;
  lp.lower.resize(n + 1);
  lp.upper.resize(n + 1);
  lp.lower << omega.lower, 0.0;
  lp.upper << omega.upper, std::numeric_limits<double>::infinity();
  LpWarmStart warm;
  warm.point.resize(n + 1);
  warm.point.head(n) = box_start(omega);
  const VectorXd res = ds.target - ds.phi * warm.point.head(n);
  warm.point[n] = std::max(0.0, res.cwiseAbs().maxCoeff() - d_bar) + 1.0;
  const auto rep = linopt::solve_lp(lp, {}, &warm);
  if (!rep.optimal()) lp_failure("error-bound estimation", rep.status);
  LambdaEstimate out;
  out.theta = rep.argmin->head(n);
  out.lambda = std::max(0.0, (*rep.argmin)[n]);
  return out;
}

double inflate_epsilon(double lambda, double alpha, double floor) {
  LBMPC_REQUIRE(alpha > 1.0, "inflation factor alpha must exceed 1");
  LBMPC_REQUIRE(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and non-negative");
  LBMPC_REQUIRE(floor > 0.0, "epsilon floor must be positive");
  return std::max(alpha * lambda, floor);
}

MatrixXd FeasibleParameterSet::h_rows() const {
  const Eigen::Index n = dim(), m = region_.ineq_lhs.rows();
  MatrixXd g(m + 2 * n, n);
  g << region_.ineq_lhs, MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
  return g;
}

VectorXd FeasibleParameterSet::h_rhs() const {
  const Eigen::Index n = dim(), m = region_.ineq_rhs.size();
  VectorXd h(m + 2 * n);
  h << region_.ineq_rhs, region_.upper, -region_.lower;
  return h;
}

double FeasibleParameterSet::support(const VectorXd& c) const {
  LBMPC_REQUIRE(c.size() == dim(), "support direction dimension mismatch");
  LpSolver solver(region_);
  LpWarmStart warm{anchor_, {}};
  const auto rep = solver.minimize(-c, &warm);
  if (!rep.optimal()) lp_failure("support function", rep.status);
  return -rep.objective;
}

double FeasibleParameterSet::violation(const VectorXd& theta) const {
  double v = (region_.ineq_lhs * theta - region_.ineq_rhs).maxCoeff();
  v = std::max(v, (theta - region_.upper).maxCoeff());
  v = std::max(v, (region_.lower - theta).maxCoeff());
  return v;
}

FeasibleParameterSet build_fps(const RegressorDataset& ds, double eps_hat, double d_bar,
                               const ParameterBox& omega, const VectorXd* hint) {
  LBMPC_REQUIRE(ds.size() >= 1, "dataset is empty");
  LBMPC_REQUIRE(eps_hat > 0.0 && d_bar >= 0.0, "error bound must be positive and noise bound non-negative");
  omega.validate();
  LBMPC_REQUIRE(omega.dim() == ds.dim(), "parameter box dimension mismatch");
  FeasibleParameterSet fps;
  fps.eps_hat_ = eps_hat;
  fps.d_bar_ = d_bar;
  fps.box_magnitude_ = box_magnitude(omega);
  const Eigen::Index n = ds.dim(), m = ds.size();
  LinearProgram& r = fps.region_;
  r.cost = VectorXd::Zero(n);
  r.ineq_lhs.resize(2 * m, n);
  r.ineq_lhs << ds.phi, -ds.phi;
  r.ineq_rhs.resize(2 * m);
  r.ineq_rhs << ds.target.array() + eps_hat + d_bar, -ds.target.array() + eps_hat + d_bar;
  r.lower = omega.lower;
  r.upper = omega.upper;

  LpSolver solver(r);
  LpWarmStart warm;
  const bool use_hint = hint && hint->size() == n;
  if (use_hint) warm.point = *hint;
  const auto feas = solver.minimize(VectorXd::Zero(n), use_hint ? &warm : nullptr);
  if (feas.status == SolveStatus::Infeasible)
    throw Error(ErrorKind::EmptyFPS, "no parameter vector is consistent with the data at eps_hat = " +
                                         format_double(eps_hat) + " (eps_hat below the optimal bound)");
  if (!feas.optimal()) lp_failure("parameter-set feasibility", feas.status);
  fps.anchor_ = *feas.argmin;

  // Boundedness: every coordinate support must stay clear of the Ω box.
  const double limit = 0.5 * fps.box_magnitude_;
  for (int sign : {1, -1}) {
    LpWarmStart w{fps.anchor_, {}};
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto rep = solver.minimize(-sign * VectorXd::Unit(n, j), &w);
      if (!rep.optimal()) lp_failure("parameter-set boundedness", rep.status);
      if (std::abs(rep.objective) >= limit)
        throw Error(ErrorKind::UnboundedFPS,
                    "parameter set is unbounded along " + std::string(sign > 0 ? "+" : "-") + "theta[" +
                        std::to_string(j) + "] (" + std::to_string(m) +
                        " samples); collect more informative data");
      w.point = *rep.argmin;
      w.active = solver.last_active();
    }
  }
  return fps;
}

SupportTable support_table(const FeasibleParameterSet& fps, const RegressorDataset& ds, int jobs) {
  LBMPC_REQUIRE(ds.dim() == fps.dim(), "dataset and parameter set dimensions differ");
  const Eigen::Index m = ds.size();
  SupportTable t{VectorXd(m), VectorXd(m)};
  constexpr Eigen::Index kChunk = 64;
  const Eigen::Index chunks = (m + kChunk - 1) / kChunk;
  std::vector<std::exception_ptr> errs(static_cast<size_t>(chunks));
  auto work = [&](Eigen::Index c) {
    try {
      LpSolver solver(fps.region());
      LpWarmStart hi{fps.anchor(), {}}, lo{fps.anchor(), {}};
      for (Eigen::Index i = c * kChunk; i < std::min(m, (c + 1) * kChunk); ++i) {
        const VectorXd phi = ds.phi.row(i).transpose();
        auto r1 = solver.minimize(-phi, &hi);
        if (!r1.optimal()) lp_failure("support table", r1.status);
        t.upper[i] = -r1.objective;
        hi.point = *r1.argmin;
        hi.active = solver.last_active();
        auto r2 = solver.minimize(phi, &lo);
        if (!r2.optimal()) lp_failure("support table", r2.status);
        t.lower[i] = r2.objective;
        lo.point = *r2.argmin;
        lo.active = solver.last_active();
      }
    } catch (...) {
      errs[static_cast<size_t>(c)] = std::current_exception();
    }
  };
  jobs = std::max(1, jobs);
  if (jobs == 1 || chunks == 1) {
    for (Eigen::Index c = 0; c < chunks; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<Eigen::Index> next{0};
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (Eigen::Index c; (c = next++) < chunks;) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return t;
}

double tau_lower_from_table(const VectorXd& theta, const SupportTable& table, const RegressorDataset& ds,
                            double eps_hat) {
  LBMPC_REQUIRE(theta.size() == ds.dim(), "parameter vector dimension mismatch");
  LBMPC_REQUIRE(table.upper.size() == ds.size(), "support table does not match dataset");
  const VectorXd v = ds.phi * theta;
  const double spread = (table.upper - v).cwiseMax(v - table.lower).maxCoeff();
  return spread + eps_hat;
}

double tau_hat_for(const VectorXd& theta, const FeasibleParameterSet& fps, const RegressorDataset& ds,
                   double gamma) {
  LBMPC_REQUIRE(gamma > 1.0, "inflation factor gamma must exceed 1");
  const auto table = support_table(fps, ds);
  return gamma * tau_lower_from_table(theta, table, ds, fps.eps_hat());
}

void MultiStepModel::validate() const {
  LBMPC_REQUIRE(o >= 1 && p >= 1, "model order and step must be at least 1");
  LBMPC_REQUIRE(theta.size() == regressor_dim(o, p), "model parameter length must be 2o-1+p");
  LBMPC_REQUIRE(theta.allFinite(), "model parameters must be finite");
  LBMPC_REQUIRE(epsilon_hat > 0.0 && tau_hat >= epsilon_hat, "model bounds must satisfy tau_hat >= eps_hat > 0");
}

MultiStepModel select_nominal(const FeasibleParameterSet& fps, const RegressorDataset& ds, double gamma,
                              const SupportTable& table) {
  LBMPC_REQUIRE(gamma > 1.0, "inflation factor gamma must exceed 1");
  LBMPC_REQUIRE(ds.dim() == fps.dim() && table.upper.size() == ds.size(), "inputs do not match");
  const Eigen::Index n = fps.dim(), m = ds.size();
  const auto& reg = fps.region();
  const Eigen::Index mf = reg.ineq_lhs.rows();
  LinearProgram lp;
  lp.cost = VectorXd::Unit(n + 1, n);
  lp.ineq_lhs.resize(2 * m + mf, n + 1);
  lp.ineq_lhs << -ds.phi, -VectorXd::Ones(m), ds.phi, -VectorXd::Ones(m), reg.ineq_lhs, VectorXd::Zero(mf);
  lp.ineq_rhs.resize(2 * m + mf);
  lp.ineq_rhs << -table.upper, table.lower, reg.ineq_rhs;
  lp.lower.resize(n + 1);
  lp.upper.resize(n + 1);
  lp.lower << reg.lower, -std::numeric_limits<double>::infinity();
  lp.upper << reg.upper, std::numeric_limits<double>::infinity();
  LpWarmStart warm;
  warm.point.resize(n + 1);
  warm.point.head(n) = fps.anchor();
  warm.point[n] = tau_lower_from_table(fps.anchor(), table, ds, 0.0);
  const auto rep = linopt::solve_lp(lp, {}, &warm);
  if (!rep.optimal()) lp_failure("nominal model selection", rep.status);
  MultiStepModel model;
  model.p = ds.p;
  model.o = ds.o;
  model.theta = rep.argmin->head(n);
  const double viol = fps.violation(model.theta);
  if (viol > 1e-7 * (1.0 + reg.ineq_rhs.cwiseAbs().maxCoeff()))
    throw Error(ErrorKind::Numerical, "nominal model leaves the parameter set by " + format_double(viol));
  model.epsilon_hat = fps.eps_hat();
  model.tau_lower = tau_lower_from_table(model.theta, table, ds, fps.eps_hat());
  model.tau_hat = gamma * model.tau_lower;
  model.gamma = gamma;
  model.n_samples = static_cast<int>(m);
  return model;
}

MultiStepModel select_nominal(const FeasibleParameterSet& fps, const RegressorDataset& ds, double gamma) {
  return select_nominal(fps, ds, gamma, support_table(fps, ds));
}

StepIdentification identify_step(const RegressorDataset& ds, const IdentifyOptions& opt) {
  const ParameterBox omega = ParameterBox::symmetric(ds.dim(), opt.omega_magnitude);
  const LambdaEstimate le = estimate_lambda(ds, omega, opt.d_bar);
  const double eps = inflate_epsilon(le.lambda, opt.alpha, opt.eps_floor);
  StepIdentification out;
  out.dataset = ds;
  out.fps = build_fps(ds, eps, opt.d_bar, omega, &le.theta);
  out.table = support_table(out.fps, ds);
  out.model = select_nominal(out.fps, ds, opt.gamma, out.table);
  out.model.lambda = le.lambda;
  out.model.alpha = opt.alpha;
  return out;
}

}  // namespace lbmpc
