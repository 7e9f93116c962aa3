#pragma once

// Dense LP, convex QP and small matrix-equation routines. LPs use an active-set
// method on the inequality form; QPs use a predictor-corrector interior point.

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <vector>

namespace lbmpc::linopt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Solver tolerances. Defaults target double precision on problems up to a few
/// thousand rows by a few dozen columns.
struct Tolerances {
  /// primal feasibility on unit-norm rows
  double feasibility = 1e-9;
  /// sign tolerance on multipliers, relative to the cost norm
  double optimality = 1e-10;
  /// interior-point stopping tolerance (residuals and gap)
  double ipm = 1e-10;
  int max_lp_iterations = 50000;
  int max_ipm_iterations = 200;
};

/// min costᵀx  s.t.  ineq_lhs·x ≤ ineq_rhs,  eq_lhs·x = eq_rhs,  lower ≤ x ≤ upper.
/// Empty eq blocks mean "no equalities"; empty bound vectors mean "free".
/// Infinite bound entries are allowed.
struct LinearProgram {
  VectorXd cost;
  MatrixXd ineq_lhs;
  VectorXd ineq_rhs;
  MatrixXd eq_lhs;
  VectorXd eq_rhs;
  VectorXd lower;
  VectorXd upper;

  Eigen::Index num_variables() const { return cost.size(); }
  /// Throws InvalidArgument on inconsistent dimensions or non-finite data.
  void validate() const;
};

/// min ½xᵀ·hessian·x + linearᵀx subject to the same blocks as LinearProgram.
struct QuadraticProgram {
  MatrixXd hessian;
  VectorXd linear;
  MatrixXd ineq_lhs;
  VectorXd ineq_rhs;
  MatrixXd eq_lhs;
  VectorXd eq_rhs;
  VectorXd lower;
  VectorXd upper;

  Eigen::Index num_variables() const { return linear.size(); }
  void validate() const;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalFailure };

const char* to_string(SolveStatus status);

/// Lagrange multipliers in the sign convention
///   cost + Hx + ineq_lhsᵀ·ineq + eq_lhsᵀ·eq + upper − lower = 0,
/// with ineq, lower, upper ≥ 0.
struct Multipliers {
  VectorXd ineq;
  VectorXd eq;
  VectorXd lower;
  VectorXd upper;
};

struct SolveReport {
  SolveStatus status = SolveStatus::NumericalFailure;
  /// present iff status == Optimal
  std::optional<VectorXd> argmin;
  double objective = 0.0;
  int iterations = 0;
  Multipliers multipliers;

  bool optimal() const { return status == SolveStatus::Optimal; }
};

/// Feasible starting point (and optionally the rows active at it) for the LP
/// active-set method. Row ids: ineq row i → i, upper bound j → m + j,
/// lower bound j → m + n + j.
struct LpWarmStart {
  VectorXd point;
  std::vector<int> active;
};

/**
 * Reusable LP solver over a fixed feasible region. Construction normalizes the
 * constraint rows once; `minimize` may then be called with many cost vectors,
 * warm-started from a previous vertex. Instances are not shared between
 * threads, but distinct instances are independent.
 */
class LpSolver {
 public:
  LpSolver(const LinearProgram& region, const Tolerances& tol = {});

  /// Solves min costᵀx over the region. `warm` may be null.
  SolveReport minimize(const VectorXd& cost, const LpWarmStart* warm = nullptr);

  /// Active rows (external ids) at the last optimal vertex.
  const std::vector<int>& last_active() const { return last_active_; }

  /// A feasible point of the region, if one exists (phase 1, cached).
  std::optional<VectorXd> feasible_point();

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  std::vector<int> last_active_;
};

SolveReport solve_lp(const LinearProgram& lp, const Tolerances& tol = {},
                     const LpWarmStart* warm = nullptr);

SolveReport solve_qp(const QuadraticProgram& qp, const Tolerances& tol = {});

/// Largest KKT residual of a QP solution (stationarity, primal feasibility,
/// complementarity, multiplier signs), in absolute units.
double kkt_residual(const QuadraticProgram& qp, const SolveReport& report);

/// Lagrangian dual bound of an LP given multipliers; ≤ optimal value whenever
/// the multipliers are dual feasible.
double lp_dual_bound(const LinearProgram& lp, const Multipliers& mult);

/// Solves a_clᵀ·P·a_cl − P = −q_rhs. Throws InvalidArgument if a_cl is not Schur.
MatrixXd solve_dlyap(const MatrixXd& a_cl, const MatrixXd& q_rhs);

/// Smallest eigenvalue of a symmetric matrix. Rejects asymmetry beyond 1e-8.
double min_eigenvalue(const MatrixXd& s);
double max_eigenvalue(const MatrixXd& s);

double spectral_radius(const MatrixXd& a);

/// Stabilizing solution of the discrete algebraic Riccati equation
///   X = AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q.
MatrixXd solve_dare(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r);

/// PBH test: every eigenvalue with |λ| ≥ 1 is controllable through b.
bool is_stabilizable(const MatrixXd& a, const MatrixXd& b);
bool is_detectable(const MatrixXd& a, const MatrixXd& c);

}  // namespace lbmpc::linopt
