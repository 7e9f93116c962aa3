#pragma once

#include <Eigen/Dense>

#include <vector>

#include "lbmpc/smid.hpp"

namespace lbmpc {

/// X(k+1) = A X(k) + B1 u(k) + M1 w(k), z(k) = C X(k), with state
/// X = [z(k)…z(k−o+1), u(k−1)…u(k−o+1)].
struct PerturbedSSModel {
  int o = 1;
  Eigen::MatrixXd A;
  Eigen::VectorXd B1;
  Eigen::VectorXd M1;
  Eigen::RowVectorXd C;
  double w_bar = 0.0;
  double d_bar = 0.0;

  int nx() const { return static_cast<int>(A.rows()); }
  /// Selector of the output-history block, [I_o; 0].
  Eigen::MatrixXd E() const;
  /// State assembled from z(k)…z(k−o+1) and u(k−1)…u(k−o+1).
  Eigen::VectorXd state(const std::vector<double>& z_hist, const std::vector<double>& u_hist) const;
  void validate() const;
};

/// Realization of the one-step model. Throws UnstableRealization when A is
/// not Schur.
PerturbedSSModel realize(const MultiStepModel& one_step);

/// θ^(p),1: p-step predictor obtained by iterating the realization without
/// disturbance, in the multi-step parameter layout.
Eigen::VectorXd iterated_theta(const PerturbedSSModel& ss, int p);

struct IteratedPredictor {
  int p = 1;
  Eigen::VectorXd theta1;
  double tau_hat = 0.0;
};

IteratedPredictor iterate_predictor(const PerturbedSSModel& ss, int p);

/// Σ_{i<p} |C A^i M1|.
double disturbance_gain(const PerturbedSSModel& ss, int p);
/// ‖C A^p E‖∞.
double noise_gain(const PerturbedSSModel& ss, int p);

/// Smallest w̄ ≥ 0 with disturbance_gain(p)·w̄ + noise_gain(p)·d̄ ≥ τ̂_p for
/// every p = 1…tau_iterated.size(), in closed form.
double estimate_wbar(const PerturbedSSModel& ss, const std::vector<double>& tau_iterated, double d_bar);

/// The same program solved as an LP, for cross-checking.
double estimate_wbar_lp(const PerturbedSSModel& ss, const std::vector<double>& tau_iterated, double d_bar);

/// disturbance_gain(p)·w̄ + noise_gain(p)·d̄.
double iterated_error_bound(const PerturbedSSModel& ss, double w_bar, double d_bar, int p);

/// Static gain of a multi-step model, (Σθ_Ū + Σθ_U)/(1 − Σθ_AR). Throws
/// SingularGain when the denominator vanishes.
double gain_estimate(const MultiStepModel& model);

/// C (I − A)⁻¹ B1.
double realization_dc_gain(const PerturbedSSModel& ss);

/// Ranks of the controllability and observability matrices (diagnostic).
int controllability_rank(const PerturbedSSModel& ss);
int observability_rank(const PerturbedSSModel& ss);

}  // namespace lbmpc
