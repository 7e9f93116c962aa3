#pragma once

// Cost: learned p-step predictors. Constraints, tubes and terminal set: the
// perturbed realization.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "lbmpc/linopt.hpp"
#include "lbmpc/setcalc.hpp"
#include "lbmpc/smid.hpp"
#include "lbmpc/ssrealize.hpp"

namespace lbmpc {

enum class GainSource {
  Horizon,      // static gain of the p̄-step model
  Realization,  // C (I − A)⁻¹ B1 of the one-step realization
};

GainSource gain_source_from_string(const std::string& s);
const char* to_string(GainSource g);

struct ControllerConfig {
  int horizon = 10;
  /// Q_0…Q_p̄ and R_0…R_p̄; empty means "build from the scalars below".
  std::vector<double> q;
  std::vector<double> r;
  double q0 = 1.0;
  double q_rest = 1.0;
  double r0 = 100.0;
  double r_step = 10.0;
  /// Retry schedule when the decrease inequality fails: Q_1…Q_p̄ shrink by
  /// this factor relative to Q_0, at most `max_backoffs` times.
  double q_backoff = 0.1;
  int max_backoffs = 12;

  double lqr_state_weight = 1.0;
  double lqr_input_weight = 1.0;
  double observer_disturbance_weight = 1.0;
  double observer_noise_weight = 1.0;

  double u_min = -10.0;
  double u_max = 10.0;
  double z_min = -10.0;
  double z_max = 10.0;

  double tail_tol = 1e-6;
  /// ε of the terminal set, relative to the largest output half-width.
  double eps_rel = 1e-6;
  double row_tol = 1e-9;
  int moas_max_steps = 1000;

  double sigma_factor = 1.5;
  double sigma_floor = 1e-6;
  double t_max = 1e8;
  GainSource gain_source = GainSource::Horizon;

  std::vector<double> q_weights() const;
  std::vector<double> r_weights() const;
  void validate() const;
};

struct Gains {
  Eigen::RowVectorXd K;
  Eigen::VectorXd L;
  double rho_control = 0.0;   // spectral radius of A + B1 K
  double rho_observer = 0.0;  // spectral radius of A − L C
};

/// Infinite-horizon Riccati designs for K and, on the dual pair, for L.
Gains design_gains(const PerturbedSSModel& ss, const ControllerConfig& cfg);

struct ReferenceMaps {
  double mu_hat = 1.0;
  Eigen::VectorXd N;       // X_ref = N z_ref
  double eta = 0.0;        // ŵ = η z_ref
  double M2 = 0.0;         // μ̂⁻¹ − K N
  Eigen::MatrixXd F;       // (nx+1) square
  Eigen::MatrixXd Cmap;    // 3 × (nx+1): (z̄, ū, ŵ)
  Eigen::MatrixXd F_limit; // lim F^k
  /// ‖N − (A N + B1 μ̂⁻¹ + M1 η)‖∞
  double steady_residual = 0.0;
};

ReferenceMaps make_reference_maps(const PerturbedSSModel& ss, const Eigen::RowVectorXd& K, double mu_hat);

struct PredictionMatrices {
  int horizon = 0;
  int nx = 0;
  std::vector<Eigen::RowVectorXd> Cp;  // p = 0…p̄
  std::vector<Eigen::RowVectorXd> Dp;  // p = 0…p̄, length p̄+1
  Eigen::MatrixXd B;                   // [B1 0]
  Eigen::MatrixXd H1;
  Eigen::VectorXd H2;
  Eigen::MatrixXd A_pow;  // A^{p̄+1}
  Eigen::MatrixXd Gamma;
  Eigen::MatrixXd Gamma_w;
  Eigen::MatrixXd Psi;
  Eigen::MatrixXd Psi_bar;
  Eigen::MatrixXd Lambda;
  Eigen::VectorXd G_xu;
};

/// `models[p−1]` is the p-step predictor, p = 1…p̄.
PredictionMatrices build_prediction(const PerturbedSSModel& ss, const std::vector<MultiStepModel>& models,
                                    int horizon, const Eigen::RowVectorXd& K, const ReferenceMaps& refs);

struct CostWeights {
  Eigen::VectorXd Q;  // p̄+1
  Eigen::VectorXd R;  // p̄+1
  Eigen::MatrixXd T_N;
  Eigen::MatrixXd P;
  double sigma = 0.0;
  double t_scale = 0.0;
  /// certificates
  double lyapunov_residual = 0.0;
  double lmi_min_eig = 0.0;
  double p_tilde = 0.0;
  double r_cal_min = 0.0;  // smallest diagonal entry of diag(R_0/2, R_1 − R_0, …)
  int backoffs = 0;
};

/// Certificate tolerance of the decrease inequality and of the Lyapunov residual.
inline constexpr double kCertificateTol = 1e-8;

/// Smallest t (by bisection) with Ψ̄ᵀQ̄Ψ̄ − ΨᵀQΨ ⪰ −tol for T_N = t I, then P from
/// the Lyapunov equation of A + B1 K. Throws WeightsInfeasible.
CostWeights synthesize_weights(const PredictionMatrices& pm, const PerturbedSSModel& ss, const Eigen::RowVectorXd& K,
                               const ControllerConfig& cfg);

/// synthesize_weights inside the retry loop: on WeightsInfeasible, Q_1…Q_p̄
/// are scaled by q_backoff and the synthesis repeated.
CostWeights tune_weights(const PredictionMatrices& pm, const PerturbedSSModel& ss, const Eigen::RowVectorXd& K,
                         const ControllerConfig& cfg);

/// Ψ̄ᵀQ̄Ψ̄ − ΨᵀQΨ for given weights.
Eigen::MatrixXd lmi_matrix(const PredictionMatrices& pm, const CostWeights& w);

/// σ = factor · λmax(P̃), P̃ = G_xuᵀΛᵀ diag(Q, R, P) Λ G_xu (floored).
double compute_sigma(const CostWeights& w, const PredictionMatrices& pm, double factor, double floor);
double p_tilde(const CostWeights& w, const PredictionMatrices& pm);

struct TightenedSets {
  double u_lo = 0, u_hi = 0;  // Ū̄
  double z_lo = 0, z_hi = 0;  // Z̄̄
  double w_bar = 0;
  double d_bar = 0;
  Zonotope E_hat;
  Zonotope E_bar;
  MrpiApproximation E_hat_info;
  MrpiApproximation E_bar_info;
  double u_tightening = 0;  // support of K Ē
  double z_tightening = 0;  // support of C (Ē ⊕ Ê)
};

TightenedSets build_tightened_sets(const PerturbedSSModel& ss, const Gains& gains, const ControllerConfig& cfg);

/// Output box of the terminal system: (z̄, ū, ŵ) ∈ Z̄̄ × Ū̄ × W.
struct OutputBox {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
};
OutputBox output_box(const TightenedSets& t);

MoasResult build_terminal(const ReferenceMaps& refs, const TightenedSets& t, double eps, double row_tol,
                          int max_steps);

/// Projection of z_goal onto the steady states admissible with margin ε.
double feasible_goal(double z_goal, const ReferenceMaps& refs, const TightenedSets& t, double eps);

struct RobustController {
  PerturbedSSModel ss;
  ControllerConfig cfg;
  Gains gains;
  ReferenceMaps refs;
  PredictionMatrices pm;
  CostWeights weights;
  TightenedSets sets;
  MoasResult terminal;
  double eps = 0.0;
  /// Observability of (F, Cmap), logged only.
  int terminal_observability_rank = 0;
};

RobustController synthesize_controller(const PerturbedSSModel& ss, const std::vector<MultiStepModel>& models,
                                       double mu_hat, const ControllerConfig& cfg);

/// Gain from the configured source.
double select_gain(GainSource source, const PerturbedSSModel& ss, const MultiStepModel& horizon_model);

struct StepDiagnostics {
  linopt::SolveStatus status = linopt::SolveStatus::NumericalFailure;
  int iterations = 0;
  double cost = 0.0;  // J(k|k)
  double z_ref = 0.0;
  double zbar0 = 0.0;
  double ubar0 = 0.0;
  double u_ref = 0.0;
  double w_hat = 0.0;
  double kkt_residual = 0.0;
  bool fallback = false;
  Eigen::VectorXd x_bar;  // X̄(k|k)
  Eigen::VectorXd u_bar;  // Ū(k|k)
};

struct ControllerState {
  Eigen::VectorXd x_hat;
  double u_last = 0.0;
  double z_goal = 0.0;
  std::optional<StepDiagnostics> last;

  static ControllerState at_rest(int nx);
};

/// X̂⁺ = A X̂ + B1 u + M1 ŵ + L (y − C X̂).
Eigen::VectorXd observer_update(const PerturbedSSModel& ss, const Eigen::VectorXd& L, const Eigen::VectorXd& x_hat,
                                double u, double w_hat, double y);

/// The QP of one receding-horizon step, variables [X̄, Ū, z_ref, λ].
struct StepProblem {
  linopt::QuadraticProgram qp;
  double constant = 0.0;
  int nx = 0, nu = 0, nlam = 0;
  int idx_x() const { return 0; }
  int idx_u() const { return nx; }
  int idx_zref() const { return nx + nu; }
  int idx_lam() const { return nx + nu + 1; }
};

StepProblem assemble_step(const RobustController& ctrl, const Eigen::VectorXd& x_hat, double z_goal);

/// J(k) of a candidate (X̄, Ū, z_ref), evaluated directly from its definition.
double evaluate_cost(const RobustController& ctrl, const Eigen::VectorXd& x_bar, const Eigen::VectorXd& u_bar,
                     double z_ref, double z_goal);

/// Solves the step QP at the current estimate and returns u(k). Updates
/// state.last; throws QPInfeasible when no admissible plan exists.
double mpc_step(ControllerState& state, const RobustController& ctrl);

}  // namespace lbmpc
