#pragma once

#include <Eigen/Dense>

#include <vector>

#include "lbmpc/dataio.hpp"
#include "lbmpc/linopt.hpp"

namespace lbmpc {

/// Per-coordinate box Ω on the parameter vector.
struct ParameterBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static ParameterBox symmetric(int dim, double magnitude = 1e15);
  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;
};

struct LambdaEstimate {
  double lambda = 0.0;
  Eigen::VectorXd theta;  // witness attaining the bound
};

/// min λ s.t. |ỹ − θᵀφ̃| ≤ λ + d̄ for every sample, θ ∈ Ω, λ ≥ 0.
LambdaEstimate estimate_lambda(const RegressorDataset& ds, const ParameterBox& omega, double d_bar);

/// α·λ, or `floor` when that is smaller (noise-free data gives λ = 0).
double inflate_epsilon(double lambda, double alpha, double floor = 1e-9);

/// Polytope {θ ∈ Ω : |ỹ_i − θᵀφ̃_i| ≤ ε̂ + d̄ ∀i}.
class FeasibleParameterSet {
 public:
  FeasibleParameterSet() = default;

  int dim() const { return static_cast<int>(region_.cost.size()); }
  double eps_hat() const { return eps_hat_; }
  double d_bar() const { return d_bar_; }
  /// H-representation including the box rows, as rows gᵀθ ≤ h.
  Eigen::MatrixXd h_rows() const;
  Eigen::VectorXd h_rhs() const;
  /// The LP region (data rows as inequalities, Ω as variable bounds).
  const linopt::LinearProgram& region() const { return region_; }
  /// A point of the set.
  const Eigen::VectorXd& anchor() const { return anchor_; }

  /// max_{θ∈Θ} cᵀθ.
  double support(const Eigen::VectorXd& c) const;
  /// Largest violation of the set's rows at θ.
  double violation(const Eigen::VectorXd& theta) const;

 private:
  friend FeasibleParameterSet build_fps(const RegressorDataset&, double, double, const ParameterBox&,
                                        const Eigen::VectorXd*);
  linopt::LinearProgram region_;
  Eigen::VectorXd anchor_;
  double eps_hat_ = 0.0;
  double d_bar_ = 0.0;
  double box_magnitude_ = 0.0;
};

/// Builds Θ and certifies it non-empty (EmptyFPS) and bounded (UnboundedFPS,
/// naming the first unbounded coordinate direction). `hint` is an optional
/// point believed to lie in the set, e.g. the λ witness.
FeasibleParameterSet build_fps(const RegressorDataset& ds, double eps_hat, double d_bar,
                               const ParameterBox& omega, const Eigen::VectorXd* hint = nullptr);

/// M_i = max_{θ∈Θ} θᵀφ̃_i and m_i = min_{θ∈Θ} θᵀφ̃_i for every sample.
struct SupportTable {
  Eigen::VectorXd upper;
  Eigen::VectorXd lower;
};

/// 2·N_p support LPs, evaluated in fixed chunks so the result does not depend
/// on `jobs`.
SupportTable support_table(const FeasibleParameterSet& fps, const RegressorDataset& ds, int jobs = 1);

/// τ̲ = max_i max_{θ∈Θ} |(θ − θ̂)ᵀφ̃_i| + ε̂ from a precomputed table.
double tau_lower_from_table(const Eigen::VectorXd& theta, const SupportTable& table,
                            const RegressorDataset& ds, double eps_hat);

/// γ·τ̲ for an arbitrary parameter vector.
double tau_hat_for(const Eigen::VectorXd& theta, const FeasibleParameterSet& fps,
                   const RegressorDataset& ds, double gamma);

/// Identified p-step model. theta = [θ_AR (o), θ_U (o−1), θ_Ū (p)].
struct MultiStepModel {
  int p = 1;
  int o = 1;
  Eigen::VectorXd theta;
  double lambda = 0.0;
  double epsilon_hat = 0.0;
  double tau_lower = 0.0;
  double tau_hat = 0.0;
  double alpha = 1.1;
  double gamma = 1.05;
  int n_samples = 0;

  Eigen::VectorXd theta_ar() const { return theta.head(o); }
  Eigen::VectorXd theta_u() const { return theta.segment(o, o - 1); }
  Eigen::VectorXd theta_ubar() const { return theta.tail(p); }
  void validate() const;
};

/// Bound-minimizing model: one LP over (θ̂, t) given the support table.
MultiStepModel select_nominal(const FeasibleParameterSet& fps, const RegressorDataset& ds, double gamma,
                              const SupportTable& table);
MultiStepModel select_nominal(const FeasibleParameterSet& fps, const RegressorDataset& ds, double gamma);

/// Everything learned for one prediction step.
struct StepIdentification {
  RegressorDataset dataset;
  FeasibleParameterSet fps;
  SupportTable table;
  MultiStepModel model;
};

struct IdentifyOptions {
  double d_bar = 0.1;
  double alpha = 1.1;
  double gamma = 1.05;
  double eps_floor = 1e-9;
  double omega_magnitude = 1e15;
};

StepIdentification identify_step(const RegressorDataset& ds, const IdentifyOptions& opt);

}  // namespace lbmpc
