#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

#include "lbmpc/dataio.hpp"
#include "lbmpc/rmpc.hpp"

namespace lbmpc {

/// Ground-truth SISO ARX plant z(k+1) = θ̄ᵀφ_z(k) + v(k), y(k) = z(k) + d(k),
/// with φ_z = [z(k)…z(k−n+1), u(k−1)…u(k−n+1), u(k)].
struct TruePlant {
  int n = 3;
  Eigen::VectorXd theta;  // 2n entries
  double ts = 0.1;
  double v_bar = 0.01;
  double d_bar = 0.1;

  /// Σ(input coefficients) / (1 − Σ(output coefficients)).
  double dc_gain() const;
  /// Largest pole modulus of the recursion.
  double pole_radius() const;
};

/// Continuous transfer function num(s)/den(s), coefficients in descending
/// powers, den monic after normalization; strictly proper.
struct ContinuousTF {
  std::vector<double> num;
  std::vector<double> den;
};

/// The reference plant 160 / ((s + 10)(s² + 1.6 s + 16)).
ContinuousTF reference_plant_tf();

/// Zero-order-hold discretization through the matrix exponential of the
/// controllable canonical realization.
TruePlant discretize_plant(const ContinuousTF& tf, double ts);
TruePlant discretize_plant(double ts);

/// Independent stream per (seed, stream id).
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

/// Piecewise-constant input, a fresh level drawn uniformly every `hold` steps.
std::vector<double> excitation_input(int n, int hold, const std::vector<double>& levels, std::uint64_t seed);

/// Uniform samples on [−bound, bound].
std::vector<double> uniform_noise(int n, double bound, std::uint64_t seed, std::uint64_t stream);

/// Simulates the plant from rest. `v`, `d` must have the length of `u`
/// (empty means zero). Returns u, y = z + d and the noise-free output z.
Trajectory simulate_openloop(const TruePlant& plant, const std::vector<double>& u, const std::vector<double>& v,
                             const std::vector<double>& d);

/// Seeded convenience overload: v and d uniform on their bounds.
Trajectory simulate_openloop(const TruePlant& plant, const std::vector<double>& u, std::uint64_t seed);

/// Incremental plant for closed-loop use.
class PlantSimulator {
 public:
  explicit PlantSimulator(const TruePlant& plant);
  double z() const { return z_.front(); }
  /// Applies u(k) with process disturbance v(k); advances to k+1.
  void step(double u, double v);
  /// Regressor φ_z(k) given the candidate input u(k).
  Eigen::VectorXd regressor(double u) const;

 private:
  TruePlant plant_;
  std::vector<double> z_;  // z(k), z(k−1), …
  std::vector<double> u_;  // u(k−1), u(k−2), …
};

/// Goal held for `steps` samples per level.
std::vector<double> piecewise_goals(const std::vector<double>& levels, int steps);

struct ClosedLoopLog {
  std::vector<double> goal;
  std::vector<double> goal_feasible;
  std::vector<double> u;
  std::vector<double> z;  // noise-free output
  std::vector<double> y;
  std::vector<double> z_ref;
  std::vector<double> zbar0;
  std::vector<double> ubar0;
  std::vector<double> u_ref;
  std::vector<double> cost;
  std::vector<linopt::SolveStatus> status;
  std::vector<int> iterations;
  std::vector<bool> fallback;
  /// X̂ − X̄ ∈ Ē and X − X̂ ∈ Ê, checked against the true state.
  std::vector<bool> in_bar_tube;
  std::vector<bool> in_hat_tube;

  size_t size() const { return u.size(); }
  /// Applied inputs and true outputs stayed inside the boxes.
  bool constraints_ok(double u_min, double u_max, double z_min, double z_max, double tol = 1e-9) const;
  int tube_violations() const;
};

/// Runs the controller against the true plant from rest. Disturbances are
/// uniform on their bounds and seeded by `seed`. QPInfeasible propagates.
ClosedLoopLog run_closedloop(const TruePlant& plant, const RobustController& ctrl, const std::vector<double>& goals,
                             std::uint64_t seed);

}  // namespace lbmpc
