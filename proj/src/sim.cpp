#include "lbmpc/sim.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

#include "lbmpc/error.hpp"
#include "lbmpc/linopt.hpp"

namespace lbmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double TruePlant::dc_gain() const {
  const double den = 1.0 - theta.head(n).sum();
  return theta.tail(n).sum() / den;
}

double TruePlant::pole_radius() const {
  MatrixXd comp = MatrixXd::Zero(n, n);
  comp.row(0) = theta.head(n).transpose();
  for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  return linopt::spectral_radius(comp);
}

ContinuousTF reference_plant_tf() { return {{160.0}, {1.0, 11.6, 32.0, 160.0}}; }

TruePlant discretize_plant(const ContinuousTF& tf, double ts) {
  LBMPC_REQUIRE(ts > 0.0, "sample period must be positive");
  LBMPC_REQUIRE(tf.den.size() >= 2 && tf.den.front() != 0.0, "denominator degree must be at least 1");
  const int n = static_cast<int>(tf.den.size()) - 1;
  LBMPC_REQUIRE(static_cast<int>(tf.num.size()) <= n, "transfer function must be strictly proper");
  const double lead = tf.den.front();
  // Controllable canonical form.
  MatrixXd ac = MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) ac(i, i + 1) = 1.0;
  for (int j = 0; j < n; ++j) ac(n - 1, j) = -tf.den[static_cast<size_t>(n - j)] / lead;
  VectorXd cc = VectorXd::Zero(n);
  for (size_t i = 0; i < tf.num.size(); ++i) cc[static_cast<Eigen::Index>(tf.num.size() - 1 - i)] = tf.num[i] / lead;
  MatrixXd aug = MatrixXd::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = ac * ts;
  aug(n - 1, n) = ts;
  const MatrixXd e = aug.exp();
  const MatrixXd phi = e.topLeftCorner(n, n);
  const VectorXd gam = e.topRightCorner(n, 1);

  // Characteristic polynomial z^n + a1 z^{n−1} + … + an (Faddeev–LeVerrier).
  VectorXd a(n + 1);
  a[0] = 1.0;
  MatrixXd m = MatrixXd::Zero(n, n);
  for (int k = 1; k <= n; ++k) {
    m = phi * m + a[k - 1] * MatrixXd::Identity(n, n);
    a[k] = -(phi * m).trace() / k;
  }
  // Numerator from Markov parameters h_j = cᵀΦ^{j−1}Γ.
  VectorXd h(n + 1);
  VectorXd pw = gam;
  for (int j = 1; j <= n; ++j) {
    h[j] = cc.dot(pw);
    pw = phi * pw;
  }
  VectorXd b(n + 1);
  for (int j = 1; j <= n; ++j) {
    b[j] = h[j];
    for (int i = 1; i < j; ++i) b[j] += a[i] * h[j - i];
  }
  TruePlant plant;
  plant.n = n;
  plant.ts = ts;
  plant.theta.resize(2 * n);
  for (int i = 0; i < n; ++i) plant.theta[i] = -a[i + 1];
  for (int i = 1; i < n; ++i) plant.theta[n + i - 1] = b[i + 1];
  plant.theta[2 * n - 1] = b[1];
  return plant;
}

TruePlant discretize_plant(double ts) { return discretize_plant(reference_plant_tf(), ts); }

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

std::vector<double> excitation_input(int n, int hold, const std::vector<double>& levels, std::uint64_t seed) {
  LBMPC_REQUIRE(n >= 0 && hold >= 1 && !levels.empty(), "excitation needs n >= 0, hold >= 1, levels");
  auto rng = make_rng(seed, 1);
  std::uniform_int_distribution<size_t> pick(0, levels.size() - 1);
  std::vector<double> u(static_cast<size_t>(n));
  double level = 0.0;
  for (int k = 0; k < n; ++k) {
    if (k % hold == 0) level = levels[pick(rng)];
    u[static_cast<size_t>(k)] = level;
  }
  return u;
}

std::vector<double> uniform_noise(int n, double bound, std::uint64_t seed, std::uint64_t stream) {
  LBMPC_REQUIRE(bound >= 0.0, "noise bound must be non-negative");
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  if (bound == 0.0) return out;
  auto rng = make_rng(seed, stream);
  std::uniform_real_distribution<double> ud(-bound, bound);
  for (auto& v : out) v = ud(rng);
  return out;
}

PlantSimulator::PlantSimulator(const TruePlant& plant)
    : plant_(plant), z_(static_cast<size_t>(plant.n), 0.0), u_(static_cast<size_t>(std::max(plant.n - 1, 0)), 0.0) {
  LBMPC_REQUIRE(plant.theta.size() == 2 * plant.n, "plant parameter length must be 2n");
}

VectorXd PlantSimulator::regressor(double u) const {
  const int n = plant_.n;
  VectorXd phi(2 * n);
  for (int i = 0; i < n; ++i) phi[i] = z_[static_cast<size_t>(i)];
  for (int i = 0; i + 1 < n; ++i) phi[n + i] = u_[static_cast<size_t>(i)];
  phi[2 * n - 1] = u;
  return phi;
}

void PlantSimulator::step(double u, double v) {
  const double next = plant_.theta.dot(regressor(u)) + v;
  z_.insert(z_.begin(), next);
  z_.pop_back();
  if (!u_.empty()) {
    u_.insert(u_.begin(), u);
    u_.pop_back();
  }
}

Trajectory simulate_openloop(const TruePlant& plant, const std::vector<double>& u, const std::vector<double>& v,
                             const std::vector<double>& d) {
  LBMPC_REQUIRE(v.empty() || v.size() == u.size(), "process noise length mismatch");
  LBMPC_REQUIRE(d.empty() || d.size() == u.size(), "measurement noise length mismatch");
  PlantSimulator sim(plant);
  Trajectory t;
  t.ts = plant.ts;
  t.u = u;
  for (size_t k = 0; k < u.size(); ++k) {
    const double zk = sim.z();
    t.z.push_back(zk);
    t.y.push_back(zk + (d.empty() ? 0.0 : d[k]));
    sim.step(u[k], v.empty() ? 0.0 : v[k]);
  }
  return t;
}

Trajectory simulate_openloop(const TruePlant& plant, const std::vector<double>& u, std::uint64_t seed) {
  const int n = static_cast<int>(u.size());
  return simulate_openloop(plant, u, uniform_noise(n, plant.v_bar, seed, 2), uniform_noise(n, plant.d_bar, seed, 3));
}

std::vector<double> piecewise_goals(const std::vector<double>& levels, int steps) {
  LBMPC_REQUIRE(steps > 0, "segment length must be positive");
  std::vector<double> out;
  for (double g : levels) out.insert(out.end(), static_cast<size_t>(steps), g);
  return out;
}

bool ClosedLoopLog::constraints_ok(double u_min, double u_max, double z_min, double z_max, double tol) const {
  for (size_t k = 0; k < size(); ++k) {
    if (u[k] < u_min - tol || u[k] > u_max + tol) return false;
    if (z[k] < z_min - tol || z[k] > z_max + tol) return false;
  }
  return true;
}

int ClosedLoopLog::tube_violations() const {
  int n = 0;
  for (size_t k = 0; k < size(); ++k) n += !in_bar_tube[k] + !in_hat_tube[k];
  return n;
}

ClosedLoopLog run_closedloop(const TruePlant& plant, const RobustController& ctrl, const std::vector<double>& goals,
                             std::uint64_t seed) {
  const auto& ss = ctrl.ss;
  const int steps = static_cast<int>(goals.size());
  const auto v = uniform_noise(steps, plant.v_bar, seed, 4);
  const auto d = uniform_noise(steps, plant.d_bar, seed, 5);
  PlantSimulator sim(plant);
  ControllerState state = ControllerState::at_rest(ss.nx());
  std::vector<double> z_hist(static_cast<size_t>(ss.o), 0.0);
  std::vector<double> u_hist(static_cast<size_t>(std::max(ss.o - 1, 1)), 0.0);
  ClosedLoopLog log;
  for (int k = 0; k < steps; ++k) {
    const double zk = sim.z();
    const double yk = zk + d[static_cast<size_t>(k)];
    z_hist.insert(z_hist.begin(), zk);
    z_hist.pop_back();
    const VectorXd x_true = ss.state(z_hist, u_hist);

    state.z_goal = goals[static_cast<size_t>(k)];
    const double u = mpc_step(state, ctrl);
    const StepDiagnostics& diag = *state.last;

    log.goal.push_back(state.z_goal);
    log.goal_feasible.push_back(feasible_goal(state.z_goal, ctrl.refs, ctrl.sets, ctrl.eps));
    log.u.push_back(u);
    log.z.push_back(zk);
    log.y.push_back(yk);
    log.z_ref.push_back(diag.z_ref);
    log.zbar0.push_back(diag.zbar0);
    log.ubar0.push_back(diag.ubar0);
    log.u_ref.push_back(diag.u_ref);
    log.cost.push_back(diag.cost);
    log.status.push_back(diag.status);
    log.iterations.push_back(diag.iterations);
    log.fallback.push_back(diag.fallback);
    log.in_bar_tube.push_back(ctrl.sets.E_bar.contains(state.x_hat - diag.x_bar, 1e-7));
    log.in_hat_tube.push_back(ctrl.sets.E_hat.contains(x_true - state.x_hat, 1e-7));

    state.x_hat = observer_update(ss, ctrl.gains.L, state.x_hat, u, diag.w_hat, yk);
    sim.step(u, v[static_cast<size_t>(k)]);
    if (ss.o > 1) {
      u_hist.insert(u_hist.begin(), u);
      u_hist.pop_back();
    }
  }
  return log;
}

}  // namespace lbmpc
