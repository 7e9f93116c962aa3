#include "lbmpc/rmpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lbmpc/dataio.hpp"
#include "lbmpc/error.hpp"

namespace lbmpc {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

MatrixXd mpow(const MatrixXd& a, int k) {
  MatrixXd out = MatrixXd::Identity(a.rows(), a.cols());
  for (int i = 0; i < k; ++i) out = out * a;
  return out;
}
}  // namespace

GainSource gain_source_from_string(const std::string& s) {
  if (s == "horizon") return GainSource::Horizon;
  if (s == "realization") return GainSource::Realization;
  throw Error(ErrorKind::Config, "unknown gain source '" + s + "' (expected horizon or realization)");
}

const char* to_string(GainSource g) { return g == GainSource::Horizon ? "horizon" : "realization"; }

std::vector<double> ControllerConfig::q_weights() const {
  if (!q.empty()) return q;
  std::vector<double> out(static_cast<size_t>(horizon + 1), q_rest);
  out[0] = q0;
  return out;
}

std::vector<double> ControllerConfig::r_weights() const {
  if (!r.empty()) return r;
  std::vector<double> out(static_cast<size_t>(horizon + 1));
  for (int p = 0; p <= horizon; ++p) out[static_cast<size_t>(p)] = r0 + r_step * p;
  return out;
}

void ControllerConfig::validate() const {
  if (horizon < 0) throw Error(ErrorKind::Config, "horizon must be non-negative");
  const auto qs = q_weights();
  const auto rs = r_weights();
  if (static_cast<int>(qs.size()) != horizon + 1 || static_cast<int>(rs.size()) != horizon + 1)
    throw Error(ErrorKind::Config, "need horizon+1 output and input weights");
  for (double v : qs)
    if (!(v > 0.0)) throw Error(ErrorKind::Config, "output weights must be positive");
  if (!(rs[0] > 0.0)) throw Error(ErrorKind::Config, "R_0 must be positive");
  for (size_t p = 1; p < rs.size(); ++p)
    if (!(rs[p] > rs[p - 1])) throw Error(ErrorKind::Config, "input weights must increase strictly with p");
  if (!(u_min < u_max) || !(z_min < z_max)) throw Error(ErrorKind::Config, "constraint intervals out of order");
  if (!(lqr_state_weight > 0 && lqr_input_weight > 0 && observer_disturbance_weight > 0 && observer_noise_weight > 0))
    throw Error(ErrorKind::Config, "gain design weights must be positive");
  if (!(tail_tol > 0 && eps_rel > 0 && row_tol > 0)) throw Error(ErrorKind::Config, "set tolerances must be positive");
  if (!(sigma_factor > 1.0)) throw Error(ErrorKind::Config, "sigma factor must exceed 1");
  if (!(t_max > 0)) throw Error(ErrorKind::Config, "t_max must be positive");
  if (!(q_backoff > 0 && q_backoff < 1) || max_backoffs < 0)
    throw Error(ErrorKind::Config, "weight backoff factor must lie in (0, 1)");
}

Gains design_gains(const PerturbedSSModel& ss, const ControllerConfig& cfg) {
  ss.validate();
  const Eigen::Index n = ss.nx();
  const MatrixXd b = ss.B1;
  const MatrixXd c = ss.C;
  if (!linopt::is_stabilizable(ss.A, b)) throw Error(ErrorKind::Numerical, "(A, B1) is not stabilizable");
  if (!linopt::is_detectable(ss.A, c)) throw Error(ErrorKind::Numerical, "(A, C) is not detectable");
  const MatrixXd reg = 1e-6 * MatrixXd::Identity(n, n);

  const MatrixXd qx = cfg.lqr_state_weight * c.transpose() * c + reg;
  const MatrixXd ru = MatrixXd::Constant(1, 1, cfg.lqr_input_weight);
  const MatrixXd x = linopt::solve_dare(ss.A, b, qx, ru);
  Gains g;
  g.K = -(ru + b.transpose() * x * b).ldlt().solve(b.transpose() * x * ss.A);

  const MatrixXd qo = cfg.observer_disturbance_weight * ss.M1 * ss.M1.transpose() + reg;
  const MatrixXd ro = MatrixXd::Constant(1, 1, cfg.observer_noise_weight);
  const MatrixXd y = linopt::solve_dare(ss.A.transpose(), c.transpose(), qo, ro);
  g.L = ss.A * y * c.transpose() * (ro + c * y * c.transpose()).inverse();

  g.rho_control = linopt::spectral_radius(ss.A + ss.B1 * g.K);
  g.rho_observer = linopt::spectral_radius(ss.A - g.L * ss.C);
  if (!(g.rho_control < 1.0 && g.rho_observer < 1.0))
    throw Error(ErrorKind::Numerical, "Riccati gains do not stabilize the realization");
  return g;
}

ReferenceMaps make_reference_maps(const PerturbedSSModel& ss, const RowVectorXd& K, double mu_hat) {
  if (!(std::abs(mu_hat) >= 1e-9) || !std::isfinite(mu_hat))
    throw Error(ErrorKind::SingularGain, "gain estimate " + format_double(mu_hat) + " cannot be inverted");
  const int o = ss.o;
  const Eigen::Index n = ss.nx();
  ReferenceMaps r;
  r.mu_hat = mu_hat;
  const double inv = 1.0 / mu_hat;
  r.N.resize(n);
  r.N.head(o).setOnes();
  r.N.tail(o - 1).setConstant(inv);
  const MatrixXd eye = MatrixXd::Identity(n, n);
  r.eta = ss.M1.dot((eye - ss.A) * r.N - ss.B1 * inv);
  r.M2 = inv - K.dot(r.N);
  r.steady_residual = (r.N - (ss.A * r.N + ss.B1 * inv + ss.M1 * r.eta)).lpNorm<Eigen::Infinity>();

  const MatrixXd a_k = ss.A + ss.B1 * K;
  const VectorXd drive = ss.B1 * r.M2 + ss.M1 * r.eta;
  r.F = MatrixXd::Zero(n + 1, n + 1);
  r.F.topLeftCorner(n, n) = a_k;
  r.F.topRightCorner(n, 1) = drive;
  r.F(n, n) = 1.0;
  r.Cmap = MatrixXd::Zero(3, n + 1);
  r.Cmap.row(0).head(n) = ss.C;
  r.Cmap.row(1).head(n) = K;
  r.Cmap(1, n) = r.M2;
  r.Cmap(2, n) = r.eta;
  // The Schur block forgets X̄; the state settles at (I − A_K)⁻¹ drive · z_ref.
  r.F_limit = MatrixXd::Zero(n + 1, n + 1);
  r.F_limit.topRightCorner(n, 1) = (eye - a_k).partialPivLu().solve(drive);
  r.F_limit(n, n) = 1.0;
  return r;
}

PredictionMatrices build_prediction(const PerturbedSSModel& ss, const std::vector<MultiStepModel>& models,
                                    int horizon, const RowVectorXd& K, const ReferenceMaps& refs) {
  LBMPC_REQUIRE(horizon >= 0, "horizon must be non-negative");
  LBMPC_REQUIRE(static_cast<int>(models.size()) >= horizon, "need one predictor per step of the horizon");
  const int n = ss.nx(), nu = horizon + 1;
  PredictionMatrices pm;
  pm.horizon = horizon;
  pm.nx = n;
  pm.Cp.push_back(ss.C);
  pm.Dp.push_back(RowVectorXd::Zero(nu));
  for (int p = 1; p <= horizon; ++p) {
    const auto& m = models[static_cast<size_t>(p - 1)];
    LBMPC_REQUIRE(m.p == p && m.o == ss.o, "predictor list must be ordered p = 1, 2, … with the realization order");
    pm.Cp.push_back(m.theta.head(n).transpose());
    RowVectorXd d = RowVectorXd::Zero(nu);
    d.head(p) = m.theta_ubar().transpose();
    pm.Dp.push_back(d);
  }
  pm.B = MatrixXd::Zero(n, nu);
  pm.B.col(0) = ss.B1;
  pm.H1 = MatrixXd::Zero(nu, nu);
  for (int i = 0; i + 1 < nu; ++i) pm.H1(i, i + 1) = 1.0;
  pm.H2 = VectorXd::Unit(nu, nu - 1);
  pm.A_pow = mpow(ss.A, nu);
  pm.Gamma.resize(n, nu);
  pm.Gamma_w.resize(n, nu);
  for (int j = 0; j < nu; ++j) {
    const MatrixXd ap = mpow(ss.A, horizon - j);
    pm.Gamma.col(j) = ap * ss.B1;
    pm.Gamma_w.col(j) = ap * ss.M1;
  }

  pm.Psi.resize(nu, n + nu);
  for (int p = 0; p <= horizon; ++p) {
    pm.Psi.row(p) << pm.Cp[static_cast<size_t>(p)] * ss.A,
        pm.Cp[static_cast<size_t>(p)] * pm.B + pm.Dp[static_cast<size_t>(p)] * pm.H1;
  }
  pm.Psi_bar = MatrixXd::Zero(horizon + n + nu, n + nu);
  for (int p = 1; p <= horizon; ++p)
    pm.Psi_bar.row(p - 1) << pm.Cp[static_cast<size_t>(p)], pm.Dp[static_cast<size_t>(p)];
  pm.Psi_bar.block(horizon, 0, n, n) = pm.A_pow;
  pm.Psi_bar.block(horizon, n, n, nu) = pm.Gamma;
  pm.Psi_bar.bottomRightCorner(nu, nu).setIdentity();

  const MatrixXd a_k = ss.A + ss.B1 * K;
  pm.Lambda = MatrixXd::Zero(2 * nu + n, n + nu);
  MatrixXd ak_pow = MatrixXd::Identity(n, n);
  for (int p = 0; p <= horizon; ++p) {
    pm.Lambda.row(p) << pm.Cp[static_cast<size_t>(p)], pm.Dp[static_cast<size_t>(p)];
    pm.Lambda.row(nu + p).head(n) = K * ak_pow;
    ak_pow = ak_pow * a_k;
  }
  pm.Lambda.block(2 * nu, 0, n, n) = ak_pow;
  pm.G_xu.resize(n + nu);
  pm.G_xu << refs.N, VectorXd::Constant(nu, 1.0 / refs.mu_hat);
  return pm;
}

namespace {

MatrixXd q_bar_matrix(const PredictionMatrices& pm, const VectorXd& q, const VectorXd& r, const MatrixXd& t_n) {
  const int hp = pm.horizon, n = pm.nx, nu = hp + 1;
  MatrixXd qb = MatrixXd::Zero(hp + n + nu, hp + n + nu);
  for (int p = 1; p <= hp; ++p) qb(p - 1, p - 1) = q[p];
  qb.block(hp, hp, n, n) = t_n;
  qb(hp + n, hp + n) = r[0] / 2.0;
  for (int p = 1; p <= hp; ++p) qb(hp + n + p, hp + n + p) = r[p] - r[p - 1];
  return qb;
}

MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

MatrixXd lmi_matrix(const PredictionMatrices& pm, const CostWeights& w) {
  const MatrixXd qb = q_bar_matrix(pm, w.Q, w.R, w.T_N);
  const MatrixXd lhs = pm.Psi_bar.transpose() * qb * pm.Psi_bar;
  const MatrixXd rhs = pm.Psi.transpose() * w.Q.asDiagonal() * pm.Psi;
  return symmetrize(lhs - rhs);
}

CostWeights synthesize_weights(const PredictionMatrices& pm, const PerturbedSSModel& ss, const RowVectorXd& K,
                               const ControllerConfig& cfg) {
  cfg.validate();
  LBMPC_REQUIRE(cfg.horizon == pm.horizon, "configuration and prediction horizon differ");
  const int n = pm.nx, hp = pm.horizon;
  CostWeights w;
  const auto qs = cfg.q_weights();
  const auto rs = cfg.r_weights();
  w.Q = Eigen::Map<const VectorXd>(qs.data(), static_cast<Eigen::Index>(qs.size()));
  w.R = Eigen::Map<const VectorXd>(rs.data(), static_cast<Eigen::Index>(rs.size()));
  w.r_cal_min = w.R[0] / 2.0;
  for (int p = 1; p <= hp; ++p) w.r_cal_min = std::min(w.r_cal_min, w.R[p] - w.R[p - 1]);

  // Ψ̄ᵀQ̄Ψ̄ − ΨᵀQΨ = M₀ + t·[A^{p̄+1} Γ]ᵀ[A^{p̄+1} Γ]; its smallest eigenvalue is
  // concave and non-decreasing in t.
  auto min_eig_at = [&](double t) {
    w.T_N = t * MatrixXd::Identity(n, n);
    return linopt::min_eigenvalue(lmi_matrix(pm, w));
  };
  const double target = -0.5 * kCertificateTol;
  const double top = min_eig_at(cfg.t_max);
  if (top < target) {
    w.T_N = cfg.t_max * MatrixXd::Identity(n, n);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(lmi_matrix(pm, w));
    const VectorXd v = es.eigenvectors().col(0);
    std::string dir;
    for (Eigen::Index i = 0; i < v.size(); ++i) dir += (i ? " " : "") + format_double(v[i]);
    throw Error(ErrorKind::WeightsInfeasible,
                "no T_N = t I with t <= " + format_double(cfg.t_max) + " satisfies the decrease inequality; "
                "min eigenvalue " + format_double(top) + " along [" + dir +
                "]; reduce Q_1..Q_p relative to Q_0 or raise the input weight increments");
  }
  double lo = 0.0, hi = cfg.t_max;
  if (min_eig_at(0.0) >= target) {
    hi = 0.0;
  } else {
    // Geometric then arithmetic bisection; t spans many decades.
    for (int it = 0; it < 200 && hi - lo > 1e-9 * hi; ++it) {
      const double mid = lo > 0.0 ? std::sqrt(lo * hi) : (hi > 1.0 ? std::min(1.0, 0.5 * hi) : 0.5 * hi);
      const double probe = (lo > 0.0 && hi / lo < 4.0) ? 0.5 * (lo + hi) : mid;
      if (min_eig_at(probe) >= target)
        hi = probe;
      else
        lo = probe;
    }
  }
  w.t_scale = std::max(1.1 * hi, 1e-9);
  w.T_N = w.t_scale * MatrixXd::Identity(n, n);
  w.lmi_min_eig = linopt::min_eigenvalue(lmi_matrix(pm, w));

  const MatrixXd a_k = ss.A + ss.B1 * K;
  const MatrixXd rhs = w.T_N + K.transpose() * w.R[hp] * K;
  w.P = symmetrize(linopt::solve_dlyap(a_k, rhs));
  w.lyapunov_residual = (a_k.transpose() * w.P * a_k - w.P + rhs).lpNorm<Eigen::Infinity>();
  if (w.lyapunov_residual > kCertificateTol)
    throw Error(ErrorKind::Numerical, "terminal Lyapunov residual " + format_double(w.lyapunov_residual));
  if (w.lmi_min_eig < -kCertificateTol)
    throw Error(ErrorKind::WeightsInfeasible, "decrease inequality certificate " + format_double(w.lmi_min_eig));
  if (!(w.r_cal_min > 0.0)) throw Error(ErrorKind::WeightsInfeasible, "input weight increments not positive");
  if (!(linopt::min_eigenvalue(w.P) > 0.0)) throw Error(ErrorKind::Numerical, "terminal weight is not positive definite");
  return w;
}

CostWeights tune_weights(const PredictionMatrices& pm, const PerturbedSSModel& ss, const RowVectorXd& K,
                         const ControllerConfig& cfg) {
  ControllerConfig trial = cfg;
  trial.q = cfg.q_weights();
  for (int b = 0;; ++b) {
    try {
      CostWeights w = synthesize_weights(pm, ss, K, trial);
      w.backoffs = b;
      return w;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::WeightsInfeasible || b >= cfg.max_backoffs) throw;
    }
    for (size_t p = 1; p < trial.q.size(); ++p) trial.q[p] *= cfg.q_backoff;
  }
}

double p_tilde(const CostWeights& w, const PredictionMatrices& pm) {
  const int n = pm.nx, nu = pm.horizon + 1;
  MatrixXd d = MatrixXd::Zero(2 * nu + n, 2 * nu + n);
  for (int p = 0; p < nu; ++p) {
    d(p, p) = w.Q[p];
    d(nu + p, nu + p) = w.R[p];
  }
  d.bottomRightCorner(n, n) = w.P;
  const VectorXd lg = pm.Lambda * pm.G_xu;
  return lg.dot(d * lg);
}

double compute_sigma(const CostWeights& w, const PredictionMatrices& pm, double factor, double floor) {
  LBMPC_REQUIRE(factor > 1.0, "sigma safety factor must exceed 1");
  return std::max(factor * p_tilde(w, pm), floor);
}

TightenedSets build_tightened_sets(const PerturbedSSModel& ss, const Gains& gains, const ControllerConfig& cfg) {
  const Eigen::Index n = ss.nx();
  TightenedSets t;
  t.w_bar = ss.w_bar;
  t.d_bar = ss.d_bar;
  MatrixXd gen_hat(n, 2);
  gen_hat << 2.0 * ss.w_bar * ss.M1, ss.d_bar * gains.L;
  const Zonotope w_hat = zono_compact({VectorXd::Zero(n), gen_hat});
  t.E_hat_info = mrpi_outer(ss.A - gains.L * ss.C, w_hat, cfg.tail_tol);
  t.E_hat = t.E_hat_info.set;

  const MatrixXd lc = gains.L * ss.C;
  Zonotope w_bar = zono_minkowski(zono_affine(t.E_hat, lc), {VectorXd::Zero(n), ss.d_bar * gains.L});
  w_bar = zono_compact(w_bar);
  t.E_bar_info = mrpi_outer(ss.A + ss.B1 * gains.K, w_bar, cfg.tail_tol);
  t.E_bar = t.E_bar_info.set;

  const VectorXd k = gains.K.transpose();
  const VectorXd c = ss.C.transpose();
  const Zonotope both = zono_minkowski(t.E_bar, t.E_hat);
  const double ku_hi = t.E_bar.support(k), ku_lo = t.E_bar.support(-k);
  const double cz_hi = both.support(c), cz_lo = both.support(-c);
  t.u_tightening = std::max(ku_hi, ku_lo);
  t.z_tightening = std::max(cz_hi, cz_lo);
  t.u_lo = cfg.u_min + ku_lo;
  t.u_hi = cfg.u_max - ku_hi;
  t.z_lo = cfg.z_min + cz_lo;
  t.z_hi = cfg.z_max - cz_hi;
  if (!(t.u_lo < t.u_hi) || !(t.z_lo < t.z_hi))
    throw Error(ErrorKind::EmptyTightenedSet,
                "support of K*Ebar is [" + format_double(-ku_lo) + ", " + format_double(ku_hi) +
                    "], support of C*(Ebar+Ehat) is [" + format_double(-cz_lo) + ", " + format_double(cz_hi) +
                    "]; the input box [" + format_double(cfg.u_min) + ", " + format_double(cfg.u_max) +
                    "] or output box [" + format_double(cfg.z_min) + ", " + format_double(cfg.z_max) +
                    "] cannot absorb them");
  return t;
}

OutputBox output_box(const TightenedSets& t) {
  OutputBox b;
  b.lo << t.z_lo, t.u_lo, -t.w_bar;
  b.hi << t.z_hi, t.u_hi, t.w_bar;
  return b;
}

MoasResult build_terminal(const ReferenceMaps& refs, const TightenedSets& t, double eps, double row_tol,
                          int max_steps) {
  const OutputBox box = output_box(t);
  // The ŵ channel is dropped when η vanishes: it is then identically zero.
  const bool use_w = std::abs(refs.eta) > 1e-14;
  if (use_w && !(t.w_bar > eps))
    throw Error(ErrorKind::EmptyTightenedSet, "disturbance bound leaves no admissible reference");
  const int m = use_w ? 3 : 2;
  return moas(refs.F, refs.Cmap.topRows(m), box.lo.head(m), box.hi.head(m), eps, row_tol, max_steps,
              refs.F_limit);
}

double feasible_goal(double z_goal, const ReferenceMaps& refs, const TightenedSets& t, double eps) {
  const OutputBox box = output_box(t);
  const double gains[3] = {refs.N[0], 1.0 / refs.mu_hat, refs.eta};
  double lo = -kInf, hi = kInf;
  for (int j = 0; j < 3; ++j) {
    const double a = gains[j], l = box.lo[j] + eps, h = box.hi[j] - eps;
    if (std::abs(a) <= 1e-14) {
      if (j == 2 || (l <= 0.0 && 0.0 <= h)) continue;
      throw Error(ErrorKind::EmptyTightenedSet, "no admissible steady state");
    }
    if (!(l <= h)) throw Error(ErrorKind::EmptyTightenedSet, "no admissible steady state");
    const double x1 = l / a, x2 = h / a;
    lo = std::max(lo, std::min(x1, x2));
    hi = std::min(hi, std::max(x1, x2));
  }
  if (!(lo <= hi)) throw Error(ErrorKind::EmptyTightenedSet, "no admissible steady state");
  return std::clamp(z_goal, lo, hi);
}

double select_gain(GainSource source, const PerturbedSSModel& ss, const MultiStepModel& horizon_model) {
  return source == GainSource::Horizon ? gain_estimate(horizon_model) : realization_dc_gain(ss);
}

RobustController synthesize_controller(const PerturbedSSModel& ss, const std::vector<MultiStepModel>& models,
                                       double mu_hat, const ControllerConfig& cfg) {
  cfg.validate();
  ss.validate();
  RobustController c;
  c.ss = ss;
  c.cfg = cfg;
  c.gains = design_gains(ss, cfg);
  c.refs = make_reference_maps(ss, c.gains.K, mu_hat);
  c.pm = build_prediction(ss, models, cfg.horizon, c.gains.K, c.refs);
  c.weights = tune_weights(c.pm, ss, c.gains.K, cfg);
  c.weights.p_tilde = p_tilde(c.weights, c.pm);
  c.weights.sigma = compute_sigma(c.weights, c.pm, cfg.sigma_factor, cfg.sigma_floor);
  c.sets = build_tightened_sets(ss, c.gains, cfg);
  const OutputBox box = output_box(c.sets);
  c.eps = cfg.eps_rel * std::max({0.5 * (box.hi[0] - box.lo[0]), 0.5 * (box.hi[1] - box.lo[1]), c.sets.w_bar});
  c.terminal = build_terminal(c.refs, c.sets, c.eps, cfg.row_tol, cfg.moas_max_steps);
  const Eigen::Index nf = c.refs.F.rows();
  MatrixXd obs(3 * nf, nf);
  MatrixXd row = c.refs.Cmap;
  for (Eigen::Index i = 0; i < nf; ++i) {
    obs.middleRows(3 * i, 3) = row;
    row = row * c.refs.F;
  }
  Eigen::FullPivLU<MatrixXd> lu(obs);
  lu.setThreshold(1e-10);
  c.terminal_observability_rank = static_cast<int>(lu.rank());
  return c;
}

ControllerState ControllerState::at_rest(int nx) {
  ControllerState s;
  s.x_hat = VectorXd::Zero(nx);
  return s;
}

VectorXd observer_update(const PerturbedSSModel& ss, const VectorXd& L, const VectorXd& x_hat, double u,
                         double w_hat, double y) {
  LBMPC_REQUIRE(x_hat.allFinite() && std::isfinite(u) && std::isfinite(w_hat) && std::isfinite(y),
                "observer inputs must be finite");
  return ss.A * x_hat + ss.B1 * u + ss.M1 * w_hat + L * (y - ss.C.dot(x_hat));
}

namespace {

// Row blocks of the plan, in the variable layout [X̄, Ū, z_ref].
struct PlanMaps {
  MatrixXd terminal;           // X̄(k+p̄+1)
  std::vector<RowVectorXd> z;  // C X̄(k+p), p = 0…p̄
};

PlanMaps plan_maps(const RobustController& c) {
  const auto& ss = c.ss;
  const int n = ss.nx(), nu = c.pm.horizon + 1;
  const int nv = n + nu + 1;
  PlanMaps m;
  // X̄(k+p) as a map of [X̄, Ū, z_ref], propagated one step at a time.
  MatrixXd x = MatrixXd::Zero(n, nv);
  x.leftCols(n).setIdentity();
  for (int p = 0; p <= nu; ++p) {
    if (p < nu) m.z.push_back(ss.C * x);
    if (p == nu) break;
    MatrixXd next = ss.A * x;
    next.col(n + p) += ss.B1;
    next.col(n + nu) += ss.M1 * c.refs.eta;
    x = next;
  }
  m.terminal = x;
  return m;
}

}  // namespace

StepProblem assemble_step(const RobustController& c, const VectorXd& x_hat, double z_goal) {
  const auto& ss = c.ss;
  const auto& pm = c.pm;
  const int n = ss.nx(), nu = pm.horizon + 1, nv0 = n + nu + 1;
  const Zonotope& e_bar = c.sets.E_bar;
  const int nl = e_bar.order();
  const int nv = nv0 + nl;
  const double inv = 1.0 / c.refs.mu_hat;
  StepProblem sp;
  sp.nx = n;
  sp.nu = nu;
  sp.nlam = nl;
  const int iz = sp.idx_zref();

  MatrixXd h = MatrixXd::Zero(nv0, nv0);
  VectorXd f = VectorXd::Zero(nv0);
  for (int p = 0; p <= pm.horizon; ++p) {
    RowVectorXd a = RowVectorXd::Zero(nv0);
    a.head(n) = pm.Cp[static_cast<size_t>(p)];
    a.segment(n, nu) = pm.Dp[static_cast<size_t>(p)];
    a[iz] = -(pm.Cp[static_cast<size_t>(p)].dot(c.refs.N) + pm.Dp[static_cast<size_t>(p)].sum() * inv);
    h += 2.0 * c.weights.Q[p] * a.transpose() * a;
    RowVectorXd b = RowVectorXd::Zero(nv0);
    b[n + p] = 1.0;
    b[iz] = -inv;
    h += 2.0 * c.weights.R[p] * b.transpose() * b;
  }
  const PlanMaps maps = plan_maps(c);
  MatrixXd term = maps.terminal;
  term.col(iz) -= c.refs.N;
  h += 2.0 * term.transpose() * c.weights.P * term;
  h(iz, iz) += 2.0 * c.weights.sigma;
  f[iz] = -2.0 * c.weights.sigma * z_goal;
  sp.constant = c.weights.sigma * z_goal * z_goal;

  auto& qp = sp.qp;
  qp.hessian = MatrixXd::Zero(nv, nv);
  qp.hessian.topLeftCorner(nv0, nv0) = 0.5 * (h + h.transpose());
  qp.linear = VectorXd::Zero(nv);
  qp.linear.head(nv0) = f;

  // X̂ − X̄ ∈ Ē  ⇔  X̄ + G λ = X̂ − c,  |λ| ≤ 1.
  qp.eq_lhs = MatrixXd::Zero(n, nv);
  qp.eq_lhs.leftCols(n).setIdentity();
  qp.eq_lhs.rightCols(nl) = e_bar.generators;
  qp.eq_rhs = x_hat - e_bar.center;

  qp.lower = VectorXd::Constant(nv, -kInf);
  qp.upper = VectorXd::Constant(nv, kInf);
  qp.lower.segment(n, nu).setConstant(c.sets.u_lo);
  qp.upper.segment(n, nu).setConstant(c.sets.u_hi);
  qp.lower.tail(nl).setConstant(-1.0);
  qp.upper.tail(nl).setConstant(1.0);

  std::vector<RowVectorXd> rows;
  std::vector<double> rhs;
  auto add = [&](const RowVectorXd& g0, double b) {
    RowVectorXd g = RowVectorXd::Zero(nv);
    g.head(nv0) = g0;
    rows.push_back(g);
    rhs.push_back(b);
  };
  for (const auto& z : maps.z) {
    add(z, c.sets.z_hi);
    add(-z, -c.sets.z_lo);
  }
  if (std::abs(c.refs.eta) > 1e-14) {
    RowVectorXd g = RowVectorXd::Zero(nv0);
    g[iz] = c.refs.eta;
    add(g, c.sets.w_bar);
    add(-g, c.sets.w_bar);
  }
  const auto& o = c.terminal.set;
  for (int i = 0; i < o.rows(); ++i) {
    RowVectorXd g = o.G.row(i).head(n) * maps.terminal;
    g[iz] += o.G(i, n);
    add(g, o.h[i]);
  }
  qp.ineq_lhs.resize(static_cast<Eigen::Index>(rows.size()), nv);
  qp.ineq_rhs.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    qp.ineq_lhs.row(static_cast<Eigen::Index>(i)) = rows[i];
    qp.ineq_rhs[static_cast<Eigen::Index>(i)] = rhs[i];
  }
  return sp;
}

double evaluate_cost(const RobustController& c, const VectorXd& x_bar, const VectorXd& u_bar, double z_ref,
                     double z_goal) {
  const auto& ss = c.ss;
  const auto& pm = c.pm;
  const double inv = 1.0 / c.refs.mu_hat;
  const VectorXd x_ref = c.refs.N * z_ref;
  const double u_ref = inv * z_ref;
  const double w_hat = c.refs.eta * z_ref;
  double j = 0.0;
  for (int p = 0; p <= pm.horizon; ++p) {
    const auto& cp = pm.Cp[static_cast<size_t>(p)];
    const auto& dp = pm.Dp[static_cast<size_t>(p)];
    const double zp = cp.dot(x_bar) + dp.dot(u_bar);
    const double zr = cp.dot(x_ref) + dp.sum() * u_ref;
    j += c.weights.Q[p] * (zp - zr) * (zp - zr);
    j += c.weights.R[p] * (u_bar[p] - u_ref) * (u_bar[p] - u_ref);
  }
  VectorXd x = x_bar;
  for (int p = 0; p <= pm.horizon; ++p) x = ss.A * x + ss.B1 * u_bar[p] + ss.M1 * w_hat;
  const VectorXd dx = x - x_ref;
  j += dx.dot(c.weights.P * dx);
  j += c.weights.sigma * (z_ref - z_goal) * (z_ref - z_goal);
  return j;
}

namespace {

// Shifted previous plan: the candidate that makes the next problem feasible.
std::optional<StepDiagnostics> shifted_candidate(const RobustController& c, const StepDiagnostics& prev,
                                                 const VectorXd& x_hat) {
  const auto& ss = c.ss;
  const int nu = c.pm.horizon + 1;
  const double w_hat = c.refs.eta * prev.z_ref;
  VectorXd x = prev.x_bar;
  for (int p = 0; p < nu; ++p) x = ss.A * x + ss.B1 * prev.u_bar[p] + ss.M1 * w_hat;
  StepDiagnostics d = prev;
  d.x_bar = ss.A * prev.x_bar + ss.B1 * prev.u_bar[0] + ss.M1 * w_hat;
  d.u_bar.head(nu - 1) = prev.u_bar.tail(nu - 1);
  d.u_bar[nu - 1] = prev.z_ref / c.refs.mu_hat + c.gains.K.dot(x - c.refs.N * prev.z_ref);
  if (!c.sets.E_bar.contains(x_hat - d.x_bar, 1e-9)) return std::nullopt;
  return d;
}

}  // namespace

double mpc_step(ControllerState& state, const RobustController& c) {
  const StepProblem sp = assemble_step(c, state.x_hat, state.z_goal);
  const auto rep = linopt::solve_qp(sp.qp);
  StepDiagnostics d;
  d.status = rep.status;
  d.iterations = rep.iterations;
  if (rep.optimal()) {
    const VectorXd& v = *rep.argmin;
    d.x_bar = v.segment(sp.idx_x(), sp.nx);
    d.u_bar = v.segment(sp.idx_u(), sp.nu);
    d.z_ref = v[sp.idx_zref()];
    d.kkt_residual = linopt::kkt_residual(sp.qp, rep);
  } else {
    std::optional<StepDiagnostics> cand;
    if (rep.status == linopt::SolveStatus::NumericalFailure && state.last)
      cand = shifted_candidate(c, *state.last, state.x_hat);
    if (!cand) {
      throw Error(ErrorKind::QPInfeasible, std::string("receding-horizon problem ") +
                                               linopt::to_string(rep.status) + " at estimate with z = " +
                                               format_double(c.ss.C.dot(state.x_hat)) + ", goal " +
                                               format_double(state.z_goal));
    }
    d.x_bar = cand->x_bar;
    d.u_bar = cand->u_bar;
    d.z_ref = cand->z_ref;
    d.fallback = true;
  }
  d.cost = evaluate_cost(c, d.x_bar, d.u_bar, d.z_ref, state.z_goal);
  d.zbar0 = c.ss.C.dot(d.x_bar);
  d.ubar0 = d.u_bar[0];
  d.u_ref = d.z_ref / c.refs.mu_hat;
  d.w_hat = c.refs.eta * d.z_ref;
  const double u = d.ubar0 + c.gains.K.dot(state.x_hat - d.x_bar);
  state.u_last = u;
  state.last = d;
  return u;
}

}  // namespace lbmpc
