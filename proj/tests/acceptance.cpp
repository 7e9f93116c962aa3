// Acceptance checks for the reference example. One line per criterion:
//   [PASS] <n> <name>: <measured values>
// Exit status is the number of failed criteria. Criterion numbers given on the
// command line restrict the run to those.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lbmpc/error.hpp"
#include "lbmpc/linopt.hpp"
#include "lbmpc/pipeline.hpp"

using namespace lbmpc;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

constexpr int kIdentHorizon = 20;
const std::vector<std::uint64_t> kDataSeeds{1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// Shared, lazily built state: reference data and models per seed, the controller on
// seed 1.
class Context {
 public:
  PipelineConfig config(std::uint64_t seed) const {
    PipelineConfig c = config_from_json(Json::object());
    c.plant.seed = seed;
    c.closedloop.seed = seed;
    return c;
  }

  const Trajectory& data(std::uint64_t seed) {
    auto it = data_.find(seed);
    if (it == data_.end()) it = data_.emplace(seed, collect_data(config(seed).plant)).first;
    return it->second;
  }

  const IdentificationResult& ident(std::uint64_t seed) {
    auto it = ident_.find(seed);
    if (it == ident_.end()) {
      const auto c = config(seed);
      it = ident_.emplace(seed, identify_all(data(seed), c.identification, c.plant.d_bar)).first;
    }
    return it->second;
  }

  const RobustController& controller() {
    if (!ctrl_) {
      const auto c = config(1);
      const auto& id = ident(1);
      std::vector<MultiStepModel> models(id.models.begin(), id.models.begin() + c.control.horizon);
      ctrl_ = synthesize_controller(id.realization, models, horizon_gain(c, id), c.control);
    }
    return *ctrl_;
  }

 private:
  std::map<std::uint64_t, Trajectory> data_;
  std::map<std::uint64_t, IdentificationResult> ident_;
  std::optional<RobustController> ctrl_;
};

// ---------------------------------------------------------------------------
// 1. λ̲_p against the fraction of the data set.

Outcome lambda_convergence(Context& ctx) {
  const std::vector<int> steps{3, 10, 20};
  const auto fractions = ctx.config(1).identification.fractions;
  // Nested LPs have non-decreasing optima; the solver reproduces equal optima
  // only to round-off, so "non-decreasing" is read at 1e-12 relative.
  const double roundoff = 1e-12;
  bool monotone = true, flat = true;
  double worst_drop = 0.0, worst_flat = 0.0;
  std::ostringstream d;
  for (auto seed : kDataSeeds) {
    for (int p : steps) {
      const auto c = ctx.config(seed);
      const auto curve = lambda_curve(ctx.data(seed), c.identification.order, p, fractions, c.plant.d_bar,
                                      c.identification.omega_magnitude);
      for (size_t i = 1; i < curve.size(); ++i) {
        const double drop = curve[i - 1] - curve[i];
        worst_drop = std::max(worst_drop, drop);
        if (drop > roundoff * std::max(1.0, curve[i - 1])) monotone = false;
      }
      const size_t half = static_cast<size_t>(std::find(fractions.begin(), fractions.end(), 0.5) - fractions.begin());
      const double rise = (curve.back() - curve[half]) / curve.back();
      worst_flat = std::max(worst_flat, rise);
      if (rise > 0.15) flat = false;
      d << " s" << seed << "p" << p << "=" << fmt(rise, 3);
    }
  }
  return {monotone && flat, "largest drop " + fmt(worst_drop, 3) + ", largest (λ(1)−λ(.5))/λ(1) " +
                                fmt(worst_flat, 3) + " (limit 0.15);" + d.str()};
}

// ---------------------------------------------------------------------------
// 2. λ̲_p never exceeds the optimal global bound of a known ARX plant.
//
// Plant z⁺ = a z + b u + v, y = z + d, |u| ≤ 1, model order 1. For p steps
//   y_p − θᵀφ = (aᵖ − θ_y) z − θ_y d(k) + Σ_j (a^{p−1−j} b − θ_j) u(k+j) + Σ_j a^{p−1−j} v(k+j) + d(k+p),
// every term ranging over an independent interval, so
//   ε̄*_p = min_θ max |y_p − θᵀφ| − d̄ = |a|ᵖ d̄ + v̄ Σ_{i<p} |a|ⁱ   (z range wider than d̄).
// The closed form is cross-checked by an LP over all vertices of the
// (z, d, u, v, d⁺) box, which is exact since the residual is affine in them.

double vertex_oracle(double a, double b, double v_bar, double d_bar, double z_max, int p) {
  const int dim = 2 * p + 3;  // z, d(k), u(k..k+p−1), v(k..k+p−1), d(k+p)
  const int nv = 1 << dim;
  const int nth = 1 + p;
  linopt::LinearProgram lp;
  lp.cost = VectorXd::Unit(nth + 1, nth);
  lp.ineq_lhs.resize(2 * nv, nth + 1);
  lp.ineq_rhs.resize(2 * nv);
  for (int m = 0; m < nv; ++m) {
    auto s = [&](int bit) { return (m >> bit) & 1 ? 1.0 : -1.0; };
    const double z = z_max * s(0), dk = d_bar * s(1);
    VectorXd phi(nth);
    phi[0] = z + dk;
    double yp = std::pow(a, p) * z + d_bar * s(2 * p + 2);
    for (int j = 0; j < p; ++j) {
      const double u = s(2 + j), v = v_bar * s(2 + p + j);
      phi[1 + j] = u;
      yp += std::pow(a, p - 1 - j) * (b * u + v);
    }
    // |yp − θᵀφ| ≤ ε + d̄
    lp.ineq_lhs.row(2 * m) << -phi.transpose(), -1.0;
    lp.ineq_rhs[2 * m] = d_bar - yp;
    lp.ineq_lhs.row(2 * m + 1) << phi.transpose(), -1.0;
    lp.ineq_rhs[2 * m + 1] = d_bar + yp;
  }
  lp.lower = VectorXd::Constant(nth + 1, -1e6);
  lp.upper = VectorXd::Constant(nth + 1, 1e6);
  const auto rep = linopt::solve_lp(lp);
  if (!rep.optimal()) throw std::runtime_error("vertex oracle LP failed");
  return rep.objective;
}

Outcome oracle_bound() {
  const double a = 0.8, b = 0.5, v_bar = 0.05, d_bar = 0.1;
  TruePlant plant;
  plant.n = 1;
  plant.theta = Eigen::Vector2d(a, b);
  plant.v_bar = v_bar;
  plant.d_bar = d_bar;
  const int n = 3000;
  const auto u = uniform_noise(n, 1.0, 77, 11);
  const Trajectory traj = simulate_openloop(plant, u, uniform_noise(n, v_bar, 77, 12), uniform_noise(n, d_bar, 77, 13));
  const double z_max = (b + v_bar) / (1.0 - a);
  double z_seen = 0.0;
  for (double z : traj.z) z_seen = std::max(z_seen, std::abs(z));

  bool ok = z_seen <= z_max;
  double worst_gap = 1e300, worst_closed = 0.0;
  std::ostringstream d;
  for (int p = 1; p <= 5; ++p) {
    double closed = std::pow(a, p) * d_bar;
    for (int i = 0; i < p; ++i) closed += v_bar * std::pow(a, i);
    const double lp = vertex_oracle(a, b, v_bar, d_bar, z_max, p);
    worst_closed = std::max(worst_closed, std::abs(lp - closed));
    const RegressorDataset ds = build_regressors(traj, 1, p);
    const double lambda = estimate_lambda(ds, ParameterBox::symmetric(ds.dim()), d_bar).lambda;
    ok = ok && lambda <= closed + 1e-9 && std::abs(lp - closed) <= 1e-9;
    worst_gap = std::min(worst_gap, closed - lambda);
    d << " p" << p << ": λ=" << fmt(lambda, 5) << " ε*=" << fmt(closed, 5);
  }
  return {ok, "smallest ε*−λ " + fmt(worst_gap, 3) + ", closed form vs vertex LP " + fmt(worst_closed, 3) +
                  ", data |z| ≤ " + fmt(z_seen, 3) + " ≤ " + fmt(z_max, 3) + ";" + d.str()};
}

// ---------------------------------------------------------------------------
// 3. Learned w̄ against the propagated one-step bound, p = 20.

Outcome disturbance_improvement(Context& ctx) {
  bool ok = true;
  std::ostringstream d;
  for (auto seed : kDataSeeds) {
    const auto& id = ctx.ident(seed);
    const auto& ss = id.realization;
    const double learned = iterated_error_bound(ss, ss.w_bar, ss.d_bar, kIdentHorizon);
    const double base = baseline_bound(ss, id.models.front(), kIdentHorizon);
    const double ratio = learned / base;
    ok = ok && ratio <= 0.6;
    d << " seed " << seed << ": " << fmt(learned) << "/" << fmt(base) << " = " << fmt(ratio, 3);
  }
  return {ok, "ratio limit 0.6;" + d.str()};
}

// ---------------------------------------------------------------------------
// 4. Optimal multi-step bounds below the iterated ones, and the realization
//    bound above the iterated ones.

Outcome bound_ordering(Context& ctx) {
  const auto& id = ctx.ident(1);
  const auto& ss = id.realization;
  double margin_opt = 1e300, margin_eq = 1e300;
  for (int p = 1; p <= kIdentHorizon; ++p) {
    const size_t i = static_cast<size_t>(p - 1);
    margin_opt = std::min(margin_opt, id.tau_iterated[i] - id.models[i].tau_hat);
    margin_eq = std::min(margin_eq, iterated_error_bound(ss, ss.w_bar, ss.d_bar, p) - id.tau_iterated[i]);
  }
  // p = 1 ties by construction (the realization comes from the one-step model).
  const bool ok = margin_opt >= -1e-12 * id.tau_iterated.back() && margin_eq >= -1e-9;
  return {ok, "min τ̂_iter − τ̂* = " + fmt(margin_opt, 3) + ", min bound − τ̂_iter = " + fmt(margin_eq, 3) +
                  ", τ̂*(20) = " + fmt(id.models.back().tau_hat) + ", τ̂_iter(20) = " + fmt(id.tau_iterated.back())};
}

// ---------------------------------------------------------------------------
// 5. Held-out noise-free outputs inside the learned bounds.

Outcome heldout_guarantee(Context& ctx) {
  const auto& id = ctx.ident(1);
  PipelineConfig c = ctx.config(1);
  c.plant.n_samples = 500;
  c.plant.seed = 9001;
  const Trajectory fresh = collect_data(c.plant);
  double worst_frac = 1.0, worst_excess = -1e300;
  int total = 0, inside = 0;
  for (int p = 1; p <= kIdentHorizon; ++p) {
    const auto& m = id.models[static_cast<size_t>(p - 1)];
    const RegressorDataset ds = build_regressors(fresh, c.identification.order, p);
    int in = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      const double z = fresh.z[static_cast<size_t>(ds.origin[static_cast<size_t>(i)] + p)];
      const double err = std::abs(z - m.theta.dot(ds.phi.row(i)));
      worst_excess = std::max(worst_excess, err - m.tau_hat);
      in += err <= m.tau_hat;
    }
    worst_frac = std::min(worst_frac, double(in) / double(ds.size()));
    total += static_cast<int>(ds.size());
    inside += in;
  }
  return {worst_frac >= 0.999, "worst per-p coverage " + fmt(worst_frac, 6) + " (" + std::to_string(inside) + "/" +
                                   std::to_string(total) + " overall), largest |e| − τ̂ = " + fmt(worst_excess, 3)};
}

// ---------------------------------------------------------------------------
// 6. Synthesis certificates.

Outcome synthesis_certificates(Context& ctx) {
  const auto& w = ctx.controller().weights;
  const bool ok = w.lyapunov_residual <= 1e-8 && w.lmi_min_eig >= -1e-8 && w.sigma > w.p_tilde && w.r_cal_min > 0;
  return {ok, "Lyapunov residual " + fmt(w.lyapunov_residual, 3) + ", decrease-inequality min eig " +
                  fmt(w.lmi_min_eig, 3) + ", σ = " + fmt(w.sigma) + " > λmax(P̃) = " + fmt(w.p_tilde) +
                  ", min diag ℛ = " + fmt(w.r_cal_min) + ", backoffs " + std::to_string(w.backoffs)};
}

// ---------------------------------------------------------------------------
// 7. Monte-Carlo containment of the tubes and invariance of the terminal set.

// Rows cᵀ with their support values; a point with cᵀx > h(c) is outside.
struct SupportScreen {
  MatrixXd dirs;
  VectorXd h;
  SupportScreen(const Zonotope& z, std::mt19937_64& rng, int count) {
    const int n = z.dim();
    dirs.resize(count + 2 * n, n);
    std::normal_distribution<double> nd;
    for (int i = 0; i < count; ++i) dirs.row(i) = VectorXd::NullaryExpr(n, [&] { return nd(rng); }).normalized();
    dirs.middleRows(count, n).setIdentity();
    dirs.bottomRows(n) = -MatrixXd::Identity(n, n);
    h = dirs * z.center + (dirs * z.generators).cwiseAbs().rowwise().sum();
  }
  // max_i (cᵢᵀx − hᵢ) / hᵢ
  double ratio(const VectorXd& x) const {
    return ((dirs * x - h).array() / h.array().max(1e-300)).maxCoeff();
  }
};

struct TubeStats {
  long checked = 0;
  long screen_violations = 0;
  long exact_checked = 0;
  long exact_violations = 0;
  double worst_ratio = -1e300;
};

Outcome set_validity(Context& ctx) {
  const auto& c = ctx.controller();
  const auto& ss = c.ss;
  const MatrixXd al = ss.A - c.gains.L * ss.C;
  const MatrixXd ak = ss.A + ss.B1 * c.gains.K;
  const MatrixXd lc = c.gains.L * ss.C;
  const double dw = 2.0 * ss.w_bar, db = ss.d_bar;
  std::mt19937_64 rng(2024);
  const SupportScreen scr_hat(c.sets.E_hat, rng, 256), scr_bar(c.sets.E_bar, rng, 256);

  // e⁺ = (A − LC) e + M1 δ − L d,  ε⁺ = (A + B1K) ε + L (C e + d), both from rest.
  const int n_traj = 100000, horizon = 120;
  const std::vector<int> checkpoints{5, 20, 60, horizon};
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> pick(0, 3);
  TubeStats hat, bar;
  struct Candidate {
    double ratio;
    VectorXd x;
  };
  std::vector<Candidate> worst_hat, worst_bar, random_hat, random_bar;
  const auto keep = [](std::vector<Candidate>& v, double r, const VectorXd& x) {
    v.push_back({r, x});
    if (v.size() > 400) {
      std::nth_element(v.begin(), v.begin() + 200, v.end(), [](auto& a, auto& b) { return a.ratio > b.ratio; });
      v.resize(200);
    }
  };
  for (int t = 0; t < n_traj; ++t) {
    VectorXd e = VectorXd::Zero(ss.nx()), eps = VectorXd::Zero(ss.nx());
    // Disturbance pattern: i.i.d. vertices, constant vertices, alternating or slowly switching signs.
    const int mode = pick(rng);
    const double s0 = coin(rng) ? 1.0 : -1.0, s1 = coin(rng) ? 1.0 : -1.0;
    const int period = 2 + static_cast<int>(rng() % 30);
    size_t next_cp = 0;
    for (int k = 1; k <= horizon; ++k) {
      double sw, sd;
      switch (mode) {
        case 0: sw = coin(rng) ? 1 : -1; sd = coin(rng) ? 1 : -1; break;
        case 1: sw = s0; sd = s1; break;
        case 2: sw = (k % 2 ? s0 : -s0); sd = (k % 2 ? s1 : -s1); break;
        default: sw = ((k / period) % 2 ? s0 : -s0); sd = ((k / (period + 1)) % 2 ? s1 : -s1); break;
      }
      const double w = dw * sw, d = db * sd;
      eps = ak * eps + c.gains.L * (ss.C.dot(e) + d);
      e = al * e + ss.M1 * w - c.gains.L * d;
      if (k == checkpoints[next_cp]) {
        ++next_cp;
        const double rh = scr_hat.ratio(e), rb = scr_bar.ratio(eps);
        ++hat.checked;
        ++bar.checked;
        hat.screen_violations += rh > 1e-9;
        bar.screen_violations += rb > 1e-9;
        hat.worst_ratio = std::max(hat.worst_ratio, rh);
        bar.worst_ratio = std::max(bar.worst_ratio, rb);
        keep(worst_hat, rh, e);
        keep(worst_bar, rb, eps);
        if (t % 400 == 0 && k == horizon) {
          random_hat.push_back({rh, e});
          random_bar.push_back({rb, eps});
        }
      }
    }
  }
  // Adversarial sequences reaching the support of the reachable set along the screen directions.
  for (int i = 0; i < scr_hat.dirs.rows(); ++i) {
    const VectorXd cdir = scr_hat.dirs.row(i).transpose();
    VectorXd e = VectorXd::Zero(ss.nx());
    std::vector<double> ws(horizon), ds(horizon);
    MatrixXd pw = MatrixXd::Identity(ss.nx(), ss.nx());
    for (int j = horizon - 1; j >= 0; --j) {
      ws[static_cast<size_t>(j)] = cdir.dot(pw * ss.M1) >= 0 ? dw : -dw;
      ds[static_cast<size_t>(j)] = -cdir.dot(pw * c.gains.L) >= 0 ? db : -db;
      pw = pw * al;
    }
    for (int k = 0; k < horizon; ++k)
      e = al * e + ss.M1 * ws[static_cast<size_t>(k)] - c.gains.L * ds[static_cast<size_t>(k)];
    const double rh = scr_hat.ratio(e);
    ++hat.checked;
    hat.screen_violations += rh > 1e-9;
    hat.worst_ratio = std::max(hat.worst_ratio, rh);
    keep(worst_hat, rh, e);
  }
  const auto exact = [](const Zonotope& z, std::vector<Candidate>& a, const std::vector<Candidate>& b, TubeStats& s) {
    a.insert(a.end(), b.begin(), b.end());
    for (const auto& cand : a) {
      ++s.exact_checked;
      s.exact_violations += !z.contains(cand.x, 1e-9);
    }
  };
  exact(c.sets.E_hat, worst_hat, random_hat, hat);
  exact(c.sets.E_bar, worst_bar, random_bar, bar);

  // Terminal set: sampled points, boundary points included, iterated 200 steps.
  const Polytope& o = c.terminal.set;
  const auto& F = c.refs.F;
  const int m = (std::abs(c.refs.eta) > 1e-14) ? 3 : 2;
  const OutputBox box = output_box(c.sets);
  const MatrixXd cmap = c.refs.Cmap.topRows(m);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  VectorXd x = VectorXd::Zero(o.dim());
  long inv_fail = 0, adm_fail = 0, samples = 0;
  double worst_inv = -1e300, worst_adm = -1e300;
  while (samples < 1000) {
    VectorXd dir = VectorXd::NullaryExpr(o.dim(), [&] { return nd(rng); }).normalized();
    const VectorXd gd = o.G * dir, slack = o.h - o.G * x;
    double lo = -1e3, hi = 1e3;
    for (Eigen::Index i = 0; i < gd.size(); ++i) {
      if (gd[i] > 1e-14) hi = std::min(hi, slack[i] / gd[i]);
      if (gd[i] < -1e-14) lo = std::max(lo, slack[i] / gd[i]);
    }
    // every fourth sample on the boundary
    const double step = (samples % 4 == 3) ? (coin(rng) ? hi : lo) : lo + (hi - lo) * ud(rng);
    VectorXd pt = x + step * dir;
    if (samples % 4 != 3) x = pt;
    ++samples;
    for (int k = 0; k <= 200; ++k) {
      const double vi = o.violation(pt);
      const VectorXd out = cmap * pt;
      double va = -1e300;
      for (int r = 0; r < m; ++r) va = std::max({va, out[r] - box.hi[r], box.lo[r] - out[r]});
      worst_inv = std::max(worst_inv, vi);
      worst_adm = std::max(worst_adm, va);
      if (vi > 1e-7) { ++inv_fail; break; }
      if (va > 1e-7) { ++adm_fail; break; }
      pt = F * pt;
    }
  }

  const bool ok = hat.screen_violations == 0 && bar.screen_violations == 0 && hat.exact_violations == 0 &&
                  bar.exact_violations == 0 && inv_fail == 0 && adm_fail == 0;
  std::ostringstream d;
  d << "Ê: " << hat.checked << " states, worst support ratio " << fmt(hat.worst_ratio, 3) << ", "
    << hat.exact_violations << "/" << hat.exact_checked << " exact misses; Ē: " << bar.checked
    << " states, worst ratio " << fmt(bar.worst_ratio, 3) << ", " << bar.exact_violations << "/" << bar.exact_checked
    << " exact misses; O_ε: " << samples << " points × 200 steps, worst row " << fmt(worst_inv, 3)
    << ", worst output " << fmt(worst_adm, 3) << ", failures " << inv_fail + adm_fail;
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 8. Closed loop over ten noise seeds.

Outcome closed_loop(Context& ctx) {
  const auto& c = ctx.controller();
  const auto cfg = ctx.config(1);
  const TruePlant plant = make_plant(cfg.plant);
  const int seg = cfg.closedloop.segment_steps;
  const auto goals = piecewise_goals(cfg.closedloop.goals, seg);
  const double radius = c.sets.z_tightening;
  bool ok = true;
  double worst_inc = -1e300, worst_track = 0.0, worst_z = 0.0, u_peak = 0.0, z_peak = 0.0;
  int bad_qp = 0, tubes = 0;
  std::string failure;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ClosedLoopLog log;
    try {
      log = run_closedloop(plant, c, goals, seed);
    } catch (const Error& e) {
      ok = false;
      failure += " seed " + std::to_string(seed) + ": " + e.what();
      continue;
    }
    for (size_t k = 0; k < log.size(); ++k) {
      if (k > 0 && (log.status[k] != linopt::SolveStatus::Optimal || log.fallback[k])) ++bad_qp;
      u_peak = std::max(u_peak, std::abs(log.u[k]));
      z_peak = std::max(z_peak, std::abs(log.z[k]));
      if (k > 0 && log.goal[k] == log.goal[k - 1]) worst_inc = std::max(worst_inc, log.cost[k] - log.cost[k - 1]);
    }
    tubes += log.tube_violations();
    if (!log.constraints_ok(c.cfg.u_min, c.cfg.u_max, c.cfg.z_min, c.cfg.z_max, 0.0)) ok = false;
    for (size_t s = 0; s < cfg.closedloop.goals.size(); ++s) {
      const size_t k = (s + 1) * static_cast<size_t>(seg) - 1;
      const double target = log.goal_feasible[k];
      worst_track = std::max(worst_track, std::abs(log.zbar0[k] - target));
      worst_z = std::max(worst_z, std::abs(log.z[k] - target) - radius);
    }
  }
  ok = ok && bad_qp == 0 && worst_inc <= 1e-6 && worst_track <= 1e-3 && worst_z <= 1e-3;
  std::ostringstream d;
  d << "10 seeds × " << goals.size() << " steps; non-optimal QPs " << bad_qp << ", max |u| " << fmt(u_peak)
    << ", max |z| " << fmt(z_peak) << ", max J increase " << fmt(worst_inc, 3) << ", max |z̄₀ − target| "
    << fmt(worst_track, 3) << ", max |z − target| − " << fmt(radius) << " = " << fmt(worst_z, 3)
    << ", tube misses " << tubes << ", feasible target for 12: " << fmt(feasible_goal(12.0, c.refs, c.sets, c.eps), 7)
    << failure;
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 9. Exhaustive grid search on a scalar plant.

MultiStepModel toy_model(int p, const VectorXd& theta) {
  MultiStepModel m;
  m.o = 1;
  m.p = p;
  m.theta = theta;
  m.tau_hat = 1.0;
  m.tau_lower = 1.0;
  m.epsilon_hat = 0.1;
  return m;
}

Outcome qp_oracle() {
  const double a = 0.8, b = 0.4;
  PerturbedSSModel ss = realize(toy_model(1, Eigen::Vector2d(a, b)));
  std::vector<MultiStepModel> models{toy_model(1, iterated_theta(ss, 1))};
  ControllerConfig cfg;
  cfg.horizon = 1;
  cfg.r0 = 0.1;
  cfg.r_step = 0.05;
  cfg.u_min = -1.0;
  cfg.u_max = 1.0;
  cfg.z_min = -5.0;
  cfg.z_max = 5.0;
  const RobustController ctrl = synthesize_controller(ss, models, 2.0, cfg);
  const Polytope& o = ctrl.terminal.set;

  struct Case {
    double x_hat, goal;
  };
  const std::vector<Case> cases{{0.3, 3.0}, {-0.5, 1.0}, {0.0, -2.0}, {1.2, 0.4}, {-2.0, -4.0}};
  double worst = 0.0, lowest = 1e300, fit_error = 0.0;
  long grid_points = 0;
  for (const auto& cs : cases) {
    ControllerState st = ControllerState::at_rest(1);
    st.x_hat = VectorXd::Constant(1, cs.x_hat);
    st.z_goal = cs.goal;
    mpc_step(st, ctrl);
    const double j_qp = st.last->cost;
    // With w̄ = 0 the nominal state equals the estimate; the decision is
    // (u0, u1, z_ref). J is quadratic in it, so ten evaluations of the cost
    // definition fix it exactly; the fit is checked on random points.
    const auto cost = [&](double u0, double u1, double zr) {
      return evaluate_cost(ctrl, VectorXd::Constant(1, cs.x_hat), Eigen::Vector2d(u0, u1), zr, cs.goal);
    };
    const auto basis = [](double u0, double u1, double zr) {
      Eigen::Matrix<double, 10, 1> f;
      f << 1, u0, u1, zr, u0 * u0, u1 * u1, zr * zr, u0 * u1, u0 * zr, u1 * zr;
      return f;
    };
    Eigen::Matrix<double, 10, 10> vand;
    Eigen::Matrix<double, 10, 1> vals;
    const double pts[10][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {-1, 0, 0},
                               {0, -1, 0}, {0, 0, -1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};
    for (int r = 0; r < 10; ++r) {
      vand.row(r) = basis(pts[r][0], pts[r][1], pts[r][2]).transpose();
      vals[r] = cost(pts[r][0], pts[r][1], pts[r][2]);
    }
    const Eigen::Matrix<double, 10, 1> q = vand.fullPivLu().solve(vals);
    std::uniform_real_distribution<double> ud(-3.0, 3.0);
    std::mt19937_64 rng(5);
    for (int r = 0; r < 50; ++r) {
      const double u0 = ud(rng), u1 = ud(rng), zr = ud(rng);
      fit_error = std::max(fit_error, std::abs(q.dot(basis(u0, u1, zr)) - cost(u0, u1, zr)) /
                                          std::max(1.0, std::abs(cost(u0, u1, zr))));
    }

    // Each variable spans its own range end to end with spacing ≤ 1e-3: u over
    // the input box, z_ref over the projection of the terminal set.
    struct Lattice {
      double lo, h;
      long n;
      double at(long i) const { return lo + h * static_cast<double>(i); }
    };
    const auto lattice = [](double lo, double hi) {
      const long n = static_cast<long>(std::ceil((hi - lo) / 1e-3));
      return Lattice{lo, (hi - lo) / static_cast<double>(n), n};
    };
    const Lattice ug = lattice(ctrl.sets.u_lo, ctrl.sets.u_hi);
    const Lattice zg = lattice(-*o.support(-Eigen::Vector2d::UnitY()), *o.support(Eigen::Vector2d::UnitY()));
    std::vector<double> u_grid;
    for (long i = 0; i <= ug.n; ++i) u_grid.push_back(ug.at(i));
    double j_grid = std::numeric_limits<double>::infinity();
    const bool x0_ok = cs.x_hat <= ctrl.sets.z_hi && cs.x_hat >= ctrl.sets.z_lo;
    for (double u0 : u_grid) {
      const double x1 = a * cs.x_hat + b * u0;
      if (!x0_ok || x1 > ctrl.sets.z_hi || x1 < ctrl.sets.z_lo) continue;
      for (double u1 : u_grid) {
        const double x2 = a * x1 + b * u1;
        // z_ref interval of the terminal-set slice at x2
        double lo = -1e6, hi = 1e6;
        for (Eigen::Index r = 0; r < o.rows(); ++r) {
          const double gx = o.G(r, 0), gz = o.G(r, 1), rhs = o.h[r] - gx * x2;
          if (gz > 1e-14) hi = std::min(hi, rhs / gz);
          else if (gz < -1e-14) lo = std::max(lo, rhs / gz);
          else if (rhs < -1e-12) lo = 1e7;
        }
        if (lo > hi) continue;
        // Convex in z_ref: the best lattice point neighbours the unconstrained minimizer.
        const long i_lo = std::max(0L, static_cast<long>(std::ceil((lo - zg.lo) / zg.h - 1e-9)));
        const long i_hi = std::min(zg.n, static_cast<long>(std::floor((hi - zg.lo) / zg.h + 1e-9)));
        if (i_lo > i_hi) continue;
        const double c2 = q[6], c1 = q[3] + q[8] * u0 + q[9] * u1;
        const long i_star = static_cast<long>(std::floor((-c1 / (2.0 * c2) - zg.lo) / zg.h));
        for (long i : {std::clamp(i_star, i_lo, i_hi), std::clamp(i_star + 1, i_lo, i_hi)}) {
          const double zr = zg.at(i);
          if (o.violation(Eigen::Vector2d(x2, zr)) > 1e-12) continue;
          j_grid = std::min(j_grid, q.dot(basis(u0, u1, zr)));
          ++grid_points;
        }
      }
    }
    worst = std::max(worst, std::abs(j_grid - j_qp));
    lowest = std::min(lowest, j_grid - j_qp);
  }
  const bool ok = worst <= 5e-3 && lowest >= -1e-7 && fit_error <= 1e-9;
  return {ok, std::to_string(cases.size()) + " states, " + std::to_string(grid_points) +
                  " grid candidates at 1e-3; max |J_grid − J_qp| " + fmt(worst, 3) + " (limit 5e-3), min J_grid − J_qp " +
                  fmt(lowest, 3) + ", cost-fit error " + fmt(fit_error, 3)};
}

// ---------------------------------------------------------------------------
// 10. Two full pipeline runs with the same seed.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(Context& ctx) {
  const fs::path root = fs::temp_directory_path() / "lbmpc_acceptance_determinism";
  fs::remove_all(root);
  const auto cfg = ctx.config(1);
  cmd_pipeline(cfg, root / "a", 1);
  cmd_pipeline(cfg, root / "b", 2);
  int files = 0, differ = 0;
  std::string names;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    ++files;
    const fs::path other = root / "b" / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
      ++differ;
      names += " " + entry.path().filename().string();
    }
  }
  return {files > 0 && differ == 0,
          std::to_string(files) + " artifacts compared (1 vs 2 workers), " + std::to_string(differ) + " differ" + names};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  Context ctx;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"lambda convergence", [&] { return lambda_convergence(ctx); }},
      {"oracle bound soundness", [] { return oracle_bound(); }},
      {"disturbance-bound improvement", [&] { return disturbance_improvement(ctx); }},
      {"bound ordering", [&] { return bound_ordering(ctx); }},
      {"held-out guarantee", [&] { return heldout_guarantee(ctx); }},
      {"synthesis certificates", [&] { return synthesis_certificates(ctx); }},
      {"set validity", [&] { return set_validity(ctx); }},
      {"closed loop", [&] { return closed_loop(ctx); }},
      {"small-instance QP oracle", [] { return qp_oracle(); }},
      {"determinism", [&] { return determinism(ctx); }},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !r.pass;
    std::printf("[%s] %d %s: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed;
}
