#include "lbmpc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <thread>

#include "lbmpc/error.hpp"

namespace lbmpc {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::Config, path + ": " + what);
}

std::vector<int> integers(const JsonFields& f, const std::string& key, const std::vector<int>& fallback) {
  if (!f.has(key)) return fallback;
  const auto v = f.numbers(key, {});
  std::vector<int> out;
  for (double x : v) {
    if (x != std::floor(x) || std::abs(x) > 1e9) config_error(f.path(key), "expected integers");
    out.push_back(static_cast<int>(x));
  }
  return out;
}

PlantConfig plant_from_json(const Json& j) {
  JsonFields f(j, "plant");
  PlantConfig c;
  c.ts = f.number("ts", c.ts);
  c.v_bar = f.number("v_bar", c.v_bar);
  c.d_bar = f.number("d_bar", c.d_bar);
  c.n_samples = f.integer("n_samples", c.n_samples);
  c.hold_steps = f.integer("hold_steps", c.hold_steps);
  c.levels = f.numbers("levels", c.levels);
  c.seed = f.unsigned_integer("seed", c.seed);
  if (f.has("transfer_function")) {
    JsonFields tf(f.child("transfer_function"), f.path("transfer_function"));
    c.tf = ContinuousTF{tf.numbers("num", {}), tf.numbers("den", {})};
    if (c.tf->num.empty() || c.tf->den.size() <= c.tf->num.size())
      config_error(f.path("transfer_function"), "need a strictly proper num/den pair");
    tf.finish();
  }
  f.finish();
  return c;
}

IdentificationConfig identification_from_json(const Json& j) {
  JsonFields f(j, "identification");
  IdentificationConfig c;
  c.order = f.integer("order", c.order);
  c.horizon = f.integer("horizon", c.horizon);
  c.alpha = f.number("alpha", c.alpha);
  c.gamma = f.number("gamma", c.gamma);
  c.eps_floor = f.number("eps_floor", c.eps_floor);
  c.omega_magnitude = f.number("omega_magnitude", c.omega_magnitude);
  c.fractions = f.numbers("fractions", c.fractions);
  c.fraction_steps = integers(f, "fraction_steps", c.fraction_steps);
  f.finish();
  return c;
}

ClosedLoopConfig closedloop_from_json(const Json& j) {
  JsonFields f(j, "closedloop");
  ClosedLoopConfig c;
  c.goals = f.numbers("goals", c.goals);
  c.segment_steps = f.integer("segment_steps", c.segment_steps);
  c.seed = f.unsigned_integer("seed", c.seed);
  f.finish();
  return c;
}

std::uint64_t fnv1a(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 1099511628211ull;
  }
  return h;
}

void ensure_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out.string() + ": " + ec.message());
}

}  // namespace

void PipelineConfig::validate() const {
  const auto bad = [](const std::string& path, const std::string& what) { config_error(path, what); };
  if (!(plant.ts > 0)) bad("plant.ts", "must be positive");
  if (!(plant.v_bar >= 0)) bad("plant.v_bar", "must be non-negative");
  if (!(plant.d_bar >= 0)) bad("plant.d_bar", "must be non-negative");
  if (plant.n_samples < 2) bad("plant.n_samples", "need at least two samples");
  if (plant.hold_steps < 1) bad("plant.hold_steps", "must be at least 1");
  if (plant.levels.empty()) bad("plant.levels", "must not be empty");
  const auto& id = identification;
  if (id.order < 1) bad("identification.order", "must be at least 1");
  if (id.horizon < 1) bad("identification.horizon", "must be at least 1");
  if (!(id.alpha > 1)) bad("identification.alpha", "must exceed 1");
  if (!(id.gamma > 1)) bad("identification.gamma", "must exceed 1");
  if (!(id.eps_floor > 0)) bad("identification.eps_floor", "must be positive");
  if (!(id.omega_magnitude > 0)) bad("identification.omega_magnitude", "must be positive");
  for (double f : id.fractions)
    if (!(f > 0 && f <= 1)) bad("identification.fractions", "entries must lie in (0, 1]");
  if (!std::is_sorted(id.fractions.begin(), id.fractions.end()))
    bad("identification.fractions", "must be sorted ascending");
  for (int p : id.fraction_steps)
    if (p < 1 || p > id.horizon) bad("identification.fraction_steps", "entries must lie in [1, horizon]");
  if (control.horizon < 0) bad("control.horizon", "must be non-negative");
  if (control.horizon > id.horizon) bad("control.horizon", "exceeds identification.horizon");
  if (closedloop.goals.empty()) bad("closedloop.goals", "must not be empty");
  if (closedloop.segment_steps < 1) bad("closedloop.segment_steps", "must be at least 1");
  for (double g : closedloop.goals)
    if (!std::isfinite(g)) bad("closedloop.goals", "must be finite");
}

PipelineConfig config_from_json(const Json& j) {
  JsonFields f(j, "config");
  PipelineConfig c;
  if (f.has("plant")) c.plant = plant_from_json(f.child("plant"));
  if (f.has("identification")) c.identification = identification_from_json(f.child("identification"));
  if (f.has("control")) c.control = control_config_from_json(f.child("control"), "control");
  if (f.has("closedloop")) c.closedloop = closedloop_from_json(f.child("closedloop"));
  c.output_dir = f.string("output_dir", c.output_dir.string());
  f.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) { return config_from_json(read_json(path)); }

Json to_json(const PipelineConfig& c) {
  Json j;
  Json p;
  p["ts"] = c.plant.ts;
  p["v_bar"] = c.plant.v_bar;
  p["d_bar"] = c.plant.d_bar;
  p["n_samples"] = c.plant.n_samples;
  p["hold_steps"] = c.plant.hold_steps;
  p["levels"] = c.plant.levels;
  p["seed"] = c.plant.seed;
  if (c.plant.tf) p["transfer_function"] = {{"num", c.plant.tf->num}, {"den", c.plant.tf->den}};
  j["plant"] = std::move(p);
  Json id;
  id["order"] = c.identification.order;
  id["horizon"] = c.identification.horizon;
  id["alpha"] = c.identification.alpha;
  id["gamma"] = c.identification.gamma;
  id["eps_floor"] = c.identification.eps_floor;
  id["omega_magnitude"] = c.identification.omega_magnitude;
  id["fractions"] = c.identification.fractions;
  id["fraction_steps"] = c.identification.fraction_steps;
  j["identification"] = std::move(id);
  j["control"] = to_json(c.control);
  j["closedloop"] = {{"goals", c.closedloop.goals},
                     {"segment_steps", c.closedloop.segment_steps},
                     {"seed", c.closedloop.seed}};
  j["output_dir"] = c.output_dir.string();
  return j;
}

// ---------------------------------------------------------------------------

TruePlant make_plant(const PlantConfig& cfg) {
  TruePlant plant = cfg.tf ? discretize_plant(*cfg.tf, cfg.ts) : discretize_plant(cfg.ts);
  plant.v_bar = cfg.v_bar;
  plant.d_bar = cfg.d_bar;
  return plant;
}

Trajectory collect_data(const PlantConfig& cfg) {
  const TruePlant plant = make_plant(cfg);
  return simulate_openloop(plant, excitation_input(cfg.n_samples, cfg.hold_steps, cfg.levels, cfg.seed), cfg.seed);
}

void parallel_for(int n, int jobs, const std::function<void(int)>& work) {
  std::vector<std::exception_ptr> errors(static_cast<size_t>(std::max(n, 0)));
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        work(i);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, std::max(n, 1));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

IdentificationResult identify_all(const Trajectory& traj, const IdentificationConfig& cfg, double d_bar, int jobs) {
  const int h = cfg.horizon;
  const IdentifyOptions opt{d_bar, cfg.alpha, cfg.gamma, cfg.eps_floor, cfg.omega_magnitude};
  std::vector<StepIdentification> steps(static_cast<size_t>(h));
  parallel_for(h, jobs, [&](int i) {
    steps[static_cast<size_t>(i)] = identify_step(build_regressors(traj, cfg.order, i + 1), opt);
  });

  IdentificationResult out;
  for (const auto& s : steps) out.models.push_back(s.model);
  out.realization = realize(out.models.front());
  out.realization.d_bar = d_bar;
  out.tau_iterated.assign(static_cast<size_t>(h), 0.0);
  parallel_for(h, jobs, [&](int i) {
    const auto& s = steps[static_cast<size_t>(i)];
    out.tau_iterated[static_cast<size_t>(i)] = tau_hat_for(iterated_theta(out.realization, i + 1), s.fps, s.dataset, cfg.gamma);
  });
  out.realization.w_bar = estimate_wbar(out.realization, out.tau_iterated, d_bar);
  return out;
}

std::vector<double> lambda_curve(const Trajectory& traj, int order, int p, const std::vector<double>& fractions,
                                 double d_bar, double omega_magnitude) {
  const RegressorDataset ds = build_regressors(traj, order, p);
  const ParameterBox omega = ParameterBox::symmetric(ds.dim(), omega_magnitude);
  std::vector<double> out;
  for (double f : fractions) out.push_back(estimate_lambda(subsample_fraction(ds, f), omega, d_bar).lambda);
  return out;
}

double baseline_bound(const PerturbedSSModel& ss, const MultiStepModel& one_step, int p) {
  return iterated_error_bound(ss, one_step.tau_hat + ss.d_bar, ss.d_bar, p);
}

double horizon_gain(const PipelineConfig& cfg, const IdentificationResult& id) {
  const int h = std::max(cfg.control.horizon, 1);
  return select_gain(cfg.control.gain_source, id.realization, id.models.at(static_cast<size_t>(h - 1)));
}

// ---------------------------------------------------------------------------

void cmd_simulate_data(const PipelineConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  const TruePlant plant = make_plant(cfg.plant);
  const Trajectory traj = collect_data(cfg.plant);
  save_trajectory_csv(traj, out / "trajectory.csv");

  // Noise-free unit step from rest.
  const int n_step = static_cast<int>(std::ceil(15.0 / cfg.plant.ts));
  const std::vector<double> ones(static_cast<size_t>(n_step), 1.0), zeros(static_cast<size_t>(n_step), 0.0);
  const Trajectory step = simulate_openloop(plant, ones, zeros, zeros);
  CsvTable fig1;
  fig1.header = {"k", "t", "u", "z"};
  for (int k = 0; k < n_step; ++k)
    fig1.rows.push_back({double(k), k * cfg.plant.ts, 1.0, step.z[static_cast<size_t>(k)]});
  write_csv(fig1, out / "fig1_step.csv");

  Json m;
  m["seed"] = cfg.plant.seed;
  m["ts"] = cfg.plant.ts;
  m["v_bar"] = cfg.plant.v_bar;
  m["d_bar"] = cfg.plant.d_bar;
  m["n_samples"] = cfg.plant.n_samples;
  m["hold_steps"] = cfg.plant.hold_steps;
  m["levels"] = cfg.plant.levels;
  m["discretization"] = "zero-order hold";
  m["noise"] = "uniform on [-bound, bound]";
  m["plant_theta"] = to_json(plant.theta);
  m["plant_dc_gain"] = plant.dc_gain();
  m["plant_pole_radius"] = plant.pole_radius();
  m["trajectory_fnv1a64"] = fnv1a(out / "trajectory.csv");
  write_json(m, out / "data_manifest.json");
}

void cmd_identify(const PipelineConfig& cfg, const fs::path& trajectory_csv, const fs::path& out, int jobs) {
  ensure_dir(out);
  const auto& ic = cfg.identification;
  const Trajectory traj = load_trajectory_csv(trajectory_csv, cfg.plant.ts);
  const IdentificationResult id = identify_all(traj, ic, cfg.plant.d_bar, jobs);
  const PerturbedSSModel& ss = id.realization;
  const double mu_hat = horizon_gain(cfg, id);

  Json models = Json::array();
  for (size_t i = 0; i < id.models.size(); ++i) {
    Json mj = to_json(id.models[i]);
    mj["tau_iterated"] = id.tau_iterated[i];
    models.push_back(std::move(mj));
  }
  Json mj;
  mj["models"] = std::move(models);
  mj["realization"] = realization_to_json(ss, mu_hat);
  write_json(mj, out / "models.json");
  write_json(realization_to_json(ss, mu_hat), out / "realization.json");

  CsvTable bounds, fig3, fig4;
  bounds.header = {"p", "lambda", "eps_hat", "tau_nominal", "tau_iterated", "tau_lower", "bound_learned", "bound_baseline"};
  fig3.header = {"p", "tau_hat", "tau_iterated", "bound_learned"};
  fig4.header = {"p", "bound_learned", "bound_baseline"};
  for (size_t i = 0; i < id.models.size(); ++i) {
    const auto& m = id.models[i];
    const int p = m.p;
    const double learned = iterated_error_bound(ss, ss.w_bar, ss.d_bar, p);
    const double base = baseline_bound(ss, id.models.front(), p);
    bounds.rows.push_back({double(p), m.lambda, m.epsilon_hat, m.tau_hat, id.tau_iterated[i], m.tau_lower, learned, base});
    fig3.rows.push_back({double(p), m.tau_hat, id.tau_iterated[i], learned});
    fig4.rows.push_back({double(p), learned, base});
  }
  write_csv(bounds, out / "bounds.csv");
  write_csv(fig3, out / "fig3_bounds.csv");
  write_csv(fig4, out / "fig4_bounds.csv");

  const auto& steps = ic.fraction_steps;
  std::vector<std::vector<double>> curves(steps.size());
  parallel_for(static_cast<int>(steps.size()), jobs, [&](int i) {
    curves[static_cast<size_t>(i)] = lambda_curve(traj, ic.order, steps[static_cast<size_t>(i)], ic.fractions,
                                                  cfg.plant.d_bar, ic.omega_magnitude);
  });
  CsvTable fig2;
  fig2.header = {"fraction"};
  for (int p : steps) fig2.header.push_back("lambda_p" + std::to_string(p));
  for (size_t r = 0; r < ic.fractions.size(); ++r) {
    std::vector<double> row{ic.fractions[r]};
    for (const auto& c : curves) row.push_back(c[r]);
    fig2.rows.push_back(std::move(row));
  }
  write_csv(fig2, out / "fig2_lambda.csv");
}

void cmd_synthesize(const PipelineConfig& cfg, const fs::path& models_json, const fs::path& out) {
  ensure_dir(out);
  const Json j = read_json(models_json);
  JsonFields f(j, "models_file");
  double mu_hat = 0.0;
  const PerturbedSSModel ss = realization_from_json(f.child("realization"), &mu_hat);
  const Json& jm = f.child("models");
  if (!jm.is_array()) config_error(f.path("models"), "expected an array");
  std::vector<MultiStepModel> models;
  for (size_t i = 0; i < jm.size(); ++i)
    models.push_back(model_from_json(jm[i], f.path("models") + "[" + std::to_string(i) + "]"));
  f.finish();
  if (static_cast<int>(models.size()) < cfg.control.horizon)
    throw Error(ErrorKind::Config, "models_file: fewer models than control.horizon");
  models.resize(static_cast<size_t>(cfg.control.horizon));
  const RobustController c = synthesize_controller(ss, models, mu_hat, cfg.control);
  write_json(controller_manifest(c, models), out / "controller.json");
}

void cmd_closedloop(const PipelineConfig& cfg, const fs::path& controller_json, const fs::path& out) {
  ensure_dir(out);
  const RobustController c = controller_from_manifest(read_json(controller_json));
  const TruePlant plant = make_plant(cfg.plant);
  const auto goals = piecewise_goals(cfg.closedloop.goals, cfg.closedloop.segment_steps);
  const ClosedLoopLog log = run_closedloop(plant, c, goals, cfg.closedloop.seed);

  CsvTable cl, fig5;
  cl.header = {"k", "y", "z", "u", "z_ref_opt", "zbar0_opt", "J", "qp_status", "qp_iters"};
  fig5.header = {"k",     "t",     "goal",  "goal_feasible", "z",         "y",         "u",         "z_ref",
                 "zbar0", "u_min", "u_max", "z_min",         "z_max",     "u_tight_lo", "u_tight_hi", "z_tight_lo",
                 "z_tight_hi"};
  int nonoptimal = 0, fallbacks = 0;
  double max_increase = 0.0;
  for (size_t k = 0; k < log.size(); ++k) {
    cl.rows.push_back({double(k), log.y[k], log.z[k], log.u[k], log.z_ref[k], log.zbar0[k], log.cost[k],
                       double(static_cast<int>(log.status[k])), double(log.iterations[k])});
    fig5.rows.push_back({double(k), k * cfg.plant.ts, log.goal[k], log.goal_feasible[k], log.z[k], log.y[k], log.u[k],
                         log.z_ref[k], log.zbar0[k], c.cfg.u_min, c.cfg.u_max, c.cfg.z_min, c.cfg.z_max, c.sets.u_lo,
                         c.sets.u_hi, c.sets.z_lo, c.sets.z_hi});
    nonoptimal += log.status[k] != linopt::SolveStatus::Optimal;
    fallbacks += log.fallback[k];
    if (k > 0 && log.goal[k] == log.goal[k - 1]) max_increase = std::max(max_increase, log.cost[k] - log.cost[k - 1]);
  }
  write_csv(cl, out / "closedloop.csv");
  write_csv(fig5, out / "fig5_closedloop.csv");

  const bool constraints = log.constraints_ok(c.cfg.u_min, c.cfg.u_max, c.cfg.z_min, c.cfg.z_max);
  const int tubes = log.tube_violations();
  Json s;
  s["steps"] = log.size();
  s["seed"] = cfg.closedloop.seed;
  s["constraints_satisfied"] = constraints;
  s["tube_violations"] = tubes;
  s["non_optimal_steps"] = nonoptimal;
  s["fallback_steps"] = fallbacks;
  s["max_cost_increase_within_segment"] = max_increase;
  Json seg = Json::array();
  for (size_t i = 0; i < cfg.closedloop.goals.size(); ++i) {
    const size_t k = (i + 1) * static_cast<size_t>(cfg.closedloop.segment_steps) - 1;
    seg.push_back({{"goal", log.goal[k]}, {"goal_feasible", log.goal_feasible[k]}, {"zbar0_end", log.zbar0[k]},
                   {"z_end", log.z[k]}});
  }
  s["segments"] = std::move(seg);
  write_json(s, out / "summary.json");

  if (!constraints) throw Error(ErrorKind::Numerical, "closed loop left the constraint set");
  if (tubes > 0) throw Error(ErrorKind::Numerical, std::to_string(tubes) + " tube containment violations");
}

void cmd_pipeline(const PipelineConfig& cfg, const fs::path& out, int jobs) {
  ensure_dir(out);
  write_json(to_json(cfg), out / "config_resolved.json");
  cmd_simulate_data(cfg, out);
  cmd_identify(cfg, out / "trajectory.csv", out, jobs);
  cmd_synthesize(cfg, out / "models.json", out);
  cmd_closedloop(cfg, out / "controller.json", out);
}

}  // namespace lbmpc
