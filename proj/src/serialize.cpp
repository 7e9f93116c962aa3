#include "lbmpc/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lbmpc/error.hpp"

namespace lbmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Json to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json to_json(const VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Json to_json(const Eigen::RowVectorXd& v) { return to_json(VectorXd(v.transpose())); }

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::Config, path + ": " + what);
}

// what() without the "<kind>: " prefix.
std::string bare_message(const Error& e) {
  const std::string w = e.what();
  const size_t n = to_string(e.kind()).size() + 2;
  return w.size() > n ? w.substr(n) : w;
}

double as_number(const Json& j, const std::string& path) {
  if (!j.is_number()) config_error(path, "expected a number");
  return j.get<double>();
}

}  // namespace

MatrixXd matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) config_error(path, "expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::string rp = path + "[" + std::to_string(i) + "]";
    const Json& row = j[static_cast<size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) config_error(rp, "ragged matrix row");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(i, c) = as_number(row[static_cast<size_t>(c)], rp + "[" + std::to_string(c) + "]");
  }
  return m;
}

VectorXd vector_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) config_error(path, "expected an array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = as_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

// ---------------------------------------------------------------------------

JsonFields::JsonFields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) config_error(path_, "expected an object");
}

bool JsonFields::has(const std::string& key) const {
  seen_.push_back(key);
  return j_.contains(key);
}

const Json& JsonFields::at(const std::string& key) const {
  seen_.push_back(key);
  if (!j_.contains(key)) config_error(path(key), "missing field");
  return j_.at(key);
}

double JsonFields::number(const std::string& key) const { return as_number(at(key), path(key)); }

double JsonFields::number(const std::string& key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

int JsonFields::integer(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const Json& v = at(key);
  if (!v.is_number_integer()) config_error(path(key), "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) config_error(path(key), "integer out of range");
  return static_cast<int>(x);
}

std::uint64_t JsonFields::unsigned_integer(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const Json& v = at(key);
  if (!v.is_number_unsigned()) config_error(path(key), "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string JsonFields::string(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  const Json& v = at(key);
  if (!v.is_string()) config_error(path(key), "expected a string");
  return v.get<std::string>();
}

std::vector<double> JsonFields::numbers(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  const VectorXd v = vector_from_json(at(key), path(key));
  return {v.data(), v.data() + v.size()};
}

std::pair<double, double> JsonFields::interval(const std::string& key, std::pair<double, double> fallback) const {
  if (!has(key)) return fallback;
  const auto v = numbers(key, {});
  if (v.size() != 2) config_error(path(key), "expected [lo, hi]");
  if (!(v[0] < v[1])) config_error(path(key), "interval must satisfy lo < hi");
  return {v[0], v[1]};
}

const Json& JsonFields::child(const std::string& key) const { return at(key); }

void JsonFields::finish() const {
  for (auto it = j_.begin(); it != j_.end(); ++it)
    if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) config_error(path(it.key()), "unknown field");
}

// ---------------------------------------------------------------------------

Json to_json(const MultiStepModel& m) {
  Json j;
  j["p"] = m.p;
  j["o"] = m.o;
  j["theta"] = to_json(m.theta);
  j["lambda"] = m.lambda;
  j["epsilon_hat"] = m.epsilon_hat;
  j["tau_lower"] = m.tau_lower;
  j["tau_hat"] = m.tau_hat;
  j["alpha"] = m.alpha;
  j["gamma"] = m.gamma;
  j["n_samples"] = m.n_samples;
  return j;
}

MultiStepModel model_from_json(const Json& j, const std::string& path) {
  JsonFields f(j, path);
  MultiStepModel m;
  m.p = f.integer("p", 0);
  m.o = f.integer("o", 0);
  m.theta = vector_from_json(f.child("theta"), f.path("theta"));
  m.lambda = f.number("lambda");
  m.epsilon_hat = f.number("epsilon_hat");
  m.tau_lower = f.number("tau_lower");
  m.tau_hat = f.number("tau_hat");
  m.alpha = f.number("alpha");
  m.gamma = f.number("gamma");
  m.n_samples = f.integer("n_samples", 0);
  f.has("tau_iterated");  // written alongside by the identification stage
  f.finish();
  try {
    m.validate();
  } catch (const Error& e) {
    config_error(path, bare_message(e));
  }
  return m;
}

Json realization_to_json(const PerturbedSSModel& ss, double mu_hat) {
  Json j;
  j["o"] = ss.o;
  j["A"] = to_json(ss.A);
  j["B1"] = to_json(ss.B1);
  j["M1"] = to_json(ss.M1);
  j["C"] = to_json(ss.C);
  j["w_bar"] = ss.w_bar;
  j["d_bar"] = ss.d_bar;
  j["mu_hat"] = mu_hat;
  return j;
}

PerturbedSSModel realization_from_json(const Json& j, double* mu_hat) {
  JsonFields f(j, "realization");
  PerturbedSSModel ss;
  ss.o = f.integer("o", 0);
  ss.A = matrix_from_json(f.child("A"), f.path("A"));
  ss.B1 = vector_from_json(f.child("B1"), f.path("B1"));
  ss.M1 = vector_from_json(f.child("M1"), f.path("M1"));
  ss.C = vector_from_json(f.child("C"), f.path("C")).transpose();
  ss.w_bar = f.number("w_bar");
  ss.d_bar = f.number("d_bar");
  const double mu = f.number("mu_hat");
  if (mu_hat) *mu_hat = mu;
  f.finish();
  try {
    ss.validate();
  } catch (const Error& e) {
    config_error("realization", bare_message(e));
  }
  return ss;
}

Json to_json(const Zonotope& z) {
  Json j;
  j["center"] = to_json(z.center);
  j["generators"] = to_json(z.generators);
  return j;
}

Json to_json(const Polytope& p) {
  Json j;
  j["G"] = to_json(p.G);
  j["h"] = to_json(p.h);
  return j;
}

Json to_json(const ControllerConfig& c) {
  Json j;
  j["horizon"] = c.horizon;
  j["q"] = c.q_weights();
  j["r"] = c.r_weights();
  j["q_backoff"] = c.q_backoff;
  j["max_backoffs"] = c.max_backoffs;
  j["lqr_state_weight"] = c.lqr_state_weight;
  j["lqr_input_weight"] = c.lqr_input_weight;
  j["observer_disturbance_weight"] = c.observer_disturbance_weight;
  j["observer_noise_weight"] = c.observer_noise_weight;
  j["u_bounds"] = {c.u_min, c.u_max};
  j["z_bounds"] = {c.z_min, c.z_max};
  j["tail_tol"] = c.tail_tol;
  j["eps_rel"] = c.eps_rel;
  j["row_tol"] = c.row_tol;
  j["moas_max_steps"] = c.moas_max_steps;
  j["sigma_factor"] = c.sigma_factor;
  j["sigma_floor"] = c.sigma_floor;
  j["t_max"] = c.t_max;
  j["gain_source"] = to_string(c.gain_source);
  return j;
}

ControllerConfig control_config_from_json(const Json& j, const std::string& path) {
  JsonFields f(j, path);
  ControllerConfig c;
  c.horizon = f.integer("horizon", c.horizon);
  c.q = f.numbers("q", {});
  c.r = f.numbers("r", {});
  c.q0 = f.number("q0", c.q0);
  c.q_rest = f.number("q_rest", c.q_rest);
  c.r0 = f.number("r0", c.r0);
  c.r_step = f.number("r_step", c.r_step);
  c.q_backoff = f.number("q_backoff", c.q_backoff);
  c.max_backoffs = f.integer("max_backoffs", c.max_backoffs);
  c.lqr_state_weight = f.number("lqr_state_weight", c.lqr_state_weight);
  c.lqr_input_weight = f.number("lqr_input_weight", c.lqr_input_weight);
  c.observer_disturbance_weight = f.number("observer_disturbance_weight", c.observer_disturbance_weight);
  c.observer_noise_weight = f.number("observer_noise_weight", c.observer_noise_weight);
  std::tie(c.u_min, c.u_max) = f.interval("u_bounds", {c.u_min, c.u_max});
  std::tie(c.z_min, c.z_max) = f.interval("z_bounds", {c.z_min, c.z_max});
  c.tail_tol = f.number("tail_tol", c.tail_tol);
  c.eps_rel = f.number("eps_rel", c.eps_rel);
  c.row_tol = f.number("row_tol", c.row_tol);
  c.moas_max_steps = f.integer("moas_max_steps", c.moas_max_steps);
  c.sigma_factor = f.number("sigma_factor", c.sigma_factor);
  c.sigma_floor = f.number("sigma_floor", c.sigma_floor);
  c.t_max = f.number("t_max", c.t_max);
  const std::string gs = f.string("gain_source", to_string(c.gain_source));
  if (gs != "horizon" && gs != "realization") config_error(f.path("gain_source"), "expected horizon or realization");
  c.gain_source = gain_source_from_string(gs);
  f.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    config_error(path, bare_message(e));
  }
  return c;
}

Json controller_manifest(const RobustController& c, const std::vector<MultiStepModel>& models) {
  Json j;
  Json inputs;
  inputs["realization"] = realization_to_json(c.ss, c.refs.mu_hat);
  Json ms = Json::array();
  for (int p = 0; p < c.cfg.horizon; ++p) ms.push_back(to_json(models.at(static_cast<size_t>(p))));
  inputs["models"] = std::move(ms);
  inputs["control"] = to_json(c.cfg);
  j["inputs"] = std::move(inputs);

  Json g;
  g["K"] = to_json(c.gains.K);
  g["L"] = to_json(c.gains.L);
  g["rho_control"] = c.gains.rho_control;
  g["rho_observer"] = c.gains.rho_observer;
  j["gains"] = std::move(g);

  Json r;
  r["mu_hat"] = c.refs.mu_hat;
  r["N"] = to_json(c.refs.N);
  r["eta"] = c.refs.eta;
  r["M2"] = c.refs.M2;
  r["steady_residual"] = c.refs.steady_residual;
  j["reference"] = std::move(r);

  Json w;
  w["Q"] = to_json(c.weights.Q);
  w["R"] = to_json(c.weights.R);
  w["t_scale"] = c.weights.t_scale;
  w["P"] = to_json(c.weights.P);
  w["sigma"] = c.weights.sigma;
  w["backoffs"] = c.weights.backoffs;
  j["weights"] = std::move(w);

  Json cert;
  cert["lyapunov_residual"] = c.weights.lyapunov_residual;
  cert["decrease_min_eig"] = c.weights.lmi_min_eig;
  cert["p_tilde_max_eig"] = c.weights.p_tilde;
  cert["sigma_margin"] = c.weights.sigma - c.weights.p_tilde;
  cert["r_cal_min"] = c.weights.r_cal_min;
  cert["tolerance"] = kCertificateTol;
  cert["terminal_observability_rank"] = c.terminal_observability_rank;
  j["certificates"] = std::move(cert);

  Json s;
  s["u_tight"] = {c.sets.u_lo, c.sets.u_hi};
  s["z_tight"] = {c.sets.z_lo, c.sets.z_hi};
  s["u_tightening"] = c.sets.u_tightening;
  s["z_tightening"] = c.sets.z_tightening;
  s["E_hat"] = to_json(c.sets.E_hat);
  s["E_hat_terms"] = c.sets.E_hat_info.terms;
  s["E_hat_tail_radius"] = c.sets.E_hat_info.tail_radius;
  s["E_bar"] = to_json(c.sets.E_bar);
  s["E_bar_terms"] = c.sets.E_bar_info.terms;
  s["E_bar_tail_radius"] = c.sets.E_bar_info.tail_radius;
  j["sets"] = std::move(s);

  Json t;
  t["eps"] = c.eps;
  t["t_star"] = c.terminal.t_star;
  t["pruned"] = c.terminal.pruned;
  t["set"] = to_json(c.terminal.set);
  j["terminal"] = std::move(t);
  return j;
}

RobustController controller_from_manifest(const Json& j) {
  if (!j.is_object() || !j.contains("inputs")) config_error("controller", "missing field inputs");
  JsonFields in(j.at("inputs"), "controller.inputs");
  double mu_hat = 0.0;
  const PerturbedSSModel ss = realization_from_json(in.child("realization"), &mu_hat);
  const Json& jm = in.child("models");
  if (!jm.is_array()) config_error(in.path("models"), "expected an array");
  std::vector<MultiStepModel> models;
  for (size_t i = 0; i < jm.size(); ++i)
    models.push_back(model_from_json(jm[i], in.path("models") + "[" + std::to_string(i) + "]"));
  const ControllerConfig cfg = control_config_from_json(in.child("control"), in.path("control"));
  in.finish();
  RobustController c = synthesize_controller(ss, models, mu_hat, cfg);

  // Guards against a manifest edited after synthesis.
  const auto same = [](const Json& a, const Json& b) { return a.dump() == b.dump(); };
  if (j.contains("gains") && !same(j["gains"]["K"], to_json(c.gains.K)))
    throw Error(ErrorKind::Config, "controller.gains.K does not match the re-synthesized gain");
  if (j.contains("weights") && !same(j["weights"]["P"], to_json(c.weights.P)))
    throw Error(ErrorKind::Config, "controller.weights.P does not match the re-synthesized weights");
  return c;
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace lbmpc
