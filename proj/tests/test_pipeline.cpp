#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "lbmpc/error.hpp"
#include "lbmpc/pipeline.hpp"

using namespace lbmpc;
namespace fs = std::filesystem;

namespace {

Json smoke_json() {
  return Json::parse(R"({
    "plant": {"ts": 0.1, "v_bar": 0.01, "d_bar": 0.02, "n_samples": 300, "hold_steps": 10, "seed": 3,
              "transfer_function": {"num": [2.0], "den": [1.0, 2.0]}},
    "identification": {"order": 1, "horizon": 4, "fractions": [0.25, 0.5, 1.0], "fraction_steps": [1, 4]},
    "control": {"horizon": 3, "r0": 1.0, "r_step": 0.5, "u_bounds": [-2, 2], "z_bounds": [-2, 2]},
    "closedloop": {"goals": [0, 0.5, 3], "segment_steps": 40, "seed": 3}
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lbmpc_test_pipeline_" + name);
  fs::remove_all(d);
  return d;
}

std::string config_error_of(const Json& j) {
  try {
    config_from_json(j);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    return e.what();
  }
  return "";
}

const char* kArtifacts[] = {"trajectory.csv", "data_manifest.json", "fig1_step.csv", "models.json",
                            "realization.json", "bounds.csv", "fig2_lambda.csv", "fig3_bounds.csv",
                            "fig4_bounds.csv", "controller.json", "closedloop.csv", "fig5_closedloop.csv",
                            "summary.json"};

}  // namespace

TEST_CASE("empty configuration gives the reference example") {
  const PipelineConfig c = config_from_json(Json::object());
  CHECK(c.plant.n_samples == 1000);
  CHECK(c.plant.hold_steps == 50);
  CHECK(c.identification.order == 4);
  CHECK(c.identification.horizon == 20);
  CHECK(c.control.horizon == 10);
  CHECK(c.control.u_min == -10.0);
  CHECK(c.control.z_max == 10.0);
  CHECK(c.closedloop.goals == std::vector<double>{0, 5, 12});
  CHECK(c.closedloop.segment_steps == 200);
}

TEST_CASE("shipped example configuration equals the defaults") {
  const fs::path p = fs::path(LBMPC_SOURCE_DIR) / "config" / "reference_example.json";
  CHECK(to_json(load_config(p)).dump() == to_json(config_from_json(Json::object())).dump());
}

TEST_CASE("resolved configuration round-trips") {
  const PipelineConfig c = config_from_json(smoke_json());
  CHECK(to_json(config_from_json(to_json(c))).dump() == to_json(c).dump());
}

TEST_CASE("configuration errors name the offending field") {
  Json j = smoke_json();
  j["control"]["bogus"] = 1;
  CHECK(config_error_of(j).find("control.bogus: unknown field") != std::string::npos);

  j = smoke_json();
  j["plant"]["n_samples"] = "many";
  CHECK(config_error_of(j).find("plant.n_samples: expected an integer") != std::string::npos);

  j = smoke_json();
  j["control"]["u_bounds"] = {3, -3};
  CHECK(config_error_of(j).find("control.u_bounds") != std::string::npos);

  j = smoke_json();
  j["control"]["horizon"] = 9;
  CHECK(config_error_of(j).find("control.horizon: exceeds identification.horizon") != std::string::npos);

  j = smoke_json();
  j["identification"]["alpha"] = 1.0;
  CHECK(config_error_of(j).find("identification.alpha") != std::string::npos);

  j = smoke_json();
  j["control"]["r"] = {1.0, 0.5, 2.0, 3.0};
  CHECK(config_error_of(j).find("control: input weights must increase") != std::string::npos);

  j = smoke_json();
  j["control"]["gain_source"] = "oracle";
  CHECK(config_error_of(j).find("control.gain_source") != std::string::npos);

  CHECK(config_error_of(Json::array()).find("config: expected an object") != std::string::npos);
}

TEST_CASE("unreadable inputs raise I/O or config errors") {
  CHECK_THROWS_AS(read_json("/nonexistent/lbmpc.json"), Error);
  const fs::path d = fresh_dir("badjson");
  fs::create_directories(d);
  std::ofstream(d / "bad.json") << "{ \"plant\": ";
  try {
    read_json(d / "bad.json");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure") {
  std::vector<int> hits(37, 0);
  parallel_for(37, 4, [&](int i) { hits[static_cast<size_t>(i)] += 1; });
  for (int h : hits) CHECK(h == 1);

  try {
    parallel_for(20, 3, [](int i) {
      if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "7");
  }
}

TEST_CASE("identification does not depend on the worker count") {
  const PipelineConfig c = config_from_json(smoke_json());
  const Trajectory traj = collect_data(c.plant);
  const auto a = identify_all(traj, c.identification, c.plant.d_bar, 1);
  const auto b = identify_all(traj, c.identification, c.plant.d_bar, 3);
  REQUIRE(a.models.size() == 4);
  for (size_t i = 0; i < a.models.size(); ++i) {
    CHECK(to_json(a.models[i]).dump() == to_json(b.models[i]).dump());
    CHECK(a.tau_iterated[i] == b.tau_iterated[i]);
  }
  CHECK(a.realization.w_bar == b.realization.w_bar);
  // the one-step model and its iterate coincide
  CHECK(a.tau_iterated[0] == doctest::Approx(a.models[0].tau_hat).epsilon(1e-12));
}

TEST_CASE("model and realization JSON round-trip exactly") {
  const PipelineConfig c = config_from_json(smoke_json());
  const auto id = identify_all(collect_data(c.plant), c.identification, c.plant.d_bar, 1);
  for (const auto& m : id.models) {
    const MultiStepModel back = model_from_json(Json::parse(to_json(m).dump()), "m");
    CHECK(back.theta == m.theta);
    CHECK(back.tau_hat == m.tau_hat);
    CHECK(back.lambda == m.lambda);
  }
  double mu = 0;
  const PerturbedSSModel ss = realization_from_json(Json::parse(realization_to_json(id.realization, 0.75).dump()), &mu);
  CHECK(mu == 0.75);
  CHECK(ss.A == id.realization.A);
  CHECK(ss.B1 == id.realization.B1);
  CHECK(ss.M1 == id.realization.M1);
  CHECK(ss.C == id.realization.C);
  CHECK(ss.w_bar == id.realization.w_bar);
}

TEST_CASE("controller manifest re-synthesizes to the same controller") {
  const PipelineConfig c = config_from_json(smoke_json());
  const auto id = identify_all(collect_data(c.plant), c.identification, c.plant.d_bar, 1);
  std::vector<MultiStepModel> models(id.models.begin(), id.models.begin() + c.control.horizon);
  const RobustController ctrl = synthesize_controller(id.realization, models, horizon_gain(c, id), c.control);
  const Json manifest = controller_manifest(ctrl, models);
  const RobustController back = controller_from_manifest(Json::parse(manifest.dump(2)));
  CHECK(controller_manifest(back, models).dump() == manifest.dump());

  Json tampered = manifest;
  tampered["gains"]["K"][0] = 123.0;
  CHECK_THROWS_AS(controller_from_manifest(tampered), Error);
}

TEST_CASE("smoke pipeline: artifacts, idempotent re-run, stage composition") {
  const PipelineConfig c = config_from_json(smoke_json());
  const fs::path a = fresh_dir("a"), b = fresh_dir("b"), s = fresh_dir("stages");
  cmd_pipeline(c, a, 2);
  cmd_pipeline(c, b, 1);
  cmd_simulate_data(c, s);
  cmd_identify(c, s / "trajectory.csv", s, 1);
  cmd_synthesize(c, s / "models.json", s);
  cmd_closedloop(c, s / "controller.json", s);
  for (const char* name : kArtifacts) {
    CAPTURE(name);
    REQUIRE(fs::exists(a / name));
    CHECK(slurp(a / name) == slurp(b / name));
    CHECK(slurp(a / name) == slurp(s / name));
  }
  // idempotent in place
  const std::string before = slurp(a / "closedloop.csv");
  cmd_pipeline(c, a, 1);
  CHECK(slurp(a / "closedloop.csv") == before);

  const CsvTable cl = read_csv(a / "closedloop.csv");
  CHECK(cl.header == std::vector<std::string>{"k", "y", "z", "u", "z_ref_opt", "zbar0_opt", "J", "qp_status", "qp_iters"});
  CHECK(cl.rows.size() == 120);
  const Json summary = read_json(a / "summary.json");
  CHECK(summary["constraints_satisfied"].get<bool>());
  CHECK(summary["tube_violations"].get<int>() == 0);
  const CsvTable traj = read_csv(a / "trajectory.csv");
  CHECK(traj.rows.size() == 300);
}

TEST_CASE("seed changes the data and the closed loop") {
  PipelineConfig c = config_from_json(smoke_json());
  const Trajectory t1 = collect_data(c.plant);
  c.plant.seed = 4;
  const Trajectory t2 = collect_data(c.plant);
  CHECK(t1.y != t2.y);
}

TEST_CASE("exact data: λ vanishes along the whole fraction curve") {
  PipelineConfig c = config_from_json(smoke_json());
  c.plant.v_bar = 0.0;
  c.plant.d_bar = 0.0;
  const Trajectory traj = collect_data(c.plant);
  for (double l : lambda_curve(traj, 1, 1, {0.25, 0.5, 1.0}, 0.0, 1e15)) CHECK(std::abs(l) <= 1e-9);
}

TEST_CASE("baseline bound propagates the one-step bound plus noise") {
  PerturbedSSModel ss;
  ss.o = 1;
  ss.A = Eigen::MatrixXd::Constant(1, 1, 0.5);
  ss.B1 = Eigen::VectorXd::Constant(1, 1.0);
  ss.M1 = Eigen::VectorXd::Constant(1, 1.0);
  ss.C = Eigen::RowVectorXd::Constant(1, 1.0);
  ss.d_bar = 0.1;
  MultiStepModel m;
  m.tau_hat = 0.3;
  // Σ_{i<p} 0.5^i (τ̂₁ + d̄) plus the noise term of the realization
  CHECK(baseline_bound(ss, m, 3) == doctest::Approx(iterated_error_bound(ss, 0.4, 0.1, 3)));
  CHECK(baseline_bound(ss, m, 3) - iterated_error_bound(ss, 0.0, 0.1, 3) == doctest::Approx(0.4 * 1.75));
}
