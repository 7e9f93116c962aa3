#pragma once

// Config-driven stages: data collection, identification, synthesis and the
// closed-loop run. Each stage reads only the persisted artifacts of the
// previous one, so running them one by one reproduces `cmd_pipeline` byte for
// byte.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "lbmpc/dataio.hpp"
#include "lbmpc/rmpc.hpp"
#include "lbmpc/serialize.hpp"
#include "lbmpc/sim.hpp"
#include "lbmpc/smid.hpp"
#include "lbmpc/ssrealize.hpp"

namespace lbmpc {

struct PlantConfig {
  double ts = 0.1;
  double v_bar = 0.01;
  double d_bar = 0.1;
  int n_samples = 1000;
  int hold_steps = 50;
  std::vector<double> levels{-1.0, 0.0, 1.0};
  std::uint64_t seed = 1;
  /// Continuous transfer function; the reference plant when absent.
  std::optional<ContinuousTF> tf;
};

struct IdentificationConfig {
  int order = 4;
  int horizon = 20;
  double alpha = 1.1;
  double gamma = 1.05;
  double eps_floor = 1e-9;
  double omega_magnitude = 1e15;
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> fraction_steps{3, 10, 20};
};

struct ClosedLoopConfig {
  std::vector<double> goals{0.0, 5.0, 12.0};
  int segment_steps = 200;
  std::uint64_t seed = 1;
};

struct PipelineConfig {
  PlantConfig plant;
  IdentificationConfig identification;
  ControllerConfig control;
  ClosedLoopConfig closedloop;
  std::filesystem::path output_dir = "out";

  /// Cross-block checks (control horizon within the identified range, α, γ > 1, …).
  void validate() const;
};

/// Missing fields keep their defaults; unknown fields and bad values raise
/// ErrorKind::Config naming the field path.
PipelineConfig config_from_json(const Json& j);
PipelineConfig load_config(const std::filesystem::path& path);
Json to_json(const PipelineConfig& cfg);

TruePlant make_plant(const PlantConfig& cfg);
Trajectory collect_data(const PlantConfig& cfg);

struct IdentificationResult {
  std::vector<MultiStepModel> models;  // p = 1…horizon
  /// τ̂_p of the iterated one-step predictor, p = 1…horizon.
  std::vector<double> tau_iterated;
  PerturbedSSModel realization;
};

/// All p-step models, the realization and w̄. Steps are spread over `jobs`
/// threads; results do not depend on `jobs`.
IdentificationResult identify_all(const Trajectory& traj, const IdentificationConfig& cfg, double d_bar, int jobs = 1);

/// λ̲_p over leading fractions of the regressor set, one row per fraction.
std::vector<double> lambda_curve(const Trajectory& traj, int order, int p, const std::vector<double>& fractions,
                                 double d_bar, double omega_magnitude);

/// Error bound obtained by propagating the one-step bound τ̂₁ + d̄ as the
/// disturbance level through the realization, in place of the learned w̄.
double baseline_bound(const PerturbedSSModel& ss, const MultiStepModel& one_step, int p);

double horizon_gain(const PipelineConfig& cfg, const IdentificationResult& id);

// Stages. Each writes into `out` and returns nothing on success.
void cmd_simulate_data(const PipelineConfig& cfg, const std::filesystem::path& out);
void cmd_identify(const PipelineConfig& cfg, const std::filesystem::path& trajectory_csv,
                  const std::filesystem::path& out, int jobs);
void cmd_synthesize(const PipelineConfig& cfg, const std::filesystem::path& models_json,
                    const std::filesystem::path& out);
/// Throws after writing its artifacts if a closed-loop invariant tripped.
void cmd_closedloop(const PipelineConfig& cfg, const std::filesystem::path& controller_json,
                    const std::filesystem::path& out);
void cmd_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out, int jobs);

/// Runs `work(i)` for i = 0…n−1 on up to `jobs` threads. The exception of the
/// lowest failing index is rethrown after all workers stop.
void parallel_for(int n, int jobs, const std::function<void(int)>& work);

}  // namespace lbmpc
