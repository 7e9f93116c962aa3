#pragma once

// JSON forms of the learned models, the realization and the controller.
// Doubles are written in shortest round-trip form, so load(save(x)) == x.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lbmpc/rmpc.hpp"
#include "lbmpc/smid.hpp"
#include "lbmpc/ssrealize.hpp"

namespace lbmpc {

using Json = nlohmann::ordered_json;

Json to_json(const Eigen::MatrixXd& m);  // row-major nested arrays
Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::RowVectorXd& v);
Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& path);
Eigen::VectorXd vector_from_json(const Json& j, const std::string& path);

Json to_json(const MultiStepModel& m);
MultiStepModel model_from_json(const Json& j, const std::string& path);

/// {o, A, B1, M1, C, w_bar, d_bar, mu_hat}
Json realization_to_json(const PerturbedSSModel& ss, double mu_hat);
PerturbedSSModel realization_from_json(const Json& j, double* mu_hat = nullptr);

Json to_json(const Zonotope& z);
Json to_json(const Polytope& p);

/// Controller manifest: synthesis inputs (realization, predictors, μ̂, control
/// configuration) followed by every synthesized quantity and its certificates.
Json controller_manifest(const RobustController& c, const std::vector<MultiStepModel>& models);

/// Re-synthesizes from the inputs recorded in a manifest and checks that the
/// recorded gains and weights are reproduced bit for bit.
RobustController controller_from_manifest(const Json& j);

/// Strict reader over one JSON object. Every access names the full field path
/// in its error (ErrorKind::Config); finish() rejects keys nobody asked for.
class JsonFields {
 public:
  JsonFields(const Json& j, std::string path);

  bool has(const std::string& key) const;
  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;
  /// Two-element [lo, hi] array.
  std::pair<double, double> interval(const std::string& key, std::pair<double, double> fallback) const;
  const Json& child(const std::string& key) const;
  std::string path(const std::string& key) const { return path_ + "." + key; }
  void finish() const;

 private:
  const Json& at(const std::string& key) const;

  const Json& j_;
  std::string path_;
  mutable std::vector<std::string> seen_;
};

Json to_json(const ControllerConfig& cfg);
/// Missing fields keep their defaults; unknown fields are an error.
ControllerConfig control_config_from_json(const Json& j, const std::string& path);

Json read_json(const std::filesystem::path& path);
/// Two-space indentation, trailing newline.
void write_json(const Json& j, const std::filesystem::path& path);

}  // namespace lbmpc
