#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace lbmpc {

/// Input/output record of one experiment. `z` (noise-free output) is only
/// available from simulation and may be empty.
struct Trajectory {
  std::vector<double> u;
  std::vector<double> y;
  std::vector<double> z;
  double ts = 0.1;

  size_t size() const { return u.size(); }
  bool has_z() const { return !z.empty(); }
  void validate() const;
};

/// One regression pair. phi = [y(k)…y(k−o+1), u(k−1)…u(k−o+1), u(k)…u(k+p−1)],
/// target = y(k+p).
struct RegressorSample {
  Eigen::VectorXd phi;
  double target = 0.0;
  int origin = 0;
};

/// All regression pairs for one prediction step p, stored row-wise so LPs can
/// consume them without copying.
struct RegressorDataset {
  int o = 1;
  int p = 1;
  Eigen::MatrixXd phi;     // N_p × (2o−1+p)
  Eigen::VectorXd target;  // N_p
  std::vector<int> origin;

  Eigen::Index size() const { return phi.rows(); }
  int dim() const { return phi.cols() ? static_cast<int>(phi.cols()) : 2 * o - 1 + p; }
  RegressorSample sample(Eigen::Index i) const;
  /// Concatenates another dataset with identical (o, p).
  void append(const RegressorDataset& other);
};

int regressor_dim(int o, int p);

/// Regressor for origin k, window taken from (u, y).
Eigen::VectorXd regressor_at(const std::vector<double>& u, const std::vector<double>& y, int o, int p, int k);

RegressorDataset build_regressors(const Trajectory& traj, int o, int p);

/// Regressors from several experiments; no window spans two of them.
RegressorDataset build_regressors(const std::vector<Trajectory>& trajs, int o, int p);

/// First ⌈fraction·N_p⌉ samples in chronological order.
RegressorDataset subsample_fraction(const RegressorDataset& ds, double fraction);

/// One-sided Hausdorff distance max_{a} min_{b} ‖a − b‖₂; points are rows.
double hausdorff_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Decimal with 17 significant digits; round-trips every finite double.
std::string format_double(double v);

void save_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory_csv(const std::filesystem::path& path, double ts = 0.1);

void save_dataset_csv(const RegressorDataset& ds, const std::filesystem::path& path);
RegressorDataset load_dataset_csv(const std::filesystem::path& path, int o, int p);

/// Minimal CSV table: header plus rows of doubles.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const CsvTable& table, const std::filesystem::path& path);

}  // namespace lbmpc
