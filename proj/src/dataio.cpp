#include "lbmpc/dataio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "lbmpc/error.hpp"

namespace lbmpc {

void Trajectory::validate() const {
  LBMPC_REQUIRE(u.size() == y.size(), "trajectory u and y lengths differ");
  LBMPC_REQUIRE(z.empty() || z.size() == u.size(), "trajectory z length differs from u");
  for (size_t i = 0; i < u.size(); ++i)
    LBMPC_REQUIRE(std::isfinite(u[i]) && std::isfinite(y[i]), "trajectory entries must be finite");
  for (double v : z) LBMPC_REQUIRE(std::isfinite(v), "trajectory z entries must be finite");
  LBMPC_REQUIRE(ts > 0.0, "sample period must be positive");
}

int regressor_dim(int o, int p) { return 2 * o - 1 + p; }

RegressorSample RegressorDataset::sample(Eigen::Index i) const {
  LBMPC_REQUIRE(i >= 0 && i < size(), "sample index out of range");
  return {phi.row(i).transpose(), target[i], origin[static_cast<size_t>(i)]};
}

void RegressorDataset::append(const RegressorDataset& other) {
  LBMPC_REQUIRE(other.o == o && other.p == p, "cannot append datasets with different (o, p)");
  const Eigen::Index n0 = size();
  Eigen::MatrixXd ph(n0 + other.size(), dim());
  ph << phi, other.phi;
  Eigen::VectorXd tg(n0 + other.size());
  tg << target, other.target;
  phi = std::move(ph);
  target = std::move(tg);
  origin.insert(origin.end(), other.origin.begin(), other.origin.end());
}

Eigen::VectorXd regressor_at(const std::vector<double>& u, const std::vector<double>& y, int o, int p, int k) {
  Eigen::VectorXd phi(regressor_dim(o, p));
  int c = 0;
  for (int i = 0; i < o; ++i) phi[c++] = y[static_cast<size_t>(k - i)];
  for (int i = 1; i < o; ++i) phi[c++] = u[static_cast<size_t>(k - i)];
  for (int i = 0; i < p; ++i) phi[c++] = u[static_cast<size_t>(k + i)];
  return phi;
}

RegressorDataset build_regressors(const Trajectory& traj, int o, int p) {
  traj.validate();
  LBMPC_REQUIRE(o >= 1 && p >= 1, "order and step count must be at least 1");
  const int len = static_cast<int>(traj.size());
  LBMPC_REQUIRE(len >= o + p, "trajectory too short for the requested order and step");
  RegressorDataset ds;
  ds.o = o;
  ds.p = p;
  const int n = len - p - o + 1;
  ds.phi.resize(n, regressor_dim(o, p));
  ds.target.resize(n);
  ds.origin.resize(static_cast<size_t>(n));
  for (int k = o - 1, r = 0; k <= len - p - 1; ++k, ++r) {
    ds.phi.row(r) = regressor_at(traj.u, traj.y, o, p, k).transpose();
    ds.target[r] = traj.y[static_cast<size_t>(k + p)];
    ds.origin[static_cast<size_t>(r)] = k;
  }
  return ds;
}

RegressorDataset build_regressors(const std::vector<Trajectory>& trajs, int o, int p) {
  LBMPC_REQUIRE(!trajs.empty(), "no trajectories given");
  RegressorDataset ds = build_regressors(trajs.front(), o, p);
  for (size_t i = 1; i < trajs.size(); ++i) ds.append(build_regressors(trajs[i], o, p));
  return ds;
}

RegressorDataset subsample_fraction(const RegressorDataset& ds, double fraction) {
  LBMPC_REQUIRE(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
  const auto n = static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(ds.size()) - 1e-9));
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "fraction selects no samples");
  RegressorDataset out;
  out.o = ds.o;
  out.p = ds.p;
  out.phi = ds.phi.topRows(n);
  out.target = ds.target.head(n);
  out.origin.assign(ds.origin.begin(), ds.origin.begin() + n);
  return out;
}

double hausdorff_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  LBMPC_REQUIRE(a.rows() > 0 && b.rows() > 0, "point sets must be non-empty");
  LBMPC_REQUIRE(a.cols() == b.cols(), "point sets differ in dimension");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double best = (b.rowwise() - a.row(i)).rowwise().squaredNorm().minCoeff();
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    size_t s = 0;
    while (s < cell.size() && cell[s] == ' ') ++s;
    out.push_back(cell.substr(s));
  }
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path, size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Io, path.string() + ": empty file");
  t.header = split(line);
  size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size())
      throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(ln) + ": expected " +
                                     std::to_string(t.header.size()) + " columns");
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c, path, ln));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void save_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  traj.validate();
  CsvTable t;
  t.header = {"k", "u", "y"};
  if (traj.has_z()) t.header.push_back("z");
  for (size_t k = 0; k < traj.size(); ++k) {
    std::vector<double> row{static_cast<double>(k), traj.u[k], traj.y[k]};
    if (traj.has_z()) row.push_back(traj.z[k]);
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

Trajectory load_trajectory_csv(const std::filesystem::path& path, double ts) {
  const CsvTable t = read_csv(path);
  auto col = [&](const std::string& name) -> int {
    for (size_t i = 0; i < t.header.size(); ++i)
      if (t.header[i] == name) return static_cast<int>(i);
    return -1;
  };
  const int cu = col("u"), cy = col("y"), cz = col("z");
  if (cu < 0 || cy < 0) throw Error(ErrorKind::Io, path.string() + ": header must contain u and y");
  Trajectory traj;
  traj.ts = ts;
  for (const auto& r : t.rows) {
    traj.u.push_back(r[static_cast<size_t>(cu)]);
    traj.y.push_back(r[static_cast<size_t>(cy)]);
    if (cz >= 0) traj.z.push_back(r[static_cast<size_t>(cz)]);
  }
  traj.validate();
  return traj;
}

void save_dataset_csv(const RegressorDataset& ds, const std::filesystem::path& path) {
  CsvTable t;
  t.header = {"k", "target"};
  for (int j = 0; j < ds.dim(); ++j) t.header.push_back("phi_" + std::to_string(j));
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    std::vector<double> row{static_cast<double>(ds.origin[static_cast<size_t>(i)]), ds.target[i]};
    for (int j = 0; j < ds.dim(); ++j) row.push_back(ds.phi(i, j));
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

RegressorDataset load_dataset_csv(const std::filesystem::path& path, int o, int p) {
  const CsvTable t = read_csv(path);
  RegressorDataset ds;
  ds.o = o;
  ds.p = p;
  if (static_cast<int>(t.header.size()) != 2 + ds.dim())
    throw Error(ErrorKind::Io, path.string() + ": column count does not match (o, p)");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  ds.phi.resize(n, ds.dim());
  ds.target.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<size_t>(i)];
    ds.origin.push_back(static_cast<int>(r[0]));
    ds.target[i] = r[1];
    for (int j = 0; j < ds.dim(); ++j) ds.phi(i, j) = r[static_cast<size_t>(2 + j)];
  }
  return ds;
}

}  // namespace lbmpc
