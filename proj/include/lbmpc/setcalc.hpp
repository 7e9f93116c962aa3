#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace lbmpc {

/// {center + G·λ : ‖λ‖∞ ≤ 1}, one generator per column of G.
struct Zonotope {
  Eigen::VectorXd center;
  Eigen::MatrixXd generators;

  int dim() const { return static_cast<int>(center.size()); }
  int order() const { return static_cast<int>(generators.cols()); }
  /// max over the set of cᵀx = cᵀcenter + Σ|cᵀg_j|.
  double support(const Eigen::VectorXd& c) const;
  /// Half-width along each coordinate axis.
  Eigen::VectorXd interval_radius() const;
  /// Exact membership via an LP on the generator weights.
  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const;

  static Zonotope point(const Eigen::VectorXd& c);
  static Zonotope interval(double lo, double hi);
  /// Axis-aligned box with the given half-widths, centered at the origin.
  static Zonotope box(const Eigen::VectorXd& radius);
};

/// Image T·Z.
Zonotope zono_affine(const Zonotope& z, const Eigen::MatrixXd& t);
/// Minkowski sum A ⊕ B.
Zonotope zono_minkowski(const Zonotope& a, const Zonotope& b);
/// Same set with zero generators dropped and parallel generators merged.
Zonotope zono_compact(const Zonotope& z, double tol = 1e-14);

/// Exact encoding of x ∈ Z: x − G·λ = center, −1 ≤ λ ≤ 1.
struct MembershipRows {
  Eigen::MatrixXd aux_lhs;  // −G, multiplies λ
  Eigen::VectorXd rhs;      // center
  Eigen::VectorXd aux_lower;
  Eigen::VectorXd aux_upper;
  int aux_dim() const { return static_cast<int>(aux_lhs.cols()); }
};
MembershipRows zono_membership_rows(const Zonotope& z);

/// Outer approximation of the minimal robust invariant set of x⁺ = A x + w,
/// w ∈ W: the truncated sum ⊕_{i<s} Aⁱ W plus a box of radius r_s bounding
/// the remainder, with s the first index where r_s ≤ tail_tol.
struct MrpiApproximation {
  Zonotope set;
  int terms = 0;
  double tail_radius = 0.0;
};
MrpiApproximation mrpi_outer(const Eigen::MatrixXd& a_cl, const Zonotope& w_set, double tail_tol,
                             int max_terms = 20000);

/// H-representation {x : G x ≤ h}.
struct Polytope {
  Eigen::MatrixXd G;
  Eigen::VectorXd h;

  int dim() const { return static_cast<int>(G.cols()); }
  int rows() const { return static_cast<int>(G.rows()); }
  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const;
  /// Largest row violation max(Gx − h), negative inside.
  double violation(const Eigen::VectorXd& x) const;
  bool is_empty() const;
  /// max over the set of cᵀx; nullopt when unbounded or empty.
  std::optional<double> support(const Eigen::VectorXd& c) const;
};

/// Origin of one MOAS row: output `output` of C·F^step, upper or lower side.
/// Limit rows carry step = −1.
struct MoasRow {
  int step = 0;
  int output = 0;
  bool upper = true;
};

struct MoasResult {
  Polytope set;
  int t_star = 0;
  std::vector<MoasRow> provenance;
  int pruned = 0;
};

/**
 * Finitely determined inner approximation of the maximal output admissible set
 * of x⁺ = F x, y = C x, y ∈ [lo, hi]:
 *   {x : C F^k x ∈ [lo, hi] for k = 0…t*} ∩ {x : C F^∞ x ∈ [lo + ε, hi − ε]}.
 * `limit` is F^∞; when absent it is obtained by repeated squaring. Rows made
 * redundant by the others are removed (each certified by one LP).
 */
MoasResult moas(const Eigen::MatrixXd& f, const Eigen::MatrixXd& c_out, const Eigen::VectorXd& lo,
                const Eigen::VectorXd& hi, double eps, double row_tol = 1e-9, int max_steps = 1000,
                const std::optional<Eigen::MatrixXd>& limit = std::nullopt);

/// lim F^k by repeated squaring; throws Numerical when it does not settle.
Eigen::MatrixXd limit_map(const Eigen::MatrixXd& f);

}  // namespace lbmpc
