#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "otsel/conic.hpp"
#include "otsel/measure.hpp"
#include "otsel/potential.hpp"

namespace otsel {

/// Which pairwise interpolation inequality the fit enforces.
///  - taylor: the exact condition for l-strongly convex, L-smooth functions,
///    u_i >= u_j + z_j'(x_i - x_j) + L/(2(L-l)) [ |z_i - z_j|^2 / L
///    + l |x_i - x_j|^2 - (2l/L)(z_i - z_j)'(x_i - x_j) ].
///  - printed: the same bracket with (1/l)|x_i - x_j|^2 and the cross term
///    taken along (z_j - z_i).
enum class ConstraintVariant { taylor, printed };
std::string to_string(ConstraintVariant v);
ConstraintVariant parse_constraint_variant(const std::string& s);

enum class CouplingMode { exact, entropic };

/// Solver for the constrained fitting step.
///  - interior_point: primal-dual interior-point method on the QCQP, started
///    from the strictly feasible map x -> (l + L)/2 x. Falls back to the
///    conic solver when that start is not strictly feasible (duplicate
///    anchors, printed variant).
///  - conic: the QCQP rewritten as an SOCP and solved by ConicSolver.
enum class FitSolver { interior_point, conic };
std::string to_string(FitSolver s);
FitSolver parse_fit_solver(const std::string& s);

struct SsnbConfig {
  double l = 0.5;
  double big_l = 1.2;
  int outer_iters = 10;
  CouplingMode coupling = CouplingMode::exact;
  /// Temperature of the entropic coupling.
  double coupling_epsilon = 0.01;
  double conic_tol = 1e-7;
  int conic_max_iter = 50000;
  ConstraintVariant variant = ConstraintVariant::taylor;
  FitSolver solver = FitSolver::interior_point;

  void validate() const;
};

/// u_i minus the right-hand side of the (i, j) inequality; >= 0 iff it holds.
double interpolation_constraint(const Vector& xi, const Vector& xj, const Vector& zi,
                                const Vector& zj, double ui, double uj, double l, double big_l,
                                ConstraintVariant variant = ConstraintVariant::taylor);

struct SsnbEvaluation {
  double value;
  Vector gradient;
  double residual;
};

/// Convex function with f(x_i) = u_i and grad f(x_i) = z_i at the anchors,
/// extended to R^d as f = l/2 |x|^2 + h where h is the largest
/// (L - l)-smooth convex function consistent with the shifted data
/// (x_i, u_i - l/2 |x_i|^2, z_i - l x_i). Off-anchor values and conjugates
/// each solve a (d + 1)-variable quadratic program with one linear
/// constraint per anchor.
class SsnbPotential final : public ConvexPotential {
 public:
  SsnbPotential(Matrix anchors, Vector values, Matrix gradients, double l, double big_l,
                ConstraintVariant variant = ConstraintVariant::taylor, double eval_tol = 1e-8);

  const Matrix& anchors() const { return x_; }
  const Vector& anchor_values() const { return u_; }
  const Matrix& anchor_gradients() const { return z_; }
  double l() const { return l_; }
  double big_l() const { return big_l_; }
  ConstraintVariant variant() const { return variant_; }
  double eval_tol() const { return eval_tol_; }

  Index dimension() const override { return x_.cols(); }
  std::string kind() const override { return "ssnb"; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  RegularityBounds bounds() const override { return {l_, big_l_}; }

  Vector values(const Matrix& points) const override;
  Matrix gradients(const Matrix& points) const override;
  BatchDerivatives derivatives(const Matrix& points, bool with_hessians) const override;

  std::optional<ConjugatePoint> exact_conjugate(const Vector& y, double delta) const override;

  /// Value and gradient at x; throws EvaluationFailure if the program fails.
  SsnbEvaluation evaluate(const Vector& x) const;

  /// Smallest interpolation slack over all ordered anchor pairs, under the
  /// potential's constraint variant (+inf for a single anchor).
  double min_slack() const;

 private:
  Vector envelope(const Matrix& s) const;

  Matrix x_;
  Vector u_;
  Matrix z_;
  double l_;
  double big_l_;
  ConstraintVariant variant_;
  double eval_tol_;
  Matrix g_;        // z_i - l x_i
  Vector h_star_;   // g_i'x_i - (u_i - l/2 |x_i|^2)
  // H(s) = |s|^2 / (2(L - l)) + max_i (lin_i's + off_i).
  Matrix lin_;
  Vector off_;
};

/// Optimal coupling between the point cloud z (weights a) and nu.
Matrix coupling_step(const Matrix& z, const Vector& a, const EmpiricalMeasure& nu,
                     CouplingMode mode, double epsilon = 0.01);

struct FitStepResult {
  Vector u;
  Matrix z;
  double objective;  // sum_ij P_ij |z_i - y_j|^2
  FitSolver solver = FitSolver::interior_point;
  /// Interior-point or operator-splitting iterations.
  int iterations = 0;
  /// Complementarity gap and stationarity residual (interior point) or the
  /// largest conic residual.
  double residual = 0.0;
};

/// Reusable constrained fitting step. The constraint structure depends only
/// on the anchors and (l, L); successive calls update the objective. A call
/// with the same coupling as the previous one returns the previous result.
class SsnbFitter {
 public:
  SsnbFitter(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const SsnbConfig& cfg);
  ~SsnbFitter();

  FitStepResult fit(const Matrix& coupling);
  /// Seeds the next conic solve with (u, z).
  void warm_start(const Vector& u, const Matrix& z);

 private:
  FitStepResult fit_interior(const Matrix& coupling) const;
  FitStepResult fit_conic(const Matrix& coupling);
  Vector pack(const Vector& u, const Matrix& z) const;
  FitStepResult unpack(const Vector& w, const Matrix& coupling) const;

  const EmpiricalMeasure& mu_;
  const EmpiricalMeasure& nu_;
  SsnbConfig cfg_;
  // Pair (i, j) constraint:
  //   u_j - u_i + cj z_j'dx + ci z_i'dx + |z_i - z_j|^2 / (2k) + r <= 0.
  std::vector<Index> pair_i_;
  std::vector<Index> pair_j_;
  Matrix pair_dx_;
  Vector pair_r_;
  double ci_ = 0.0;
  double cj_ = 0.0;
  Vector interior_;  // strictly feasible start, empty if none
  QcqpProblem qcqp_;
  std::unique_ptr<ConicSolver> solver_;
  std::optional<Vector> warm_;
  Matrix last_coupling_;
  std::optional<FitStepResult> last_;
};

/// One fitting step for a fixed coupling.
FitStepResult fit_step(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                       const Matrix& coupling, const SsnbConfig& cfg);

struct SsnbFit {
  std::shared_ptr<SsnbPotential> potential;
  /// Transport cost sum_ij P_ij |z_i - y_j|^2 after each coupling step,
  /// including a final coupling of the last fitted map.
  std::vector<double> cost_trace;
  Matrix coupling;
};

/// Alternates coupling and fitting steps from z = x, u = |x|^2/2.
SsnbFit ssnb_fit(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const SsnbConfig& cfg);

}  // namespace otsel
