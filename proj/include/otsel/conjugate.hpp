#pragma once

#include <optional>
#include <vector>

#include "otsel/potential.hpp"

namespace otsel {

enum class ConjugateMethod {
  first_order,
  newton,
  /// Use the potential's exact_conjugate (closed form or conic program).
  exact,
  /// exact if available, else newton if Hessians are available, else first_order.
  automatic,
};

enum class NewtonDamping {
  /// alpha = ln(1 + d)/d with d = M_f |step|_2, Armijo backtracking if the
  /// objective does not decrease.
  self_concordant,
  /// Armijo backtracking from the full step down to the self-concordant
  /// step, which is then accepted on plain decrease (then backtracking).
  hybrid,
};

/// Batched conjugate problems min_z f(z) - <z, y_j>, one per target row.
/// Any quadratic regularization is part of `potential`.
struct ConjugateRequest {
  PotentialPtr potential;
  Matrix targets;
  double tol = 1e-5;
  int max_iter = 1000;
  ConjugateMethod method = ConjugateMethod::automatic;
  /// First-order step; defaults to 1/M from potential->bounds().
  std::optional<double> step;
  NewtonDamping damping = NewtonDamping::hybrid;
  bool record_trace = false;
};

struct ConjugateResult {
  Vector values;        // f*(y_j) = <z_j, y_j> - f(z_j)
  Matrix argmins;       // z_j, one per row
  Vector residuals;     // |grad f(z_j) - y_j|
  Eigen::VectorXi iterations;
  std::vector<bool> converged;
  /// Per-target residual history (including the initial residual), when
  /// record_trace is set.
  std::vector<std::vector<double>> traces;

  double converged_fraction() const;
  int total_iterations() const { return iterations.sum(); }
};

/// Gradient descent with fixed step 1/M (or req.step), started at z0 = y.
/// Throws Unsupported when M is unknown and no step is given, and
/// NumericalFailure when a residual grows 10x within 50 iterations.
ConjugateResult conjugate_first_order(const ConjugateRequest& req);

/// Damped Newton started at z0 = y. m_f is a (2, m_f) self-concordance
/// constant of the objective (0 for quadratics).
ConjugateResult conjugate_newton(const ConjugateRequest& req, double m_f);

/// Uses potential->exact_conjugate for every target.
ConjugateResult conjugate_exact(const ConjugateRequest& req);

/// Dispatches on req.method. For newton, m_f comes from
/// self_concordance_hint (0 when unknown).
ConjugateResult conjugate(const ConjugateRequest& req);

/// D(centers)/t for (regularized) LSE potentials, 0 for quadratics,
/// nullopt otherwise.
std::optional<double> self_concordance_hint(const ConvexPotential& p);

/// max over a res^d grid on [lo, hi] of x'y - f(x). Test oracle, d <= 3.
double conjugate_grid_oracle(const ConvexPotential& potential, const Vector& target,
                             const Vector& lo, const Vector& hi, int res);

struct DivergenceVerdict {
  bool diverged = false;
  /// Budget ran out before a verdict; diverged is false in that case.
  bool budget_exhausted = false;
  int iterations = 0;
  double objective_gain = 0.0;
  double final_norm = 0.0;
};

/// Gradient ascent on x'y - f(x) from x = y with an expanding step. Reports
/// divergence once |x| exceeds 1e6 * scale and the objective has gained at
/// least 1e6 while still increasing. `scale` defaults to the center diameter
/// of LSE potentials and 1 otherwise.
DivergenceVerdict detect_divergence(const ConvexPotential& potential, const Vector& target,
                                    int budget, std::optional<double> scale = std::nullopt);

/// Writes `target_idx,value,residual,iters,z0..z{d-1}` rows.
void write_conjugate_csv(const ConjugateResult& result, const std::string& path);

}  // namespace otsel
