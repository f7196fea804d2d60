#pragma once

#include <cstddef>
#include <memory>

#include "otsel/measure.hpp"
#include "otsel/potential.hpp"

namespace otsel {

struct SinkhornConfig {
  double epsilon = 0.1;
  double tol = 1e-5;
  int max_iter = 10000;
  /// Above this many bytes the n x m cost matrix is not stored and rows are
  /// recomputed on the fly.
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
};

/// Kantorovich potentials of entropic OT for c(x, y) = |x - y|^2 / 2.
struct SinkhornDuals {
  Vector phi;  // on the support of mu
  Vector psi;  // on the support of nu
  double epsilon = 0.0;
  double tol = 0.0;
  /// max of the two weighted L1 optimality residuals at return.
  double residual = 0.0;
  int iterations = 0;
};

/// Log-domain alternating (phi then psi) Sinkhorn iterations. Stops once
/// sum_i a_i |phi_i + eps log sum_j b_j exp((psi_j - c_ij)/eps)| <= tol, the
/// psi condition holding exactly after each sweep.
///
/// `warm_start`, when given, provides initial potentials (e.g. the solution at
/// a larger epsilon). Throws ConvergenceFailure after max_iter sweeps and
/// NumericalFailure if the iterates stop being finite.
SinkhornDuals sinkhorn_solve(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             const SinkhornConfig& cfg,
                             const SinkhornDuals* warm_start = nullptr);

/// Primal coupling P_ij = a_i b_j exp((phi_i + psi_j - c_ij)/eps).
Matrix sinkhorn_coupling(const SinkhornDuals& duals, const EmpiricalMeasure& mu,
                         const EmpiricalMeasure& nu);

/// Entropic dual objective <phi,a> + <psi,b> - eps <exp((phi+psi-c)/eps), a x b> + eps.
double sinkhorn_dual_objective(const SinkhornDuals& duals, const EmpiricalMeasure& mu,
                               const EmpiricalMeasure& nu);

/// Out-of-sample Kantorovich potential phi_eps(x) from the optimality
/// condition on psi.
double sinkhorn_phi_extension(const SinkhornDuals& duals, const EmpiricalMeasure& nu,
                              const Vector& x);

/// Brenier potential f_eps = |.|^2/2 - phi_eps as an LsePotential with
/// centers y_j, temperature eps and shifts (2 psi_j - |y_j|^2)/(2 eps) + log b_j.
std::shared_ptr<LsePotential> brenier_extend(const SinkhornDuals& duals,
                                             const EmpiricalMeasure& nu);

/// D(nu)^2 / eps: bound on the Hessian operator norm of a Sinkhorn potential.
double smoothness_constant(const LsePotential& p);

/// D(nu) / eps: the M_f of the (2, M_f) self-concordance of the potential.
double self_concordance_constant(const LsePotential& p);

}  // namespace otsel
