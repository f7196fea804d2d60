#pragma once

#include <optional>
#include <string>
#include <vector>

#include "otsel/conjugate.hpp"
#include "otsel/measure.hpp"
#include "otsel/potential.hpp"

namespace otsel {

/// How the criterion is computed.
struct CriterionConfig {
  /// Weight of the (delta/2)|x|^2 term added to every candidate.
  double delta = 1e-3;
  ConjugateMethod method = ConjugateMethod::automatic;
  double tol = 1e-5;
  int max_iter = 1000;
};

/// J(f) = <f, mu> + <f*, nu> on a pair of test measures, with f replaced by
/// f + (delta/2)|.|^2 in both terms.
struct SemidualReport {
  double j_value = 0.0;
  double first_term = 0.0;
  double second_term = 0.0;
  double delta = 0.0;
  double unconverged_fraction = 0.0;
  int conjugate_iterations = 0;
  /// f on the mu points and f* on the nu points.
  Vector potential_values;
  Vector conjugate_values;
};

/// Throws CriterionUnavailable when no conjugate problem converges, which is
/// what happens for delta = 0 and a potential that is not strongly convex.
SemidualReport semidual_value(const PotentialPtr& f, const EmpiricalMeasure& mu_test,
                              const EmpiricalMeasure& nu_test, const CriterionConfig& cfg = {});

/// Monte-Carlo estimate of int |grad f - grad truth|^2 d mu_eval.
double quadratic_error(const ConvexPotential& f, const ConvexPotential& truth,
                       const EmpiricalMeasure& mu_eval);

/// Per-point |grad f(x_i) - grad truth(x_i)|^2.
Vector squared_map_errors(const ConvexPotential& f, const ConvexPotential& truth,
                          const Matrix& points);

/// max(osc f on the mu samples, osc f* on the nu samples), where osc is
/// max - min over the samples. Sample-based, so a lower bound on the
/// oscillation over the supports.
struct OscillationEstimate {
  double c_value = 0.0;
  bool sample_estimated = true;
};
OscillationEstimate oscillation(const SemidualReport& report);

/// 8 M C sqrt(ln(4/delta_conf) / (2n)).
double deviation_term(double m_smooth, double c_value, Index n, double delta_conf);

/// The additive deviation term for a selected / best pair, with M the larger
/// of the two smoothness constants and C the larger oscillation. nullopt when
/// either smoothness constant is unknown.
std::optional<double> deviation_bound(const SemidualReport& selected,
                                      const RegularityBounds& selected_bounds,
                                      const SemidualReport& best,
                                      const RegularityBounds& best_bounds, Index n,
                                      double delta_conf);

/// Same, evaluating both potentials on the test measures first; n is taken
/// from the test sample size.
std::optional<double> deviation_bound(const PotentialPtr& f_selected, const PotentialPtr& f_best,
                                      const EmpiricalMeasure& mu_test,
                                      const EmpiricalMeasure& nu_test, double delta_conf,
                                      const CriterionConfig& cfg = {});

/// Optional ground truth used to attach errors and the full bound.
struct SelectionTruth {
  PotentialPtr truth;
  const EmpiricalMeasure* mu_eval = nullptr;
  double delta_conf = 0.05;
};

struct SelectionOutcome {
  /// Candidate indices by ascending J, unavailable candidates last.
  std::vector<std::size_t> ranking;
  std::size_t selected = 0;
  std::vector<std::optional<SemidualReport>> reports;
  std::vector<std::string> unavailable_reason;  // empty when available
  /// Quadratic errors and error-ranks (1-based), with ground truth only.
  std::optional<std::vector<double>> errors;
  std::optional<std::vector<int>> error_ranks;
  /// Index minimizing the error (with ground truth).
  std::optional<std::size_t> best;
  /// (M/gamma) e(best) + deviation term, when truth and all constants are
  /// known. The deviation term uses sample-estimated oscillations.
  std::optional<double> bound;
  std::optional<double> deviation;
};

/// Ranks candidates by the semi-dual criterion; ties go to the smaller index.
/// Throws CriterionUnavailable if no candidate can be evaluated.
SelectionOutcome select(const std::vector<PotentialPtr>& candidates,
                        const EmpiricalMeasure& mu_test, const EmpiricalMeasure& nu_test,
                        const CriterionConfig& cfg = {},
                        const std::optional<SelectionTruth>& truth = std::nullopt);

/// 1-based ranks of values (ascending, ties by index).
std::vector<int> ranks_of(const std::vector<double>& values);

/// Spearman rank correlation of two equally long sequences.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace otsel
