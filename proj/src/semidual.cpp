#include "otsel/semidual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "otsel/error.hpp"

namespace otsel {

SemidualReport semidual_value(const PotentialPtr& f, const EmpiricalMeasure& mu_test,
                              const EmpiricalMeasure& nu_test, const CriterionConfig& cfg) {
  if (!f) throw InvalidArgument("semidual_value: null potential");
  if (f->dimension() != mu_test.dimension() || f->dimension() != nu_test.dimension())
    throw InvalidArgument("semidual_value: dimension mismatch");
  if (!(cfg.delta >= 0.0)) throw InvalidArgument("semidual_value: delta must be nonnegative");

  const PotentialPtr f_delta = regularize(f, cfg.delta);
  SemidualReport out;
  out.delta = cfg.delta;
  out.potential_values = f_delta->values(mu_test.points());
  out.first_term = mu_test.weights().dot(out.potential_values);

  ConjugateRequest req;
  req.potential = f_delta;
  req.targets = nu_test.points();
  req.tol = cfg.tol;
  req.max_iter = cfg.max_iter;
  req.method = cfg.method;
  ConjugateResult conj;
  try {
    conj = conjugate(req);
  } catch (const NumericalFailure& e) {
    throw CriterionUnavailable(std::string("conjugate failed: ") + e.what());
  }
  const double fraction = conj.converged_fraction();
  if (fraction == 0.0 && nu_test.size() > 0)
    throw CriterionUnavailable(
        "no conjugate problem converged; the regularized potential is probably not strongly "
        "convex (delta = 0?)");
  out.conjugate_values = conj.values;
  out.second_term = nu_test.weights().dot(conj.values);
  out.j_value = out.first_term + out.second_term;
  out.unconverged_fraction = 1.0 - fraction;
  out.conjugate_iterations = conj.total_iterations();
  if (!std::isfinite(out.j_value)) throw CriterionUnavailable("semi-dual value is not finite");
  return out;
}

Vector squared_map_errors(const ConvexPotential& f, const ConvexPotential& truth,
                          const Matrix& points) {
  if (f.dimension() != truth.dimension() || f.dimension() != points.cols())
    throw InvalidArgument("quadratic_error: dimension mismatch");
  const Matrix diff = f.gradients(points) - truth.gradients(points);
  return diff.rowwise().squaredNorm();
}

double quadratic_error(const ConvexPotential& f, const ConvexPotential& truth,
                       const EmpiricalMeasure& mu_eval) {
  return mu_eval.weights().dot(squared_map_errors(f, truth, mu_eval.points()));
}

OscillationEstimate oscillation(const SemidualReport& report) {
  auto osc = [](const Vector& v) { return v.size() ? v.maxCoeff() - v.minCoeff() : 0.0; };
  return {std::max(osc(report.potential_values), osc(report.conjugate_values)), true};
}

double deviation_term(double m_smooth, double c_value, Index n, double delta_conf) {
  if (n < 1) throw InvalidArgument("deviation_term: n must be positive");
  if (!(delta_conf > 0.0 && delta_conf < 1.0))
    throw InvalidArgument("deviation_term: delta_conf must lie in (0, 1)");
  if (!(m_smooth >= 0.0) || !(c_value >= 0.0))
    throw InvalidArgument("deviation_term: constants must be nonnegative");
  return 8.0 * m_smooth * c_value * std::sqrt(std::log(4.0 / delta_conf) / (2.0 * n));
}

std::optional<double> deviation_bound(const SemidualReport& selected,
                                      const RegularityBounds& selected_bounds,
                                      const SemidualReport& best,
                                      const RegularityBounds& best_bounds, Index n,
                                      double delta_conf) {
  if (!selected_bounds.m_smooth || !best_bounds.m_smooth) return std::nullopt;
  const double m = std::max(*selected_bounds.m_smooth, *best_bounds.m_smooth);
  const double c = std::max(oscillation(selected).c_value, oscillation(best).c_value);
  return deviation_term(m, c, n, delta_conf);
}

std::optional<double> deviation_bound(const PotentialPtr& f_selected, const PotentialPtr& f_best,
                                      const EmpiricalMeasure& mu_test,
                                      const EmpiricalMeasure& nu_test, double delta_conf,
                                      const CriterionConfig& cfg) {
  const SemidualReport a = semidual_value(f_selected, mu_test, nu_test, cfg);
  const SemidualReport b = semidual_value(f_best, mu_test, nu_test, cfg);
  return deviation_bound(a, regularize(f_selected, cfg.delta)->bounds(), b,
                         regularize(f_best, cfg.delta)->bounds(), nu_test.size(), delta_conf);
}

std::vector<int> ranks_of(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> ranks(values.size());
  for (std::size_t k = 0; k < order.size(); ++k) ranks[order[k]] = static_cast<int>(k) + 1;
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw InvalidArgument("spearman: need two sequences of equal length >= 2");
  auto average_ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    Vector r(static_cast<Index>(v.size()));
    std::size_t k = 0;
    while (k < order.size()) {
      std::size_t e = k;
      while (e + 1 < order.size() && v[order[e + 1]] == v[order[k]]) ++e;
      const double avg = 0.5 * static_cast<double>(k + e) + 1.0;
      for (std::size_t t = k; t <= e; ++t) r(static_cast<Index>(order[t])) = avg;
      k = e + 1;
    }
    return r;
  };
  Vector ra = average_ranks(a);
  Vector rb = average_ranks(b);
  ra.array() -= ra.mean();
  rb.array() -= rb.mean();
  const double den = ra.norm() * rb.norm();
  if (den == 0.0) return 0.0;
  return ra.dot(rb) / den;
}

SelectionOutcome select(const std::vector<PotentialPtr>& candidates,
                        const EmpiricalMeasure& mu_test, const EmpiricalMeasure& nu_test,
                        const CriterionConfig& cfg, const std::optional<SelectionTruth>& truth) {
  if (candidates.empty()) throw InvalidArgument("select: no candidates");
  const Index d = candidates.front() ? candidates.front()->dimension() : 0;
  for (const auto& c : candidates)
    if (!c || c->dimension() != d) throw InvalidArgument("select: candidates must share a dimension");

  const std::size_t p = candidates.size();
  SelectionOutcome out;
  out.reports.resize(p);
  out.unavailable_reason.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    try {
      out.reports[i] = semidual_value(candidates[i], mu_test, nu_test, cfg);
    } catch (const CriterionUnavailable& e) {
      out.unavailable_reason[i] = e.what();
    }
  }
  out.ranking.resize(p);
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](std::size_t a, std::size_t b) {
    const bool ha = out.reports[a].has_value();
    const bool hb = out.reports[b].has_value();
    if (ha != hb) return ha;
    if (!ha) return false;
    return out.reports[a]->j_value < out.reports[b]->j_value;
  });
  if (!out.reports[out.ranking.front()])
    throw CriterionUnavailable("select: the criterion is unavailable for every candidate");
  out.selected = out.ranking.front();

  if (truth && truth->truth) {
    if (!truth->mu_eval) throw InvalidArgument("select: ground truth given without eval measure");
    std::vector<double> errors(p);
    for (std::size_t i = 0; i < p; ++i)
      errors[i] = quadratic_error(*candidates[i], *truth->truth, *truth->mu_eval);
    out.error_ranks = ranks_of(errors);
    std::size_t best = 0;
    for (std::size_t i = 1; i < p; ++i)
      if (errors[i] < errors[best]) best = i;
    out.best = best;
    out.errors = std::move(errors);
    const std::size_t sel = out.selected;
    if (out.reports[best]) {
      const RegularityBounds bs = regularize(candidates[sel], cfg.delta)->bounds();
      const RegularityBounds bb = regularize(candidates[best], cfg.delta)->bounds();
      out.deviation = deviation_bound(*out.reports[sel], bs, *out.reports[best], bb,
                                      nu_test.size(), truth->delta_conf);
      if (out.deviation && bs.gamma && bb.gamma && std::min(*bs.gamma, *bb.gamma) > 0.0) {
        const double m = std::max(*bs.m_smooth, *bb.m_smooth);
        const double g = std::min(*bs.gamma, *bb.gamma);
        out.bound = (m / g) * (*out.errors)[best] + *out.deviation;
      }
    }
  }
  return out;
}

}  // namespace otsel
