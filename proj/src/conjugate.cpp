#include "otsel/conjugate.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "otsel/error.hpp"
#include "otsel/parallel.hpp"

namespace otsel {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 60;
constexpr double kRoundoffDecrease = 64.0 * std::numeric_limits<double>::epsilon();

void validate(const ConjugateRequest& req) {
  if (!req.potential) throw InvalidArgument("conjugate: null potential");
  if (req.targets.cols() != req.potential->dimension())
    throw InvalidArgument("conjugate: target dimension does not match the potential");
  if (!req.targets.allFinite()) throw InvalidArgument("conjugate: non-finite targets");
  if (!(req.tol > 0.0)) throw InvalidArgument("conjugate: tol must be positive");
  if (req.max_iter < 0) throw InvalidArgument("conjugate: max_iter must be nonnegative");
}

ConjugateResult make_result(const ConjugateRequest& req) {
  const Index m = req.targets.rows();
  ConjugateResult out;
  out.values = Vector::Zero(m);
  out.argmins = req.targets;
  out.residuals = Vector::Constant(m, std::numeric_limits<double>::infinity());
  out.iterations = Eigen::VectorXi::Zero(m);
  out.converged.assign(static_cast<std::size_t>(m), false);
  if (req.record_trace) out.traces.assign(static_cast<std::size_t>(m), {});
  return out;
}

Matrix gather_rows(const Matrix& src, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), src.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = src.row(idx[k]);
  return out;
}

void finalize_values(const ConjugateRequest& req, ConjugateResult& out) {
  const Vector f = req.potential->values(out.argmins);
  out.values = (out.argmins.cwiseProduct(req.targets)).rowwise().sum() - f;
}

}  // namespace

double ConjugateResult::converged_fraction() const {
  if (converged.empty()) return 1.0;
  std::size_t k = 0;
  for (bool c : converged) k += c ? 1 : 0;
  return static_cast<double>(k) / static_cast<double>(converged.size());
}

ConjugateResult conjugate_first_order(const ConjugateRequest& req) {
  validate(req);
  double step;
  if (req.step) {
    step = *req.step;
  } else {
    const auto m = req.potential->bounds().m_smooth;
    if (!m || !(*m > 0.0))
      throw Unsupported(
          "conjugate_first_order: smoothness constant unknown; use the Newton solver or pass an "
          "explicit step");
    step = 1.0 / *m;
  }
  if (!(step > 0.0) || !std::isfinite(step))
    throw InvalidArgument("conjugate_first_order: step must be positive");

  ConjugateResult out = make_result(req);
  const Index m = req.targets.rows();
  std::vector<Index> active(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) active[static_cast<std::size_t>(j)] = j;
  std::vector<double> checkpoint(static_cast<std::size_t>(m), 0.0);

  for (int it = 0; !active.empty(); ++it) {
    const Matrix z = gather_rows(out.argmins, active);
    const Matrix g = req.potential->gradients(z);
    if (!g.allFinite()) throw NumericalFailure("conjugate_first_order: non-finite gradient");
    std::vector<Index> still;
    still.reserve(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      const Index j = active[k];
      const auto ju = static_cast<std::size_t>(j);
      const Vector r = g.row(static_cast<Index>(k)) - req.targets.row(j);
      const double res = r.norm();
      out.residuals(j) = res;
      if (req.record_trace) out.traces[ju].push_back(res);
      if (it % 50 == 0) {
        if (it > 0 && res > 10.0 * checkpoint[ju])
          throw NumericalFailure("conjugate_first_order: residual grew tenfold within 50 "
                                 "iterations (step too large?)");
        checkpoint[ju] = res;
      }
      if (res <= req.tol) {
        out.converged[ju] = true;
        continue;
      }
      if (it >= req.max_iter) continue;
      out.argmins.row(j) -= step * r.transpose();
      out.iterations(j) += 1;
      still.push_back(j);
    }
    active.swap(still);
  }
  finalize_values(req, out);
  return out;
}

ConjugateResult conjugate_newton(const ConjugateRequest& req, double m_f) {
  validate(req);
  if (!(m_f >= 0.0) || !std::isfinite(m_f))
    throw InvalidArgument("conjugate_newton: self-concordance constant must be nonnegative");
  if (!req.potential->has_hessian())
    throw Unsupported("conjugate_newton: potential does not provide Hessians");

  ConjugateResult out = make_result(req);
  const Index m = req.targets.rows();
  const Index d = req.targets.cols();
  std::vector<Index> active(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) active[static_cast<std::size_t>(j)] = j;

  for (int it = 0; !active.empty(); ++it) {
    const Matrix z = gather_rows(out.argmins, active);
    const BatchDerivatives der = req.potential->derivatives(z, true);
    if (!der.gradients.allFinite() || !der.values.allFinite())
      throw NumericalFailure("conjugate_newton: non-finite derivatives");

    // Newton directions for the targets that still need a step.
    std::vector<Index> stepping;        // target index
    std::vector<Index> slot;            // row in z / der
    std::vector<Vector> direction;
    std::vector<double> slope;          // r' step > 0
    std::vector<double> objective;      // f(z) - z'y
    std::vector<double> alpha;
    std::vector<int> stage;             // 0 full Armijo, 1 decrease, 2 backtracking
    std::vector<Index> direct;          // took an undamped step
    for (std::size_t k = 0; k < active.size(); ++k) {
      const Index j = active[k];
      const auto ju = static_cast<std::size_t>(j);
      const auto row = static_cast<Index>(k);
      const Vector r = der.gradients.row(row) - req.targets.row(j);
      const double res = r.norm();
      out.residuals(j) = res;
      if (req.record_trace) out.traces[ju].push_back(res);
      if (res <= req.tol) {
        out.converged[ju] = true;
        continue;
      }
      if (it >= req.max_iter) continue;
      Eigen::LLT<Matrix> llt(der.hessians[static_cast<std::size_t>(k)]);
      if (llt.info() != Eigen::Success)
        throw NumericalFailure("conjugate_newton: singular Hessian (is the potential "
                               "strongly convex?)");
      Vector step = llt.solve(r);
      if (!step.allFinite()) throw NumericalFailure("conjugate_newton: non-finite Newton step");
      const double phi0 = der.values(row) - z.row(row).dot(req.targets.row(j));
      if (r.dot(step) <= kRoundoffDecrease * (1.0 + std::abs(phi0))) {
        // Objective values cannot resolve the decrease; take the full step.
        out.argmins.row(j) -= step.transpose();
        out.iterations(j) += 1;
        direct.push_back(j);
        continue;
      }
      const double dk = m_f * step.norm();
      const double a_sc = dk > 1e-12 ? std::log1p(dk) / dk : 1.0;
      stepping.push_back(j);
      slot.push_back(row);
      slope.push_back(r.dot(step));
      objective.push_back(phi0);
      direction.push_back(std::move(step));
      if (req.damping == NewtonDamping::hybrid && a_sc < 1.0) {
        alpha.push_back(1.0);
        stage.push_back(0);
      } else {
        alpha.push_back(a_sc);
        stage.push_back(1);
      }
    }

    // Batched line search.
    std::vector<std::size_t> pending(stepping.size());
    for (std::size_t k = 0; k < pending.size(); ++k) pending[k] = k;
    std::vector<bool> stalled(stepping.size(), false);
    for (int round = 0; !pending.empty(); ++round) {
      Matrix trial(static_cast<Index>(pending.size()), d);
      for (std::size_t p = 0; p < pending.size(); ++p) {
        const std::size_t k = pending[p];
        trial.row(static_cast<Index>(p)) =
            z.row(slot[k]) - alpha[k] * direction[k].transpose();
      }
      const Vector fv = req.potential->values(trial);
      std::vector<std::size_t> again;
      for (std::size_t p = 0; p < pending.size(); ++p) {
        const std::size_t k = pending[p];
        const Index j = stepping[k];
        const double phi = fv(static_cast<Index>(p)) - trial.row(static_cast<Index>(p)).dot(req.targets.row(j));
        bool ok;
        if (stage[k] == 1) {
          ok = phi < objective[k];
        } else {
          ok = phi <= objective[k] - kArmijo * alpha[k] * slope[k];
        }
        if (ok && std::isfinite(phi)) {
          out.argmins.row(j) = trial.row(static_cast<Index>(p));
          out.iterations(j) += 1;
          continue;
        }
        if (round >= kMaxBacktracks) {
          stalled[k] = true;
          continue;
        }
        if (stage[k] == 0) {
          const double dk = m_f * direction[k].norm();
          const double a_sc = dk > 1e-12 ? std::log1p(dk) / dk : 1.0;
          alpha[k] *= 0.5;
          if (alpha[k] <= a_sc) {
            alpha[k] = a_sc;
            stage[k] = 1;
          }
        } else if (stage[k] == 1) {
          alpha[k] *= 0.5;
          stage[k] = 2;
        } else {
          alpha[k] *= 0.5;
        }
        again.push_back(k);
      }
      pending.swap(again);
    }

    std::vector<Index> still = direct;
    for (std::size_t k = 0; k < stepping.size(); ++k)
      if (!stalled[k]) still.push_back(stepping[k]);
    active.swap(still);
  }
  finalize_values(req, out);
  return out;
}

ConjugateResult conjugate_exact(const ConjugateRequest& req) {
  validate(req);
  ConjugateResult out = make_result(req);
  const Index m = req.targets.rows();
  std::vector<std::optional<ConjugatePoint>> points(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t j) {
    points[j] = req.potential->exact_conjugate(req.targets.row(static_cast<Index>(j)).transpose(), 0.0);
  });
  for (Index j = 0; j < m; ++j) {
    const auto& p = points[static_cast<std::size_t>(j)];
    if (!p) throw Unsupported("conjugate_exact: " + req.potential->kind() +
                              " potential has no structured conjugate");
    out.values(j) = p->value;
    out.argmins.row(j) = p->argmax.transpose();
    out.residuals(j) = p->residual;
    out.converged[static_cast<std::size_t>(j)] = p->residual <= req.tol;
    out.iterations(j) = 1;
  }
  return out;
}

std::optional<double> self_concordance_hint(const ConvexPotential& p) {
  const auto [inner, delta] = unwrap_regularized(p);
  (void)delta;
  if (const auto* lse = dynamic_cast<const LsePotential*>(inner))
    return lse->center_diameter() / lse->temperature();
  if (dynamic_cast<const QuadraticPotential*>(inner)) return 0.0;
  return std::nullopt;
}

ConjugateResult conjugate(const ConjugateRequest& req) {
  validate(req);
  ConjugateMethod method = req.method;
  if (method == ConjugateMethod::automatic) {
    const Vector probe = req.targets.rows() > 0 ? Vector(req.targets.row(0).transpose())
                                                : Vector::Zero(req.potential->dimension());
    if (dynamic_cast<const QuadraticPotential*>(unwrap_regularized(*req.potential).first) ||
        req.potential->kind() == "ssnb" ||
        unwrap_regularized(*req.potential).first->kind() == "ssnb") {
      method = ConjugateMethod::exact;
    } else if (req.potential->has_hessian()) {
      method = ConjugateMethod::newton;
    } else {
      method = ConjugateMethod::first_order;
    }
    (void)probe;
  }
  switch (method) {
    case ConjugateMethod::first_order:
      return conjugate_first_order(req);
    case ConjugateMethod::newton:
      return conjugate_newton(req, self_concordance_hint(*req.potential).value_or(0.0));
    case ConjugateMethod::exact:
      return conjugate_exact(req);
    case ConjugateMethod::automatic:
      break;
  }
  throw InvalidArgument("conjugate: unknown method");
}

double conjugate_grid_oracle(const ConvexPotential& potential, const Vector& target,
                             const Vector& lo, const Vector& hi, int res) {
  const Index d = potential.dimension();
  if (d > 3) throw Unsupported("conjugate_grid_oracle: dimension above 3");
  if (res < 2) throw InvalidArgument("conjugate_grid_oracle: res must be at least 2");
  if (target.size() != d || lo.size() != d || hi.size() != d)
    throw InvalidArgument("conjugate_grid_oracle: dimension mismatch");
  Index total = 1;
  for (Index k = 0; k < d; ++k) total *= res;
  constexpr Index kChunk = 1 << 15;
  double best = -std::numeric_limits<double>::infinity();
  for (Index start = 0; start < total; start += kChunk) {
    const Index len = std::min(kChunk, total - start);
    Matrix pts(len, d);
    for (Index r = 0; r < len; ++r) {
      Index code = start + r;
      for (Index k = 0; k < d; ++k) {
        const Index ik = code % res;
        code /= res;
        pts(r, k) = lo(k) + (hi(k) - lo(k)) * static_cast<double>(ik) / (res - 1);
      }
    }
    const Vector f = potential.values(pts);
    const Vector obj = pts * target - f;
    best = std::max(best, obj.maxCoeff());
  }
  return best;
}

DivergenceVerdict detect_divergence(const ConvexPotential& potential, const Vector& target,
                                    int budget, std::optional<double> scale) {
  require_finite(target, "detect_divergence");
  if (target.size() != potential.dimension())
    throw InvalidArgument("detect_divergence: dimension mismatch");
  if (!scale) {
    const auto* lse = dynamic_cast<const LsePotential*>(unwrap_regularized(potential).first);
    scale = lse ? std::max(lse->center_diameter(), 1e-12) : 1.0;
  }
  auto objective = [&](const Vector& x) { return x.dot(target) - potential.value(x); };

  DivergenceVerdict v;
  Vector x = target;
  const double start = objective(x);
  double current = start;
  const auto m = potential.bounds().m_smooth;
  double step = (m && *m > 0.0) ? 1.0 / *m : 1.0;
  bool last_accepted = false;
  for (int it = 0; it < budget; ++it) {
    v.iterations = it + 1;
    const Vector g = target - potential.gradient(x);
    if (g.norm() <= 1e-10 * std::max(1.0, target.norm())) {
      v.final_norm = x.norm();
      v.objective_gain = current - start;
      return v;  // stationary: the supremum is attained
    }
    const Vector trial = x + step * g;
    const double val = objective(trial);
    if (std::isfinite(val) && val > current) {
      x = trial;
      current = val;
      step *= 2.0;
      last_accepted = true;
    } else {
      step *= 0.5;
      last_accepted = false;
    }
    v.final_norm = x.norm();
    v.objective_gain = current - start;
    if (last_accepted && v.final_norm > 1e6 * *scale && v.objective_gain >= 1e6) {
      v.diverged = true;
      return v;
    }
  }
  v.budget_exhausted = true;
  return v;
}

void write_conjugate_csv(const ConjugateResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  const Index d = result.argmins.cols();
  out << "target_idx,value,residual,iters";
  for (Index k = 0; k < d; ++k) out << ",z" << k;
  out << '\n' << std::setprecision(17);
  for (Index j = 0; j < result.values.size(); ++j) {
    out << j << ',' << result.values(j) << ',' << result.residuals(j) << ','
        << result.iterations(j);
    for (Index k = 0; k < d; ++k) out << ',' << result.argmins(j, k);
    out << '\n';
  }
}

}  // namespace otsel
