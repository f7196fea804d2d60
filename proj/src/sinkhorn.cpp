#include "otsel/sinkhorn.hpp"

#include <cmath>
#include <optional>

#include "otsel/error.hpp"
#include "otsel/parallel.hpp"

namespace otsel {

namespace {

constexpr Index kRowBlock = 64;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Holds X Y' (and Y X') either materialized or recomputed block by block.
// Updates are written in terms of the Gram matrix: c_ij / eps =
// (|x_i|^2 + |y_j|^2)/(2 eps) - <x_i, y_j>/eps.
class GramSource {
 public:
  GramSource(const Matrix& x, const Matrix& y, std::size_t budget) : x_(x), y_(y) {
    const double bytes = 16.0 * static_cast<double>(x.rows()) * static_cast<double>(y.rows());
    if (bytes <= static_cast<double>(budget)) {
      gram_ = RowMatrix(x * y.transpose());
      gram_t_ = RowMatrix(gram_->transpose());
    }
  }

  /// Rows [start, start + len) of X Y' (transposed: of Y X') into out.
  void rows(bool transposed, Index start, Index len, RowMatrix& out) const {
    const Matrix& a = transposed ? y_ : x_;
    const Matrix& b = transposed ? x_ : y_;
    out.resize(len, b.rows());
    if (gram_) {
      out = (transposed ? *gram_t_ : *gram_).middleRows(start, len);
    } else {
      out.noalias() = a.middleRows(start, len) * b.transpose();
    }
  }

 private:
  const Matrix& x_;
  const Matrix& y_;
  std::optional<RowMatrix> gram_;
  std::optional<RowMatrix> gram_t_;
};

// out_i = half_sq_i - eps * log sum_j exp(G_ij/eps + shift_j) over the rows of
// X Y' (or Y X' when transposed).
void soft_min(const GramSource& gram, bool transposed, const Vector& half_sq, const Vector& shift,
              double eps, Vector& out) {
  const Index n = half_sq.size();
  const Index blocks = (n + kRowBlock - 1) / kRowBlock;
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t b) {
    thread_local RowMatrix s;
    const Index start = static_cast<Index>(b) * kRowBlock;
    const Index len = std::min(kRowBlock, n - start);
    gram.rows(transposed, start, len, s);
    s /= eps;
    s.rowwise() += shift.transpose();
    for (Index r = 0; r < len; ++r) {
      auto row = s.row(r);
      const double m = row.maxCoeff();
      const double sum = (row.array() - m).exp().sum();
      out(start + r) = half_sq(start + r) - eps * (m + std::log(sum));
    }
  });
}

void check_inputs(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double eps) {
  if (mu.dimension() != nu.dimension())
    throw InvalidArgument("sinkhorn: measures have different dimensions");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidArgument("sinkhorn: epsilon must be positive");
}

}  // namespace

SinkhornDuals sinkhorn_solve(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             const SinkhornConfig& cfg, const SinkhornDuals* warm_start) {
  check_inputs(mu, nu, cfg.epsilon);
  if (!(cfg.tol > 0.0)) throw InvalidArgument("sinkhorn: tol must be positive");
  if (cfg.max_iter < 1) throw InvalidArgument("sinkhorn: max_iter must be positive");
  const double eps = cfg.epsilon;
  const Matrix& x = mu.points();
  const Matrix& y = nu.points();
  const Vector half_sq_x = 0.5 * x.rowwise().squaredNorm();
  const Vector half_sq_y = 0.5 * y.rowwise().squaredNorm();
  const Vector log_a = mu.weights().array().log();
  const Vector log_b = nu.weights().array().log();
  const GramSource gram(x, y, cfg.memory_budget_bytes);

  SinkhornDuals out;
  out.epsilon = eps;
  out.tol = cfg.tol;
  out.phi = Vector::Zero(x.rows());
  out.psi = Vector::Zero(y.rows());
  if (warm_start) {
    if (warm_start->phi.size() != x.rows())
      throw InvalidArgument("sinkhorn: warm start does not match mu");
    out.phi = warm_start->phi;
  }

  auto update_psi = [&] {
    const Vector alpha = ((out.phi - half_sq_x) / eps + log_a);
    soft_min(gram, true, half_sq_y, alpha, eps, out.psi);
  };
  update_psi();

  Vector phi_new(x.rows());
  double residual = 0.0;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Vector beta = ((out.psi - half_sq_y) / eps + log_b);
    soft_min(gram, false, half_sq_x, beta, eps, phi_new);
    if (!phi_new.allFinite()) throw NumericalFailure("sinkhorn: non-finite potential");
    residual = mu.weights().dot((out.phi - phi_new).cwiseAbs());
    out.iterations = it;
    if (residual <= cfg.tol) {
      out.residual = residual;
      return out;
    }
    out.phi = phi_new;
    update_psi();
    if (!out.psi.allFinite()) throw NumericalFailure("sinkhorn: non-finite potential");
  }
  throw ConvergenceFailure("sinkhorn: max_iter reached", residual);
}

Matrix sinkhorn_coupling(const SinkhornDuals& duals, const EmpiricalMeasure& mu,
                         const EmpiricalMeasure& nu) {
  check_inputs(mu, nu, duals.epsilon);
  const Matrix& x = mu.points();
  const Matrix& y = nu.points();
  Matrix cost = -(x * y.transpose());
  cost.colwise() += 0.5 * x.rowwise().squaredNorm();
  cost.rowwise() += 0.5 * y.rowwise().squaredNorm().transpose();
  Matrix p = ((-cost).colwise() + duals.phi).rowwise() + duals.psi.transpose();
  p = (p / duals.epsilon).array().exp().matrix();
  return mu.weights().asDiagonal() * p * nu.weights().asDiagonal();
}

double sinkhorn_dual_objective(const SinkhornDuals& duals, const EmpiricalMeasure& mu,
                               const EmpiricalMeasure& nu) {
  const Matrix p = sinkhorn_coupling(duals, mu, nu);
  return mu.weights().dot(duals.phi) + nu.weights().dot(duals.psi) - duals.epsilon * p.sum() +
         duals.epsilon;
}

double sinkhorn_phi_extension(const SinkhornDuals& duals, const EmpiricalMeasure& nu,
                              const Vector& x) {
  require_finite(x, "sinkhorn_phi_extension");
  if (x.size() != nu.dimension()) throw InvalidArgument("sinkhorn_phi_extension: dimension mismatch");
  const double eps = duals.epsilon;
  const Vector cost = 0.5 * (nu.points().rowwise() - x.transpose()).rowwise().squaredNorm();
  const Vector s = (duals.psi - cost) / eps + Vector(nu.weights().array().log());
  const double m = s.maxCoeff();
  return -eps * (m + std::log((s.array() - m).exp().sum()));
}

std::shared_ptr<LsePotential> brenier_extend(const SinkhornDuals& duals,
                                             const EmpiricalMeasure& nu) {
  if (duals.psi.size() != nu.size())
    throw InvalidArgument("brenier_extend: duals were computed against a different nu");
  const double eps = duals.epsilon;
  Vector shifts = (2.0 * duals.psi - nu.points().rowwise().squaredNorm()) / (2.0 * eps);
  shifts += Vector(nu.weights().array().log());
  return std::make_shared<LsePotential>(nu.points(), std::move(shifts), eps);
}

double smoothness_constant(const LsePotential& p) {
  const double d = p.center_diameter();
  return d * d / p.temperature();
}

double self_concordance_constant(const LsePotential& p) {
  return p.center_diameter() / p.temperature();
}

}  // namespace otsel
