#include "otsel/potential.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "otsel/error.hpp"
#include "otsel/measure.hpp"

namespace otsel {

RegularityBounds::RegularityBounds(std::optional<double> g, std::optional<double> m)
    : gamma(g), m_smooth(m) {
  if ((gamma && *gamma < 0.0) || (m_smooth && *m_smooth < 0.0))
    throw InvalidArgument("regularity bounds must be nonnegative");
  if (gamma && m_smooth && *gamma > *m_smooth * (1.0 + 1e-12) + 1e-15)
    throw InvalidArgument("strong convexity bound exceeds smoothness bound");
}

void require_finite(const Vector& x, const char* what) {
  if (!x.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite input");
}

// ---------------------------------------------------------------------------
// Default batched evaluation.

Vector ConvexPotential::values(const Matrix& points) const {
  Vector out(points.rows());
  for (Index i = 0; i < points.rows(); ++i) out(i) = value(points.row(i).transpose());
  return out;
}

Matrix ConvexPotential::gradients(const Matrix& points) const {
  Matrix out(points.rows(), points.cols());
  for (Index i = 0; i < points.rows(); ++i)
    out.row(i) = gradient(points.row(i).transpose()).transpose();
  return out;
}

BatchDerivatives ConvexPotential::derivatives(const Matrix& points, bool with_hessians) const {
  BatchDerivatives out;
  out.values = values(points);
  out.gradients = gradients(points);
  if (with_hessians) {
    out.hessians.reserve(points.rows());
    for (Index i = 0; i < points.rows(); ++i) {
      auto h = hessian(points.row(i).transpose());
      if (!h) throw Unsupported(kind() + " potential does not provide Hessians");
      out.hessians.push_back(std::move(*h));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadratic.

QuadraticPotential::QuadraticPotential(Matrix q, Vector b) : q_(std::move(q)), b_(std::move(b)) {
  if (q_.rows() != q_.cols() || q_.rows() != b_.size())
    throw InvalidArgument("quadratic potential: Q must be d x d and b length d");
  if (!q_.allFinite() || !b_.allFinite())
    throw InvalidArgument("quadratic potential: non-finite coefficients");
  if ((q_ - q_.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidArgument("quadratic potential: Q is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(q_, Eigen::EigenvaluesOnly);
  lambda_min_ = eig.eigenvalues().minCoeff();
  lambda_max_ = eig.eigenvalues().maxCoeff();
  if (!(lambda_min_ > 1e-14 * std::max(1.0, lambda_max_)))
    throw IllConditioned("quadratic potential: Q is not positive definite");
}

std::shared_ptr<QuadraticPotential> QuadraticPotential::isotropic(Index d, double a) {
  return std::make_shared<QuadraticPotential>(a * Matrix::Identity(d, d), Vector::Zero(d));
}

double QuadraticPotential::value(const Vector& x) const {
  return 0.5 * x.dot(q_ * x) + b_.dot(x);
}

Vector QuadraticPotential::gradient(const Vector& x) const { return q_ * x + b_; }

std::optional<Matrix> QuadraticPotential::hessian(const Vector&) const { return q_; }

RegularityBounds QuadraticPotential::bounds() const { return {lambda_min_, lambda_max_}; }

Vector QuadraticPotential::values(const Matrix& points) const {
  const Matrix qx = points * q_;
  return 0.5 * (qx.cwiseProduct(points)).rowwise().sum() + points * b_;
}

Matrix QuadraticPotential::gradients(const Matrix& points) const {
  return (points * q_).rowwise() + b_.transpose();
}

std::optional<ConjugatePoint> QuadraticPotential::exact_conjugate(const Vector& y,
                                                                  double delta) const {
  const Index d = dimension();
  QuadraticPotential shifted(q_ + delta * Matrix::Identity(d, d), b_);
  return quadratic_conjugate(shifted, y);
}

ConjugatePoint quadratic_conjugate(const QuadraticPotential& p, const Vector& y) {
  require_finite(y, "quadratic_conjugate");
  Eigen::LLT<Matrix> llt(p.q());
  if (llt.info() != Eigen::Success) throw IllConditioned("quadratic_conjugate: Q is singular");
  const Vector r = y - p.b();
  Vector x = llt.solve(r);
  return {0.5 * r.dot(x), std::move(x)};
}

// ---------------------------------------------------------------------------
// Log-sum-exp.

LsePotential::LsePotential(Matrix centers, Vector shifts, double temperature)
    : centers_(std::move(centers)), shifts_(std::move(shifts)), temperature_(temperature) {
  if (centers_.rows() < 1) throw InvalidArgument("lse potential needs at least one center");
  if (shifts_.size() != centers_.rows())
    throw InvalidArgument("lse potential: shifts length must match the number of centers");
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_))
    throw InvalidArgument("lse potential: temperature must be positive");
  if (!centers_.allFinite() || !shifts_.allFinite())
    throw InvalidArgument("lse potential: non-finite parameters");
  diameter_ = point_diameter(centers_);
  center_mean_ = centers_.colwise().mean().transpose();
}

Vector LsePotential::weights(const Vector& x) const {
  require_finite(x, "lse potential");
  if (x.size() != dimension()) throw InvalidArgument("lse potential: dimension mismatch");
  Vector s = (centers_ * x) / temperature_ + shifts_;
  const double m = s.maxCoeff();
  Vector w = (s.array() - m).exp().matrix();
  w /= w.sum();
  return w;
}

double LsePotential::value(const Vector& x) const {
  require_finite(x, "lse potential");
  if (x.size() != dimension()) throw InvalidArgument("lse potential: dimension mismatch");
  const Vector s = (centers_ * x) / temperature_ + shifts_;
  const double m = s.maxCoeff();
  return temperature_ * (m + std::log((s.array() - m).exp().sum()));
}

Vector LsePotential::gradient(const Vector& x) const { return lse_gradient(*this, x); }

std::optional<Matrix> LsePotential::hessian(const Vector& x) const { return lse_hessian(*this, x); }

RegularityBounds LsePotential::bounds() const {
  return {0.0, diameter_ * diameter_ / temperature_};
}

Vector lse_gradient(const LsePotential& p, const Vector& z) {
  const Vector w = p.weights(z);
  return p.centers().transpose() * w;
}

Matrix lse_hessian(const LsePotential& p, const Vector& z) {
  const Vector w = p.weights(z);
  const Vector g = p.centers().transpose() * w;
  const Matrix centered = p.centers().rowwise() - g.transpose();
  Matrix h = centered.transpose() * w.asDiagonal() * centered / p.temperature();
  return 0.5 * (h + h.transpose());
}

const Matrix& lse_center_products(const LsePotential& p) {
  std::call_once(p.products_once_, [&] {
    const Index d = p.dimension();
    const Matrix cs = p.centers().rowwise() - p.center_mean_.transpose();
    p.products_.resize(cs.rows(), d * (d + 1) / 2);
    Index col = 0;
    for (Index a = 0; a < d; ++a)
      for (Index b = a; b < d; ++b) p.products_.col(col++) = cs.col(a).cwiseProduct(cs.col(b));
  });
  return p.products_;
}

namespace {

constexpr Index kBatchBlock = 16;
// Centers whose logit trails the maximum by more than this carry relative
// weight below exp(-40) and are skipped.
constexpr double kNegligibleLogit = 40.0;

// Shared batched kernel. Fills values, gradients and optionally Hessians for
// rows [0, k) of points.
void lse_batch(const LsePotential& p, const Matrix& points, bool want_grad, bool want_hess,
               BatchDerivatives& out) {
  if (!points.allFinite()) throw InvalidArgument("lse potential: non-finite input");
  if (points.cols() != p.dimension()) throw InvalidArgument("lse potential: dimension mismatch");
  const Index k = points.rows();
  const Index d = p.dimension();
  const double t = p.temperature();
  const Matrix& c = p.centers();
  out.values.resize(k);
  if (want_grad) out.gradients.resize(k, d);
  if (want_hess) out.hessians.assign(k, Matrix());

  const Vector mean = c.colwise().mean().transpose();
  const Matrix* products = want_hess ? &lse_center_products(p) : nullptr;

  const Index n = c.rows();
  const Index pairs = d * (d + 1) / 2;
  std::vector<Index> active;
  Vector w(n);
  Vector g(d);
  Vector second(pairs);
  for (Index start = 0; start < k; start += kBatchBlock) {
    const Index len = std::min(kBatchBlock, k - start);
    // One column of logits per point.
    thread_local Matrix logits;
    logits.resize(n, len);
    logits.noalias() = c * points.middleRows(start, len).transpose();
    logits /= t;
    logits.colwise() += p.shifts();
    for (Index r = 0; r < len; ++r) {
      const auto col = logits.col(r);
      const double m = col.maxCoeff();
      const double cut = m - kNegligibleLogit;
      active.clear();
      for (Index i = 0; i < n; ++i)
        if (col(i) > cut) active.push_back(i);
      const bool sparse = 4 * static_cast<Index>(active.size()) < n;
      double sum = 0.0;
      if (sparse) {
        for (Index i : active) sum += std::exp(col(i) - m);
      } else {
        w = (col.array() - m).exp().matrix();
        sum = w.sum();
      }
      out.values(start + r) = t * (m + std::log(sum));
      if (!want_grad && !want_hess) continue;

      if (sparse) {
        g.setZero();
        if (want_hess) second.setZero();
        for (Index i : active) {
          const double wi = std::exp(col(i) - m) / sum;
          g.noalias() += wi * c.row(i).transpose();
          if (want_hess) second.noalias() += wi * products->row(i).transpose();
        }
      } else {
        w /= sum;
        g.noalias() = c.transpose() * w;
        if (want_hess) second.noalias() = products->transpose() * w;
      }
      if (want_grad) out.gradients.row(start + r) = g.transpose();
      if (want_hess) {
        const Vector gs = g - mean;
        Matrix h(d, d);
        Index at = 0;
        for (Index a2 = 0; a2 < d; ++a2)
          for (Index b2 = a2; b2 < d; ++b2) {
            const double v = (second(at++) - gs(a2) * gs(b2)) / t;
            h(a2, b2) = v;
            h(b2, a2) = v;
          }
        out.hessians[static_cast<std::size_t>(start + r)] = std::move(h);
      }
    }
  }
}

}  // namespace

Vector LsePotential::values(const Matrix& points) const {
  BatchDerivatives out;
  lse_batch(*this, points, false, false, out);
  return out.values;
}

Matrix LsePotential::gradients(const Matrix& points) const {
  BatchDerivatives out;
  lse_batch(*this, points, true, false, out);
  return out.gradients;
}

BatchDerivatives LsePotential::derivatives(const Matrix& points, bool with_hessians) const {
  BatchDerivatives out;
  lse_batch(*this, points, true, with_hessians, out);
  return out;
}

// ---------------------------------------------------------------------------
// Regularized.

RegularizedPotential::RegularizedPotential(PotentialPtr base, double delta)
    : base_(std::move(base)), delta_(delta) {
  if (!base_) throw InvalidArgument("regularized potential: null base");
  if (!(delta_ >= 0.0) || !std::isfinite(delta_))
    throw InvalidArgument("regularized potential: delta must be nonnegative");
}

double RegularizedPotential::value(const Vector& x) const {
  if (delta_ == 0.0) return base_->value(x);
  return base_->value(x) + 0.5 * delta_ * x.squaredNorm();
}

Vector RegularizedPotential::gradient(const Vector& x) const {
  if (delta_ == 0.0) return base_->gradient(x);
  return base_->gradient(x) + delta_ * x;
}

std::optional<Matrix> RegularizedPotential::hessian(const Vector& x) const {
  auto h = base_->hessian(x);
  if (h && delta_ != 0.0) h->diagonal().array() += delta_;
  return h;
}

RegularityBounds RegularizedPotential::bounds() const {
  const RegularityBounds b = base_->bounds();
  if (delta_ == 0.0) return b;
  std::optional<double> m;
  if (b.m_smooth) m = *b.m_smooth + delta_;
  // A convex base is at least 0-strongly convex.
  return {b.gamma.value_or(0.0) + delta_, m};
}

Vector RegularizedPotential::values(const Matrix& points) const {
  if (delta_ == 0.0) return base_->values(points);
  return base_->values(points) + 0.5 * delta_ * points.rowwise().squaredNorm();
}

Matrix RegularizedPotential::gradients(const Matrix& points) const {
  if (delta_ == 0.0) return base_->gradients(points);
  return base_->gradients(points) + delta_ * points;
}

BatchDerivatives RegularizedPotential::derivatives(const Matrix& points, bool with_hessians) const {
  BatchDerivatives out = base_->derivatives(points, with_hessians);
  if (delta_ == 0.0) return out;
  out.values += 0.5 * delta_ * points.rowwise().squaredNorm();
  out.gradients += delta_ * points;
  for (auto& h : out.hessians) h.diagonal().array() += delta_;
  return out;
}

std::optional<ConjugatePoint> RegularizedPotential::exact_conjugate(const Vector& y,
                                                                    double delta) const {
  return base_->exact_conjugate(y, delta + delta_);
}

PotentialPtr regularize(PotentialPtr base, double delta) {
  if (delta == 0.0) return base;
  return std::make_shared<RegularizedPotential>(std::move(base), delta);
}

std::pair<const ConvexPotential*, double> unwrap_regularized(const ConvexPotential& p) {
  const ConvexPotential* cur = &p;
  double delta = 0.0;
  while (const auto* r = dynamic_cast<const RegularizedPotential*>(cur)) {
    delta += r->delta();
    cur = r->base().get();
  }
  return {cur, delta};
}

}  // namespace otsel
