#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "otsel/types.hpp"

namespace otsel {

/// Known regularity constants of a convex potential: gamma-strong convexity
/// and M-Lipschitz gradient. Either may be unknown.
struct RegularityBounds {
  std::optional<double> gamma;
  std::optional<double> m_smooth;

  RegularityBounds() = default;
  RegularityBounds(std::optional<double> g, std::optional<double> m);
};

/// Values, gradients and (optionally) Hessians at a batch of points.
struct BatchDerivatives {
  Vector values;
  Matrix gradients;              // one row per point
  std::vector<Matrix> hessians;  // empty when not requested
};

/// f*(y) together with the maximizer x* of x'y - f(x).
struct ConjugatePoint {
  double value;
  Vector argmax;
  /// Solver residual when the conjugate comes from an iterative program.
  double residual = 0.0;
};

/// Evaluable convex function on R^d.
///
/// Implementations are immutable after construction, so a shared instance
/// can be evaluated from several threads.
class ConvexPotential {
 public:
  virtual ~ConvexPotential() = default;

  virtual Index dimension() const = 0;
  virtual std::string kind() const = 0;

  virtual double value(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;
  virtual std::optional<Matrix> hessian(const Vector& /*x*/) const { return std::nullopt; }
  virtual bool has_hessian() const { return false; }
  virtual RegularityBounds bounds() const = 0;

  /// Batched evaluation; points are rows. The default loops over rows.
  virtual Vector values(const Matrix& points) const;
  virtual Matrix gradients(const Matrix& points) const;
  virtual BatchDerivatives derivatives(const Matrix& points, bool with_hessians) const;

  /// Conjugate of x -> f(x) + delta/2 |x|^2 at y, when the potential has a
  /// structure that gives it directly (closed form or a single convex
  /// program). Returns nullopt otherwise.
  virtual std::optional<ConjugatePoint> exact_conjugate(const Vector& /*y*/,
                                                        double /*delta*/) const {
    return std::nullopt;
  }
};

using PotentialPtr = std::shared_ptr<const ConvexPotential>;

/// f(x) = 1/2 x'Qx + b'x with Q symmetric positive definite.
class QuadraticPotential final : public ConvexPotential {
 public:
  QuadraticPotential(Matrix q, Vector b);

  /// (a/2)|x|^2 in dimension d.
  static std::shared_ptr<QuadraticPotential> isotropic(Index d, double a);

  const Matrix& q() const { return q_; }
  const Vector& b() const { return b_; }

  Index dimension() const override { return b_.size(); }
  std::string kind() const override { return "quadratic"; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  std::optional<Matrix> hessian(const Vector& x) const override;
  bool has_hessian() const override { return true; }
  RegularityBounds bounds() const override;

  Vector values(const Matrix& points) const override;
  Matrix gradients(const Matrix& points) const override;

  std::optional<ConjugatePoint> exact_conjugate(const Vector& y, double delta) const override;

 private:
  Matrix q_;
  Vector b_;
  double lambda_min_;
  double lambda_max_;
};

/// Closed-form Fenchel conjugate 1/2 (y-b)'Q^{-1}(y-b) and its maximizer.
ConjugatePoint quadratic_conjugate(const QuadraticPotential& p, const Vector& y);

/// f(x) = t * logsumexp(Cx/t + b). Rows of C are the centers.
///
/// The gradient is a softmax-weighted average of the centers, so it lies in
/// their convex hull; the Hessian is the softmax covariance divided by t.
class LsePotential final : public ConvexPotential {
 public:
  LsePotential(Matrix centers, Vector shifts, double temperature);

  const Matrix& centers() const { return centers_; }
  const Vector& shifts() const { return shifts_; }
  double temperature() const { return temperature_; }
  /// Diameter of the set of centers.
  double center_diameter() const { return diameter_; }

  Index dimension() const override { return centers_.cols(); }
  std::string kind() const override { return "lse"; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  std::optional<Matrix> hessian(const Vector& x) const override;
  bool has_hessian() const override { return true; }
  /// gamma = 0, M = D(C)^2 / t.
  RegularityBounds bounds() const override;

  /// Softmax weights of the centers at x.
  Vector weights(const Vector& x) const;

  Vector values(const Matrix& points) const override;
  Matrix gradients(const Matrix& points) const override;
  BatchDerivatives derivatives(const Matrix& points, bool with_hessians) const override;

 private:
  Matrix centers_;
  Vector shifts_;
  double temperature_;
  double diameter_;
  Vector center_mean_;
  // Products of mean-centered center coordinates, one column per (a, b) with
  // a <= b; built on first Hessian request.
  mutable std::once_flag products_once_;
  mutable Matrix products_;

  friend const Matrix& lse_center_products(const LsePotential& p);
};

/// Gradient of an LSE potential; max-subtracted softmax.
Vector lse_gradient(const LsePotential& p, const Vector& z);
/// Hessian (1/t)(E[cc'] - grad grad') of an LSE potential.
Matrix lse_hessian(const LsePotential& p, const Vector& z);

/// base(x) + delta/2 |x|^2.
class RegularizedPotential final : public ConvexPotential {
 public:
  RegularizedPotential(PotentialPtr base, double delta);

  const PotentialPtr& base() const { return base_; }
  double delta() const { return delta_; }

  Index dimension() const override { return base_->dimension(); }
  std::string kind() const override { return "regularized"; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  std::optional<Matrix> hessian(const Vector& x) const override;
  bool has_hessian() const override { return base_->has_hessian(); }
  RegularityBounds bounds() const override;

  Vector values(const Matrix& points) const override;
  Matrix gradients(const Matrix& points) const override;
  BatchDerivatives derivatives(const Matrix& points, bool with_hessians) const override;

  std::optional<ConjugatePoint> exact_conjugate(const Vector& y, double delta) const override;

 private:
  PotentialPtr base_;
  double delta_;
};

/// Wraps base with delta/2 |x|^2 unless delta is zero.
PotentialPtr regularize(PotentialPtr base, double delta);

/// Strips RegularizedPotential layers; returns the innermost potential and the
/// accumulated delta.
std::pair<const ConvexPotential*, double> unwrap_regularized(const ConvexPotential& p);

/// Throws InvalidArgument unless every entry is finite.
void require_finite(const Vector& x, const char* what);

}  // namespace otsel
