#include "otsel/measure.hpp"

#include <cmath>

#include "otsel/error.hpp"

namespace otsel {

EmpiricalMeasure::EmpiricalMeasure(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() < 1) throw InvalidArgument("empirical measure needs at least one point");
  if (weights_.size() != points_.rows())
    throw InvalidArgument("weights length does not match the number of points");
  if (!points_.allFinite()) throw InvalidArgument("measure coordinates must be finite");
  if ((weights_.array() < 0.0).any() || !weights_.allFinite())
    throw InvalidArgument("measure weights must be finite and nonnegative");
  if (std::abs(weights_.sum() - 1.0) > 1e-12)
    throw InvalidArgument("measure weights must sum to one");
  const double w0 = weights_(0);
  uniform_ = (weights_.array() == w0).all();
}

EmpiricalMeasure EmpiricalMeasure::uniform(Matrix points) {
  const Index n = points.rows();
  if (n < 1) throw InvalidArgument("empirical measure needs at least one point");
  Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
  return EmpiricalMeasure(std::move(points), std::move(w));
}

double EmpiricalMeasure::second_moment() const {
  return weights_.dot(points_.rowwise().squaredNorm());
}

Vector EmpiricalMeasure::mean() const { return points_.transpose() * weights_; }

double point_diameter(const Matrix& points) {
  double best = 0.0;
  const Index n = points.rows();
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      best = std::max(best, (points.row(i) - points.row(j)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

double measure_diameter(const EmpiricalMeasure& nu) { return point_diameter(nu.points()); }

}  // namespace otsel
