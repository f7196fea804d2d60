#pragma once

#include "otsel/types.hpp"

namespace otsel {

/// n weighted points in R^d. Rows of points() are the samples.
class EmpiricalMeasure {
 public:
  /// Weights must be nonnegative and sum to one within 1e-12.
  EmpiricalMeasure(Matrix points, Vector weights);

  /// Uniform weights 1/n.
  static EmpiricalMeasure uniform(Matrix points);

  const Matrix& points() const { return points_; }
  const Vector& weights() const { return weights_; }
  Index size() const { return points_.rows(); }
  Index dimension() const { return points_.cols(); }
  bool is_uniform() const { return uniform_; }

  Vector point(Index i) const { return points_.row(i).transpose(); }

  /// Weighted mean of the squared norms.
  double second_moment() const;
  Vector mean() const;

 private:
  Matrix points_;
  Vector weights_;
  bool uniform_ = false;
};

/// Largest pairwise Euclidean distance between rows; 0 for a single row.
double point_diameter(const Matrix& points);

/// D(nu) = sup over support pairs of |y - z|.
double measure_diameter(const EmpiricalMeasure& nu);

}  // namespace otsel
