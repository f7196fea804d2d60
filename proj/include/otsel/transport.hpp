#pragma once

#include "otsel/types.hpp"

namespace otsel {

/// Squared Euclidean distances |x_i - y_j|^2.
Matrix squared_distances(const Matrix& x, const Matrix& y);

/// Optimal coupling of the discrete problem min <P, C> with row sums a and
/// column sums b (both summing to 1), by successive shortest paths on the
/// bipartite residual graph. Dense O((n + m)^2) work per augmentation.
///
/// Costs must be finite; they are shifted internally so that negative
/// entries are allowed.
Matrix exact_transport(const Vector& a, const Vector& b, const Matrix& cost);

/// <P, C>.
double transport_cost(const Matrix& coupling, const Matrix& cost);

}  // namespace otsel
