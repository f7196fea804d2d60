#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "oracles/oracles.hpp"
#include "otsel/rng.hpp"
#include "otsel/transport.hpp"

using namespace otsel;

namespace {

Vector random_simplex(CounterRng& rng, Index n) {
  Vector w = rng.uniform_matrix(n, 1, 0.1, 1.0).col(0);
  return w / w.sum();
}

/// Monotone (north-west corner) coupling of two 1-D measures, optimal for
/// any convex cost of x - y.
double monotone_cost_1d(const Vector& x, const Vector& a, const Vector& y, const Vector& b) {
  std::vector<Index> ix(static_cast<std::size_t>(x.size())), iy(static_cast<std::size_t>(y.size()));
  std::iota(ix.begin(), ix.end(), 0);
  std::iota(iy.begin(), iy.end(), 0);
  std::sort(ix.begin(), ix.end(), [&](Index p, Index q) { return x(p) < x(q); });
  std::sort(iy.begin(), iy.end(), [&](Index p, Index q) { return y(p) < y(q); });
  Vector ra = a, rb = b;
  std::size_t i = 0, j = 0;
  double cost = 0.0;
  while (i < ix.size() && j < iy.size()) {
    const double m = std::min(ra(ix[i]), rb(iy[j]));
    cost += m * (x(ix[i]) - y(iy[j])) * (x(ix[i]) - y(iy[j]));
    ra(ix[i]) -= m;
    rb(iy[j]) -= m;
    if (ra(ix[i]) <= 1e-15) ++i;
    if (rb(iy[j]) <= 1e-15) ++j;
  }
  return cost;
}

void expect_marginals(const Matrix& p, const Vector& a, const Vector& b) {
  EXPECT_GE(p.minCoeff(), -1e-14);
  EXPECT_LE((p.rowwise().sum() - a).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((p.colwise().sum().transpose() - b).cwiseAbs().maxCoeff(), 1e-9);
}

}  // namespace

TEST(SquaredDistances, MatchesDirectComputation) {
  CounterRng rng(1, "sq");
  const Matrix x = rng.normal_matrix(7, 3), y = rng.normal_matrix(5, 3);
  const Matrix d = squared_distances(x, y);
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(d(i, j), (x.row(i) - y.row(j)).squaredNorm(), 1e-12);
  EXPECT_GE(squared_distances(x, x).minCoeff(), 0.0);
}

TEST(ExactTransport, IdenticalCloudsGiveIdentityCoupling) {
  CounterRng rng(2, "id");
  const Matrix x = rng.normal_matrix(12, 2);
  const Vector a = Vector::Constant(12, 1.0 / 12);
  const Matrix p = exact_transport(a, a, squared_distances(x, x));
  EXPECT_LE((p - Matrix(a.asDiagonal())).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExactTransport, MatchesPermutationBruteForce) {
  CounterRng rng(3, "perm");
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    const Matrix cost = squared_distances(rng.normal_matrix(n, 2), rng.normal_matrix(n, 2));
    const Vector a = Vector::Constant(n, 1.0 / static_cast<double>(n));
    const Matrix p = exact_transport(a, a, cost);
    expect_marginals(p, a, a);
    EXPECT_NEAR(transport_cost(p, cost), oracle::brute_force_assignment(cost), 1e-12);
  }
}

TEST(ExactTransport, WeightedOneDimensionalMatchesMonotoneCoupling) {
  CounterRng rng(4, "w1d");
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(9));
    const Index m = 1 + static_cast<Index>(rng.below(9));
    const Matrix x = rng.normal_matrix(n, 1), y = rng.normal_matrix(m, 1);
    const Vector a = random_simplex(rng, n), b = random_simplex(rng, m);
    const Matrix cost = squared_distances(x, y);
    const Matrix p = exact_transport(a, b, cost);
    expect_marginals(p, a, b);
    EXPECT_NEAR(transport_cost(p, cost), monotone_cost_1d(x.col(0), a, y.col(0), b), 1e-10);
    // Vertex solution.
    EXPECT_LE((p.array() > 1e-15).count(), n + m - 1);
  }
}

TEST(ExactTransport, NegativeCostsAreAllowed) {
  CounterRng rng(5, "neg");
  const Index n = 5;
  const Matrix cost = rng.normal_matrix(n, n);
  const Vector a = Vector::Constant(n, 0.2);
  const Matrix p = exact_transport(a, a, cost);
  expect_marginals(p, a, a);
  EXPECT_NEAR(transport_cost(p, cost), oracle::brute_force_assignment(cost), 1e-12);
}

TEST(ExactTransport, RejectsMismatchedMasses) {
  const Vector a = Vector::Constant(2, 0.5);
  const Vector b = Vector::Constant(2, 0.6);
  EXPECT_ANY_THROW(exact_transport(a, b, Matrix::Zero(2, 2)));
  EXPECT_ANY_THROW(exact_transport(a, a, Matrix::Zero(3, 2)));
}
