#include "otsel/transport.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "otsel/error.hpp"

namespace otsel {

Matrix squared_distances(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw InvalidArgument("squared_distances: dimension mismatch");
  Matrix out = -2.0 * x * y.transpose();
  out.colwise() += x.rowwise().squaredNorm();
  out.rowwise() += y.rowwise().squaredNorm().transpose();
  return out.cwiseMax(0.0);
}

double transport_cost(const Matrix& coupling, const Matrix& cost) {
  if (coupling.rows() != cost.rows() || coupling.cols() != cost.cols())
    throw InvalidArgument("transport_cost: shape mismatch");
  return coupling.cwiseProduct(cost).sum();
}

Matrix exact_transport(const Vector& a, const Vector& b, const Matrix& cost) {
  const Index n = a.size();
  const Index m = b.size();
  if (cost.rows() != n || cost.cols() != m) throw InvalidArgument("exact_transport: cost shape");
  if (n == 0 || m == 0) throw InvalidArgument("exact_transport: empty marginal");
  if (!cost.allFinite()) throw InvalidArgument("exact_transport: non-finite cost");
  if ((a.array() < 0).any() || (b.array() < 0).any())
    throw InvalidArgument("exact_transport: negative mass");
  if (std::abs(a.sum() - b.sum()) > 1e-9)
    throw InvalidArgument("exact_transport: marginals carry different mass");

  const Matrix c = cost.array() - cost.minCoeff();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double eps = 1e-14 * std::max(1.0, a.sum());

  Matrix flow = Matrix::Zero(n, m);
  Vector supply = a;
  Vector demand = b;
  // Node potentials: rows 0..n-1, columns n..n+m-1.
  Vector pot = Vector::Zero(n + m);
  Vector dist(n + m);
  std::vector<Index> parent(static_cast<std::size_t>(n + m));
  std::vector<char> done(static_cast<std::size_t>(n + m));

  for (int guard = 0; supply.sum() > eps; ++guard) {
    if (guard > 4 * (n + m) * (n + m) + 100)
      throw NumericalFailure("exact_transport: too many augmentations");
    dist.setConstant(kInf);
    std::fill(done.begin(), done.end(), 0);
    for (Index i = 0; i < n; ++i)
      if (supply(i) > eps) {
        dist(i) = 0.0;
        parent[static_cast<std::size_t>(i)] = -1;
      }
    Index sink = -1;
    while (true) {
      Index u = -1;
      double best = kInf;
      for (Index v = 0; v < n + m; ++v)
        if (!done[static_cast<std::size_t>(v)] && dist(v) < best) {
          best = dist(v);
          u = v;
        }
      if (u < 0) break;
      done[static_cast<std::size_t>(u)] = 1;
      if (u >= n && demand(u - n) > eps) {
        sink = u;
        break;
      }
      if (u < n) {
        for (Index j = 0; j < m; ++j) {
          const Index v = n + j;
          if (done[static_cast<std::size_t>(v)]) continue;
          const double nd = dist(u) + c(u, j) + pot(u) - pot(v);
          if (nd < dist(v)) {
            dist(v) = nd;
            parent[static_cast<std::size_t>(v)] = u;
          }
        }
      } else {
        const Index j = u - n;
        for (Index i = 0; i < n; ++i) {
          if (done[static_cast<std::size_t>(i)] || flow(i, j) <= 0.0) continue;
          const double nd = dist(u) - c(i, j) + pot(u) - pot(i);
          if (nd < dist(i)) {
            dist(i) = nd;
            parent[static_cast<std::size_t>(i)] = u;
          }
        }
      }
    }
    if (sink < 0) throw NumericalFailure("exact_transport: no augmenting path");

    const double dt = dist(sink);
    for (Index v = 0; v < n + m; ++v) pot(v) += std::min(dist(v), dt);

    // Bottleneck along the path.
    double push = demand(sink - n);
    Index v = sink;
    while (true) {
      const Index p = parent[static_cast<std::size_t>(v)];
      if (p < 0) {
        push = std::min(push, supply(v));
        break;
      }
      if (v < n) push = std::min(push, flow(v, p - n));  // backward arc col p -> row v
      v = p;
    }
    v = sink;
    while (true) {
      const Index p = parent[static_cast<std::size_t>(v)];
      if (p < 0) {
        supply(v) -= push;
        break;
      }
      if (v >= n)
        flow(p, v - n) += push;
      else
        flow(v, p - n) -= push;
      v = p;
    }
    demand(sink - n) -= push;
  }
  return flow.cwiseMax(0.0);
}

}  // namespace otsel
