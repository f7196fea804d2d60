#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "otsel/measure.hpp"
#include "otsel/potential.hpp"

namespace otsel {

enum class TruthKind { quadratic, tensorized, lse };
std::string to_string(TruthKind k);
TruthKind parse_truth_kind(const std::string& s);

/// Ground-truth Brenier potential; the map is T0 = grad potential.
struct GroundTruth {
  PotentialPtr potential;
  TruthKind kind;
  std::uint64_t seed;
};

/// Q = O'DO + I/4 with O Haar-orthogonal and D uniform on [0, 1], b standard
/// normal.
GroundTruth gen_quadratic(Index d, std::uint64_t seed);

/// f(x) = 1/2 |x|^2 (Q = I, b = 0).
GroundTruth identity_truth(Index d);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, signs fixed
/// by the diagonal of R).
Matrix random_orthogonal(Index d, std::uint64_t seed);

/// x + 1 / (5.8 - cos(6 pi x)), coordinate-wise.
Vector tensorized_map(const Vector& x);

/// sum_k F(x_k) with F(t) = t^2/2 + A(t) and A' = 1/(5.8 - cos(6 pi t)).
class TensorizedPotential final : public ConvexPotential {
 public:
  explicit TensorizedPotential(Index d);

  /// Closed-form antiderivative A with A(0) = 0.
  static double antiderivative(double t);
  static double derivative(double t);         // F'(t)
  static double second_derivative(double t);  // F''(t)

  Index dimension() const override { return d_; }
  std::string kind() const override { return "tensorized"; }
  double value(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  std::optional<Matrix> hessian(const Vector& x) const override;
  bool has_hessian() const override { return true; }
  RegularityBounds bounds() const override;

 private:
  Index d_;
};

GroundTruth gen_tensorized(Index d, std::uint64_t seed);

/// t lse(Cx/t + b) + (delta/2)|x|^2 with 10 centers uniform in [-1, 1]^d,
/// b standard normal, t = 0.3 and delta = 0.001.
GroundTruth gen_lse(Index d, std::uint64_t seed);

GroundTruth generate_truth(TruthKind kind, Index d, std::uint64_t seed);

/// mu uniform on [0, 1]^d; nu the image under T0 of an independent uniform
/// sample. `batch` names the stream so differently named batches are
/// independent.
struct SampledPair {
  EmpiricalMeasure mu;
  EmpiricalMeasure nu;
};
SampledPair make_dataset(const GroundTruth& truth, Index n, std::uint64_t seed,
                         const std::string& batch = "train");

/// Independent train / test / eval batches of equal size.
struct BenchmarkBatches {
  SampledPair train;
  SampledPair test;
  SampledPair eval;
};
BenchmarkBatches make_batches(const GroundTruth& truth, Index n, std::uint64_t seed);

}  // namespace otsel
