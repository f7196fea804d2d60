#include "otsel/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "otsel/error.hpp"
#include "otsel/rng.hpp"

namespace otsel {

namespace {

constexpr double kA = 5.8;
constexpr double kOmega = 6.0 * std::numbers::pi;

void check_dimension(Index d) {
  if (d < 1) throw InvalidArgument("dimension must be at least 1");
}

// max_t |d/dt 1/(a - cos wt)| = w max_s sin s / (a - cos s)^2, by a fine scan.
double tensorized_curvature_bound() {
  static const double bound = [] {
    double best = 0.0;
    constexpr int kSteps = 200000;
    for (int i = 0; i <= kSteps; ++i) {
      const double s = std::numbers::pi * i / kSteps;
      const double den = kA - std::cos(s);
      best = std::max(best, std::sin(s) / (den * den));
    }
    return kOmega * best * (1.0 + 1e-6);
  }();
  return bound;
}

}  // namespace

std::string to_string(TruthKind k) {
  switch (k) {
    case TruthKind::quadratic:
      return "quadratic";
    case TruthKind::tensorized:
      return "tensorized";
    case TruthKind::lse:
      return "lse";
  }
  return "unknown";
}

TruthKind parse_truth_kind(const std::string& s) {
  if (s == "quadratic") return TruthKind::quadratic;
  if (s == "tensorized") return TruthKind::tensorized;
  if (s == "lse") return TruthKind::lse;
  throw InvalidArgument("unknown ground-truth kind '" + s + "'");
}

Matrix random_orthogonal(Index d, std::uint64_t seed) {
  check_dimension(d);
  CounterRng rng(seed, "orthogonal");
  const Matrix g = rng.normal_matrix(d, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index k = 0; k < d; ++k)
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  return q;
}

GroundTruth gen_quadratic(Index d, std::uint64_t seed) {
  check_dimension(d);
  const Matrix o = random_orthogonal(d, seed);
  CounterRng rng(seed, "quadratic");
  Vector diag(d);
  for (Index k = 0; k < d; ++k) diag(k) = rng.uniform();
  Matrix q = o.transpose() * diag.asDiagonal() * o;
  q = 0.5 * (q + q.transpose());
  q.diagonal().array() += 0.25;
  Vector b = rng.normal_vector(d);
  return {std::make_shared<QuadraticPotential>(std::move(q), std::move(b)), TruthKind::quadratic,
          seed};
}

GroundTruth identity_truth(Index d) {
  check_dimension(d);
  return {QuadraticPotential::isotropic(d, 1.0), TruthKind::quadratic, 0};
}

Vector tensorized_map(const Vector& x) {
  Vector out(x.size());
  for (Index k = 0; k < x.size(); ++k) out(k) = TensorizedPotential::derivative(x(k));
  return out;
}

TensorizedPotential::TensorizedPotential(Index d) : d_(d) { check_dimension(d); }

double TensorizedPotential::antiderivative(double t) {
  const double theta = 0.5 * kOmega * t;
  const double k = std::sqrt((kA + 1.0) / (kA - 1.0));
  const double branch = std::numbers::pi * std::floor(theta / std::numbers::pi + 0.5);
  return 2.0 / (kOmega * std::sqrt(kA * kA - 1.0)) * (std::atan(k * std::tan(theta)) + branch);
}

double TensorizedPotential::derivative(double t) { return t + 1.0 / (kA - std::cos(kOmega * t)); }

double TensorizedPotential::second_derivative(double t) {
  const double den = kA - std::cos(kOmega * t);
  return 1.0 - kOmega * std::sin(kOmega * t) / (den * den);
}

double TensorizedPotential::value(const Vector& x) const {
  require_finite(x, "TensorizedPotential::value");
  double s = 0.0;
  for (Index k = 0; k < x.size(); ++k) s += 0.5 * x(k) * x(k) + antiderivative(x(k));
  return s;
}

Vector TensorizedPotential::gradient(const Vector& x) const {
  require_finite(x, "TensorizedPotential::gradient");
  return tensorized_map(x);
}

std::optional<Matrix> TensorizedPotential::hessian(const Vector& x) const {
  require_finite(x, "TensorizedPotential::hessian");
  Vector diag(x.size());
  for (Index k = 0; k < x.size(); ++k) diag(k) = second_derivative(x(k));
  return Matrix(diag.asDiagonal());
}

RegularityBounds TensorizedPotential::bounds() const {
  const double c = tensorized_curvature_bound();
  return {1.0 - c, 1.0 + c};
}

GroundTruth gen_tensorized(Index d, std::uint64_t seed) {
  return {std::make_shared<TensorizedPotential>(d), TruthKind::tensorized, seed};
}

GroundTruth gen_lse(Index d, std::uint64_t seed) {
  check_dimension(d);
  CounterRng rng(seed, "lse");
  Matrix centers = rng.uniform_matrix(10, d, -1.0, 1.0);
  Vector shifts = rng.normal_vector(10);
  auto lse = std::make_shared<LsePotential>(std::move(centers), std::move(shifts), 0.3);
  return {regularize(lse, 0.001), TruthKind::lse, seed};
}

GroundTruth generate_truth(TruthKind kind, Index d, std::uint64_t seed) {
  switch (kind) {
    case TruthKind::quadratic:
      return gen_quadratic(d, seed);
    case TruthKind::tensorized:
      return gen_tensorized(d, seed);
    case TruthKind::lse:
      return gen_lse(d, seed);
  }
  throw InvalidArgument("unknown ground-truth kind");
}

SampledPair make_dataset(const GroundTruth& truth, Index n, std::uint64_t seed,
                         const std::string& batch) {
  if (!truth.potential) throw InvalidArgument("make_dataset: null ground truth");
  if (n < 1) throw InvalidArgument("make_dataset: n must be positive");
  const Index d = truth.potential->dimension();
  CounterRng src(seed, batch + "/source");
  CounterRng tgt(seed, batch + "/target");
  Matrix x = src.uniform_matrix(n, d, 0.0, 1.0);
  const Matrix x_other = tgt.uniform_matrix(n, d, 0.0, 1.0);
  Matrix y = truth.potential->gradients(x_other);
  return {EmpiricalMeasure::uniform(std::move(x)), EmpiricalMeasure::uniform(std::move(y))};
}

BenchmarkBatches make_batches(const GroundTruth& truth, Index n, std::uint64_t seed) {
  return {make_dataset(truth, n, seed, "train"), make_dataset(truth, n, seed, "test"),
          make_dataset(truth, n, seed, "eval")};
}

}  // namespace otsel
