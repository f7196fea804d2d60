#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles/oracles.hpp"
#include "otsel/rng.hpp"
#include "otsel/semidual.hpp"
#include "otsel/synthetic.hpp"

using namespace otsel;

namespace {

void expect_monotone(const ConvexPotential& f, std::uint64_t seed, int pairs = 1000) {
  CounterRng rng(seed, "mono");
  const Index d = f.dimension();
  for (int k = 0; k < pairs; ++k) {
    const Vector x = rng.uniform_matrix(d, 1, 0.0, 1.0).col(0);
    const Vector y = rng.uniform_matrix(d, 1, 0.0, 1.0).col(0);
    EXPECT_GE((f.gradient(x) - f.gradient(y)).dot(x - y), -1e-12);
  }
}

}  // namespace

TEST(GenQuadratic, EigenvaluesInRange) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto t = gen_quadratic(8, seed);
    const auto& q = dynamic_cast<const QuadraticPotential&>(*t.potential);
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(q.q()).eigenvalues();
    EXPECT_GE(ev.minCoeff(), 0.25 - 1e-12);
    EXPECT_LE(ev.maxCoeff(), 1.25 + 1e-12);
    EXPECT_EQ(t.kind, TruthKind::quadratic);
    EXPECT_EQ(t.seed, seed);
  }
}

TEST(GenQuadratic, Deterministic) {
  const auto a = gen_quadratic(5, 42), b = gen_quadratic(5, 42), c = gen_quadratic(5, 43);
  const auto& qa = dynamic_cast<const QuadraticPotential&>(*a.potential);
  const auto& qb = dynamic_cast<const QuadraticPotential&>(*b.potential);
  const auto& qc = dynamic_cast<const QuadraticPotential&>(*c.potential);
  EXPECT_EQ(qa.q(), qb.q());
  EXPECT_EQ(qa.b(), qb.b());
  EXPECT_NE(qa.b(), qc.b());
}

TEST(RandomOrthogonal, IsOrthogonal) {
  for (Index d : {1, 2, 5, 16}) {
    const Matrix o = random_orthogonal(d, 3);
    EXPECT_LE((o.transpose() * o - Matrix::Identity(d, d)).norm(), 1e-10);
  }
}

TEST(TensorizedMap, ValueAtZero) {
  const Vector t = tensorized_map(Vector::Zero(3));
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(t(k), 1.0 / 4.8, 1e-15);
}

TEST(TensorizedMap, MonotoneAndCoordinatewise) {
  CounterRng rng(1, "tmap");
  std::vector<double> xs(10000);
  for (auto& v : xs) v = rng.uniform(-2.0, 2.0);
  std::sort(xs.begin(), xs.end());
  double prev = -INFINITY;
  for (double v : xs) {
    const double out = tensorized_map(Vector::Constant(1, v))(0);
    EXPECT_GT(out, prev);
    prev = out;
  }
  Vector x(4);
  x << 0.1, 0.7, -0.3, 0.45;
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
  perm.indices() << 2, 0, 3, 1;
  EXPECT_EQ(tensorized_map(perm * x), perm * tensorized_map(x));
}

TEST(TensorizedPotential, DerivativesAreConsistent) {
  // A' by Simpson quadrature of 1/(5.8 - cos 6 pi t).
  for (double t : {-0.8, -0.1, 0.05, 0.33, 1.7}) {
    const double integral = oracle::simpson(
        [](double s) { return 1.0 / (5.8 - std::cos(6.0 * M_PI * s)); }, 0.0, t, 2000);
    EXPECT_NEAR(TensorizedPotential::antiderivative(t), integral, 1e-10) << t;
    const double h = 1e-5;
    EXPECT_NEAR((TensorizedPotential::derivative(t + h) - TensorizedPotential::derivative(t - h)) /
                    (2 * h),
                TensorizedPotential::second_derivative(t), 1e-6);
  }
  const TensorizedPotential f(3);
  CounterRng rng(2, "tfd");
  for (int k = 0; k < 10; ++k) {
    const Vector x = rng.normal_vector(3);
    EXPECT_LE((f.gradient(x) - tensorized_map(x)).norm(), 1e-14);
    const Vector fd = oracle::fd_gradient([&](const Vector& p) { return f.value(p); }, x, 1e-5);
    EXPECT_LE((fd - f.gradient(x)).norm(), 1e-7);
  }
  const auto b = f.bounds();
  EXPECT_GT(*b.gamma, 0.0);
  EXPECT_GT(*b.m_smooth, 1.0);
}

TEST(GenLse, StructureAndDeterminism) {
  const auto t = gen_lse(4, 9);
  const auto& r = dynamic_cast<const RegularizedPotential&>(*t.potential);
  EXPECT_DOUBLE_EQ(r.delta(), 0.001);
  const auto& lse = dynamic_cast<const LsePotential&>(*r.base());
  EXPECT_EQ(lse.centers().rows(), 10);
  EXPECT_DOUBLE_EQ(lse.temperature(), 0.3);
  EXPECT_LE(lse.centers().cwiseAbs().maxCoeff(), 1.0);
  const auto& again = dynamic_cast<const LsePotential&>(
      *dynamic_cast<const RegularizedPotential&>(*gen_lse(4, 9).potential).base());
  EXPECT_EQ(again.centers(), lse.centers());
  EXPECT_EQ(again.shifts(), lse.shifts());
}

TEST(GenLse, GradientLiesNearCenterHull) {
  // In every direction the unregularized gradient is bounded by the extreme
  // center projections.
  const auto t = gen_lse(3, 4);
  const auto& r = dynamic_cast<const RegularizedPotential&>(*t.potential);
  const auto& lse = dynamic_cast<const LsePotential&>(*r.base());
  CounterRng rng(4, "hull");
  for (int k = 0; k < 100; ++k) {
    const Vector x = rng.uniform_matrix(3, 1, 0.0, 1.0).col(0);
    const Vector g = t.potential->gradient(x) - r.delta() * x;
    const Vector dir = rng.normal_vector(3).normalized();
    const Vector proj = lse.centers() * dir;
    EXPECT_LE(g.dot(dir), proj.maxCoeff() + 1e-12);
    EXPECT_GE(g.dot(dir), proj.minCoeff() - 1e-12);
  }
}

TEST(GroundTruth, AllKindsAreMonotoneAndHaveZeroSelfError) {
  for (auto kind : {TruthKind::quadratic, TruthKind::tensorized, TruthKind::lse}) {
    const auto t = generate_truth(kind, 4, 5);
    EXPECT_EQ(t.kind, kind);
    expect_monotone(*t.potential, 5);
    const auto ds = make_dataset(t, 50, 5);
    EXPECT_EQ(quadratic_error(*t.potential, *t.potential, ds.mu), 0.0);
    EXPECT_EQ(parse_truth_kind(to_string(kind)), kind);
  }
  EXPECT_ANY_THROW(parse_truth_kind("cubic"));
}

TEST(MakeDataset, IdentityPushforwardIsUniform) {
  const auto t = identity_truth(3);
  const Index n = 2000;
  const auto ds = make_dataset(t, n, 6);
  const double crit = 1.63 / std::sqrt(static_cast<double>(n));  // KS, level 0.01
  for (Index k = 0; k < 3; ++k) {
    std::vector<double> col(ds.nu.points().col(k).data(), ds.nu.points().col(k).data() + n);
    std::sort(col.begin(), col.end());
    double stat = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double v = col[static_cast<std::size_t>(i)];
      stat = std::max({stat, std::abs(static_cast<double>(i + 1) / n - v),
                       std::abs(v - static_cast<double>(i) / n)});
    }
    EXPECT_LT(stat, crit);
  }
  EXPECT_GE(ds.mu.points().minCoeff(), 0.0);
  EXPECT_LT(ds.mu.points().maxCoeff(), 1.0);
}

TEST(MakeDataset, TargetsAreAnIndependentPushforward) {
  const auto t = gen_quadratic(3, 7);
  const auto ds = make_dataset(t, 4000, 7);
  // Not the image of the source points themselves.
  EXPECT_GT((t.potential->gradients(ds.mu.points()) - ds.nu.points()).norm(), 1.0);
  // Mean of nu against a large fresh sample of T0.
  CounterRng rng(7, "fresh");
  const Matrix fresh = t.potential->gradients(rng.uniform_matrix(100000, 3, 0.0, 1.0));
  const Vector ref = fresh.colwise().mean();
  const Vector sd = ((fresh.rowwise() - ref.transpose()).array().square().colwise().mean()).sqrt();
  const Vector mean = ds.nu.mean();
  for (Index k = 0; k < 3; ++k) EXPECT_LE(std::abs(mean(k) - ref(k)), 3 * sd(k) / std::sqrt(4000.0));
}

TEST(MakeBatches, BatchesAreDistinctAndReproducible) {
  const auto t = gen_quadratic(2, 8);
  const auto a = make_batches(t, 30, 8), b = make_batches(t, 30, 8);
  EXPECT_EQ(a.train.mu.points(), b.train.mu.points());
  EXPECT_EQ(a.eval.nu.points(), b.eval.nu.points());
  EXPECT_NE(a.train.mu.points(), a.test.mu.points());
  EXPECT_NE(a.test.mu.points(), a.eval.mu.points());
  EXPECT_EQ(a.train.mu.size(), 30);
}
