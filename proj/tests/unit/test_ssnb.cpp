#include <gtest/gtest.h>

#include <cmath>

#include "oracles/oracles.hpp"
#include "otsel/error.hpp"
#include "otsel/rng.hpp"
#include "otsel/ssnb.hpp"
#include "otsel/transport.hpp"

using namespace otsel;

namespace {

SsnbConfig config(double l, double big_l, int outer = 10) {
  SsnbConfig cfg;
  cfg.l = l;
  cfg.big_l = big_l;
  cfg.outer_iters = outer;
  cfg.conic_tol = 1e-8;
  cfg.conic_max_iter = 200000;
  return cfg;
}

/// Source cube sample and its image under x -> a x + shift, as paired measures.
struct Realizable {
  EmpiricalMeasure mu;
  EmpiricalMeasure nu;
  double a;
  Vector shift;
};

Realizable realizable(Index n, Index d, double a, std::uint64_t seed) {
  CounterRng rng(seed, "realizable");
  Matrix x = rng.uniform_matrix(n, d, 0.0, 1.0);
  Vector shift = rng.normal_vector(d);
  Matrix y = (a * x).rowwise() + shift.transpose();
  return {EmpiricalMeasure::uniform(std::move(x)), EmpiricalMeasure::uniform(std::move(y)), a, shift};
}

/// The fitting QCQP over w = [u_2..u_n, z_1..z_n], written directly from the
/// interpolation inequality, for the dense barrier oracle.
double oracle_fit_objective(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                            const Matrix& p, double l, double big_l) {
  const Index n = mu.size(), d = mu.dimension();
  const Index nv = (n - 1) + n * d;
  auto zc = [&](Index i) { return (n - 1) + i * d; };
  const double k = big_l - l;
  Matrix q0 = Matrix::Zero(nv, nv);
  Vector c0 = Vector::Zero(nv);
  const Matrix m = p * nu.points();
  for (Index i = 0; i < n; ++i) {
    q0.block(zc(i), zc(i), d, d) = 2.0 * p.row(i).sum() * Matrix::Identity(d, d);
    c0.segment(zc(i), d) = -2.0 * m.row(i).transpose();
  }
  std::vector<oracle::DenseQuadratic> cons;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Vector dx = (mu.points().row(i) - mu.points().row(j)).transpose();
      oracle::DenseQuadratic g;
      g.q = Matrix::Zero(nv, nv);
      g.c = Vector::Zero(nv);
      const Matrix id = Matrix::Identity(d, d) / k;
      g.q.block(zc(i), zc(i), d, d) += id;
      g.q.block(zc(j), zc(j), d, d) += id;
      g.q.block(zc(i), zc(j), d, d) -= id;
      g.q.block(zc(j), zc(i), d, d) -= id;
      if (j > 0) g.c(j - 1) += 1.0;
      if (i > 0) g.c(i - 1) -= 1.0;
      g.c.segment(zc(j), d) += (1.0 + l / k) * dx;
      g.c.segment(zc(i), d) -= (l / k) * dx;
      g.r = l * big_l * dx.squaredNorm() / (2.0 * k);
      cons.push_back(std::move(g));
    }
  // Strictly feasible start: the mid-class quadratic.
  const double a = 0.5 * (l + big_l);
  Vector w0(nv);
  const Vector u = 0.5 * a * mu.points().rowwise().squaredNorm();
  for (Index i = 1; i < n; ++i) w0(i - 1) = u(i) - u(0);
  for (Index i = 0; i < n; ++i) w0.segment(zc(i), d) = a * mu.points().row(i).transpose();
  const Vector w = oracle::qcqp_barrier(q0, c0, cons, w0);
  Matrix z(n, d);
  for (Index i = 0; i < n; ++i) z.row(i) = w.segment(zc(i), d).transpose();
  return transport_cost(p, squared_distances(z, nu.points()));
}

}  // namespace

TEST(InterpolationConstraint, DegeneratePairHasZeroSlack) {
  const Vector x = Vector::Constant(2, 0.3), z = Vector::Constant(2, -1.0);
  EXPECT_NEAR(interpolation_constraint(x, x, z, z, 0.7, 0.7, 0.5, 1.2), 0.0, 1e-15);
  EXPECT_NEAR(interpolation_constraint(x, x, z, z, 0.7, 0.7, 0.5, 1.2, ConstraintVariant::printed),
              0.0, 1e-15);
}

TEST(InterpolationConstraint, MidClassQuadraticSatisfiesAllPairs) {
  const double l = 0.5, big_l = 1.2, a = 0.5 * (l + big_l);
  Vector x1(1), x2(1);
  x1 << -0.4;
  x2 << 0.9;
  auto slack = [&](const Vector& xi, const Vector& xj) {
    return interpolation_constraint(xi, xj, a * xi, a * xj, 0.5 * a * xi.squaredNorm(),
                                    0.5 * a * xj.squaredNorm(), l, big_l);
  };
  EXPECT_GE(slack(x1, x2), 0.0);
  EXPECT_GE(slack(x2, x1), 0.0);
}

TEST(InterpolationConstraint, TaylorVariantIsExactForQuadratics) {
  // a/2 |x|^2 + b'x is in the class iff l <= a <= L.
  CounterRng rng(1, "taylor");
  const double l = 0.5, big_l = 1.2;
  for (double a : {0.3, 0.5, 0.8, 1.2, 1.5}) {
    const Vector b = rng.normal_vector(3);
    double worst = INFINITY;
    for (int k = 0; k < 200; ++k) {
      const Vector xi = rng.normal_vector(3), xj = rng.normal_vector(3);
      worst = std::min(worst, interpolation_constraint(
                                  xi, xj, a * xi + b, a * xj + b, 0.5 * a * xi.squaredNorm() + b.dot(xi),
                                  0.5 * a * xj.squaredNorm() + b.dot(xj), l, big_l));
    }
    if (a >= l && a <= big_l)
      EXPECT_GE(worst, -1e-12) << a;
    else
      EXPECT_LT(worst, 0.0) << a;
  }
}

TEST(InterpolationConstraint, ForcedViolation) {
  const Vector xi = Vector::Ones(2), xj = Vector::Zero(2);
  EXPECT_LT(interpolation_constraint(xi, xj, xi, xj, -100.0, 0.0, 0.5, 1.2), 0.0);
  EXPECT_THROW(interpolation_constraint(xi, xj, xi, xj, 0, 0, 1.2, 0.5), InvalidArgument);
}

TEST(InterpolationConstraint, PrintedVariantDiffers) {
  const Vector xi = Vector::Constant(1, 1.0), xj = Vector::Zero(1);
  const double a = 0.85;
  const double taylor = interpolation_constraint(xi, xj, a * xi, a * xj, 0.5 * a, 0.0, 0.5, 1.2);
  const double printed = interpolation_constraint(xi, xj, a * xi, a * xj, 0.5 * a, 0.0, 0.5, 1.2,
                                                  ConstraintVariant::printed);
  EXPECT_GT(std::abs(taylor - printed), 1e-3);
  EXPECT_EQ(parse_constraint_variant("printed"), ConstraintVariant::printed);
  EXPECT_EQ(to_string(ConstraintVariant::taylor), "taylor");
  EXPECT_THROW(parse_constraint_variant("other"), InvalidArgument);
}

TEST(SsnbConfig, Validation) {
  EXPECT_THROW(config(0.5, 0.5).validate(), InvalidArgument);
  EXPECT_THROW(config(0.0, 0.5).validate(), InvalidArgument);
  EXPECT_THROW(config(0.2, 0.5, 0).validate(), InvalidArgument);
  EXPECT_NO_THROW(config(0.2, 0.5).validate());
}

TEST(CouplingStep, SameOrderGivesIdentity) {
  CounterRng rng(2, "cid");
  const auto nu = EmpiricalMeasure::uniform(rng.normal_matrix(9, 2));
  const Matrix p = coupling_step(nu.points(), nu.weights(), nu, CouplingMode::exact);
  EXPECT_LE((p - Matrix(nu.weights().asDiagonal())).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CouplingStep, ExactMatchesBruteForce) {
  CounterRng rng(3, "cbf");
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix z = rng.normal_matrix(3, 2);
    const auto nu = EmpiricalMeasure::uniform(rng.normal_matrix(3, 2));
    const Matrix p = coupling_step(z, Vector::Constant(3, 1.0 / 3), nu, CouplingMode::exact);
    const Matrix cost = squared_distances(z, nu.points());
    EXPECT_NEAR(transport_cost(p, cost), oracle::brute_force_assignment(cost), 1e-12);
    EXPECT_LE((p.array() > 0).count(), 5);
  }
}

TEST(CouplingStep, EntropicCostIsCloseToExact) {
  CounterRng rng(4, "cent");
  const Matrix z = rng.uniform_matrix(20, 2, 0.0, 1.0);
  const auto nu = EmpiricalMeasure::uniform(rng.uniform_matrix(20, 2, 0.0, 1.0));
  const Vector a = Vector::Constant(20, 0.05);
  const Matrix cost = squared_distances(z, nu.points());
  const double exact = transport_cost(coupling_step(z, a, nu, CouplingMode::exact), cost);
  const Matrix pe = coupling_step(z, a, nu, CouplingMode::entropic, 0.01);
  EXPECT_LE((pe.rowwise().sum() - a).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((pe.colwise().sum().transpose() - nu.weights()).cwiseAbs().maxCoeff(), 1e-6);
  // Entropic optimality against the (permutation) optimum for the cost
  // |x - y|^2 / 2 bounds the excess by 2 eps (H(pe) - H(p*)) <= 2 eps log 20.
  const double entropic = transport_cost(pe, cost);
  EXPECT_GE(entropic, exact - 1e-9);
  EXPECT_LE(entropic, exact + 2 * 0.01 * std::log(20.0));
}

TEST(FitStep, SingleAnchorIsBarycenter) {
  CounterRng rng(5, "one");
  const auto mu = EmpiricalMeasure::uniform(Matrix::Zero(1, 2));
  const auto nu = EmpiricalMeasure::uniform(rng.normal_matrix(4, 2));
  const Matrix p = Matrix::Constant(1, 4, 0.25);
  const auto step = fit_step(mu, nu, p, config(0.5, 1.2));
  EXPECT_LE((step.z.row(0).transpose() - nu.mean()).norm(), 1e-6);
  EXPECT_EQ(step.u(0), 0.0);
}

TEST(FitStep, InactiveConstraintsGiveRowBarycenters) {
  Matrix x(2, 1), y(2, 1);
  x << 0, 1;
  y << 0.1, 1.0;  // slope 0.9, strictly inside [0.5, 1.2]
  const auto mu = EmpiricalMeasure::uniform(x);
  const auto nu = EmpiricalMeasure::uniform(y);
  const Matrix p = Matrix(mu.weights().asDiagonal());
  const auto step = fit_step(mu, nu, p, config(0.5, 1.2));
  EXPECT_LE((step.z - y).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(FitStep, MatchesDenseBarrierOracle) {
  CounterRng rng(6, "fitoracle");
  const auto mu = EmpiricalMeasure::uniform(rng.uniform_matrix(16, 2, 0.0, 1.0));
  Matrix y = rng.uniform_matrix(16, 2, 0.0, 1.0);
  y.col(0) = 2.0 * y.col(0);  // forces some constraints to bind
  const auto nu = EmpiricalMeasure::uniform(y);
  const Matrix p = coupling_step(mu.points(), mu.weights(), nu, CouplingMode::exact);
  const double l = 0.5, big_l = 1.2;
  const auto step = fit_step(mu, nu, p, config(l, big_l));
  const double ref = oracle_fit_objective(mu, nu, p, l, big_l);
  EXPECT_NEAR(step.objective, ref, 1e-3);
  const SsnbPotential f(mu.points(), step.u, step.z, l, big_l);
  EXPECT_GE(f.min_slack(), -1e-6);
}

TEST(FitStep, BarrierAndConicSolversAgree) {
  CounterRng rng(16, "solvers");
  const auto mu = EmpiricalMeasure::uniform(rng.normal_matrix(12, 3));
  const auto nu = EmpiricalMeasure::uniform(1.8 * rng.normal_matrix(12, 3));
  const Matrix p = coupling_step(mu.points(), mu.weights(), nu, CouplingMode::exact);
  SsnbConfig cfg = config(0.5, 1.2);
  const auto interior = fit_step(mu, nu, p, cfg);
  cfg.solver = FitSolver::conic;
  const auto conic = fit_step(mu, nu, p, cfg);
  EXPECT_EQ(interior.solver, FitSolver::interior_point);
  EXPECT_EQ(conic.solver, FitSolver::conic);
  EXPECT_NEAR(interior.objective, conic.objective, 1e-5);
  EXPECT_LE((interior.z - conic.z).cwiseAbs().maxCoeff(), 1e-3);
  const SsnbPotential f(mu.points(), interior.u, interior.z, 0.5, 1.2);
  EXPECT_GE(f.min_slack(), -1e-9);
}

TEST(FitStep, DuplicateAnchorsFallBackToConic) {
  Matrix x(3, 1), y(3, 1);
  x << 0.0, 0.0, 1.0;
  y << -0.2, 0.3, 1.0;
  const auto mu = EmpiricalMeasure::uniform(x);
  const auto nu = EmpiricalMeasure::uniform(y);
  const Matrix p = Matrix(mu.weights().asDiagonal());
  SsnbConfig cfg = config(0.5, 1.2);
  cfg.conic_tol = 1e-6;
  const auto step = fit_step(mu, nu, p, cfg);
  EXPECT_EQ(step.solver, FitSolver::conic);
  EXPECT_NEAR(step.z(0, 0), step.z(1, 0), 1e-2);
}

TEST(FitSolverNames, RoundTrip) {
  EXPECT_EQ(parse_fit_solver(to_string(FitSolver::interior_point)), FitSolver::interior_point);
  EXPECT_EQ(parse_fit_solver(to_string(FitSolver::conic)), FitSolver::conic);
  EXPECT_THROW(parse_fit_solver("simplex"), InvalidArgument);
}

TEST(SsnbFit, SingleSourcePointMovesToBarycenter) {
  CounterRng rng(7, "fit1");
  const auto mu = EmpiricalMeasure::uniform(Matrix::Constant(1, 2, 0.5));
  const auto nu = EmpiricalMeasure::uniform(rng.normal_matrix(5, 2));
  const auto fit = ssnb_fit(mu, nu, config(0.5, 1.2, 2));
  EXPECT_LE((fit.potential->anchor_gradients().row(0).transpose() - nu.mean()).norm(), 1e-6);
}

TEST(SsnbFit, RecoversRealizableMapAndStaysInClass) {
  const double l = 0.5, big_l = 1.2;
  const auto inst = realizable(20, 2, 0.5 * (l + big_l), 8);
  const auto fit = ssnb_fit(inst.mu, inst.nu, config(l, big_l, 5));
  const auto& f = *fit.potential;
  EXPECT_GE(f.min_slack(), -1e-6);
  const Matrix target = inst.nu.points();
  const double e = (f.anchor_gradients() - target).rowwise().squaredNorm().mean();
  EXPECT_LE(e, 1e-3 * inst.mu.second_moment());

  // Transport cost trace is non-increasing.
  for (std::size_t k = 1; k < fit.cost_trace.size(); ++k)
    EXPECT_LE(fit.cost_trace[k], fit.cost_trace[k - 1] + 10 * 1e-8);

  // Bi-Lipschitz on anchors.
  const Matrix& x = f.anchors();
  const Matrix& z = f.anchor_gradients();
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) {
      const double dx = (x.row(i) - x.row(j)).norm();
      const double dz = (z.row(i) - z.row(j)).norm();
      EXPECT_GE(dz, l * dx - 1e-5);
      EXPECT_LE(dz, big_l * dx + 1e-5);
    }

  // Off-sample gradients follow the true map: both maps are L-Lipschitz, so
  // they differ by at most 2 L |x - x_i| plus the error at the anchor x_i.
  CounterRng rng(9, "fresh");
  const Matrix fresh = rng.uniform_matrix(25, 2, 0.1, 0.9);
  const Matrix g = f.gradients(fresh);
  for (Index i = 0; i < fresh.rows(); ++i) {
    const Vector p = fresh.row(i).transpose();
    const Vector truth = inst.a * p + inst.shift;
    double bound = INFINITY;
    for (Index k = 0; k < x.rows(); ++k) {
      const double anchor_err = (z.row(k) - target.row(k)).norm();
      bound = std::min(bound, 2 * big_l * (x.row(k).transpose() - p).norm() + anchor_err);
    }
    EXPECT_LE((g.row(i).transpose() - truth).norm(), bound + 1e-6);
  }
}

TEST(SsnbPotential, AnchorEvaluationReproducesData) {
  const double l = 0.5, big_l = 1.2, a = 0.85;
  CounterRng rng(10, "anchors");
  const Matrix x = rng.normal_matrix(6, 2);
  const Vector u = 0.5 * a * x.rowwise().squaredNorm();
  const SsnbPotential f(x, u, a * x, l, big_l);
  for (Index i = 0; i < 6; ++i) {
    const auto ev = f.evaluate(x.row(i).transpose());
    EXPECT_NEAR(ev.value, u(i), 1e-6);
    EXPECT_LE((ev.gradient - a * x.row(i).transpose()).norm(), 1e-5);
  }
}

TEST(SsnbPotential, SingleAnchorEnvelopeIsBiLipschitz) {
  const double l = 0.5, big_l = 1.2;
  const SsnbPotential f(Matrix::Zero(1, 2), Vector::Zero(1), Matrix::Zero(1, 2), l, big_l);
  const Vector e1 = Vector::Unit(2, 0);
  const double gn = f.gradient(e1).norm();
  EXPECT_GE(gn, l - 1e-6);
  EXPECT_LE(gn, big_l + 1e-6);
  EXPECT_EQ(f.bounds().gamma, l);
  EXPECT_EQ(f.bounds().m_smooth, big_l);
  EXPECT_EQ(f.min_slack(), INFINITY);
}

TEST(SsnbPotential, ExtensionIsConvexAndConjugateIsConsistent) {
  const double l = 0.5, big_l = 1.2, a = 0.9;
  CounterRng rng(11, "ext");
  const Matrix x = rng.uniform_matrix(8, 2, 0.0, 1.0);
  Matrix z = a * x;
  z.col(0).array() += 0.05 * x.col(1).array().square();  // mildly non-quadratic
  const auto fit = ssnb_fit(EmpiricalMeasure::uniform(x), EmpiricalMeasure::uniform(z),
                            config(l, big_l, 2));
  const auto& f = *fit.potential;
  for (int k = 0; k < 50; ++k) {
    const Vector p = rng.uniform_matrix(2, 1, -0.5, 1.5).col(0);
    const Vector q = rng.uniform_matrix(2, 1, -0.5, 1.5).col(0);
    EXPECT_LE(f.value(0.5 * (p + q)), 0.5 * (f.value(p) + f.value(q)) + 1e-6);
  }
  for (int k = 0; k < 5; ++k) {
    const Vector y = rng.uniform_matrix(2, 1, 0.0, 1.0).col(0);
    const auto c = f.exact_conjugate(y, 0.0);
    ASSERT_TRUE(c);
    // Fenchel equality at the maximizer and inequality elsewhere.
    EXPECT_NEAR(f.value(c->argmax) + c->value, c->argmax.dot(y), 1e-5);
    const Vector other = c->argmax + Vector::Constant(2, 0.1);
    EXPECT_GE(f.value(other) + c->value, other.dot(y) - 1e-6);
  }
}

TEST(SsnbPotential, RejectsBadShapes) {
  EXPECT_THROW(SsnbPotential(Matrix::Zero(2, 2), Vector::Zero(3), Matrix::Zero(2, 2), 0.5, 1.2),
               InvalidArgument);
  EXPECT_THROW(SsnbPotential(Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Zero(2, 2), 1.2, 0.5),
               InvalidArgument);
  const SsnbPotential f(Matrix::Zero(1, 2), Vector::Zero(1), Matrix::Zero(1, 2), 0.5, 1.2);
  EXPECT_THROW(f.derivatives(Matrix::Zero(1, 2), true), Unsupported);
}
