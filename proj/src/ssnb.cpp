#include "otsel/ssnb.hpp"

#include <cmath>
#include <limits>

#include "otsel/error.hpp"
#include "otsel/parallel.hpp"
#include "otsel/sinkhorn.hpp"
#include "otsel/transport.hpp"

namespace otsel {

std::string to_string(ConstraintVariant v) {
  return v == ConstraintVariant::taylor ? "taylor" : "printed";
}

ConstraintVariant parse_constraint_variant(const std::string& s) {
  if (s == "taylor") return ConstraintVariant::taylor;
  if (s == "printed") return ConstraintVariant::printed;
  throw InvalidArgument("unknown constraint variant '" + s + "'");
}

std::string to_string(FitSolver s) {
  return s == FitSolver::interior_point ? "interior_point" : "conic";
}

FitSolver parse_fit_solver(const std::string& s) {
  if (s == "interior_point") return FitSolver::interior_point;
  if (s == "conic") return FitSolver::conic;
  throw InvalidArgument("unknown SSNB fit solver '" + s + "'");
}

void SsnbConfig::validate() const {
  if (!(l > 0.0) || !(l < big_l) || !std::isfinite(big_l))
    throw InvalidArgument("SsnbConfig: need 0 < l < L");
  if (outer_iters < 1) throw InvalidArgument("SsnbConfig: outer_iters must be positive");
  if (!(conic_tol > 0.0)) throw InvalidArgument("SsnbConfig: conic_tol must be positive");
  if (coupling == CouplingMode::entropic && !(coupling_epsilon > 0.0))
    throw InvalidArgument("SsnbConfig: coupling epsilon must be positive");
}

namespace {

struct PairTerms {
  double r;        // constant term
  double zi_coef;  // coefficient of z_i' dx
  double zj_coef;  // coefficient of z_j' dx
};

// The (i, j) inequality written as
// u_j - u_i + zj_coef z_j'dx + zi_coef z_i'dx + |z_i - z_j|^2/(2k) + r <= 0,
// with dx = x_i - x_j and k = L - l.
PairTerms pair_terms(double dx2, double l, double big_l, ConstraintVariant v) {
  const double k = big_l - l;
  if (v == ConstraintVariant::taylor) return {l * big_l * dx2 / (2.0 * k), -l / k, 1.0 + l / k};
  return {big_l * dx2 / (2.0 * l * k), l / k, 1.0 - l / k};
}

struct MaxAffineSolution {
  Vector s;
  double objective;
  double gap;  // primal objective minus a dual lower bound
};

double max_affine_objective(double c, const Matrix& b, const Vector& e, const Vector& s) {
  return 0.5 * c * s.squaredNorm() + (b * s + e).maxCoeff();
}

// Lower bound sum_i w_i e_i - |B'w|^2 / (2c) for weights w in the simplex.
double max_affine_dual(double c, const Matrix& b, const Vector& e, const Vector& w) {
  return w.dot(e) - (b.transpose() * w).squaredNorm() / (2.0 * c);
}

double max_step(const Vector& v, const Vector& dv) {
  double a = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
  return a;
}

// min_s c/2 |s|^2 + max_i (b_i's + e_i) as the QP
//   min c/2 |s|^2 + t  subject to  b_i's + e_i <= t,
// by a Mehrotra predictor-corrector interior-point method, followed by an
// exact solve on the detected active set.
MaxAffineSolution min_quadratic_max_affine(double c, const Matrix& b, const Vector& e) {
  const Index n = b.rows();
  const Index d = b.cols();
  Vector s = Vector::Zero(d);
  double t = e.maxCoeff() + 1.0;
  Vector slack = Vector::Constant(n, t) - e;
  Vector z = Vector::Constant(n, 1.0 / static_cast<double>(n));
  const double scale = 1.0 + b.cwiseAbs().maxCoeff() + e.cwiseAbs().maxCoeff();

  Matrix m(d + 1, d + 1);
  Vector ds(d), dz(n), dslack(n);
  double dt = 0.0;
  MaxAffineSolution best{s, 0.0, std::numeric_limits<double>::infinity()};
  Vector best_z = z;
  Vector best_slack = slack;
  for (int it = 0; it < 100; ++it) {
    const Vector rd_s = c * s + b.transpose() * z;
    const double rd_t = 1.0 - z.sum();
    const Vector rp = b * s + e + slack - Vector::Constant(n, t);
    const double mu = slack.dot(z) / static_cast<double>(n);
    if (z.minCoeff() > 0.0) {
      const double obj = max_affine_objective(c, b, e, s);
      const double gap = obj - max_affine_dual(c, b, e, z / z.sum());
      if (gap < best.gap) {
        best = {s, obj, gap};
        best_z = z;
        best_slack = slack;
      }
    }
    if (best.gap <= 1e-14 * scale ||
        (std::max({rd_s.cwiseAbs().maxCoeff(), std::abs(rd_t), rp.cwiseAbs().maxCoeff()}) <=
             1e-13 * scale &&
         mu <= 1e-15 * scale))
      break;

    const Vector dw = z.cwiseQuotient(slack);
    m.topLeftCorner(d, d) = b.transpose() * dw.asDiagonal() * b;
    m.topLeftCorner(d, d).diagonal().array() += c;
    m.topRightCorner(d, 1) = -(b.transpose() * dw);
    m.bottomLeftCorner(1, d) = m.topRightCorner(d, 1).transpose();
    m(d, d) = dw.sum();
    const Eigen::LDLT<Matrix> ldlt(m);

    // Newton direction for the complementarity target slack o z = rho.
    auto direction = [&](const Vector& rho) {
      const Vector v = (rho - slack.cwiseProduct(z) + z.cwiseProduct(rp)).cwiseQuotient(slack);
      Vector rhs(d + 1);
      rhs.head(d) = -rd_s - b.transpose() * v;
      rhs(d) = -rd_t + v.sum();
      const Vector w = ldlt.solve(rhs);
      ds = w.head(d);
      dt = w(d);
      dslack = -rp - b * ds + Vector::Constant(n, dt);
      dz = (rho - slack.cwiseProduct(z) - z.cwiseProduct(dslack)).cwiseQuotient(slack);
    };

    direction(Vector::Zero(n));
    const double a_aff = std::min({1.0, max_step(slack, dslack), max_step(z, dz)});
    const double mu_aff =
        (slack + a_aff * dslack).dot(z + a_aff * dz) / static_cast<double>(n);
    const double sigma = std::pow(mu_aff / mu, 3.0);
    direction(Vector::Constant(n, sigma * mu) - dslack.cwiseProduct(dz));
    const double a = std::min(1.0, 0.99 * std::min(max_step(slack, dslack), max_step(z, dz)));
    if (!std::isfinite(a) || !ds.allFinite() || !dz.allFinite() || !dslack.allFinite() ||
        !std::isfinite(dt))
      break;
    s += a * ds;
    t += a * dt;
    slack += a * dslack;
    z += a * dz;
  }

  if (!std::isfinite(best.gap)) {
    best.s = s;
    best.objective = max_affine_objective(c, b, e, s);
    const Vector w = z.cwiseMax(0.0) / z.cwiseMax(0.0).sum();
    best.gap = best.objective - max_affine_dual(c, b, e, w);
  } else {
    z = best_z;
    slack = best_slack;
  }

  // Equality-constrained solve on the constraints the interior point marks as
  // active: (B_A B_A' / c) w + t 1 = e_A, 1'w = 1, s = -B_A'w / c.
  std::vector<Index> active;
  for (Index i = 0; i < n; ++i)
    if (z(i) > slack(i)) active.push_back(i);
  const auto na = static_cast<Index>(active.size());
  if (na >= 1 && na <= d + 1) {
    Matrix ba(na, d);
    Vector ea(na);
    for (Index k = 0; k < na; ++k) {
      ba.row(k) = b.row(active[static_cast<std::size_t>(k)]);
      ea(k) = e(active[static_cast<std::size_t>(k)]);
    }
    Matrix kkt = Matrix::Ones(na + 1, na + 1);
    kkt.topLeftCorner(na, na) = ba * ba.transpose() / c;
    kkt(na, na) = 0.0;
    Vector rhs(na + 1);
    rhs.head(na) = ea;
    rhs(na) = 1.0;
    const Eigen::FullPivLU<Matrix> lu(kkt);
    if (lu.isInvertible()) {
      const Vector sol = lu.solve(rhs);
      if (sol.allFinite() && sol.head(na).minCoeff() >= -1e-12) {
        Vector wa = sol.head(na).cwiseMax(0.0);
        wa /= wa.sum();
        const Vector sp = -ba.transpose() * wa / c;
        const double obj = max_affine_objective(c, b, e, sp);
        Vector full = Vector::Zero(n);
        for (Index k = 0; k < na; ++k) full(active[static_cast<std::size_t>(k)]) = wa(k);
        const double gap = obj - max_affine_dual(c, b, e, full);
        if (std::isfinite(gap) && gap <= best.gap) best = {sp, obj, gap};
      }
    }
  }
  best.gap = std::max(best.gap, 0.0);
  return best;
}

void check_solution(const MaxAffineSolution& sol, double tol) {
  if (!sol.s.allFinite() || !(sol.gap <= tol * (1.0 + std::abs(sol.objective))))
    throw EvaluationFailure("SSNB evaluation program did not converge (gap " +
                            std::to_string(sol.gap) + ")");
}

}  // namespace

double interpolation_constraint(const Vector& xi, const Vector& xj, const Vector& zi,
                                const Vector& zj, double ui, double uj, double l, double big_l,
                                ConstraintVariant variant) {
  if (!(l > 0.0) || !(l < big_l)) throw InvalidArgument("interpolation_constraint: need 0 < l < L");
  const Vector dx = xi - xj;
  const PairTerms t = pair_terms(dx.squaredNorm(), l, big_l, variant);
  const double lhs = uj - ui + t.zj_coef * zj.dot(dx) + t.zi_coef * zi.dot(dx) +
                     (zi - zj).squaredNorm() / (2.0 * (big_l - l)) + t.r;
  return -lhs;
}

SsnbPotential::SsnbPotential(Matrix anchors, Vector values, Matrix gradients, double l,
                             double big_l, ConstraintVariant variant, double eval_tol)
    : x_(std::move(anchors)),
      u_(std::move(values)),
      z_(std::move(gradients)),
      l_(l),
      big_l_(big_l),
      variant_(variant),
      eval_tol_(eval_tol) {
  const Index n = x_.rows();
  const Index d = x_.cols();
  if (n < 1 || d < 1) throw InvalidArgument("SsnbPotential: need at least one anchor");
  if (u_.size() != n || z_.rows() != n || z_.cols() != d)
    throw InvalidArgument("SsnbPotential: anchors, values and gradients disagree in shape");
  if (!x_.allFinite() || !u_.allFinite() || !z_.allFinite())
    throw InvalidArgument("SsnbPotential: non-finite data");
  if (!(l_ > 0.0) || !(l_ < big_l_)) throw InvalidArgument("SsnbPotential: need 0 < l < L");
  if (!(eval_tol_ > 0.0)) throw InvalidArgument("SsnbPotential: eval_tol must be positive");

  const double k = big_l_ - l_;
  g_ = z_ - l_ * x_;
  const Vector h = u_ - 0.5 * l_ * x_.rowwise().squaredNorm();
  h_star_ = g_.cwiseProduct(x_).rowwise().sum() - h;

  lin_ = x_ - g_ / k;
  off_ = h_star_ - g_.cwiseProduct(x_).rowwise().sum() + g_.rowwise().squaredNorm() / (2.0 * k);
}

Vector SsnbPotential::envelope(const Matrix& s) const {
  Matrix q = s * lin_.transpose();
  q.rowwise() += off_.transpose();
  return q.rowwise().maxCoeff() + s.rowwise().squaredNorm() / (2.0 * (big_l_ - l_));
}

SsnbEvaluation SsnbPotential::evaluate(const Vector& x) const {
  require_finite(x, "SsnbPotential::evaluate");
  const Index d = x_.cols();
  if (x.size() != d) throw InvalidArgument("SsnbPotential::evaluate: dimension mismatch");
  // h(x) = max_s x's - H(s).
  const MaxAffineSolution sol =
      min_quadratic_max_affine(1.0 / (big_l_ - l_), lin_.rowwise() - x.transpose(), off_);
  check_solution(sol, eval_tol_);
  const double h = x.dot(sol.s) - envelope(sol.s.transpose())(0);
  return {0.5 * l_ * x.squaredNorm() + h, l_ * x + sol.s, sol.gap};
}

double SsnbPotential::value(const Vector& x) const { return evaluate(x).value; }

Vector SsnbPotential::gradient(const Vector& x) const { return evaluate(x).gradient; }

Vector SsnbPotential::values(const Matrix& points) const {
  Vector out(points.rows());
  parallel_for(static_cast<std::size_t>(points.rows()), [&](std::size_t i) {
    out(static_cast<Index>(i)) = evaluate(points.row(static_cast<Index>(i)).transpose()).value;
  });
  return out;
}

Matrix SsnbPotential::gradients(const Matrix& points) const {
  return derivatives(points, false).gradients;
}

BatchDerivatives SsnbPotential::derivatives(const Matrix& points, bool with_hessians) const {
  if (with_hessians) throw Unsupported("SsnbPotential does not provide Hessians");
  if (points.cols() != dimension()) throw InvalidArgument("SsnbPotential: dimension mismatch");
  BatchDerivatives out;
  out.values.resize(points.rows());
  out.gradients.resize(points.rows(), points.cols());
  parallel_for(static_cast<std::size_t>(points.rows()), [&](std::size_t i) {
    const auto r = static_cast<Index>(i);
    const SsnbEvaluation e = evaluate(points.row(r).transpose());
    out.values(r) = e.value;
    out.gradients.row(r) = e.gradient.transpose();
  });
  return out;
}

std::optional<ConjugatePoint> SsnbPotential::exact_conjugate(const Vector& y, double delta) const {
  require_finite(y, "SsnbPotential::exact_conjugate");
  const Index d = x_.cols();
  if (y.size() != d) throw InvalidArgument("SsnbPotential::exact_conjugate: dimension mismatch");
  if (!(delta >= 0.0)) throw InvalidArgument("SsnbPotential::exact_conjugate: negative delta");
  // (f + delta/2 |.|^2)*(y) = min_s H(s) + |y - s|^2 / (2a).
  const double a = l_ + delta;
  const MaxAffineSolution sol = min_quadratic_max_affine(1.0 / (big_l_ - l_) + 1.0 / a,
                                                         lin_.rowwise() - y.transpose() / a, off_);
  check_solution(sol, eval_tol_);
  ConjugatePoint out;
  out.value = (y - sol.s).squaredNorm() / (2.0 * a) + envelope(sol.s.transpose())(0);
  out.argmax = (y - sol.s) / a;
  out.residual = sol.gap;
  return out;
}

double SsnbPotential::min_slack() const {
  const Index n = x_.rows();
  double worst = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      worst = std::min(worst, interpolation_constraint(x_.row(i).transpose(), x_.row(j).transpose(),
                                                       z_.row(i).transpose(), z_.row(j).transpose(),
                                                       u_(i), u_(j), l_, big_l_, variant_));
    }
  return worst;
}

Matrix coupling_step(const Matrix& z, const Vector& a, const EmpiricalMeasure& nu,
                     CouplingMode mode, double epsilon) {
  if (z.cols() != nu.dimension()) throw InvalidArgument("coupling_step: dimension mismatch");
  if (z.rows() != a.size()) throw InvalidArgument("coupling_step: weights do not match z");
  if (mode == CouplingMode::exact)
    return exact_transport(a, nu.weights(), squared_distances(z, nu.points()));
  const EmpiricalMeasure source(z, a);
  SinkhornConfig cfg;
  cfg.epsilon = epsilon;
  cfg.tol = 1e-9;
  cfg.max_iter = 200000;
  const SinkhornDuals duals = sinkhorn_solve(source, nu, cfg);
  return sinkhorn_coupling(duals, source, nu);
}

SsnbFitter::SsnbFitter(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                       const SsnbConfig& cfg)
    : mu_(mu), nu_(nu), cfg_(cfg) {
  cfg_.validate();
  if (mu.dimension() != nu.dimension()) throw InvalidArgument("SSNB: dimension mismatch");
  const Index n = mu.size();
  const Index d = mu.dimension();
  const Matrix& x = mu.points();
  const PairTerms unit = pair_terms(0.0, cfg_.l, cfg_.big_l, cfg_.variant);
  ci_ = unit.zi_coef;
  cj_ = unit.zj_coef;
  const auto p = static_cast<std::size_t>(n * (n - 1));
  pair_i_.reserve(p);
  pair_j_.reserve(p);
  pair_dx_.resize(static_cast<Index>(p), d);
  pair_r_.resize(static_cast<Index>(p));
  Index q = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      pair_i_.push_back(i);
      pair_j_.push_back(j);
      pair_dx_.row(q) = x.row(i) - x.row(j);
      pair_r_(q) = pair_terms(pair_dx_.row(q).squaredNorm(), cfg_.l, cfg_.big_l, cfg_.variant).r;
      ++q;
    }

  // The quadratic c/2 |x|^2 with l < c < L satisfies the taylor inequalities
  // strictly at distinct anchors.
  const double c = 0.5 * (cfg_.l + cfg_.big_l);
  Vector u0 = 0.5 * c * x.rowwise().squaredNorm();
  const Vector w0 = pack(u0, c * x);
  const double k = cfg_.big_l - cfg_.l;
  bool strict = true;
  for (Index r = 0; r < q && strict; ++r) {
    const Index i = pair_i_[static_cast<std::size_t>(r)];
    const Index j = pair_j_[static_cast<std::size_t>(r)];
    const Vector zi = c * x.row(i).transpose();
    const Vector zj = c * x.row(j).transpose();
    const double g = u0(j) - u0(i) + cj_ * zj.dot(pair_dx_.row(r)) +
                     ci_ * zi.dot(pair_dx_.row(r)) + (zi - zj).squaredNorm() / (2.0 * k) +
                     pair_r_(r);
    strict = g < -1e-12 * (1.0 + pair_dx_.row(r).squaredNorm());
  }
  if (strict) interior_ = w0;
}

SsnbFitter::~SsnbFitter() = default;

Vector SsnbFitter::pack(const Vector& u, const Matrix& z) const {
  const Index n = mu_.size();
  const Index d = mu_.dimension();
  Vector w((n - 1) + n * d);
  for (Index i = 1; i < n; ++i) w(i - 1) = u(i) - u(0);
  for (Index i = 0; i < n; ++i) w.segment((n - 1) + i * d, d) = z.row(i).transpose();
  return w;
}

FitStepResult SsnbFitter::unpack(const Vector& w, const Matrix& coupling) const {
  const Index n = mu_.size();
  const Index d = mu_.dimension();
  FitStepResult out;
  out.u = Vector::Zero(n);
  for (Index i = 1; i < n; ++i) out.u(i) = w(i - 1);
  out.z.resize(n, d);
  for (Index i = 0; i < n; ++i) out.z.row(i) = w.segment((n - 1) + i * d, d).transpose();
  out.objective = transport_cost(coupling, squared_distances(out.z, nu_.points()));
  return out;
}

void SsnbFitter::warm_start(const Vector& u, const Matrix& z) {
  const Index n = mu_.size();
  const Index d = mu_.dimension();
  if (u.size() != n || z.rows() != n || z.cols() != d)
    throw InvalidArgument("SsnbFitter::warm_start: shape mismatch");
  warm_ = pack(u, z);
}

FitStepResult SsnbFitter::fit(const Matrix& coupling) {
  if (coupling.rows() != mu_.size() || coupling.cols() != nu_.size())
    throw InvalidArgument("fit_step: coupling shape does not match the measures");
  if (last_ && coupling == last_coupling_) return *last_;
  FitStepResult out = cfg_.solver == FitSolver::interior_point && interior_.size() > 0
                          ? fit_interior(coupling)
                          : fit_conic(coupling);
  warm_ = pack(out.u, out.z);
  last_coupling_ = coupling;
  last_ = out;
  return out;
}

namespace {

// Second-order cone helpers; a cone vector v = (v0, v1) satisfies v0 >= |v1|.
double cone_det(const Vector& v) { return v(0) * v(0) - v.tail(v.size() - 1).squaredNorm(); }

// Jordan product u o v = (u'v, u0 v1 + v0 u1).
Vector jordan(const Vector& u, const Vector& v) {
  const Index m = u.size() - 1;
  Vector out(u.size());
  out(0) = u.dot(v);
  out.tail(m) = u(0) * v.tail(m) + v(0) * u.tail(m);
  return out;
}

// Solves lambda o x = r.
Vector jordan_solve(const Vector& lambda, const Vector& r) {
  const Index m = lambda.size() - 1;
  Vector x(lambda.size());
  x(0) = (lambda(0) * r(0) - lambda.tail(m).dot(r.tail(m))) / cone_det(lambda);
  x.tail(m) = (r.tail(m) - x(0) * lambda.tail(m)) / lambda(0);
  return x;
}

// Largest step a with v + a dv in the cone.
double cone_step(const Vector& v, const Vector& dv) {
  const Index m = v.size() - 1;
  double step = std::numeric_limits<double>::infinity();
  if (dv(0) < 0.0) step = -v(0) / dv(0);
  const double qa = dv(0) * dv(0) - dv.tail(m).squaredNorm();
  const double qb = 2.0 * (v(0) * dv(0) - v.tail(m).dot(dv.tail(m)));
  const double qc = cone_det(v);
  if (qa == 0.0) {
    if (qb < 0.0) step = std::min(step, -qc / qb);
    return step;
  }
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return step;
  const double q = -0.5 * (qb + std::copysign(std::sqrt(disc), qb));
  for (const double root : {q / qa, q != 0.0 ? qc / q : -1.0})
    if (root > 0.0) step = std::min(step, root);
  return step;
}

// Nesterov-Todd scaling W = eta [[w0, w1'], [w1, I + w1 w1' / (1 + w0)]]
// with W z = W^{-1} s.
struct NtScaling {
  Vector w;
  double eta = 1.0;

  NtScaling(const Vector& s, const Vector& z) {
    const double ns = std::sqrt(cone_det(s));
    const double nz = std::sqrt(cone_det(z));
    const Vector sb = s / ns;
    Vector zb = z / nz;
    const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
    zb.tail(zb.size() - 1) *= -1.0;
    w = (sb + zb) / (2.0 * gamma);
    eta = std::sqrt(ns / nz);
  }
  Vector apply(const Vector& x, double sign) const {
    const Index m = x.size() - 1;
    const double w0 = w(0);
    const auto w1 = w.tail(m);
    const double t = w1.dot(x.tail(m));
    Vector out(x.size());
    out(0) = w0 * x(0) + sign * t;
    out.tail(m) = x.tail(m) + (t / (1.0 + w0) + sign * x(0)) * w1;
    return sign > 0.0 ? Vector(eta * out) : Vector(out / eta);
  }
  Vector times(const Vector& x) const { return apply(x, 1.0); }
  Vector inverse_times(const Vector& x) const { return apply(x, -1.0); }
};

}  // namespace

FitStepResult SsnbFitter::fit_interior(const Matrix& coupling) const {
  const Index n = mu_.size();
  const Index d = mu_.dimension();
  const Index nvar = (n - 1) + n * d;
  const Index p = pair_r_.size();
  const Index cone = d + 2;
  const double k = cfg_.big_l - cfg_.l;
  const double rk = 1.0 / std::sqrt(k);
  const double r2 = 1.0 / std::sqrt(2.0);
  const Vector a = coupling.rowwise().sum();
  const Matrix m = coupling * nu_.points();
  auto zc = [&](Index i) { return (n - 1) + i * d; };

  // Pair q as a second-order cone, s_q = h_q - G_q w with
  //   s_q = ((1 - lin) / sqrt2, (1 + lin) / sqrt2, (z_i - z_j) / sqrt(k)),
  // lin = u_j - u_i + cj z_j'dx + ci z_i'dx + r the affine part of the pair
  // constraint. Column support of G_q: u_i, u_j, z_i, z_j.
  std::vector<Index> idx(static_cast<std::size_t>(2 * d + 2));
  Vector ell(2 * d + 2);
  auto linear_part = [&](Index q) {
    const Index i = pair_i_[static_cast<std::size_t>(q)];
    const Index j = pair_j_[static_cast<std::size_t>(q)];
    const auto dx = pair_dx_.row(q);
    Index len = 0;
    if (i > 0) {
      idx[static_cast<std::size_t>(len)] = i - 1;
      ell(len++) = -1.0;
    }
    if (j > 0) {
      idx[static_cast<std::size_t>(len)] = j - 1;
      ell(len++) = 1.0;
    }
    for (Index c = 0; c < d; ++c) {
      idx[static_cast<std::size_t>(len)] = zc(i) + c;
      ell(len++) = ci_ * dx(c);
      idx[static_cast<std::size_t>(len)] = zc(j) + c;
      ell(len++) = cj_ * dx(c);
    }
    return len;
  };
  auto apply_g = [&](Index q, const Vector& x) {
    const Index len = linear_part(q);
    double lin = 0.0;
    for (Index r = 0; r < len; ++r) lin += ell(r) * x(idx[static_cast<std::size_t>(r)]);
    const Index i = pair_i_[static_cast<std::size_t>(q)];
    const Index j = pair_j_[static_cast<std::size_t>(q)];
    Vector out(cone);
    out(0) = r2 * lin;
    out(1) = -r2 * lin;
    out.tail(d) = -rk * (x.segment(zc(i), d) - x.segment(zc(j), d));
    return out;
  };
  auto add_gt = [&](Index q, const Vector& y, Vector& out) {
    const Index len = linear_part(q);
    const double coef = r2 * (y(0) - y(1));
    for (Index r = 0; r < len; ++r) out(idx[static_cast<std::size_t>(r)]) += coef * ell(r);
    const Index i = pair_i_[static_cast<std::size_t>(q)];
    const Index j = pair_j_[static_cast<std::size_t>(q)];
    out.segment(zc(i), d) -= rk * y.tail(d);
    out.segment(zc(j), d) += rk * y.tail(d);
  };
  auto objective = [&](const Vector& w) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto zi = w.segment(zc(i), d);
      acc += a(i) * zi.squaredNorm() - 2.0 * m.row(i).dot(zi);
    }
    return acc;
  };

  Vector w = interior_;
  Matrix s(p, cone), z(p, cone);
  for (Index q = 0; q < p; ++q) {
    Vector h = Vector::Zero(cone);
    h(0) = r2 * (1.0 - pair_r_(q));
    h(1) = r2 * (1.0 + pair_r_(q));
    s.row(q) = (h - apply_g(q, w)).transpose();
  }
  z.setZero();
  z.col(0).setConstant(1.0 / static_cast<double>(std::max<Index>(p, 1)));
  const double scale = 1.0 + 2.0 * m.cwiseAbs().maxCoeff();

  constexpr int kMaxIter = 100;
  Matrix mat(nvar, nvar);
  std::vector<NtScaling> nt;
  nt.reserve(static_cast<std::size_t>(p));
  Matrix lambda(p, cone);
  for (int it = 0;; ++it) {
    // Dual residual P w + c + G'z; the primal residual stays zero.
    Vector rx = Vector::Zero(nvar);
    for (Index i = 0; i < n; ++i)
      rx.segment(zc(i), d) = 2.0 * a(i) * w.segment(zc(i), d) - 2.0 * m.row(i).transpose();
    for (Index q = 0; q < p; ++q) add_gt(q, z.row(q).transpose(), rx);
    const double gap = (s.cwiseProduct(z)).sum();
    const double obj = objective(w);
    const double feas = rx.size() > 0 ? rx.cwiseAbs().maxCoeff() : 0.0;
    if (gap <= cfg_.conic_tol * (1.0 + std::abs(obj)) && feas <= cfg_.conic_tol * scale) {
      FitStepResult out = unpack(w, coupling);
      out.solver = FitSolver::interior_point;
      out.iterations = it;
      out.residual = std::max(gap, feas);
      return out;
    }
    if (it == kMaxIter)
      throw ConvergenceFailure("fit_step: interior-point method did not converge in " +
                                   std::to_string(kMaxIter) + " iterations",
                               std::max(gap, feas));
    const double mu = gap / static_cast<double>(p);

    nt.clear();
    mat.setZero();
    for (Index i = 0; i < n; ++i) mat.diagonal().segment(zc(i), d).array() += 2.0 * a(i);
    Vector gv(2 * d + 2);
    for (Index q = 0; q < p; ++q) {
      nt.emplace_back(s.row(q).transpose(), z.row(q).transpose());
      const NtScaling& sc = nt.back();
      lambda.row(q) = sc.times(z.row(q).transpose()).transpose();
      // G'W^{-2}G = eta^{-2} (2 g g' + Laplacian / k), g = G'J w.
      const double inv2 = 1.0 / (sc.eta * sc.eta);
      const Index len = linear_part(q);
      const double coef = r2 * (sc.w(0) + sc.w(1));
      const Index i = pair_i_[static_cast<std::size_t>(q)];
      const Index j = pair_j_[static_cast<std::size_t>(q)];
      gv.head(len) = coef * ell.head(len);
      const Index zpos = len - 2 * d;  // z_i and z_j entries interleave after u
      for (Index c = 0; c < d; ++c) {
        gv(zpos + 2 * c) += rk * sc.w(2 + c);
        gv(zpos + 2 * c + 1) -= rk * sc.w(2 + c);
      }
      for (Index r = 0; r < len; ++r) {
        const Index ir = idx[static_cast<std::size_t>(r)];
        for (Index c = 0; c < len; ++c) {
          const Index ic = idx[static_cast<std::size_t>(c)];
          if (ic <= ir) mat(ir, ic) += 2.0 * inv2 * gv(r) * gv(c);
        }
      }
      const double curv = inv2 / k;
      const Index hi = std::max(zc(i), zc(j));
      const Index lo = std::min(zc(i), zc(j));
      for (Index c = 0; c < d; ++c) {
        mat(zc(i) + c, zc(i) + c) += curv;
        mat(zc(j) + c, zc(j) + c) += curv;
        mat(hi + c, lo + c) -= curv;
      }
    }
    Eigen::LLT<Matrix> llt(mat);
    if (llt.info() != Eigen::Success) {
      mat.diagonal().array() += 1e-13 * mat.diagonal().cwiseAbs().maxCoeff();
      llt.compute(mat);
      if (llt.info() != Eigen::Success)
        throw NumericalFailure("fit_step: interior-point Newton matrix is not positive definite");
    }

    // Newton direction for the complementarity target lambda o (W dz + W^{-1} ds) = rc.
    Matrix ds(p, cone), dz(p, cone);
    Vector dw(nvar);
    std::vector<Vector> tq(static_cast<std::size_t>(p));
    auto direction = [&](const Matrix& rc) {
      Vector rhs = -rx;
      for (Index q = 0; q < p; ++q) {
        const NtScaling& sc = nt[static_cast<std::size_t>(q)];
        tq[static_cast<std::size_t>(q)] = jordan_solve(lambda.row(q).transpose(), rc.row(q).transpose());
        add_gt(q, -sc.inverse_times(tq[static_cast<std::size_t>(q)]), rhs);
      }
      dw = llt.solve(rhs);
      for (Index q = 0; q < p; ++q) {
        const NtScaling& sc = nt[static_cast<std::size_t>(q)];
        const Vector gdw = apply_g(q, dw);
        dz.row(q) = (sc.inverse_times(sc.inverse_times(gdw) + tq[static_cast<std::size_t>(q)]))
                        .transpose();
        ds.row(q) = -gdw.transpose();
      }
    };
    auto max_step = [&]() {
      double step = std::numeric_limits<double>::infinity();
      for (Index q = 0; q < p; ++q) {
        step = std::min(step, cone_step(s.row(q).transpose(), ds.row(q).transpose()));
        step = std::min(step, cone_step(z.row(q).transpose(), dz.row(q).transpose()));
      }
      return step;
    };

    Matrix rc(p, cone);
    for (Index q = 0; q < p; ++q)
      rc.row(q) = -jordan(lambda.row(q).transpose(), lambda.row(q).transpose()).transpose();
    direction(rc);
    const double a_aff = std::min(1.0, max_step());
    const double mu_aff =
        ((s + a_aff * ds).cwiseProduct(z + a_aff * dz)).sum() / static_cast<double>(p);
    const double sigma = std::pow(std::max(0.0, mu_aff) / mu, 3.0);
    for (Index q = 0; q < p; ++q) {
      const NtScaling& sc = nt[static_cast<std::size_t>(q)];
      const Vector corr = jordan(sc.inverse_times(ds.row(q).transpose()),
                                 sc.times(dz.row(q).transpose()));
      rc.row(q) -= corr.transpose();
      rc(q, 0) += sigma * mu;
    }
    direction(rc);
    const double step = std::min(1.0, 0.99 * max_step());
    if (!std::isfinite(step) || !dw.allFinite())
      throw NumericalFailure("fit_step: non-finite interior-point step");
    w += step * dw;
    s += step * ds;
    z += step * dz;
  }
}

FitStepResult SsnbFitter::fit_conic(const Matrix& coupling) {
  const Index n = mu_.size();
  const Index d = mu_.dimension();
  const Index nvar = (n - 1) + n * d;
  auto zcol = [&](Index i, Index c) { return (n - 1) + i * d + c; };
  if (!solver_) {
    std::vector<Eigen::Triplet<double>> f0;
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < d; ++c)
        f0.emplace_back(i * d + c, zcol(i, c), std::sqrt(2.0 * mu_.weights()(i)));
    qcqp_.q0_factor.resize(n * d, nvar);
    qcqp_.q0_factor.setFromTriplets(f0.begin(), f0.end());
    qcqp_.c0 = Vector::Zero(nvar);
    const double inv = 1.0 / std::sqrt(cfg_.big_l - cfg_.l);
    qcqp_.constraints.reserve(pair_i_.size());
    for (std::size_t q = 0; q < pair_i_.size(); ++q) {
      const Index i = pair_i_[q];
      const Index j = pair_j_[q];
      const auto dx = pair_dx_.row(static_cast<Index>(q));
      QuadraticConstraint con;
      con.c = Vector::Zero(nvar);
      if (j > 0) con.c(j - 1) += 1.0;
      if (i > 0) con.c(i - 1) -= 1.0;
      for (Index c = 0; c < d; ++c) {
        con.c(zcol(j, c)) += cj_ * dx(c);
        con.c(zcol(i, c)) += ci_ * dx(c);
      }
      con.r = pair_r_(static_cast<Index>(q));
      std::vector<Eigen::Triplet<double>> ft;
      for (Index c = 0; c < d; ++c) {
        ft.emplace_back(c, zcol(i, c), inv);
        ft.emplace_back(c, zcol(j, c), -inv);
      }
      con.factor.resize(d, nvar);
      con.factor.setFromTriplets(ft.begin(), ft.end());
      qcqp_.constraints.push_back(std::move(con));
    }
    ConicSettings settings;
    settings.tol = cfg_.conic_tol;
    settings.max_iter = cfg_.conic_max_iter;
    solver_ = std::make_unique<ConicSolver>(qcqp_to_socp(qcqp_), settings);
  }
  if (warm_) {
    Vector w(nvar + 1);
    w.head(nvar) = *warm_;
    w(nvar) = 0.5 * (qcqp_.q0_factor * *warm_).squaredNorm();
    solver_->warm_start(w, Vector::Zero(solver_->problem().rows()));
  }

  const Matrix m = coupling * nu_.points();  // sum_j P_ij y_j
  Vector c = Vector::Zero(nvar + 1);
  for (Index i = 0; i < n; ++i) c.segment((n - 1) + i * d, d) = -2.0 * m.row(i).transpose();
  c(nvar) = 1.0;
  solver_->update_c(c);

  const ConicSolution sol = solver_->solve();
  if (sol.status == ConicStatus::infeasible_suspected)
    throw NumericalFailure("fit_step: the interpolation constraints look infeasible (" +
                           to_string(cfg_.variant) + " variant)");
  const double residual = std::max({sol.primal_residual, sol.dual_residual, sol.gap});
  if (sol.status != ConicStatus::optimal && residual > 1e3 * cfg_.conic_tol)
    throw ConvergenceFailure("fit_step: conic solver stopped after " +
                                 std::to_string(sol.iterations) + " iterations",
                             std::max(sol.primal_residual, sol.dual_residual));
  FitStepResult out = unpack(sol.x.head(nvar), coupling);
  out.solver = FitSolver::conic;
  out.iterations = sol.iterations;
  out.residual = residual;
  return out;
}

FitStepResult fit_step(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                       const Matrix& coupling, const SsnbConfig& cfg) {
  SsnbFitter fitter(mu, nu, cfg);
  return fitter.fit(coupling);
}

SsnbFit ssnb_fit(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const SsnbConfig& cfg) {
  cfg.validate();
  const Matrix& x = mu.points();
  Matrix z = x;
  Vector u = 0.5 * x.rowwise().squaredNorm();
  u.array() -= u(0);

  SsnbFitter fitter(mu, nu, cfg);
  fitter.warm_start(u, z);
  SsnbFit out;
  for (int k = 0; k < cfg.outer_iters; ++k) {
    const Matrix p = coupling_step(z, mu.weights(), nu, cfg.coupling, cfg.coupling_epsilon);
    out.cost_trace.push_back(transport_cost(p, squared_distances(z, nu.points())));
    FitStepResult step;
    try {
      step = fitter.fit(p);
    } catch (const ConvergenceFailure& e) {
      throw ConvergenceFailure("ssnb_fit outer iteration " + std::to_string(k + 1) + ": " +
                                   e.detail(),
                               e.last_residual());
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("ssnb_fit outer iteration " + std::to_string(k + 1) + ": " + e.what());
    }
    u = step.u;
    z = step.z;
  }
  out.coupling = coupling_step(z, mu.weights(), nu, cfg.coupling, cfg.coupling_epsilon);
  out.cost_trace.push_back(transport_cost(out.coupling, squared_distances(z, nu.points())));
  out.potential = std::make_shared<SsnbPotential>(x, u, z, cfg.l, cfg.big_l, cfg.variant);
  return out;
}

}  // namespace otsel
