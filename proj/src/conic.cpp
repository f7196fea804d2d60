#include "otsel/conic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "otsel/error.hpp"

namespace otsel {

namespace {

constexpr double kSqrtHalf = 0.70710678118654752440;
constexpr Index kDenseLimit = 2500;

// Standard second-order cone {(t, w) : |w| <= t}, in place.
void project_soc_inplace(double& t, Eigen::Ref<Vector> w) {
  const double nw = w.norm();
  if (nw <= t) return;
  if (nw <= -t) {
    t = 0.0;
    w.setZero();
    return;
  }
  const double scale = 0.5 * (t + nw);
  w *= scale / nw;
  t = scale;
}

void project_rotated_inplace(Eigen::Ref<Vector> v) {
  if (v(0) >= 0.0 && v(1) >= 0.0 && 2.0 * v(0) * v(1) >= v.tail(v.size() - 2).squaredNorm())
    return;
  const double u1 = kSqrtHalf * (v(0) + v(1));
  const double u2 = kSqrtHalf * (v(0) - v(1));
  Vector w(v.size() - 1);
  w(0) = u2;
  w.tail(v.size() - 2) = v.tail(v.size() - 2);
  double t = u1;
  project_soc_inplace(t, w);
  v(0) = kSqrtHalf * (t + w(0));
  v(1) = kSqrtHalf * (t - w(0));
  v.tail(v.size() - 2) = w.tail(v.size() - 2);
}

void project_cone_inplace(Vector& v, const std::vector<ConeBlock>& cones) {
  Index off = 0;
  for (const auto& k : cones) {
    if (k.kind == ConeBlock::Kind::zero) {
      v.segment(off, k.dim).setZero();
    } else {
      project_rotated_inplace(v.segment(off, k.dim));
    }
    off += k.dim;
  }
}

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

void ConicProblem::validate() const {
  if (a.rows() != b.size()) throw InvalidArgument("ConicProblem: rows of A and size of b differ");
  if (a.cols() != c.size()) throw InvalidArgument("ConicProblem: columns of A and size of c differ");
  Index total = 0;
  for (const auto& k : cones) {
    if (k.kind == ConeBlock::Kind::rotated_soc && k.dim < 3)
      throw InvalidArgument("ConicProblem: rotated cone of dimension below 3");
    if (k.dim < 0) throw InvalidArgument("ConicProblem: negative cone dimension");
    total += k.dim;
  }
  if (total != a.rows()) throw InvalidArgument("ConicProblem: cone sizes do not cover the rows");
  if (!b.allFinite() || !c.allFinite()) throw InvalidArgument("ConicProblem: non-finite data");
}

bool in_rotated_soc(const Vector& v, double slack) {
  if (v.size() < 3) throw InvalidArgument("rotated cone needs dimension >= 3");
  const double rest = v.tail(v.size() - 2).squaredNorm();
  return v(0) >= -slack && v(1) >= -slack && 2.0 * v(0) * v(1) - rest >= -slack;
}

Vector project_rotated_soc(const Vector& v) {
  if (v.size() < 3) throw InvalidArgument("project_rotated_soc: dimension must be >= 3");
  Vector out = v;
  project_rotated_inplace(out);
  return out;
}

Vector project_cone(const Vector& v, const std::vector<ConeBlock>& cones) {
  Vector out = v;
  project_cone_inplace(out, cones);
  return out;
}

ConicProblem qcqp_to_socp(const QcqpProblem& q, QcqpLifting lifting) {
  const Index n = q.c0.size();
  if (q.q0_factor.cols() != n)
    throw InvalidArgument("qcqp_to_socp: objective factor has the wrong column count");
  for (const auto& con : q.constraints) {
    if (con.factor.cols() != n || con.c.size() != n)
      throw InvalidArgument("qcqp_to_socp: constraint dimension mismatch");
  }
  const Index p = static_cast<Index>(q.constraints.size());
  const bool slacks = lifting.constraint_slacks;
  const Index nvar = n + 1 + (slacks ? p : 0);
  const Index t0 = n;

  auto cone_rows = [](const SparseMatrix& f) { return 2 + std::max<Index>(f.rows(), 1); };
  Index rows = (slacks ? p : 0) + cone_rows(q.q0_factor);
  for (const auto& con : q.constraints) rows += cone_rows(con.factor);

  std::vector<Eigen::Triplet<double>> trip;
  ConicProblem out;
  out.b = Vector::Zero(rows);
  out.c = Vector::Zero(nvar);
  out.c.head(n) = q.c0;
  out.c(t0) = 1.0;

  Index row = 0;
  if (slacks && p > 0) {
    for (Index i = 0; i < p; ++i, ++row) {
      const auto& con = q.constraints[static_cast<std::size_t>(i)];
      for (Index k = 0; k < n; ++k)
        if (con.c(k) != 0.0) trip.emplace_back(row, k, con.c(k));
      trip.emplace_back(row, n + 1 + i, 1.0);
      out.b(row) = -con.r;
    }
    out.cones.push_back(ConeBlock::zero(static_cast<int>(p)));
  }

  auto add_factor = [&](const SparseMatrix& f) {
    if (f.rows() == 0) {
      ++row;
      return;
    }
    for (int col = 0; col < f.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(f, col); it; ++it)
        trip.emplace_back(row + it.row(), it.col(), -it.value());
    row += f.rows();
  };

  // (1, t0, F0 x)
  out.b(row++) = 1.0;
  trip.emplace_back(row++, t0, -1.0);
  add_factor(q.q0_factor);
  out.cones.push_back(ConeBlock::rotated(static_cast<int>(cone_rows(q.q0_factor))));

  for (Index i = 0; i < p; ++i) {
    const auto& con = q.constraints[static_cast<std::size_t>(i)];
    out.b(row++) = 1.0;
    if (slacks) {
      trip.emplace_back(row, n + 1 + i, -1.0);
    } else {
      for (Index k = 0; k < n; ++k)
        if (con.c(k) != 0.0) trip.emplace_back(row, k, con.c(k));
      out.b(row) = -con.r;
    }
    ++row;
    add_factor(con.factor);
    out.cones.push_back(ConeBlock::rotated(static_cast<int>(cone_rows(con.factor))));
  }

  out.a.resize(rows, nvar);
  out.a.setFromTriplets(trip.begin(), trip.end());
  out.a.makeCompressed();
  return out;
}

double qcqp_objective(const QcqpProblem& q, const Vector& x) {
  return 0.5 * (q.q0_factor * x).squaredNorm() + q.c0.dot(x);
}

double qcqp_max_violation(const QcqpProblem& q, const Vector& x) {
  double worst = 0.0;
  for (const auto& con : q.constraints)
    worst = std::max(worst, 0.5 * (con.factor * x).squaredNorm() + con.c.dot(x) + con.r);
  return worst;
}

std::string to_string(ConicStatus s) {
  switch (s) {
    case ConicStatus::optimal:
      return "optimal";
    case ConicStatus::max_iter:
      return "max_iter";
    case ConicStatus::infeasible_suspected:
      return "infeasible_suspected";
  }
  return "unknown";
}

ConicSolver::ConicSolver(ConicProblem problem, ConicSettings settings)
    : problem_(std::move(problem)), settings_(settings) {
  problem_.validate();
  problem_.a.makeCompressed();
  if (!(settings_.tol > 0.0)) throw InvalidArgument("ConicSolver: tol must be positive");
  if (!(settings_.alpha > 0.0 && settings_.alpha < 2.0))
    throw InvalidArgument("ConicSolver: relaxation must lie in (0, 2)");
  if (!(settings_.rho > 0.0) || !(settings_.sigma > 0.0))
    throw InvalidArgument("ConicSolver: rho and sigma must be positive");
  rho_ = settings_.rho;
  equilibrate();
  scale_vectors();
  factorize();
}

void ConicSolver::equilibrate() {
  const Index m = problem_.rows();
  const Index n = problem_.cols();
  d_ = Vector::Ones(n);
  e_ = Vector::Ones(m);
  a_s_ = problem_.a;
  for (int iter = 0; iter < settings_.scaling_iters; ++iter) {
    Vector col = Vector::Zero(n);
    Vector row = Vector::Zero(m);
    for (int j = 0; j < a_s_.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(a_s_, j); it; ++it) {
        const double v = std::abs(it.value());
        col(j) = std::max(col(j), v);
        row(it.row()) = std::max(row(it.row()), v);
      }
    Index off = 0;
    for (const auto& k : problem_.cones) {
      if (k.kind == ConeBlock::Kind::rotated_soc && k.dim > 0) {
        const double mx = row.segment(off, k.dim).maxCoeff();
        row.segment(off, k.dim).setConstant(mx);
      }
      off += k.dim;
    }
    Vector dc(n), ec(m);
    for (Index j = 0; j < n; ++j) dc(j) = col(j) < 1e-4 ? 1.0 : 1.0 / std::sqrt(col(j));
    for (Index i = 0; i < m; ++i) ec(i) = row(i) < 1e-4 ? 1.0 : 1.0 / std::sqrt(row(i));
    d_ = (d_.cwiseProduct(dc)).cwiseMax(1e-4).cwiseMin(1e4);
    e_ = (e_.cwiseProduct(ec)).cwiseMax(1e-4).cwiseMin(1e4);
    a_s_ = e_.asDiagonal() * problem_.a * d_.asDiagonal();
  }
  a_s_.makeCompressed();
  at_s_ = a_s_.transpose();
}

void ConicSolver::scale_vectors() {
  b_s_ = e_.cwiseProduct(problem_.b);
  const Vector dc = d_.cwiseProduct(problem_.c);
  const double nc = inf_norm(dc);
  cost_scale_ = nc > 0.0 ? std::clamp(1.0 / nc, 1e-4, 1e4) : 1.0;
  c_s_ = cost_scale_ * dc;
}

void ConicSolver::factorize() {
  const Index m = problem_.rows();
  const Index n = problem_.cols();
  rho_vec_ = Vector::Constant(m, rho_);
  Index off = 0;
  for (const auto& k : problem_.cones) {
    if (k.kind == ConeBlock::Kind::zero)
      rho_vec_.segment(off, k.dim).setConstant(settings_.eq_rho_scale * rho_);
    off += k.dim;
  }
  SparseMatrix kkt = at_s_ * rho_vec_.asDiagonal() * a_s_;
  if (n <= kDenseLimit) {
    Matrix dense = Matrix(kkt);
    dense.diagonal().array() += settings_.sigma;
    dense_.emplace(dense);
    if (dense_->info() != Eigen::Success)
      throw NumericalFailure("ConicSolver: factorization of the linear system failed");
    sparse_.reset();
  } else {
    SparseMatrix id(n, n);
    id.setIdentity();
    kkt += settings_.sigma * id;
    sparse_.emplace(kkt);
    if (sparse_->info() != Eigen::Success)
      throw NumericalFailure("ConicSolver: factorization of the linear system failed");
    dense_.reset();
  }
}

void ConicSolver::update_c(const Vector& c) {
  if (c.size() != problem_.cols()) throw InvalidArgument("update_c: size mismatch");
  problem_.c = c;
  scale_vectors();
}

void ConicSolver::update_b(const Vector& b) {
  if (b.size() != problem_.rows()) throw InvalidArgument("update_b: size mismatch");
  problem_.b = b;
  scale_vectors();
}

void ConicSolver::warm_start(const Vector& x, const Vector& y) {
  if (x.size() != problem_.cols() || y.size() != problem_.rows())
    throw InvalidArgument("warm_start: size mismatch");
  warm_x_ = x;
  warm_y_ = y;
}

ConicSolution ConicSolver::solve() {
  const Index m = problem_.rows();
  const Index n = problem_.cols();
  const auto& cones = problem_.cones;
  const double alpha = settings_.alpha;
  const double sigma = settings_.sigma;
  const double nb = inf_norm(problem_.b);
  const double nc = inf_norm(problem_.c);

  auto to_c = [&](Vector v) {  // v := b_s - proj_K(b_s - v)
    Vector w = b_s_ - v;
    project_cone_inplace(w, cones);
    return Vector(b_s_ - w);
  };

  Vector x = Vector::Zero(n);
  Vector y = Vector::Zero(m);
  if (warm_x_) {
    x = warm_x_->cwiseQuotient(d_);
    y = cost_scale_ * warm_y_->cwiseQuotient(e_);
  }
  Vector z = to_c(a_s_ * x);

  ConicSolution sol;
  Vector y_check = y;
  Vector x_tilde(n), z_tilde(m), z_hat(m), rhs(n);
  const int check = std::max(1, settings_.check_every);
  int it = 0;
  bool done = false;
  for (it = 1; it <= settings_.max_iter && !done; ++it) {
    rhs = sigma * x - c_s_ + at_s_ * (rho_vec_.cwiseProduct(z) - y);
    x_tilde = dense_ ? Vector(dense_->solve(rhs)) : Vector(sparse_->solve(rhs));
    z_tilde = a_s_ * x_tilde;
    x = alpha * x_tilde + (1.0 - alpha) * x;
    z_hat = alpha * z_tilde + (1.0 - alpha) * z;
    const Vector z_new = to_c(z_hat + y.cwiseQuotient(rho_vec_));
    y += rho_vec_.cwiseProduct(z_hat - z_new);
    z = z_new;

    if (it % check != 0 && it != settings_.max_iter) continue;
    if (!x.allFinite() || !y.allFinite())
      throw NumericalFailure("ConicSolver: iterates became non-finite");

    const Vector ax_s = a_s_ * x;
    const Vector aty_s = at_s_ * y;
    const Vector xu = d_.cwiseProduct(x);
    const Vector yu = e_.cwiseProduct(y) / cost_scale_;
    const double prim = inf_norm((ax_s - z).cwiseQuotient(e_)) / (1.0 + nb);
    const double dual =
        inf_norm((c_s_ + aty_s).cwiseQuotient(d_)) / cost_scale_ / (1.0 + nc);
    const double pobj = problem_.c.dot(xu);
    const double dobj = problem_.b.dot(yu);
    const double gap = std::abs(pobj + dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    sol.primal_residual = prim;
    sol.dual_residual = dual;
    sol.gap = gap;
    sol.iterations = it;
    if (prim <= settings_.tol && dual <= settings_.tol && gap <= settings_.tol) {
      sol.status = ConicStatus::optimal;
      done = true;
      break;
    }

    // Primal infeasibility: the dual increment approaches a certificate
    // dy in K*, A'dy = 0, b'dy < 0.
    if (it >= 200) {
      const Vector dy = e_.cwiseProduct(y - y_check) / cost_scale_;
      const double ndy = inf_norm(dy);
      if (ndy > 1e-10) {
        const Vector aty_u = problem_.a.transpose() * dy;
        Vector dy_proj = dy;
        project_cone_inplace(dy_proj, cones);  // rotated cones are self-dual
        Index off = 0;
        for (const auto& k : cones) {
          if (k.kind == ConeBlock::Kind::zero) dy_proj.segment(off, k.dim) = dy.segment(off, k.dim);
          off += k.dim;
        }
        if (inf_norm(aty_u) <= 1e-6 * ndy && problem_.b.dot(dy) < -1e-6 * ndy &&
            inf_norm(dy - dy_proj) <= 1e-6 * ndy) {
          sol.status = ConicStatus::infeasible_suspected;
          done = true;
          break;
        }
      }
    }
    y_check = y;

    if (settings_.adaptive_rho && it % (5 * check) == 0) {
      const double pr = inf_norm(ax_s - z) / std::max({inf_norm(ax_s), inf_norm(z), 1e-10});
      const double du =
          inf_norm(c_s_ + aty_s) / std::max({inf_norm(aty_s), inf_norm(c_s_), 1e-10});
      const double ratio = std::sqrt(pr / std::max(du, 1e-30));
      const double rho_new = std::clamp(rho_ * ratio, 1e-6, 1e6);
      if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) {
        rho_ = rho_new;
        factorize();
      }
    }
  }
  if (!done) sol.iterations = std::min(it, settings_.max_iter);

  sol.x = d_.cwiseProduct(x);
  sol.y = e_.cwiseProduct(y) / cost_scale_;
  sol.s = (b_s_ - z).cwiseQuotient(e_);
  sol.objective = problem_.c.dot(sol.x);
  warm_x_ = sol.x;
  warm_y_ = sol.y;
  return sol;
}

ConicSolution solve_conic(const ConicProblem& p, double tol, int max_iter) {
  ConicSettings s;
  s.tol = tol;
  s.max_iter = max_iter;
  ConicSolver solver(p, s);
  return solver.solve();
}

void write_conic_text(const ConicProblem& p, const std::string& path) {
  p.validate();
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << p.rows() << ' ' << p.cols() << ' ' << p.a.nonZeros() << '\n';
  for (int j = 0; j < p.a.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(p.a, j); it; ++it)
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  out << 'b';
  for (Index i = 0; i < p.b.size(); ++i) out << ' ' << p.b(i);
  out << "\nc";
  for (Index j = 0; j < p.c.size(); ++j) out << ' ' << p.c(j);
  out << '\n';
  for (const auto& k : p.cones)
    out << (k.kind == ConeBlock::Kind::zero ? "Z " : "QR ") << k.dim << '\n';
}

ConicProblem read_conic_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  Index rows = 0, cols = 0, nnz = 0;
  if (!(in >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
    throw InvalidArgument(path + ": malformed header");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(nnz));
  for (Index k = 0; k < nnz; ++k) {
    Index i, j;
    double v;
    if (!(in >> i >> j >> v) || i < 0 || i >= rows || j < 0 || j >= cols)
      throw InvalidArgument(path + ": malformed triplet " + std::to_string(k));
    trip.emplace_back(i, j, v);
  }
  ConicProblem p;
  p.a.resize(rows, cols);
  p.a.setFromTriplets(trip.begin(), trip.end());
  p.a.makeCompressed();
  auto read_vec = [&](char tag, Index len) {
    std::string t;
    if (!(in >> t) || t.size() != 1 || t[0] != tag)
      throw InvalidArgument(path + ": expected '" + std::string(1, tag) + "' line");
    Vector v(len);
    for (Index i = 0; i < len; ++i)
      if (!(in >> v(i))) throw InvalidArgument(path + ": short vector");
    return v;
  };
  p.b = read_vec('b', rows);
  p.c = read_vec('c', cols);
  std::string kind;
  int dim;
  while (in >> kind >> dim) {
    if (kind == "Z")
      p.cones.push_back(ConeBlock::zero(dim));
    else if (kind == "QR")
      p.cones.push_back(ConeBlock::rotated(dim));
    else
      throw InvalidArgument(path + ": unknown cone '" + kind + "'");
  }
  p.validate();
  return p;
}

}  // namespace otsel
