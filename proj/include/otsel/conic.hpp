#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "otsel/types.hpp"

namespace otsel {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// One block of the cone K. Zero blocks force the slack to 0; rotated
/// second-order blocks of dimension k >= 3 hold
/// {v : 2 v1 v2 >= v3^2 + ... + vk^2, v1 >= 0, v2 >= 0}.
struct ConeBlock {
  enum class Kind { zero, rotated_soc };
  Kind kind;
  int dim;

  static ConeBlock zero(int k) { return {Kind::zero, k}; }
  static ConeBlock rotated(int k) { return {Kind::rotated_soc, k}; }
};

/// minimize c'x subject to b - A x in K.
struct ConicProblem {
  Vector c;
  SparseMatrix a;
  Vector b;
  std::vector<ConeBlock> cones;

  Index rows() const { return a.rows(); }
  Index cols() const { return a.cols(); }
  /// Throws InvalidArgument when shapes and cone sizes disagree.
  void validate() const;
};

/// True when v lies in the rotated cone up to `slack`.
bool in_rotated_soc(const Vector& v, double slack = 0.0);

/// Euclidean projection onto the rotated cone (k >= 3).
Vector project_rotated_soc(const Vector& v);

/// Projection onto the product cone K; zero blocks map to 0.
Vector project_cone(const Vector& v, const std::vector<ConeBlock>& cones);

/// One constraint 1/2 |F x|^2 + c'x + r <= 0.
struct QuadraticConstraint {
  SparseMatrix factor;
  Vector c;
  double r = 0.0;
};

/// minimize 1/2 |F0 x|^2 + c0'x subject to the quadratic constraints.
struct QcqpProblem {
  SparseMatrix q0_factor;
  Vector c0;
  std::vector<QuadraticConstraint> constraints;
};

struct QcqpLifting {
  /// Introduce t_i with t_i + c_i'x + r_i = 0 for every constraint. When
  /// false the affine expression -c_i'x - r_i takes the place of t_i directly
  /// in the cone, which keeps the variable count at dim(x) + 1.
  bool constraint_slacks = false;
};

/// Variables are [x, t0, (t1..tp)]; the objective is t0 + c0'x and
/// (1, t0, F0 x) lies in the rotated cone. Factors with no rows get one zero
/// row so every cone has dimension at least 3.
ConicProblem qcqp_to_socp(const QcqpProblem& q, QcqpLifting lifting = {});

/// Value of the QCQP objective and the largest constraint violation at x.
double qcqp_objective(const QcqpProblem& q, const Vector& x);
double qcqp_max_violation(const QcqpProblem& q, const Vector& x);

enum class ConicStatus { optimal, max_iter, infeasible_suspected };
std::string to_string(ConicStatus s);

struct ConicSettings {
  double tol = 1e-6;
  int max_iter = 20000;
  double alpha = 1.6;
  double rho = 0.1;
  double sigma = 1e-6;
  /// Equality rows use eq_rho_scale * rho.
  double eq_rho_scale = 1e3;
  int scaling_iters = 10;
  bool adaptive_rho = true;
  int check_every = 10;
};

struct ConicSolution {
  Vector x;
  Vector s;  // b - A x projected on K
  Vector y;  // dual, in K*
  ConicStatus status = ConicStatus::max_iter;
  int iterations = 0;
  double primal_residual = 0.0;  // |Ax + s - b|_inf / (1 + |b|_inf)
  double dual_residual = 0.0;    // |A'y + c|_inf / (1 + |c|_inf)
  double gap = 0.0;              // |c'x + b'y| / (1 + |c'x| + |b'y|)
  double objective = 0.0;
};

/// Operator-splitting solver with a cached factorization. The sparsity of A
/// and the cone layout are fixed at construction; c and b may be updated, in
/// which case the next solve is warm-started from the previous solution.
class ConicSolver {
 public:
  ConicSolver(ConicProblem problem, ConicSettings settings = {});

  void update_c(const Vector& c);
  void update_b(const Vector& b);
  /// Starting point for the next solve, in unscaled variables.
  void warm_start(const Vector& x, const Vector& y);

  const ConicProblem& problem() const { return problem_; }
  const ConicSettings& settings() const { return settings_; }

  ConicSolution solve();

 private:
  void equilibrate();
  void factorize();
  void scale_vectors();

  ConicProblem problem_;
  ConicSettings settings_;
  // Scaled data: A_s = E A D, b_s = E b, c_s = cost_scale D c.
  SparseMatrix a_s_;
  SparseMatrix at_s_;
  Vector b_s_;
  Vector c_s_;
  Vector d_;
  Vector e_;
  double cost_scale_ = 1.0;
  Vector rho_vec_;
  double rho_ = 0.1;
  std::optional<Eigen::LLT<Matrix>> dense_;
  std::optional<Eigen::SimplicialLDLT<SparseMatrix>> sparse_;
  std::optional<Vector> warm_x_;
  std::optional<Vector> warm_y_;
};

/// Convenience wrapper for a one-off solve.
ConicSolution solve_conic(const ConicProblem& p, double tol = 1e-6, int max_iter = 20000);

/// Sparse triplet text: `rows cols nnz`, one `i j v` line per entry, a `b`
/// line and a `c` line with the dense vectors, then `Z k` / `QR k` lines.
void write_conic_text(const ConicProblem& p, const std::string& path);
ConicProblem read_conic_text(const std::string& path);

}  // namespace otsel
