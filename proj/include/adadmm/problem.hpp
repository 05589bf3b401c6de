#pragma once

#include "adadmm/regularizer.hpp"
#include "adadmm/types.hpp"

#include <random>
#include <variant>
#include <vector>

namespace adadmm {

// f(x) = 1/2 x'Qx + q'x
struct Quadratic {
  Matrix Q;
  Vector q;
};

// f(x) = sum_j log(1 + exp(-y_j a_j'x)), rows of A are the samples a_j.
struct Logistic {
  Matrix A;
  Vector y;
};

// One worker's smooth convex cost f_i together with its gradient Lipschitz
// constant L_i and strong-convexity modulus sigma_i^2 (0 when not strongly
// convex). Construct through the named factories; they validate the data and
// compute the constants.
class LocalObjective {
 public:
  static LocalObjective quadratic(Matrix Q, Vector q);
  static LocalObjective logistic(Matrix A, Vector y);

  Eigen::Index dim() const { return dim_; }
  double lipschitz() const { return lipschitz_; }
  double strong_convexity() const { return strong_convexity_; }

  const std::variant<Quadratic, Logistic>& family() const { return family_; }
  bool is_quadratic() const { return std::holds_alternative<Quadratic>(family_); }

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;

 private:
  LocalObjective() = default;

  std::variant<Quadratic, Logistic> family_;
  Eigen::Index dim_ = 0;
  double lipschitz_ = 0.0;
  double strong_convexity_ = 0.0;
};

// sum_i f_i(x) + h(x) over R^n with N workers.
class ConsensusProblem {
 public:
  ConsensusProblem(std::vector<LocalObjective> locals, Regularizer reg);

  Eigen::Index dim() const { return dim_; }
  int workers() const { return static_cast<int>(locals_.size()); }
  const LocalObjective& local(int i) const { return locals_.at(static_cast<std::size_t>(i)); }
  const std::vector<LocalObjective>& locals() const { return locals_; }
  const Regularizer& regularizer() const { return reg_; }

  // max_i L_i and min_i sigma_i^2
  double lipschitz() const;
  double strong_convexity() const;

 private:
  std::vector<LocalObjective> locals_;
  Regularizer reg_;
  Eigen::Index dim_ = 0;
};

struct ReferenceSolution {
  Vector x_star;
  double f_star = 0.0;
  double tolerance = 0.0;
  double residual = 0.0;  // prox-gradient mapping norm at x_star
  long iterations = 0;
};

class ReferenceSolveError : public ConvergenceError {
 public:
  ReferenceSolveError(const std::string& what, long iterations, Vector best)
      : ConvergenceError(what, iterations), best_(std::move(best)) {}
  const Vector& best_iterate() const { return best_; }

 private:
  Vector best_;
};

// sum_i f_i(x) + h(x); +inf when x leaves the box.
double objective_value(const ConsensusProblem& p, const Vector& x);

double local_value(const LocalObjective& obj, const Vector& x);
Vector local_gradient(const LocalObjective& obj, const Vector& x);

struct PowerIterationOptions {
  double rel_tol = 1e-12;
  long max_iter = 200000;
};

// lambda_max of a symmetric PSD matrix by power iteration.
double power_iteration(const Matrix& M, const PowerIterationOptions& opts = {});

// Quadratic: lambda_max(Q). Logistic: lambda_max(A'A) / 4.
double estimate_lipschitz(const LocalObjective& obj, const PowerIterationOptions& opts = {});

// Centralized accelerated proximal gradient with adaptive restart. Stops when
// ||x - prox(x - t grad F(x))|| / t <= tol.
ReferenceSolution solve_reference(const ConsensusProblem& p, double tol, long max_iter = 500000);

// Q = U diag(lambda) U' with U Haar-random and eigenvalues spread over
// [eig_lo, eig_hi] (both endpoints attained); q ~ N(0, q_scale^2 I).
LocalObjective random_quadratic(Eigen::Index n, double eig_lo, double eig_hi, double q_scale,
                                std::mt19937_64& rng);

ConsensusProblem random_quadratic_problem(Eigen::Index n, int workers, double eig_lo,
                                          double eig_hi, Regularizer reg, std::uint64_t seed,
                                          double q_scale = 1.0);

}  // namespace adadmm
