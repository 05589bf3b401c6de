#pragma once

#include "adadmm/problem.hpp"
#include "adadmm/regularizer.hpp"

#include <optional>

namespace adadmm {

struct FistaConfig {
  std::optional<double> stepsize;  // empty: 1 / (L_i + rho)
  double grad_tol = 1e-6;
  long max_inner = 50000;
  bool restart = true;  // gradient-based adaptive restart
};

struct SubproblemResult {
  Vector x_new;
  long inner_iters = 0;
  double final_grad_norm = 0.0;
  bool converged = true;
};

// argmin_x f_i(x) + x'lambda + rho/2 ||x - x0_hat||^2.
// Quadratic locals are solved exactly from (Q + rho I) x = rho x0_hat - lambda - q;
// logistic locals run FISTA from `start` on the smooth subproblem.
SubproblemResult worker_subproblem(const LocalObjective& obj, const Vector& lambda,
                                   const Vector& x0_hat, double rho, const FistaConfig& cfg,
                                   const Vector& start);

inline SubproblemResult worker_subproblem(const LocalObjective& obj, const Vector& lambda,
                                          const Vector& x0_hat, double rho,
                                          const FistaConfig& cfg) {
  return worker_subproblem(obj, lambda, x0_hat, rho, cfg, x0_hat);
}

// Gradient of the worker subproblem objective at x.
Vector subproblem_gradient(const LocalObjective& obj, const Vector& lambda, const Vector& x0_hat,
                           double rho, const Vector& x);

template <typename DL, typename DX, typename DH>
VectorX<typename DL::Scalar> dual_update(const Eigen::MatrixBase<DL>& lambda,
                                         const Eigen::MatrixBase<DX>& x_new,
                                         const Eigen::MatrixBase<DH>& x0_hat,
                                         typename DL::Scalar rho) {
  require_dim(x_new.size(), lambda.size(), "dual_update: x_new");
  require_dim(x0_hat.size(), lambda.size(), "dual_update: x0_hat");
  return lambda + rho * (x_new - x0_hat);
}

// Master update of x0:
//   argmin h(x0) - x0' sum_lambda + rho/2 sum_i ||x_i - x0||^2 + gamma/2 ||x0 - x0_prev||^2
// With z = (sum_lambda + rho sum_x + gamma x0_prev) / (N rho + gamma) this is
// prox_{h / (N rho + gamma)}(z).
template <typename DL, typename DX, typename DP>
VectorX<typename DL::Scalar> master_prox(const Regularizer& reg,
                                         const Eigen::MatrixBase<DL>& sum_lambda,
                                         const Eigen::MatrixBase<DX>& sum_x,
                                         const Eigen::MatrixBase<DP>& x0_prev,
                                         typename DL::Scalar rho, typename DL::Scalar gamma,
                                         int workers) {
  using Scalar = typename DL::Scalar;
  const Scalar weight = Scalar(workers) * rho + gamma;
  require(weight > Scalar(0), "master_prox: N rho + gamma must be positive");
  require_dim(sum_x.size(), sum_lambda.size(), "master_prox: sum_x");
  require_dim(x0_prev.size(), sum_lambda.size(), "master_prox: x0_prev");
  const VectorX<Scalar> z = (sum_lambda + rho * sum_x + gamma * x0_prev) / weight;
  return prox(reg, z, Scalar(1) / weight);
}

}  // namespace adadmm
