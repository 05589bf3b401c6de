#include "adadmm/prox.hpp"

#include <cmath>

namespace adadmm {

Vector subproblem_gradient(const LocalObjective& obj, const Vector& lambda, const Vector& x0_hat,
                           double rho, const Vector& x) {
  return obj.gradient(x) + lambda + rho * (x - x0_hat);
}

SubproblemResult worker_subproblem(const LocalObjective& obj, const Vector& lambda,
                                   const Vector& x0_hat, double rho, const FistaConfig& cfg,
                                   const Vector& start) {
  require(rho > 0.0, "worker_subproblem: rho must be positive");
  require_dim(lambda.size(), obj.dim(), "worker_subproblem: lambda");
  require_dim(x0_hat.size(), obj.dim(), "worker_subproblem: x0_hat");
  require_dim(start.size(), obj.dim(), "worker_subproblem: start");

  if (const auto* quad = std::get_if<Quadratic>(&obj.family())) {
    Matrix H = quad->Q;
    H.diagonal().array() += rho;
    Eigen::LLT<Matrix> llt(H);
    Vector x = llt.solve(rho * x0_hat - lambda - quad->q);
    const double g = subproblem_gradient(obj, lambda, x0_hat, rho, x).norm();
    return {std::move(x), 0, g, true};
  }

  require(cfg.grad_tol > 0.0, "worker_subproblem: grad_tol must be positive");
  const double auto_step = 1.0 / (obj.lipschitz() + rho);
  double step = auto_step;
  if (cfg.stepsize) {
    require(*cfg.stepsize > 0.0, "worker_subproblem: stepsize must be positive");
    require(*cfg.stepsize <= auto_step * (1.0 + 1e-12),
            "worker_subproblem: stepsize exceeds 1/(L_i + rho); FISTA would diverge");
    step = *cfg.stepsize;
  }

  Vector x = start;
  Vector y = start;
  double t = 1.0;
  for (long it = 0; it < cfg.max_inner; ++it) {
    const Vector gy = subproblem_gradient(obj, lambda, x0_hat, rho, y);
    const double gnorm = gy.norm();
    if (gnorm <= cfg.grad_tol) return {y, it, gnorm, true};
    Vector x_next = y - step * gy;
    if (cfg.restart && gy.dot(x_next - x) > 0.0) {
      t = 1.0;
      y = x_next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x_next + ((t - 1.0) / t_next) * (x_next - x);
      t = t_next;
    }
    x = std::move(x_next);
  }
  const double gnorm = subproblem_gradient(obj, lambda, x0_hat, rho, y).norm();
  return {y, cfg.max_inner, gnorm, gnorm <= cfg.grad_tol};
}

}  // namespace adadmm
