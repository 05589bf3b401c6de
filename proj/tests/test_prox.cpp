#include "adadmm/prox.hpp"
#include "generators.hpp"

#include <gtest/gtest.h>

using namespace adadmm;
using namespace adadmm::testing;

namespace {

// Brute-force scalar prox of mu|u| by dense grid search around v.
double grid_soft_threshold(double v, double t) {
  double best_u = 0.0;
  double best = 0.5 * v * v;
  const double span = std::abs(v) + t + 1.0;
  const int steps = 400000;
  for (int s = 0; s <= steps; ++s) {
    const double u = -span + 2.0 * span * s / steps;
    const double val = t * std::abs(u) + 0.5 * (u - v) * (u - v);
    if (val < best) {
      best = val;
      best_u = u;
    }
  }
  return best_u;
}

}  // namespace

TEST(SoftThreshold, DocumentedExamples) {
  Vector v(3);
  v << 3.0, -0.5, 1.0;
  const Vector u = soft_threshold(v, 1.0);
  EXPECT_EQ(u(0), 2.0);
  EXPECT_EQ(u(1), 0.0);
  EXPECT_EQ(u(2), 0.0);  // |v| == t resolves to exactly zero
  EXPECT_FALSE(std::signbit(u(2)));
  EXPECT_THROW(soft_threshold(v, -1.0), ContractError);
}

TEST(SoftThreshold, AgreesWithGridSearch) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const double v = uniform_real(-4.0, 4.0, rng);
    const double t = uniform_real(0.0, 2.0, rng);
    Vector in(1);
    in << v;
    EXPECT_NEAR(soft_threshold(in, t)(0), grid_soft_threshold(v, t), 1e-4) << v << " " << t;
  }
}

TEST(Prox, BoxIsAClamp) {
  Vector v(4);
  v << -3.0, -0.2, 0.7, 12.0;
  const Vector u = prox(Regularizer::box(1.0), v, 0.3);
  Vector want(4);
  want << -1.0, -0.2, 0.7, 1.0;
  EXPECT_EQ(u, want);
}

TEST(Prox, ZeroIsIdentity) {
  std::mt19937_64 rng(32);
  const Vector v = gaussian_vector(7, rng);
  EXPECT_EQ(prox(Regularizer::zero(), v, 2.0), v);
}

// Property: u = prox_{step h}(v) iff (v - u)/step lies in the subdifferential of h at u.
TEST(Prox, ResultSatisfiesSubgradientInclusion) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const Regularizer reg = trial % 2 == 0 ? Regularizer::box(uniform_real(0.1, 2.0, rng))
                                           : Regularizer::l1(uniform_real(0.0, 2.0, rng));
    const double step = uniform_real(0.05, 3.0, rng);
    const Vector v = gaussian_vector(uniform_int(1, 8, rng), rng, 2.0);
    const Vector u = prox(reg, v, step);
    EXPECT_LE(subgradient_distance(reg, u, ((v - u) / step).eval()), 1e-12);
  }
}

TEST(SubgradientDistance, BoxNormalConeAndL1Interval) {
  const auto box = Regularizer::box(1.0);
  Vector x(1), g(1);
  x << 1.0;
  g << 5.0;
  EXPECT_EQ(subgradient_distance(box, x, g), 0.0);
  g << -2.0;
  EXPECT_EQ(subgradient_distance(box, x, g), 2.0);

  const auto l1 = Regularizer::l1(0.5);
  x << 0.0;
  g << 0.4;
  EXPECT_EQ(subgradient_distance(l1, x, g), 0.0);
  g << -0.9;
  EXPECT_NEAR(subgradient_distance(l1, x, g), 0.4, 1e-15);
  x << -2.0;
  g << -0.5;
  EXPECT_EQ(subgradient_distance(l1, x, g), 0.0);
}

TEST(WorkerSubproblem, QuadraticSolveIsExact) {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index n = uniform_int(1, 10, rng);
    const auto f = LocalObjective::quadratic(psd_matrix(n, 0.0, 5.0, rng), gaussian_vector(n, rng));
    const Vector lambda = gaussian_vector(n, rng);
    const Vector x0 = gaussian_vector(n, rng);
    const double rho = uniform_real(0.01, 10.0, rng);
    const auto r = worker_subproblem(f, lambda, x0, rho, FistaConfig{});
    EXPECT_LE(subproblem_gradient(f, lambda, x0, rho, r.x_new).norm(), 1e-10);
    EXPECT_EQ(r.inner_iters, 0);
  }
}

// After the local solve and the dual step, grad f_i(x) + lambda_new equals the
// subproblem gradient, so it is bounded by the solve tolerance.
TEST(WorkerSubproblem, DualGradientIdentity) {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = uniform_int(1, 6, rng);
    const auto f = random_logistic(uniform_int(5, 40, rng), n, rng);
    const Vector lambda = gaussian_vector(n, rng, 0.3);
    const Vector x0 = gaussian_vector(n, rng);
    const double rho = uniform_real(0.1, 5.0, rng);
    FistaConfig cfg;
    cfg.grad_tol = 1e-6;
    const auto r = worker_subproblem(f, lambda, x0, rho, cfg);
    ASSERT_TRUE(r.converged);
    const Vector lambda_new = dual_update(lambda, r.x_new, x0, rho);
    EXPECT_LE((f.gradient(r.x_new) + lambda_new).norm(), cfg.grad_tol * (1 + 1e-9));
  }
}

TEST(WorkerSubproblem, FistaConvergesAtDeskScale) {
  std::mt19937_64 rng(36);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_logistic(200, 50, rng, 0.1);
    const Vector lambda = gaussian_vector(50, rng, 0.1);
    const Vector x0 = gaussian_vector(50, rng);
    FistaConfig cfg;
    cfg.grad_tol = 1e-6;
    const auto r = worker_subproblem(f, lambda, x0, 0.01, cfg);
    EXPECT_TRUE(r.converged);
    EXPECT_LT(r.inner_iters, cfg.max_inner);
    EXPECT_LE(r.final_grad_norm, 1e-6);
  }
}

TEST(WorkerSubproblem, RestartDoesNotChangeTheMinimizer) {
  std::mt19937_64 rng(37);
  const auto f = random_logistic(30, 4, rng);
  const Vector lambda = gaussian_vector(4, rng, 0.2);
  const Vector x0 = gaussian_vector(4, rng);
  FistaConfig with, without;
  with.grad_tol = without.grad_tol = 1e-10;
  without.restart = false;
  const auto a = worker_subproblem(f, lambda, x0, 1.0, with);
  const auto b = worker_subproblem(f, lambda, x0, 1.0, without);
  EXPECT_LE((a.x_new - b.x_new).norm(), 1e-9);
}

TEST(WorkerSubproblem, WarmStartAtTheSolutionTakesNoSteps) {
  std::mt19937_64 rng(38);
  const auto f = random_logistic(20, 3, rng);
  const Vector lambda = Vector::Zero(3);
  const Vector x0 = gaussian_vector(3, rng);
  FistaConfig cfg;
  cfg.grad_tol = 1e-8;
  const auto first = worker_subproblem(f, lambda, x0, 2.0, cfg);
  const auto again = worker_subproblem(f, lambda, x0, 2.0, cfg, first.x_new);
  EXPECT_EQ(again.inner_iters, 0);
  EXPECT_EQ(again.x_new, first.x_new);
}

TEST(WorkerSubproblem, RejectsDivergentStepsizeAndBadInputs) {
  std::mt19937_64 rng(39);
  const auto f = random_logistic(20, 3, rng);
  FistaConfig cfg;
  cfg.stepsize = 2.0 / (f.lipschitz() + 1.0);
  EXPECT_THROW(worker_subproblem(f, Vector::Zero(3), Vector::Zero(3), 1.0, cfg), ContractError);
  EXPECT_THROW(worker_subproblem(f, Vector::Zero(3), Vector::Zero(3), 0.0, FistaConfig{}),
               ContractError);
  EXPECT_THROW(worker_subproblem(f, Vector::Zero(2), Vector::Zero(3), 1.0, FistaConfig{}),
               ContractError);
}

TEST(WorkerSubproblem, FixedSmallStepReportsNonConvergence) {
  std::mt19937_64 rng(40);
  const auto f = random_logistic(50, 5, rng);
  FistaConfig cfg;
  cfg.stepsize = 1e-4;
  cfg.grad_tol = 1e-9;
  cfg.max_inner = 10;
  const auto r = worker_subproblem(f, Vector::Ones(5), Vector::Zero(5), 0.01, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.inner_iters, 10);
}

TEST(DualUpdate, IsTheScaledResidualStep) {
  Vector l(2), x(2), z(2);
  l << 1.0, -1.0;
  x << 2.0, 0.0;
  z << 1.0, 1.0;
  const Vector out = dual_update(l, x, z, 0.5);
  EXPECT_DOUBLE_EQ(out(0), 1.5);
  EXPECT_DOUBLE_EQ(out(1), -1.5);
}

// Optimality of the master update per component, checked by explicit
// subgradient interval tests.
TEST(MasterProx, SatisfiesOptimalityForEveryFamily) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 150; ++trial) {
    const int N = uniform_int(1, 6, rng);
    const Eigen::Index n = uniform_int(1, 5, rng);
    Regularizer reg;
    switch (trial % 3) {
      case 0: reg = Regularizer::zero(); break;
      case 1: reg = Regularizer::box(uniform_real(0.2, 1.5, rng)); break;
      default: reg = Regularizer::l1(uniform_real(0.0, 3.0, rng)); break;
    }
    const double rho = uniform_real(0.01, 5.0, rng);
    const double gamma = trial % 4 == 0 ? 0.0 : uniform_real(0.0, 10.0, rng);
    Vector sum_l = Vector::Zero(n), sum_x = Vector::Zero(n);
    for (int i = 0; i < N; ++i) {
      sum_l += gaussian_vector(n, rng);
      sum_x += gaussian_vector(n, rng);
    }
    const Vector prev = gaussian_vector(n, rng);
    const Vector x0 = master_prox(reg, sum_l, sum_x, prev, rho, gamma, N);
    // 0 in dh(x0) - sum_l - rho (sum_x - N x0) + gamma (x0 - prev)
    const Vector g = sum_l + rho * (sum_x - N * x0) - gamma * (x0 - prev);
    EXPECT_LE(subgradient_distance(reg, x0, g), 1e-10 * (1 + g.norm()));
  }
}

TEST(MasterProx, ScalarHandExample) {
  // N = 2, rho = 1, gamma = 2: z = (1 + 1*4 + 2*0.5) / 4 = 1.5, step 1/4, l1 weight 1 -> 1.25
  Vector sl(1), sx(1), prev(1);
  sl << 1.0;
  sx << 4.0;
  prev << 0.5;
  EXPECT_DOUBLE_EQ(master_prox(Regularizer::l1(1.0), sl, sx, prev, 1.0, 2.0, 2)(0), 1.25);
  EXPECT_DOUBLE_EQ(master_prox(Regularizer::box(1.0), sl, sx, prev, 1.0, 2.0, 2)(0), 1.0);
}
