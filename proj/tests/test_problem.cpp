#include "adadmm/problem.hpp"
#include "generators.hpp"

#include <gtest/gtest.h>

using namespace adadmm;
using namespace adadmm::testing;

TEST(LocalObjective, QuadraticConstantsMatchDenseEigensolver) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index n = uniform_int(1, 9, rng);
    const Matrix Q = psd_matrix(n, 0.0, 7.0, rng);
    const auto f = LocalObjective::quadratic(Q, gaussian_vector(n, rng));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(Q);
    EXPECT_NEAR(f.lipschitz(), eig.eigenvalues().maxCoeff(), 1e-9 * (1 + eig.eigenvalues().maxCoeff()));
    EXPECT_NEAR(f.strong_convexity(), std::max(0.0, eig.eigenvalues().minCoeff()), 1e-9);
  }
}

TEST(LocalObjective, LogisticLipschitzIsQuarterOfGramSpectralNorm) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = gaussian_matrix(uniform_int(3, 40, rng), uniform_int(1, 8, rng), rng);
    const auto f = LocalObjective::logistic(A, labels(A.rows(), rng));
    Eigen::JacobiSVD<Matrix> svd(A);
    const double s = svd.singularValues()(0);
    EXPECT_NEAR(f.lipschitz(), s * s / 4.0, 1e-8 * s * s);
    EXPECT_EQ(f.strong_convexity(), 0.0);
  }
}

TEST(LocalObjective, GradientsAgreeWithFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = uniform_int(1, 6, rng);
    const auto quad = LocalObjective::quadratic(psd_matrix(n, 0.1, 3.0, rng), gaussian_vector(n, rng));
    const auto logi = random_logistic(uniform_int(2, 30, rng), n, rng);
    const Vector x = gaussian_vector(n, rng);
    for (const LocalObjective* f : {&quad, &logi}) {
      const Vector fd = numeric_gradient([&](const Vector& z) { return f->value(z); }, x);
      EXPECT_LE((fd - f->gradient(x)).norm(), 1e-6 * (1.0 + fd.norm()));
    }
  }
}

TEST(LocalObjective, LogisticIsStableForHugeMargins) {
  Matrix A(2, 1);
  A << 1.0, -1.0;
  Vector y(2);
  y << 1.0, 1.0;
  const auto f = LocalObjective::logistic(A, y);
  Vector x(1);
  x << 800.0;
  // log(1 + e^-800) + log(1 + e^800) = 800 to double precision
  EXPECT_DOUBLE_EQ(f.value(x), 800.0);
  EXPECT_TRUE(f.gradient(x).allFinite());
  EXPECT_NEAR(f.gradient(x)(0), 1.0, 1e-12);
}

TEST(LocalObjective, RejectsBadData) {
  Matrix Q(2, 2);
  Q << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(LocalObjective::quadratic(Q, Vector::Zero(2)), ContractError);
  Q << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(LocalObjective::quadratic(Q, Vector::Zero(2)), ContractError);
  EXPECT_THROW(LocalObjective::quadratic(Matrix::Identity(2, 2), Vector::Zero(3)), ContractError);
  Vector y(2);
  y << 1.0, 0.0;
  EXPECT_THROW(LocalObjective::logistic(Matrix::Ones(2, 2), y), ContractError);
  EXPECT_THROW(LocalObjective::logistic(Matrix(0, 2), Vector(0)), ContractError);
}

TEST(ConsensusProblem, RejectsMismatchedDimensions) {
  std::vector<LocalObjective> locals{
      LocalObjective::quadratic(Matrix::Identity(2, 2), Vector::Zero(2)),
      LocalObjective::quadratic(Matrix::Identity(3, 3), Vector::Zero(3))};
  EXPECT_THROW(ConsensusProblem(locals, Regularizer::zero()), ContractError);
  EXPECT_THROW(ConsensusProblem({}, Regularizer::zero()), ContractError);
}

TEST(ConsensusProblem, ObjectiveIsInfiniteOutsideTheBox) {
  const auto p = random_quadratic_problem(3, 2, 1.0, 2.0, Regularizer::box(1.0), 5);
  Vector x = Vector::Constant(3, 0.5);
  EXPECT_TRUE(std::isfinite(objective_value(p, x)));
  x(1) = 1.0 + 1e-12;
  EXPECT_EQ(objective_value(p, x), kInfinity);
}

TEST(ConsensusProblem, ConstantsAreWorstCaseOverWorkers) {
  const auto p = random_quadratic_problem(4, 3, 1.0, 5.0, Regularizer::zero(), 8);
  // both spectrum endpoints are attained on every local
  EXPECT_NEAR(p.lipschitz(), 5.0, 1e-9);
  EXPECT_NEAR(p.strong_convexity(), 1.0, 1e-9);
}

TEST(PowerIteration, MatchesDenseEigensolver) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = uniform_int(1, 12, rng);
    const Matrix M = psd_matrix(n, 0.0, uniform_real(0.5, 20.0, rng), rng);
    const double want = Eigen::SelfAdjointEigenSolver<Matrix>(M).eigenvalues().maxCoeff();
    EXPECT_NEAR(power_iteration(M), want, 1e-9 * want);
  }
}

TEST(PowerIteration, ZeroMatrixHasZeroNorm) {
  EXPECT_EQ(power_iteration(Matrix::Zero(3, 3)), 0.0);
}

// Unconstrained quadratic: x* solves (sum Q_i) x = -(sum q_i).
TEST(ReferenceSolve, MatchesClosedFormForQuadratics) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_quadratic_problem(6, 4, 0.5, 4.0, Regularizer::zero(), seed);
    Matrix Q = Matrix::Zero(6, 6);
    Vector q = Vector::Zero(6);
    for (const auto& f : p.locals()) {
      Q += std::get<Quadratic>(f.family()).Q;
      q += std::get<Quadratic>(f.family()).q;
    }
    const Vector x = Q.llt().solve(-q);
    const auto ref = solve_reference(p, 1e-10);
    EXPECT_LE((ref.x_star - x).norm(), 1e-9);
    EXPECT_NEAR(ref.f_star, objective_value(p, x), 1e-10 * (1 + std::abs(ref.f_star)));
  }
}

// One dimension, box active: minimizer is the clamp of the free minimizer.
TEST(ReferenceSolve, BoxClampsScalarMinimizer) {
  Matrix Q(1, 1);
  Q << 2.0;
  Vector q(1);
  q << -10.0;  // free minimizer 5
  ConsensusProblem p({LocalObjective::quadratic(Q, q)}, Regularizer::box(1.5));
  const auto ref = solve_reference(p, 1e-12);
  EXPECT_NEAR(ref.x_star(0), 1.5, 1e-12);
  EXPECT_NEAR(ref.f_star, 1.5 * 1.5 - 15.0, 1e-10);
}

TEST(ReferenceSolve, L1OptimalityHolds) {
  const auto p = random_quadratic_problem(5, 3, 1.0, 3.0, Regularizer::l1(0.7), 21);
  const auto ref = solve_reference(p, 1e-11);
  Vector g = Vector::Zero(5);
  for (const auto& f : p.locals()) g += f.gradient(ref.x_star);
  EXPECT_LE(subgradient_distance(p.regularizer(), ref.x_star, (-g).eval()), 1e-9);
}

TEST(ReferenceSolve, IterationCapReportsBestIterate) {
  const auto p = random_quadratic_problem(6, 2, 0.01, 50.0, Regularizer::zero(), 3);
  try {
    solve_reference(p, 1e-14, 3);
    FAIL() << "expected the iteration cap to trip";
  } catch (const ReferenceSolveError& e) {
    EXPECT_EQ(e.iterations(), 3);
    EXPECT_EQ(e.best_iterate().size(), 6);
  }
}

TEST(RandomQuadratic, SeedDeterminesTheProblem) {
  const auto a = random_quadratic_problem(4, 3, 1.0, 2.0, Regularizer::zero(), 99);
  const auto b = random_quadratic_problem(4, 3, 1.0, 2.0, Regularizer::zero(), 99);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(std::get<Quadratic>(a.local(i).family()).Q, std::get<Quadratic>(b.local(i).family()).Q);
    EXPECT_EQ(std::get<Quadratic>(a.local(i).family()).q, std::get<Quadratic>(b.local(i).family()).q);
  }
}
