#include "adadmm/problem.hpp"

#include <algorithm>
#include <cmath>

namespace adadmm {
namespace {

// log(1 + exp(t)) without overflow.
double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

// 1 / (1 + exp(t))
double logistic_weight(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

}  // namespace

LocalObjective LocalObjective::quadratic(Matrix Q, Vector q) {
  require(Q.rows() == Q.cols(), "quadratic: Q must be square");
  require(Q.rows() >= 1, "quadratic: dimension must be at least 1");
  require_dim(q.size(), Q.rows(), "quadratic: q");
  const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
  require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
          "quadratic: Q must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Q, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  require(lo >= -1e-12 * scale, "quadratic: Q must be positive semidefinite");

  LocalObjective obj;
  obj.dim_ = Q.rows();
  obj.family_ = Quadratic{std::move(Q), std::move(q)};
  obj.lipschitz_ = estimate_lipschitz(obj);
  obj.strong_convexity_ = std::max(lo, 0.0);
  return obj;
}

LocalObjective LocalObjective::logistic(Matrix A, Vector y) {
  require(A.rows() > 0, "logistic: at least one sample is required");
  require(A.cols() >= 1, "logistic: dimension must be at least 1");
  require_dim(y.size(), A.rows(), "logistic: labels");
  for (Eigen::Index j = 0; j < y.size(); ++j)
    require(y(j) == 1.0 || y(j) == -1.0, "logistic: labels must be +1 or -1");

  LocalObjective obj;
  obj.dim_ = A.cols();
  obj.family_ = Logistic{std::move(A), std::move(y)};
  obj.lipschitz_ = estimate_lipschitz(obj);
  obj.strong_convexity_ = 0.0;
  return obj;
}

double LocalObjective::value(const Vector& x) const {
  require_dim(x.size(), dim_, "local objective value");
  if (const auto* quad = std::get_if<Quadratic>(&family_))
    return 0.5 * x.dot(quad->Q * x) + quad->q.dot(x);
  const auto& lr = std::get<Logistic>(family_);
  const Vector margin = lr.y.cwiseProduct(lr.A * x);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < margin.size(); ++j) sum += softplus(-margin(j));
  return sum;
}

Vector LocalObjective::gradient(const Vector& x) const {
  require_dim(x.size(), dim_, "local objective gradient");
  if (const auto* quad = std::get_if<Quadratic>(&family_)) return quad->Q * x + quad->q;
  const auto& lr = std::get<Logistic>(family_);
  const Vector margin = lr.y.cwiseProduct(lr.A * x);
  Vector w(margin.size());
  for (Eigen::Index j = 0; j < margin.size(); ++j) w(j) = lr.y(j) * logistic_weight(margin(j));
  return -(lr.A.transpose() * w);
}

ConsensusProblem::ConsensusProblem(std::vector<LocalObjective> locals, Regularizer reg)
    : locals_(std::move(locals)), reg_(reg) {
  require(!locals_.empty(), "consensus problem needs at least one worker");
  dim_ = locals_.front().dim();
  require(dim_ >= 1, "consensus problem dimension must be at least 1");
  for (const auto& f : locals_) require_dim(f.dim(), dim_, "consensus problem local objective");
}

double ConsensusProblem::lipschitz() const {
  double L = 0.0;
  for (const auto& f : locals_) L = std::max(L, f.lipschitz());
  return L;
}

double ConsensusProblem::strong_convexity() const {
  double s = kInfinity;
  for (const auto& f : locals_) s = std::min(s, f.strong_convexity());
  return s;
}

double local_value(const LocalObjective& obj, const Vector& x) { return obj.value(x); }
Vector local_gradient(const LocalObjective& obj, const Vector& x) { return obj.gradient(x); }

double objective_value(const ConsensusProblem& p, const Vector& x) {
  require_dim(x.size(), p.dim(), "objective_value");
  const double h = p.regularizer().value(x);
  if (std::isinf(h)) return kInfinity;
  double sum = h;
  for (const auto& f : p.locals()) sum += f.value(x);
  return sum;
}

double power_iteration(const Matrix& M, const PowerIterationOptions& opts) {
  require(M.rows() == M.cols(), "power_iteration: matrix must be square");
  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal;
  Vector v(M.rows());
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = normal(rng);
  v.normalize();

  double mu = 0.0;
  for (long it = 0; it < opts.max_iter; ++it) {
    Vector w = M * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (it > 0 && std::abs(next - mu) <= opts.rel_tol * std::abs(next)) return next;
    mu = next;
  }
  throw ConvergenceError("power iteration did not converge after " +
                             std::to_string(opts.max_iter) + " iterations",
                         opts.max_iter);
}

double estimate_lipschitz(const LocalObjective& obj, const PowerIterationOptions& opts) {
  if (const auto* quad = std::get_if<Quadratic>(&obj.family())) return power_iteration(quad->Q, opts);
  const auto& lr = std::get<Logistic>(obj.family());
  const Matrix gram = lr.A.transpose() * lr.A;
  return power_iteration(gram, opts) / 4.0;
}

ReferenceSolution solve_reference(const ConsensusProblem& p, double tol, long max_iter) {
  require(tol > 0.0, "solve_reference: tolerance must be positive");
  double L_sum = 0.0;
  for (const auto& f : p.locals()) L_sum += f.lipschitz();
  const double step = L_sum > 0.0 ? 1.0 / L_sum : 1.0;

  auto grad = [&](const Vector& x) {
    Vector g = Vector::Zero(p.dim());
    for (const auto& f : p.locals()) g += f.gradient(x);
    return g;
  };
  auto mapping_norm = [&](const Vector& x) {
    return (x - prox(p.regularizer(), (x - step * grad(x)).eval(), step)).norm() / step;
  };

  Vector x = prox(p.regularizer(), Vector::Zero(p.dim()).eval(), step);
  Vector y = x;
  double t = 1.0;
  double best_residual = kInfinity;
  Vector best = x;
  for (long it = 1; it <= max_iter; ++it) {
    const Vector gy = grad(y);
    const Vector x_next = prox(p.regularizer(), (y - step * gy).eval(), step);
    const double residual_y = (y - x_next).norm() / step;
    if (residual_y <= 10.0 * tol) {
      const double r = mapping_norm(x_next);
      if (r < best_residual) {
        best_residual = r;
        best = x_next;
      }
      if (r <= tol) {
        return {x_next, objective_value(p, x_next), tol, r, it};
      }
    }
    // gradient-based adaptive restart
    if ((y - x_next).dot(x_next - x) > 0.0) {
      t = 1.0;
      y = x_next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x_next + ((t - 1.0) / t_next) * (x_next - x);
      t = t_next;
    }
    x = x_next;
  }
  if (!std::isfinite(best_residual)) best = x;
  throw ReferenceSolveError("solve_reference: iteration cap " + std::to_string(max_iter) +
                                " exceeded",
                            max_iter, best);
}

LocalObjective random_quadratic(Eigen::Index n, double eig_lo, double eig_hi, double q_scale,
                                std::mt19937_64& rng) {
  require(n >= 1, "random_quadratic: dimension must be at least 1");
  require(0.0 <= eig_lo && eig_lo <= eig_hi, "random_quadratic: need 0 <= eig_lo <= eig_hi");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(eig_lo, eig_hi);
  Matrix G(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) G(r, c) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix U = qr.householderQ();
  // sign fix so U is Haar-distributed
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < n; ++c)
    if (R(c, c) < 0.0) U.col(c) *= -1.0;

  Vector lambda(n);
  for (Eigen::Index j = 0; j < n; ++j) lambda(j) = unif(rng);
  lambda(0) = eig_lo;
  if (n > 1) lambda(n - 1) = eig_hi;
  Matrix Q = U * lambda.asDiagonal() * U.transpose();
  Q = 0.5 * (Q + Q.transpose()).eval();
  Vector q(n);
  for (Eigen::Index j = 0; j < n; ++j) q(j) = q_scale * normal(rng);
  return LocalObjective::quadratic(std::move(Q), std::move(q));
}

ConsensusProblem random_quadratic_problem(Eigen::Index n, int workers, double eig_lo,
                                          double eig_hi, Regularizer reg, std::uint64_t seed,
                                          double q_scale) {
  require(workers >= 1, "random_quadratic_problem: need at least one worker");
  std::mt19937_64 rng(seed);
  std::vector<LocalObjective> locals;
  locals.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i)
    locals.push_back(random_quadratic(n, eig_lo, eig_hi, q_scale, rng));
  return ConsensusProblem(std::move(locals), reg);
}

}  // namespace adadmm
