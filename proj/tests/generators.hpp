#pragma once

// Hand-rolled generators for property tests. Every generator takes the RNG
// explicitly so a failing case can be replayed from its seed.

#include "adadmm/problem.hpp"

#include <random>

namespace adadmm::testing {

inline Vector gaussian_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (Eigen::Index j = 0; j < n; ++j) v(j) = g(rng);
  return v;
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                              double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = g(rng);
  return m;
}

// Symmetric PSD with eigenvalues drawn from [lo, hi].
inline Matrix psd_matrix(Eigen::Index n, double lo, double hi, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(n, n, rng));
  const Matrix U = qr.householderQ();
  std::uniform_real_distribution<double> eig(lo, hi);
  Vector d(n);
  for (Eigen::Index j = 0; j < n; ++j) d(j) = eig(rng);
  Matrix Q = U * d.asDiagonal() * U.transpose();
  return (Q + Q.transpose()) / 2.0;
}

inline Vector labels(Eigen::Index m, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Vector y(m);
  for (Eigen::Index j = 0; j < m; ++j) y(j) = coin(rng) ? 1.0 : -1.0;
  return y;
}

inline LocalObjective random_logistic(Eigen::Index m, Eigen::Index n, std::mt19937_64& rng,
                                      double scale = 1.0) {
  return LocalObjective::logistic(gaussian_matrix(m, n, rng, scale), labels(m, rng));
}

inline int uniform_int(int lo, int hi, std::mt19937_64& rng) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(double lo, double hi, std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Central finite-difference gradient.
template <typename F>
Vector numeric_gradient(F&& f, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe(j) = x(j) + h;
    const double up = f(probe);
    probe(j) = x(j) - h;
    const double down = f(probe);
    probe(j) = x(j);
    g(j) = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace adadmm::testing
