#pragma once

#include "adadmm/types.hpp"

#include <cmath>
#include <string>

namespace adadmm {

// The shared non-smooth term h(x0). Only families with a closed-form
// proximal map are supported.
struct Regularizer {
  enum class Kind { Zero, Box, L1 };

  Kind kind = Kind::Zero;
  double param = 0.0;  // box half-width b, or l1 weight mu

  static Regularizer zero() { return {}; }
  static Regularizer box(double bound) {
    require(std::isfinite(bound) && bound > 0.0, "box bound must be finite and positive");
    return {Kind::Box, bound};
  }
  static Regularizer l1(double weight) {
    require(std::isfinite(weight) && weight >= 0.0, "l1 weight must be nonnegative");
    return {Kind::L1, weight};
  }

  // h(x); +inf outside the box.
  template <typename Derived>
  typename Derived::Scalar value(const Eigen::MatrixBase<Derived>& x) const {
    using Scalar = typename Derived::Scalar;
    switch (kind) {
      case Kind::Zero:
        return Scalar(0);
      case Kind::Box:
        return (x.cwiseAbs().array() > Scalar(param)).any()
                   ? std::numeric_limits<Scalar>::infinity()
                   : Scalar(0);
      case Kind::L1:
        return Scalar(param) * x.template lpNorm<1>();
    }
    return Scalar(0);
  }

  std::string name() const {
    switch (kind) {
      case Kind::Zero:
        return "zero";
      case Kind::Box:
        return "box";
      case Kind::L1:
        return "l1";
    }
    return "?";
  }
};

// sign(v) * max(|v| - t, 0), componentwise. |v| == t maps to exactly 0.
template <typename Derived>
VectorX<typename Derived::Scalar> soft_threshold(const Eigen::MatrixBase<Derived>& v,
                                                 typename Derived::Scalar t) {
  using Scalar = typename Derived::Scalar;
  require(t >= Scalar(0), "soft_threshold: threshold must be nonnegative");
  VectorX<Scalar> out(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const Scalar a = v(j);
    if (a > t)
      out(j) = a - t;
    else if (a < -t)
      out(j) = a + t;
    else
      out(j) = Scalar(0);
  }
  return out;
}

// argmin_u h(u) + 1/(2 step) ||u - v||^2
template <typename Derived>
VectorX<typename Derived::Scalar> prox(const Regularizer& reg, const Eigen::MatrixBase<Derived>& v,
                                       typename Derived::Scalar step) {
  using Scalar = typename Derived::Scalar;
  switch (reg.kind) {
    case Regularizer::Kind::Zero:
      return v;
    case Regularizer::Kind::Box: {
      const Scalar b(reg.param);
      return v.cwiseMax(-b).cwiseMin(b);
    }
    case Regularizer::Kind::L1:
      return soft_threshold(v, Scalar(reg.param) * step);
  }
  return v;
}

// Distance from g to the subdifferential of h at x. Used for KKT residuals
// and prox optimality checks. Box faces are detected by exact comparison,
// which matches the clamp in prox().
template <typename DerivedX, typename DerivedG>
typename DerivedX::Scalar subgradient_distance(const Regularizer& reg,
                                               const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedG>& g) {
  using Scalar = typename DerivedX::Scalar;
  using std::abs;
  Scalar sq(0);
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Scalar gap(0);
    const Scalar gj = g(j);
    switch (reg.kind) {
      case Regularizer::Kind::Zero:
        gap = gj;
        break;
      case Regularizer::Kind::Box: {
        const Scalar b(reg.param);
        if (x(j) >= b)
          gap = gj < Scalar(0) ? gj : Scalar(0);  // normal cone [0, inf)
        else if (x(j) <= -b)
          gap = gj > Scalar(0) ? gj : Scalar(0);  // (-inf, 0]
        else
          gap = gj;
        break;
      }
      case Regularizer::Kind::L1: {
        const Scalar mu(reg.param);
        if (x(j) > Scalar(0))
          gap = gj - mu;
        else if (x(j) < Scalar(0))
          gap = gj + mu;
        else
          gap = abs(gj) > mu ? abs(gj) - mu : Scalar(0);
        break;
      }
    }
    sq += gap * gap;
  }
  using std::sqrt;
  return sqrt(sq);
}

}  // namespace adadmm
