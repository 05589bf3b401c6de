#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace adadmm {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Caller broke a documented precondition (dimension mismatch, bad parameter).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An iterative method ran out of iterations.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, long iterations)
      : std::runtime_error(what), iterations_(iterations) {}
  long iterations() const { return iterations_; }

 private:
  long iterations_;
};

// The master/worker protocol reached a state the algorithm forbids.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Message fabric failure (socket loss, bad frame, unknown peer).
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw ContractError(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
                        ", expected " + std::to_string(want) + ")");
  }
}

}  // namespace adadmm
