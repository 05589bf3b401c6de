#pragma once

#include "adadmm/problem.hpp"
#include "adadmm/trace.hpp"

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace adadmm {

// Sufficient parameter thresholds for the linear rate and the rate itself.
//
// Without an error-bound constant the locals must be strongly convex with
// modulus sigma2 > 0. With one (`hoffman`), sigma2 is the modulus of the
// inner functions g_i in f_i(x) = g_i(A_i x) and h must be zero.
struct RateCertificate {
  double lipschitz = 0.0;
  double sigma2 = 0.0;
  int workers = 0;
  int max_arrivals = 0;  // S: every |A_k| < S
  int tau = 1;
  std::optional<double> hoffman;

  double alpha = 1.0;
  double beta = 0.0;
  double rho_min = 0.0;
  double gamma_min = 0.0;
  double rho = 0.0;    // chosen: rho_min
  double gamma = 0.0;  // chosen: max(gamma_min, gamma_floor)
  double delta = 1.0;  // smallest admissible
  double eta = 1.0;    // 1 + 1/(delta * gamma)

  bool error_bound_path() const { return hoffman.has_value(); }
  // Contraction factor 1/eta^m, computed without forming eta^m.
  double envelope_factor(long m) const;
};

double delay_footprint(int tau, int workers, double sigma2);                       // alpha
double staleness_penalty(double rho, int tau, int max_arrivals, int workers);      // beta
double rho_threshold(double lipschitz, double sigma2, int tau, int workers);
double gamma_threshold(double rho, double sigma2, int tau, int max_arrivals, int workers,
                       std::optional<double> hoffman = {});
double delta_threshold(double rho, double gamma, double sigma2, int workers,
                       std::optional<double> hoffman = {});

RateCertificate certify(double lipschitz, double sigma2, int workers, int max_arrivals, int tau,
                        std::optional<double> gamma_floor = {}, std::optional<double> hoffman = {});

// L_rho(x, x0, lambda): +inf when h(x0) is infinite.
double augmented_lagrangian(const ConsensusProblem& p, const std::vector<Vector>& x,
                            const Vector& x0, const std::vector<Vector>& lambda, double rho);

struct KktResiduals {
  double stationarity = 0.0;  // max_i ||grad f_i(x_i) + lambda_i||
  double consensus = 0.0;     // max_i ||x_i - x0||
  double x0_opt = 0.0;        // dist(sum_i lambda_i, subdifferential of h at x0)
};

KktResiduals kkt_residuals(const ConsensusProblem& p, const std::vector<Vector>& x,
                           const Vector& x0, const std::vector<Vector>& lambda);

// One inequality instance: passes when lhs <= rhs + slack.
struct CheckRow {
  long k = 0;
  std::string label;  // which side of a two-sided check, if any
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  // rhs + slack - lhs
  bool ok = true;
};

struct CheckReport {
  std::string check;
  double slack = 0.0;
  std::string slack_rule;
  std::vector<CheckRow> rows;
  long violations = 0;
  double worst_margin = kInfinity;
  std::vector<std::string> notes;

  bool passed() const { return violations == 0; }
  void add(long k, double lhs, double rhs, std::string label = {});
};

struct CheckOptions {
  // Absolute slack. Unset: 10 * grad_tol for inexact solves, 1e-9 for exact.
  std::optional<double> slack;
};

double default_slack(const Trace& trace);

// 0 <= Delta_{k+1} <= eta^{-(k+1)} Delta_0. At gamma = 0 the per-step upper
// bound (zero proximal weight form) is checked instead, since eta is undefined.
CheckReport check_envelope(const Trace& trace, const RateCertificate& cert,
                           const CheckOptions& opts = {});

// Per-step descent inequality with epsilon = 1/rho. Throws ContractError when
// rho < L or when a record lacks arrival history.
CheckReport check_descent_lemma(const Trace& trace, double rho, double gamma, double lipschitz,
                                const CheckOptions& opts = {});

// Consensus error bound in terms of moves and stale x0 gaps.
CheckReport check_consensus_bound(const Trace& trace, double lipschitz, double rho,
                                  const CheckOptions& opts = {});

enum class DelaySubset {
  Arrived,   // i in A_j against kbar_i; use nu = tau
  Deferred,  // i not in A_j against khat_i; use nu = 2 tau - 1
};

// Weighted accumulated-staleness bound, checked on every prefix of the trace.
// Both sides are reported divided by eta^k. Throws ContractError when eta <= 1.
CheckReport check_weighted_delay_bound(const Trace& trace, double eta, int nu, DelaySubset subset,
                                       const CheckOptions& opts = {});

// Per-step upper bound on Delta_{k+1}. gamma > 0 and gamma = 0 forms, with or
// without the error-bound constant. delta is the smallest admissible value.
CheckReport check_gap_upper_bound(const Trace& trace, double lipschitz, double sigma2,
                                  std::optional<double> hoffman = {},
                                  const CheckOptions& opts = {});

// max_k |A_k| + 1.
int measured_arrival_bound(const Trace& trace);

nlohmann::json to_json(const RateCertificate& cert);
nlohmann::json to_json(const CheckReport& report);

}  // namespace adadmm
