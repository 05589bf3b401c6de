#pragma once

#include "adadmm/types.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace adadmm {

// Per-actor time split. For every actor compute_total + wait_total equals the
// final clock of the run.
struct ClockAccount {
  double compute_total = 0.0;
  double wait_total = 0.0;
};

// Telemetry for master iteration k, i.e. the transition from state k to k+1.
//
// Arrival indices use -1 for the virtual initial arrival: every worker starts
// as if it had reported (x_i^0, lambda_i^0) computed against x0^0.
struct IterationRecord {
  long k = 0;
  std::vector<int> arrivals;  // A_k, ascending

  // Per worker. For i in A_k: last_arrival = kbar_i, the iteration the consumed
  // report was requested at (it was computed against x0^{kbar_i + 1}).
  // For i not in A_k: last_arrival = ktilde_i and second_last_arrival = khat_i.
  std::vector<long> last_arrival;
  std::vector<long> second_last_arrival;

  // i in A_k:     ||x_i^{k+1} - x_i^k||^2
  // i not in A_k: ||x_i^{ktilde+1} - x_i^{ktilde}||^2 (0 before the first arrival)
  std::vector<double> move;
  // i in A_k:     ||x0^k - x0^{kbar+1}||^2
  // i not in A_k: ||x0^k - x0^{khat+1}||^2
  std::vector<double> stale_gap;
  std::vector<int> delays;  // d_i after the update

  double x0_move = 0.0;        // ||x0^{k+1} - x0^k||^2
  double lagrangian = 0.0;     // L_rho at state k+1
  double objective = 0.0;      // F(x0^{k+1})
  double consensus_err = 0.0;  // sum_i ||x_i^{k+1} - x0^{k+1}||^2
  double stationarity = 0.0;   // KKT residuals at state k+1
  double consensus_max = 0.0;
  double x0_opt = 0.0;

  double time = 0.0;  // master clock once x0^{k+1} was broadcast
  double master_compute = 0.0;
  double master_wait = 0.0;

  bool in_arrivals(int i) const;
};

struct RunInfo {
  double rho = 0.0;
  double gamma = 0.0;
  int tau = 1;
  int min_arrivals = 1;
  int workers = 0;
  Eigen::Index dim = 0;
  double grad_tol = 0.0;
  double lipschitz = 0.0;
  double strong_convexity = 0.0;
  std::string backend;
  std::string time_unit;  // "simulated_seconds" or "wall_seconds"
  std::string dual_init;
};

struct Trace {
  RunInfo info;
  std::optional<double> f_star;

  double lagrangian0 = 0.0;
  double objective0 = 0.0;
  double consensus0 = 0.0;

  std::vector<Vector> x0;  // x0^0 ... x0^K
  std::vector<IterationRecord> records;

  // Full iterates per state 0..K when requested.
  std::vector<std::vector<Vector>> x_iterates;
  std::vector<std::vector<Vector>> lambda_iterates;

  std::vector<ClockAccount> clocks;  // [0] master, [1 + i] worker i
  double final_time = 0.0;
  long late_reports = 0;
  long nonconverged_solves = 0;
  std::string stop_reason;

  long iterations() const { return static_cast<long>(records.size()); }

  // L_rho at state k (0 <= k <= K).
  double lagrangian(long k) const { return k == 0 ? lagrangian0 : records.at(k - 1).lagrangian; }
  double objective(long k) const { return k == 0 ? objective0 : records.at(k - 1).objective; }
  // Delta_k = L_rho(state k) - F*. Requires f_star.
  double delta(long k) const;
};

// One CSV row per state k = 0..K.
struct TraceRow {
  long k = 0;
  double objective = 0.0;
  double lagrangian = 0.0;
  double delta = 0.0;  // NaN when F* unknown
  double consensus_err = 0.0;
  int arrivals = 0;  // |A_{k-1}|, 0 for k = 0
  double time = 0.0;
  double master_compute = 0.0;
  double master_wait = 0.0;
};

inline constexpr const char* kTraceCsvHeader =
    "k,objective,lagrangian,delta,consensus_err,arrivals,time,master_compute,master_wait";

std::vector<TraceRow> trace_rows(const Trace& trace);
void write_trace_csv(std::ostream& out, const Trace& trace);
std::vector<TraceRow> read_trace_csv(std::istream& in);

}  // namespace adadmm
