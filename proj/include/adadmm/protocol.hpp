#pragma once

#include "adadmm/problem.hpp"
#include "adadmm/prox.hpp"
#include "adadmm/trace.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace adadmm {

struct StoppingRule {
  long max_iter = 1000;
  std::optional<double> target_objective;  // stop once F(x0^k) <= target
  std::optional<double> consensus_tol;     // stop once both KKT tolerances hold
  std::optional<double> stationarity_tol;
};

// Starting duals. GradientConsistent sets lambda_i^0 = -grad f_i(x_i^0), so the
// worker optimality identity grad f_i(x_i) + lambda_i = 0 holds from k = 0.
enum class DualInit { GradientConsistent, Zero };

std::string to_string(DualInit init);
DualInit dual_init_from_string(const std::string& name);

struct ProtocolConfig {
  double rho = 1.0;
  double gamma = 0.0;
  int tau = 1;           // maximum tolerable delay
  int min_arrivals = 1;  // A: minimum |A_k|
  StoppingRule stop;
  DualInit dual_init = DualInit::GradientConsistent;

  void validate(int workers) const;
};

// Wire-level messages. Iteration tags are diagnostic only.
struct Broadcast {
  Vector x0;
  std::uint64_t k = 0;
};

struct Report {
  int worker = 0;
  Vector x;
  Vector lambda;
  std::uint64_t k = 0;  // worker's local clock after the update
};

struct Shutdown {};

using WireMessage = std::variant<Broadcast, Report, Shutdown>;

// Master's view: x0, cached (x_i, lambda_i), delay counters and arrival log.
struct MasterState {
  long k = 0;
  Vector x0;
  std::vector<Vector> x_cache;
  std::vector<Vector> lambda_cache;
  std::vector<int> d;
  std::map<int, Report> pending;  // arrived, not yet consumed
  std::vector<std::vector<long>> history;  // per worker: iterations it was in A_k

  MasterState(Vector x0_init, std::vector<Vector> x_init, std::vector<Vector> lambda_init);

  int workers() const { return static_cast<int>(x_cache.size()); }
  // Queue a report for the next barrier. A worker can have at most one
  // report outstanding.
  void accept(Report report);
  // Last iteration before now at which worker i arrived, -1 if never.
  long last_arrival(int i) const;
  long second_last_arrival(int i) const;
};

// |pending| >= A and every worker without a pending report has d_i < tau - 1.
bool barrier_ready(const MasterState& m, const ProtocolConfig& cfg);

// Consumes all pending reports as A_k, updates caches, counters and x0, and
// returns A_k (the broadcast targets). Throws ProtocolError when the barrier
// is not satisfied.
std::vector<int> master_step(MasterState& m, const ProtocolConfig& cfg, const Regularizer& reg);

struct WorkerState {
  int id = 0;
  long k = 0;
  Vector x;
  Vector lambda;
  const LocalObjective* obj = nullptr;
  SubproblemResult last_solve;

  WorkerState(int id, const LocalObjective& objective, Vector x_init, Vector lambda_init);
};

// Solve the local subproblem against x0_hat, update the dual, advance the
// local clock. A non-converged inexact solve is visible in w.last_solve.
Report worker_step(WorkerState& w, const Vector& x0_hat, double rho, const FistaConfig& cfg);

std::vector<Vector> initial_duals(const ConsensusProblem& p, const std::vector<Vector>& x_init,
                                  DualInit init);
Vector initial_dual(const LocalObjective& obj, const Vector& x_init, DualInit init);

struct TransportClock {
  double now = 0.0;
  double compute = 0.0;
  double wait = 0.0;
};

// Message fabric between the master logic and N workers.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string name() const = 0;
  virtual std::string time_unit() const = 0;
  // Send x0^0 to every worker.
  virtual void start(const Vector& x0) = 0;
  // A report that has already reached the master, if any. Never blocks.
  virtual std::optional<Report> poll() = 0;
  // Block until the next report reaches the master.
  virtual Report wait() = 0;
  // Master computation of x0^{k} finished; deliver it to `targets`.
  virtual void broadcast(std::span<const int> targets, const Vector& x0, std::uint64_t k) = 0;
  // Stop every worker. Reports that arrive afterwards are discarded.
  virtual void shutdown() = 0;

  virtual TransportClock master_clock() const = 0;
  // Valid after shutdown(): [0] master, [1 + i] worker i.
  virtual std::vector<ClockAccount> clock_accounts() const = 0;
  virtual double final_time() const = 0;
  virtual long late_reports() const = 0;
  virtual long nonconverged_solves() const { return 0; }
};

struct RunOptions {
  std::optional<double> f_star;
  bool record_iterates = false;
  std::string backend_label;
  double grad_tol = 0.0;  // inexact local solve tolerance; ignored when all solves are exact
};

// Thrown when the transport fails mid-run; carries everything recorded so far.
class RunAborted : public TransportError {
 public:
  RunAborted(const std::string& what, Trace partial)
      : TransportError(what), partial_(std::move(partial)) {}
  const Trace& partial_trace() const { return partial_; }

 private:
  Trace partial_;
};

// Drives the master side of the protocol over `transport` until the stopping
// rule fires, then shuts the workers down.
Trace run_to_completion(const ConsensusProblem& p, const ProtocolConfig& cfg, Transport& transport,
                        const RunOptions& options = {});

}  // namespace adadmm
