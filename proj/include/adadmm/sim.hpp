#pragma once

#include "adadmm/protocol.hpp"

#include <cstdint>
#include <functional>
#include <queue>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace adadmm {

// Duration distribution in simulated seconds.
struct Distribution {
  enum class Kind { Fixed, Uniform, LogNormal };
  Kind kind = Kind::Fixed;
  double a = 0.0;  // value | lo | mu
  double b = 0.0;  // -    | hi | sigma

  static Distribution fixed(double value);
  static Distribution uniform(double lo, double hi);
  static Distribution lognormal(double mu, double sigma);

  double sample(std::mt19937_64& rng) const;
  double mean() const;
};

struct SimConfig {
  std::uint64_t seed = 1;
  // One entry per worker, or a single entry shared by all.
  std::vector<Distribution> compute{Distribution::fixed(1.0)};
  Distribution latency_to_worker = Distribution::fixed(0.0);
  Distribution latency_to_master = Distribution::fixed(0.0);
  Distribution master_compute = Distribution::fixed(0.0);

  const Distribution& compute_for(int worker) const;
  void validate(int workers) const;
};

struct SimEvent {
  enum class Kind { DeliverToWorker, ComputeDone, DeliverToMaster };
  double time = 0.0;
  std::uint64_t sequence = 0;
  Kind kind = Kind::DeliverToWorker;
  int worker = 0;
  Vector payload;  // x0 for DeliverToWorker
  Report report;   // DeliverToMaster
};

// Discrete-event cluster: one master, N workers with sampled compute times
// and link latencies. Single-threaded; events run in (time, sequence) order.
// Workers run in-process and perform the real numerical updates.
class SimTransport final : public Transport {
 public:
  SimTransport(const ConsensusProblem& p, double rho, const FistaConfig& fista, DualInit init,
               SimConfig sim);

  std::string name() const override { return "sim"; }
  std::string time_unit() const override { return "simulated_seconds"; }
  void start(const Vector& x0) override;
  std::optional<Report> poll() override;
  Report wait() override;
  void broadcast(std::span<const int> targets, const Vector& x0, std::uint64_t k) override;
  void shutdown() override;

  TransportClock master_clock() const override { return {now_, master_compute_, master_wait_}; }
  std::vector<ClockAccount> clock_accounts() const override { return accounts_; }
  double final_time() const override { return now_; }
  long late_reports() const override { return late_; }
  long nonconverged_solves() const override { return nonconverged_; }

  // Reports consumed from each worker so far (arrival frequency diagnostics).
  const std::vector<long>& deliveries() const { return deliveries_; }
  // Broadcasts received and reports sent per worker.
  const std::vector<long>& broadcasts_received() const { return received_; }
  const std::vector<long>& reports_sent() const { return sent_; }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.sequence > b.sequence;
    }
  };

  void push(SimEvent ev);
  SimEvent pop();
  // Handles a non-master event; returns true if it was a delivery to master.
  bool handle(SimEvent& ev, Report& out);

  const ConsensusProblem& problem_;
  double rho_;
  FistaConfig fista_;
  SimConfig sim_;
  std::vector<WorkerState> workers_;
  std::vector<std::mt19937_64> worker_rng_;
  std::mt19937_64 master_rng_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  std::uint64_t next_seq_ = 0;
  double last_event_time_ = 0.0;

  double now_ = 0.0;  // master clock
  double master_compute_ = 0.0;
  double master_wait_ = 0.0;

  std::vector<bool> busy_;
  std::vector<double> busy_since_;
  std::vector<double> free_since_;
  std::vector<Vector> inbox_;  // x0_hat being worked on
  std::vector<ClockAccount> accounts_;
  std::vector<long> deliveries_;
  std::vector<long> received_;
  std::vector<long> sent_;
  long late_ = 0;
  long nonconverged_ = 0;
  bool stopped_ = false;
};

// Releases worker reports according to a fixed schedule: at master iteration
// k only reports from workers in schedule(k) are delivered. Workers compute
// the instant they receive x0. No notion of time.
class ScheduledTransport final : public Transport {
 public:
  using Schedule = std::function<std::vector<int>(long k)>;

  ScheduledTransport(const ConsensusProblem& p, double rho, const FistaConfig& fista,
                     DualInit init, Schedule schedule);

  std::string name() const override { return "schedule"; }
  std::string time_unit() const override { return "iterations"; }
  void start(const Vector& x0) override;
  std::optional<Report> poll() override;
  Report wait() override;
  void broadcast(std::span<const int> targets, const Vector& x0, std::uint64_t k) override;
  void shutdown() override;

  TransportClock master_clock() const override { return {static_cast<double>(k_), 0.0, 0.0}; }
  std::vector<ClockAccount> clock_accounts() const override;
  double final_time() const override { return static_cast<double>(k_); }
  long late_reports() const override { return late_; }
  long nonconverged_solves() const override { return nonconverged_; }

 private:
  const ConsensusProblem& problem_;
  double rho_;
  FistaConfig fista_;
  Schedule schedule_;
  std::vector<WorkerState> workers_;
  std::vector<std::optional<Report>> held_;
  std::vector<int> release_;
  long k_ = 0;
  long late_ = 0;
  long nonconverged_ = 0;
};

// Round-robin schedule saturating the delay bound: worker i reports at
// iterations k with k % tau == i % tau.
ScheduledTransport::Schedule round_robin_schedule(int workers, int tau);

// run_to_completion over a fresh SimTransport.
Trace sim_run(const ConsensusProblem& p, const ProtocolConfig& cfg, const FistaConfig& fista,
              const SimConfig& sim, const RunOptions& options = {});

}  // namespace adadmm
