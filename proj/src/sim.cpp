#include "adadmm/sim.hpp"

#include <cmath>
#include <stdexcept>

namespace adadmm {

Distribution Distribution::fixed(double value) {
  require(std::isfinite(value) && value >= 0.0, "fixed duration must be finite and >= 0");
  return {Kind::Fixed, value, 0.0};
}

Distribution Distribution::uniform(double lo, double hi) {
  require(std::isfinite(lo) && std::isfinite(hi) && 0.0 <= lo && lo <= hi,
          "uniform duration needs 0 <= lo <= hi");
  return {Kind::Uniform, lo, hi};
}

Distribution Distribution::lognormal(double mu, double sigma) {
  require(std::isfinite(mu) && std::isfinite(sigma) && sigma >= 0.0,
          "lognormal duration needs finite mu and sigma >= 0");
  return {Kind::LogNormal, mu, sigma};
}

double Distribution::sample(std::mt19937_64& rng) const {
  switch (kind) {
    case Kind::Fixed:
      return a;
    case Kind::Uniform:
      return std::uniform_real_distribution<double>(a, b)(rng);
    case Kind::LogNormal:
      return std::lognormal_distribution<double>(a, b)(rng);
  }
  return a;
}

double Distribution::mean() const {
  switch (kind) {
    case Kind::Fixed:
      return a;
    case Kind::Uniform:
      return 0.5 * (a + b);
    case Kind::LogNormal:
      return std::exp(a + 0.5 * b * b);
  }
  return a;
}

const Distribution& SimConfig::compute_for(int worker) const {
  return compute.size() == 1 ? compute.front() : compute.at(static_cast<std::size_t>(worker));
}

void SimConfig::validate(int workers) const {
  require(compute.size() == 1 || static_cast<int>(compute.size()) == workers,
          "sim: compute distributions must be one shared entry or one per worker");
  for (const auto& d : compute) {
    const bool positive = d.kind == Distribution::Kind::LogNormal ||
                          (d.kind == Distribution::Kind::Fixed && d.a > 0.0) ||
                          (d.kind == Distribution::Kind::Uniform && d.a > 0.0);
    require(positive, "sim: worker compute times must be strictly positive");
  }
}

SimTransport::SimTransport(const ConsensusProblem& p, double rho, const FistaConfig& fista,
                           DualInit init, SimConfig sim)
    : problem_(p), rho_(rho), fista_(fista), sim_(std::move(sim)) {
  const int N = p.workers();
  sim_.validate(N);
  const auto seed_lo = static_cast<std::uint32_t>(sim_.seed & 0xffffffffULL);
  const auto seed_hi = static_cast<std::uint32_t>(sim_.seed >> 32);
  {
    std::seed_seq seq{seed_lo, seed_hi, 0u};
    master_rng_.seed(seq);
  }
  for (int i = 0; i < N; ++i) {
    const Vector x = Vector::Zero(p.dim());
    workers_.emplace_back(i, p.local(i), x, initial_dual(p.local(i), x, init));
    std::seed_seq seq{seed_lo, seed_hi, static_cast<std::uint32_t>(i + 1)};
    worker_rng_.emplace_back(seq);
  }
  busy_.assign(static_cast<std::size_t>(N), false);
  busy_since_.assign(static_cast<std::size_t>(N), 0.0);
  free_since_.assign(static_cast<std::size_t>(N), 0.0);
  inbox_.assign(static_cast<std::size_t>(N), Vector());
  accounts_.assign(static_cast<std::size_t>(N) + 1, ClockAccount{});
  deliveries_.assign(static_cast<std::size_t>(N), 0);
  received_.assign(static_cast<std::size_t>(N), 0);
  sent_.assign(static_cast<std::size_t>(N), 0);
}

void SimTransport::push(SimEvent ev) {
  ev.sequence = next_seq_++;
  queue_.push(std::move(ev));
}

SimEvent SimTransport::pop() {
  SimEvent ev = queue_.top();
  queue_.pop();
  if (ev.time < last_event_time_)
    throw std::logic_error("simulator event queue corruption: time went backwards");
  last_event_time_ = ev.time;
  return ev;
}

bool SimTransport::handle(SimEvent& ev, Report& out) {
  const auto idx = static_cast<std::size_t>(ev.worker);
  switch (ev.kind) {
    case SimEvent::Kind::DeliverToWorker: {
      if (busy_[idx]) throw std::logic_error("simulator: broadcast reached a busy worker");
      accounts_[idx + 1].wait_total += ev.time - free_since_[idx];
      busy_[idx] = true;
      busy_since_[idx] = ev.time;
      inbox_[idx] = std::move(ev.payload);
      ++received_[idx];
      SimEvent done;
      done.kind = SimEvent::Kind::ComputeDone;
      done.worker = ev.worker;
      done.time = ev.time + sim_.compute_for(ev.worker).sample(worker_rng_[idx]);
      push(std::move(done));
      return false;
    }
    case SimEvent::Kind::ComputeDone: {
      accounts_[idx + 1].compute_total += ev.time - busy_since_[idx];
      busy_[idx] = false;
      free_since_[idx] = ev.time;
      SimEvent msg;
      msg.kind = SimEvent::Kind::DeliverToMaster;
      msg.worker = ev.worker;
      msg.report = worker_step(workers_[idx], inbox_[idx], rho_, fista_);
      if (!workers_[idx].last_solve.converged) ++nonconverged_;
      msg.time = ev.time + sim_.latency_to_master.sample(worker_rng_[idx]);
      ++sent_[idx];
      push(std::move(msg));
      return false;
    }
    case SimEvent::Kind::DeliverToMaster:
      out = std::move(ev.report);
      return true;
  }
  return false;
}

void SimTransport::start(const Vector& x0) {
  for (int i = 0; i < problem_.workers(); ++i) {
    SimEvent ev;
    ev.kind = SimEvent::Kind::DeliverToWorker;
    ev.worker = i;
    ev.payload = x0;
    ev.time = now_ + sim_.latency_to_worker.sample(worker_rng_[static_cast<std::size_t>(i)]);
    push(std::move(ev));
  }
}

std::optional<Report> SimTransport::poll() {
  while (!queue_.empty() && queue_.top().time <= now_) {
    SimEvent ev = pop();
    Report r;
    if (handle(ev, r)) {
      ++deliveries_[static_cast<std::size_t>(r.worker)];
      return r;
    }
  }
  return std::nullopt;
}

Report SimTransport::wait() {
  while (!queue_.empty()) {
    SimEvent ev = pop();
    if (ev.time > now_) {
      master_wait_ += ev.time - now_;
      now_ = ev.time;
    }
    Report r;
    if (handle(ev, r)) {
      ++deliveries_[static_cast<std::size_t>(r.worker)];
      return r;
    }
  }
  throw TransportError("simulator: master is waiting but no report is in flight");
}

void SimTransport::broadcast(std::span<const int> targets, const Vector& x0, std::uint64_t) {
  const double cost = sim_.master_compute.sample(master_rng_);
  now_ += cost;
  master_compute_ += cost;
  for (int i : targets) {
    SimEvent ev;
    ev.kind = SimEvent::Kind::DeliverToWorker;
    ev.worker = i;
    ev.payload = x0;
    ev.time = now_ + sim_.latency_to_worker.sample(worker_rng_[static_cast<std::size_t>(i)]);
    push(std::move(ev));
  }
}

void SimTransport::shutdown() {
  if (stopped_) return;
  stopped_ = true;
  // Let workers run up to the stop time; whatever reaches the master is dropped.
  while (!queue_.empty() && queue_.top().time <= now_) {
    SimEvent ev = pop();
    Report ignored;
    handle(ev, ignored);
  }
  accounts_[0] = {master_compute_, master_wait_};
  long consumed = 0;
  long requested = 0;
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    if (busy_[i])
      accounts_[i + 1].compute_total += now_ - busy_since_[i];
    else
      accounts_[i + 1].wait_total += now_ - free_since_[i];
    consumed += deliveries_[i];
    requested += received_[i];
  }
  // every broadcast, delivered or still in flight, yields exactly one report
  long in_flight = 0;
  auto copy = queue_;
  while (!copy.empty()) {
    if (copy.top().kind == SimEvent::Kind::DeliverToWorker) ++in_flight;
    copy.pop();
  }
  late_ = requested + in_flight - consumed;
}

ScheduledTransport::ScheduledTransport(const ConsensusProblem& p, double rho,
                                       const FistaConfig& fista, DualInit init, Schedule schedule)
    : problem_(p), rho_(rho), fista_(fista), schedule_(std::move(schedule)) {
  for (int i = 0; i < p.workers(); ++i) {
    const Vector x = Vector::Zero(p.dim());
    workers_.emplace_back(i, p.local(i), x, initial_dual(p.local(i), x, init));
  }
  held_.resize(static_cast<std::size_t>(p.workers()));
}

void ScheduledTransport::start(const Vector& x0) {
  for (auto& w : workers_) {
    held_[static_cast<std::size_t>(w.id)] = worker_step(w, x0, rho_, fista_);
    if (!w.last_solve.converged) ++nonconverged_;
  }
}

std::optional<Report> ScheduledTransport::poll() {
  for (int i : schedule_(k_)) {
    if (i < 0 || i >= problem_.workers())
      throw TransportError("schedule names unknown worker " + std::to_string(i));
    auto& slot = held_[static_cast<std::size_t>(i)];
    if (slot) {
      Report r = std::move(*slot);
      slot.reset();
      return r;
    }
  }
  return std::nullopt;
}

Report ScheduledTransport::wait() {
  if (auto r = poll()) return std::move(*r);
  throw TransportError("schedule stalled at iteration " + std::to_string(k_) +
                       ": the barrier needs a report the schedule does not release");
}

void ScheduledTransport::broadcast(std::span<const int> targets, const Vector& x0,
                                   std::uint64_t k) {
  k_ = static_cast<long>(k);
  for (int i : targets) {
    auto& w = workers_[static_cast<std::size_t>(i)];
    held_[static_cast<std::size_t>(i)] = worker_step(w, x0, rho_, fista_);
    if (!w.last_solve.converged) ++nonconverged_;
  }
}

void ScheduledTransport::shutdown() {
  late_ = 0;
  for (const auto& h : held_)
    if (h) ++late_;
}

std::vector<ClockAccount> ScheduledTransport::clock_accounts() const {
  return std::vector<ClockAccount>(workers_.size() + 1, ClockAccount{});
}

ScheduledTransport::Schedule round_robin_schedule(int workers, int tau) {
  require(workers >= 1 && tau >= 1, "round_robin_schedule: need workers >= 1 and tau >= 1");
  return [workers, tau](long k) {
    std::vector<int> out;
    for (int i = 0; i < workers; ++i)
      if (i % tau == static_cast<int>(k % tau)) out.push_back(i);
    return out;
  };
}

Trace sim_run(const ConsensusProblem& p, const ProtocolConfig& cfg, const FistaConfig& fista,
              const SimConfig& sim, const RunOptions& options) {
  SimTransport transport(p, cfg.rho, fista, cfg.dual_init, sim);
  RunOptions opts = options;
  if (opts.grad_tol == 0.0) opts.grad_tol = fista.grad_tol;
  return run_to_completion(p, cfg, transport, opts);
}

}  // namespace adadmm
