#include "adadmm/protocol.hpp"

#include <algorithm>
#include <cmath>

namespace adadmm {

std::string to_string(DualInit init) {
  return init == DualInit::Zero ? "zero" : "gradient";
}

DualInit dual_init_from_string(const std::string& name) {
  if (name == "zero") return DualInit::Zero;
  if (name == "gradient") return DualInit::GradientConsistent;
  throw ContractError("unknown dual init '" + name + "' (expected 'gradient' or 'zero')");
}

void ProtocolConfig::validate(int workers) const {
  require(rho > 0.0, "protocol: rho must be positive");
  require(gamma >= 0.0, "protocol: gamma must be nonnegative");
  require(tau >= 1, "protocol: tau must be at least 1");
  require(1 <= min_arrivals && min_arrivals <= workers,
          "protocol: min_arrivals must lie in [1, N]");
  require(stop.max_iter >= 0, "protocol: max_iter must be nonnegative");
}

MasterState::MasterState(Vector x0_init, std::vector<Vector> x_init,
                         std::vector<Vector> lambda_init)
    : x0(std::move(x0_init)), x_cache(std::move(x_init)), lambda_cache(std::move(lambda_init)) {
  require(!x_cache.empty(), "master state: need at least one worker");
  require(x_cache.size() == lambda_cache.size(), "master state: x and lambda counts differ");
  for (std::size_t i = 0; i < x_cache.size(); ++i) {
    require_dim(x_cache[i].size(), x0.size(), "master state: x_i");
    require_dim(lambda_cache[i].size(), x0.size(), "master state: lambda_i");
  }
  d.assign(x_cache.size(), 0);
  history.resize(x_cache.size());
}

void MasterState::accept(Report report) {
  if (report.worker < 0 || report.worker >= workers())
    throw ProtocolError("report from unknown worker " + std::to_string(report.worker));
  require_dim(report.x.size(), x0.size(), "report x");
  require_dim(report.lambda.size(), x0.size(), "report lambda");
  const int id = report.worker;
  if (!pending.emplace(id, std::move(report)).second)
    throw ProtocolError("worker " + std::to_string(id) + " sent a second report before the first "
                        "was consumed");
}

long MasterState::last_arrival(int i) const {
  const auto& h = history.at(static_cast<std::size_t>(i));
  return h.empty() ? -1 : h.back();
}

long MasterState::second_last_arrival(int i) const {
  const auto& h = history.at(static_cast<std::size_t>(i));
  return h.size() < 2 ? -1 : h[h.size() - 2];
}

bool barrier_ready(const MasterState& m, const ProtocolConfig& cfg) {
  if (static_cast<int>(m.pending.size()) < cfg.min_arrivals) return false;
  for (int i = 0; i < m.workers(); ++i) {
    if (m.pending.count(i)) continue;
    if (m.d[static_cast<std::size_t>(i)] >= cfg.tau - 1) return false;
  }
  return true;
}

std::vector<int> master_step(MasterState& m, const ProtocolConfig& cfg, const Regularizer& reg) {
  if (!barrier_ready(m, cfg))
    throw ProtocolError("master_step called at iteration " + std::to_string(m.k) +
                        " before the barrier was satisfied");
  std::vector<int> arrived;
  arrived.reserve(m.pending.size());
  for (auto& [i, report] : m.pending) {
    const auto idx = static_cast<std::size_t>(i);
    m.x_cache[idx] = std::move(report.x);
    m.lambda_cache[idx] = std::move(report.lambda);
    m.history[idx].push_back(m.k);
    arrived.push_back(i);
  }
  m.pending.clear();
  for (int i = 0; i < m.workers(); ++i) {
    auto& di = m.d[static_cast<std::size_t>(i)];
    di = std::binary_search(arrived.begin(), arrived.end(), i) ? 0 : di + 1;
  }

  Vector sum_lambda = Vector::Zero(m.x0.size());
  Vector sum_x = Vector::Zero(m.x0.size());
  for (int i = 0; i < m.workers(); ++i) {
    sum_lambda += m.lambda_cache[static_cast<std::size_t>(i)];
    sum_x += m.x_cache[static_cast<std::size_t>(i)];
  }
  m.x0 = master_prox(reg, sum_lambda, sum_x, m.x0, cfg.rho, cfg.gamma, m.workers());
  ++m.k;
  return arrived;
}

WorkerState::WorkerState(int id_, const LocalObjective& objective, Vector x_init,
                         Vector lambda_init)
    : id(id_), x(std::move(x_init)), lambda(std::move(lambda_init)), obj(&objective) {
  require_dim(x.size(), objective.dim(), "worker state x");
  require_dim(lambda.size(), objective.dim(), "worker state lambda");
}

Report worker_step(WorkerState& w, const Vector& x0_hat, double rho, const FistaConfig& cfg) {
  require_dim(x0_hat.size(), w.obj->dim(), "worker_step x0_hat");
  w.last_solve = worker_subproblem(*w.obj, w.lambda, x0_hat, rho, cfg, w.x);
  w.lambda = dual_update(w.lambda, w.last_solve.x_new, x0_hat, rho);
  w.x = w.last_solve.x_new;
  ++w.k;
  return Report{w.id, w.x, w.lambda, static_cast<std::uint64_t>(w.k)};
}

Vector initial_dual(const LocalObjective& obj, const Vector& x_init, DualInit init) {
  if (init == DualInit::Zero) return Vector::Zero(obj.dim());
  return -obj.gradient(x_init);
}

std::vector<Vector> initial_duals(const ConsensusProblem& p, const std::vector<Vector>& x_init,
                                  DualInit init) {
  require(static_cast<int>(x_init.size()) == p.workers(), "initial_duals: one x per worker");
  std::vector<Vector> out;
  out.reserve(x_init.size());
  for (int i = 0; i < p.workers(); ++i)
    out.push_back(initial_dual(p.local(i), x_init[static_cast<std::size_t>(i)], init));
  return out;
}

namespace {

// Cached f_i(x_i) and grad f_i(x_i) so per-iteration telemetry only touches
// the workers that arrived.
struct WorkerCache {
  std::vector<double> value;
  std::vector<Vector> grad;
};

struct StateSummary {
  double lagrangian = 0.0;
  double objective = 0.0;
  double consensus_err = 0.0;
  double consensus_max = 0.0;
  double stationarity = 0.0;
  double x0_opt = 0.0;
};

StateSummary summarize(const ConsensusProblem& p, const MasterState& m, const WorkerCache& cache,
                       double rho) {
  StateSummary s;
  const double h = p.regularizer().value(m.x0);
  double lag = h;
  Vector sum_lambda = Vector::Zero(p.dim());
  for (int i = 0; i < p.workers(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const Vector r = m.x_cache[idx] - m.x0;
    const double r2 = r.squaredNorm();
    lag += cache.value[idx] + m.lambda_cache[idx].dot(r) + 0.5 * rho * r2;
    s.consensus_err += r2;
    s.consensus_max = std::max(s.consensus_max, std::sqrt(r2));
    s.stationarity =
        std::max(s.stationarity, (cache.grad[idx] + m.lambda_cache[idx]).norm());
    sum_lambda += m.lambda_cache[idx];
  }
  s.lagrangian = lag;
  s.objective = objective_value(p, m.x0);
  s.x0_opt = subgradient_distance(p.regularizer(), m.x0, sum_lambda);
  return s;
}

std::optional<std::string> should_stop(const StoppingRule& rule, long k, const StateSummary& s) {
  if (rule.target_objective && s.objective <= *rule.target_objective) return "target_objective";
  if (rule.consensus_tol || rule.stationarity_tol) {
    bool ok = true;
    if (rule.consensus_tol) ok = ok && s.consensus_max <= *rule.consensus_tol;
    if (rule.stationarity_tol)
      ok = ok && std::max(s.stationarity, s.x0_opt) <= *rule.stationarity_tol;
    if (ok) return "kkt_tolerance";
  }
  if (k >= rule.max_iter) return "max_iter";
  return std::nullopt;
}

}  // namespace

Trace run_to_completion(const ConsensusProblem& p, const ProtocolConfig& cfg, Transport& transport,
                        const RunOptions& options) {
  const int N = p.workers();
  cfg.validate(N);

  const Vector x0_init = Vector::Zero(p.dim());
  std::vector<Vector> x_init(static_cast<std::size_t>(N), Vector::Zero(p.dim()));
  MasterState m(x0_init, x_init, initial_duals(p, x_init, cfg.dual_init));

  WorkerCache cache;
  for (int i = 0; i < N; ++i) {
    cache.value.push_back(p.local(i).value(m.x_cache[static_cast<std::size_t>(i)]));
    cache.grad.push_back(p.local(i).gradient(m.x_cache[static_cast<std::size_t>(i)]));
  }
  std::vector<double> last_move(static_cast<std::size_t>(N), 0.0);

  Trace trace;
  trace.info.rho = cfg.rho;
  trace.info.gamma = cfg.gamma;
  trace.info.tau = cfg.tau;
  trace.info.min_arrivals = cfg.min_arrivals;
  trace.info.workers = N;
  trace.info.dim = p.dim();
  bool exact = true;
  for (const auto& f : p.locals()) exact = exact && f.is_quadratic();
  trace.info.grad_tol = exact ? 0.0 : options.grad_tol;
  trace.info.lipschitz = p.lipschitz();
  trace.info.strong_convexity = p.strong_convexity();
  trace.info.backend = options.backend_label.empty() ? transport.name() : options.backend_label;
  trace.info.time_unit = transport.time_unit();
  trace.info.dual_init = to_string(cfg.dual_init);
  trace.f_star = options.f_star;

  StateSummary state = summarize(p, m, cache, cfg.rho);
  trace.lagrangian0 = state.lagrangian;
  trace.objective0 = state.objective;
  trace.consensus0 = state.consensus_err;
  trace.x0.push_back(m.x0);
  if (options.record_iterates) {
    trace.x_iterates.push_back(m.x_cache);
    trace.lambda_iterates.push_back(m.lambda_cache);
  }

  auto abort = [&](const std::string& why) -> RunAborted {
    try {
      transport.shutdown();
    } catch (const std::exception&) {
      // already failing; the partial trace is what matters
    }
    trace.stop_reason = "aborted: " + why;
    return RunAborted(why, trace);
  };

  try {
    transport.start(m.x0);
  } catch (const TransportError& e) {
    throw abort(e.what());
  }

  std::optional<std::string> deferred_failure;
  while (true) {
    if (auto reason = should_stop(cfg.stop, m.k, state)) {
      trace.stop_reason = *reason;
      break;
    }

    try {
      if (deferred_failure) throw TransportError(*deferred_failure);
      while (auto r = transport.poll()) m.accept(std::move(*r));
      while (!barrier_ready(m, cfg)) m.accept(transport.wait());
    } catch (const TransportError& e) {
      throw abort(e.what());
    }
    // Reports that landed while the master was blocked belong to this round.
    // A failure noticed here does not void a round whose barrier already holds.
    try {
      while (auto r = transport.poll()) m.accept(std::move(*r));
    } catch (const TransportError& e) {
      deferred_failure = e.what();
    }

    const long k = m.k;
    IterationRecord rec;
    rec.k = k;
    rec.last_arrival.resize(static_cast<std::size_t>(N));
    rec.second_last_arrival.resize(static_cast<std::size_t>(N));
    rec.move.resize(static_cast<std::size_t>(N));
    rec.stale_gap.resize(static_cast<std::size_t>(N));
    const Vector& x0_k = m.x0;
    for (int i = 0; i < N; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      const long last = m.last_arrival(i);
      const long second = m.second_last_arrival(i);
      rec.last_arrival[idx] = last;
      rec.second_last_arrival[idx] = second;
      if (auto it = m.pending.find(i); it != m.pending.end()) {
        rec.move[idx] = (it->second.x - m.x_cache[idx]).squaredNorm();
        rec.stale_gap[idx] = (x0_k - trace.x0[static_cast<std::size_t>(last + 1)]).squaredNorm();
      } else {
        rec.move[idx] = last_move[idx];
        rec.stale_gap[idx] = (x0_k - trace.x0[static_cast<std::size_t>(second + 1)]).squaredNorm();
      }
    }

    const Vector x0_prev = m.x0;
    rec.arrivals = master_step(m, cfg, p.regularizer());
    for (int i : rec.arrivals) {
      const auto idx = static_cast<std::size_t>(i);
      last_move[idx] = rec.move[idx];
      cache.value[idx] = p.local(i).value(m.x_cache[idx]);
      cache.grad[idx] = p.local(i).gradient(m.x_cache[idx]);
    }
    for (int i = 0; i < N; ++i) {
      if (m.d[static_cast<std::size_t>(i)] > cfg.tau - 1)
        throw ProtocolError("bounded delay violated: worker " + std::to_string(i) +
                            " has d = " + std::to_string(m.d[static_cast<std::size_t>(i)]) +
                            " at iteration " + std::to_string(k));
    }
    rec.delays = m.d;
    rec.x0_move = (m.x0 - x0_prev).squaredNorm();

    try {
      transport.broadcast(rec.arrivals, m.x0, static_cast<std::uint64_t>(m.k));
    } catch (const TransportError& e) {
      throw abort(e.what());
    }

    state = summarize(p, m, cache, cfg.rho);
    rec.lagrangian = state.lagrangian;
    rec.objective = state.objective;
    rec.consensus_err = state.consensus_err;
    rec.consensus_max = state.consensus_max;
    rec.stationarity = state.stationarity;
    rec.x0_opt = state.x0_opt;
    const TransportClock clock = transport.master_clock();
    rec.time = clock.now;
    rec.master_compute = clock.compute;
    rec.master_wait = clock.wait;

    trace.x0.push_back(m.x0);
    if (options.record_iterates) {
      trace.x_iterates.push_back(m.x_cache);
      trace.lambda_iterates.push_back(m.lambda_cache);
    }
    trace.records.push_back(std::move(rec));
  }

  try {
    transport.shutdown();
  } catch (const TransportError& e) {
    throw RunAborted(e.what(), trace);
  }
  trace.clocks = transport.clock_accounts();
  trace.final_time = transport.final_time();
  trace.late_reports = transport.late_reports();
  trace.nonconverged_solves = transport.nonconverged_solves();
  return trace;
}

}  // namespace adadmm
