#include "adadmm/rate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adadmm {

namespace {

void require_error_bound_inputs(double sigma2, std::optional<double> hoffman) {
  if (!hoffman) {
    require(sigma2 > 0.0, "zero strong-convexity modulus requires an error-bound constant c");
    return;
  }
  require(*hoffman > 0.0, "error-bound constant c must be positive");
  require(sigma2 > 0.0, "the error-bound path needs the positive modulus of the inner functions");
}

// sigma2 in the strongly convex case, sigma2 / c with an error bound.
double effective_modulus(double sigma2, std::optional<double> hoffman) {
  return hoffman ? sigma2 / *hoffman : sigma2;
}

void require_history(const Trace& trace) {
  const auto N = static_cast<std::size_t>(trace.info.workers);
  for (const auto& r : trace.records) {
    auto missing = [&](const char* what) {
      return ContractError("record k = " + std::to_string(r.k) + " lacks " + what);
    };
    if (r.last_arrival.size() != N) throw missing("the last-arrival index kbar_i");
    if (r.second_last_arrival.size() != N) throw missing("the previous-arrival index khat_i");
    if (r.move.size() != N) throw missing("per-worker move terms");
    if (r.stale_gap.size() != N) throw missing("per-worker stale x0 gaps");
  }
}

struct StepSums {
  double move_arrived = 0.0;
  double move_deferred = 0.0;
  double gap_arrived = 0.0;
  double gap_deferred = 0.0;
};

StepSums step_sums(const IterationRecord& r) {
  StepSums s;
  for (std::size_t i = 0; i < r.move.size(); ++i) {
    if (r.in_arrivals(static_cast<int>(i))) {
      s.move_arrived += r.move[i];
      s.gap_arrived += r.stale_gap[i];
    } else {
      s.move_deferred += r.move[i];
      s.gap_deferred += r.stale_gap[i];
    }
  }
  return s;
}

CheckReport make_report(const std::string& name, const Trace& trace, const CheckOptions& opts) {
  CheckReport rep;
  rep.check = name;
  if (opts.slack) {
    rep.slack = *opts.slack;
    rep.slack_rule = "caller supplied";
  } else {
    rep.slack = default_slack(trace);
    rep.slack_rule = trace.info.grad_tol > 0.0
                         ? "10 * grad_tol (engineering constant for inexact local solves)"
                         : "1e-9 (exact local solves)";
  }
  return rep;
}

}  // namespace

double RateCertificate::envelope_factor(long m) const {
  return std::exp(-static_cast<double>(m) * std::log1p(1.0 / (delta * gamma)));
}

double delay_footprint(int tau, int workers, double sigma2) {
  const double t = tau;
  return 1.0 + (2.0 + std::ldexp(1.0, tau) * (t - 1.0)) / (1.0 + 8.0 * workers * sigma2);
}

double staleness_penalty(double rho, int tau, int max_arrivals, int workers) {
  if (tau == 1) return 0.0;
  const double S = max_arrivals;
  const double per_arrival = ((1.0 + rho * rho) * S + S / workers) / 2.0;
  return 2.0 * (tau - 1) *
         (per_arrival * (std::ldexp(1.0, tau - 1) - 1.0) + (std::ldexp(1.0, 2 * (tau - 1)) - 1.0));
}

double rho_threshold(double lipschitz, double sigma2, int tau, int workers) {
  const double a = 1.0 + lipschitz * lipschitz;
  const double alpha = delay_footprint(tau, workers, sigma2);
  const double root = (a + std::sqrt(a * a + 8.0 * lipschitz * lipschitz * alpha)) / 2.0;
  return std::max(root, sigma2 + 1.0 / (8.0 * workers));
}

double gamma_threshold(double rho, double sigma2, int tau, int max_arrivals, int workers,
                       std::optional<double> hoffman) {
  const double N = workers;
  const double first = staleness_penalty(rho, tau, max_arrivals, workers) - N * rho / 2.0 + 1.0;
  const double second = hoffman ? 8.0 * N * (rho - sigma2 / *hoffman) + 4.0 * N * sigma2
                                : 8.0 * N * (rho - sigma2);
  return std::max(first, second);
}

double delta_threshold(double rho, double gamma, double sigma2, int workers,
                       std::optional<double> hoffman) {
  const double N = workers;
  const double modulus = effective_modulus(sigma2, hoffman);
  return std::max(1.0, (rho * N + gamma) / (N * modulus) - 1.0);
}

RateCertificate certify(double lipschitz, double sigma2, int workers, int max_arrivals, int tau,
                        std::optional<double> gamma_floor, std::optional<double> hoffman) {
  require(lipschitz > 0.0 && std::isfinite(lipschitz), "certify: L must be positive and finite");
  require(workers >= 1, "certify: need N >= 1");
  require(1 <= max_arrivals && max_arrivals <= workers, "certify: need 1 <= S <= N");
  require(tau >= 1, "certify: need tau >= 1");
  require(sigma2 >= 0.0, "certify: sigma2 must be nonnegative");
  require_error_bound_inputs(sigma2, hoffman);
  if (gamma_floor) require(*gamma_floor >= 0.0, "certify: gamma floor must be nonnegative");

  RateCertificate c;
  c.lipschitz = lipschitz;
  c.sigma2 = sigma2;
  c.workers = workers;
  c.max_arrivals = max_arrivals;
  c.tau = tau;
  c.hoffman = hoffman;

  c.alpha = delay_footprint(tau, workers, sigma2);
  c.rho_min = rho_threshold(lipschitz, sigma2, tau, workers);
  // rho_min must satisfy the quadratic condition it came from.
  const double a = 1.0 + lipschitz * lipschitz;
  const double residual = c.rho_min * c.rho_min - a * c.rho_min - 2.0 * lipschitz * lipschitz * c.alpha;
  if (residual < -1e-12 * c.rho_min * c.rho_min)
    throw std::logic_error("certify: rho_min does not satisfy its defining inequality");
  c.rho = c.rho_min;

  c.beta = staleness_penalty(c.rho, tau, max_arrivals, workers);
  c.gamma_min = gamma_threshold(c.rho, sigma2, tau, max_arrivals, workers, hoffman);
  c.gamma = std::max(c.gamma_min, gamma_floor.value_or(0.0));
  require(c.gamma > 0.0, "certify: certified gamma is not positive; supply a positive gamma floor");
  c.delta = delta_threshold(c.rho, c.gamma, sigma2, workers, hoffman);
  c.eta = 1.0 + 1.0 / (c.delta * c.gamma);
  return c;
}

double augmented_lagrangian(const ConsensusProblem& p, const std::vector<Vector>& x,
                            const Vector& x0, const std::vector<Vector>& lambda, double rho) {
  require(static_cast<int>(x.size()) == p.workers(), "augmented_lagrangian: one x per worker");
  require(static_cast<int>(lambda.size()) == p.workers(),
          "augmented_lagrangian: one lambda per worker");
  require_dim(x0.size(), p.dim(), "augmented_lagrangian x0");
  const double h = p.regularizer().value(x0);
  if (!std::isfinite(h)) return kInfinity;
  double total = h;
  for (int i = 0; i < p.workers(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    require_dim(x[idx].size(), p.dim(), "augmented_lagrangian x_i");
    require_dim(lambda[idx].size(), p.dim(), "augmented_lagrangian lambda_i");
    const Vector r = x[idx] - x0;
    total += p.local(i).value(x[idx]) + lambda[idx].dot(r) + 0.5 * rho * r.squaredNorm();
  }
  return total;
}

KktResiduals kkt_residuals(const ConsensusProblem& p, const std::vector<Vector>& x,
                           const Vector& x0, const std::vector<Vector>& lambda) {
  require(static_cast<int>(x.size()) == p.workers(), "kkt_residuals: one x per worker");
  require(static_cast<int>(lambda.size()) == p.workers(), "kkt_residuals: one lambda per worker");
  KktResiduals out;
  Vector sum_lambda = Vector::Zero(p.dim());
  for (int i = 0; i < p.workers(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.stationarity =
        std::max(out.stationarity, (p.local(i).gradient(x[idx]) + lambda[idx]).norm());
    out.consensus = std::max(out.consensus, (x[idx] - x0).norm());
    sum_lambda += lambda[idx];
  }
  out.x0_opt = subgradient_distance(p.regularizer(), x0, sum_lambda);
  return out;
}

void CheckReport::add(long k, double lhs, double rhs, std::string label) {
  CheckRow row;
  row.k = k;
  row.label = std::move(label);
  row.lhs = lhs;
  row.rhs = rhs;
  row.margin = rhs + slack - lhs;
  row.ok = row.margin >= 0.0;  // NaN fails
  if (!row.ok) ++violations;
  if (!(row.margin >= worst_margin)) worst_margin = row.margin;
  rows.push_back(std::move(row));
}

double default_slack(const Trace& trace) {
  return trace.info.grad_tol > 0.0 ? 10.0 * trace.info.grad_tol : 1e-9;
}

int measured_arrival_bound(const Trace& trace) {
  std::size_t most = 0;
  for (const auto& r : trace.records) most = std::max(most, r.arrivals.size());
  return static_cast<int>(most) + 1;
}

CheckReport check_gap_upper_bound(const Trace& trace, double lipschitz, double sigma2,
                                  std::optional<double> hoffman, const CheckOptions& opts) {
  require(trace.f_star.has_value(), "gap upper bound needs the reference optimum F*");
  require_error_bound_inputs(sigma2, hoffman);
  require_history(trace);
  const double N = trace.info.workers;
  const double rho = trace.info.rho;
  const double gamma = trace.info.gamma;
  const double L2 = lipschitz * lipschitz;
  const double modulus = effective_modulus(sigma2, hoffman);

  CheckReport rep = make_report(gamma > 0.0 ? "gap_upper_bound" : "gap_upper_bound_zero_gamma",
                                trace, opts);
  double scale = 0.0;  // Delta_{k+1} * scale <= rhs
  double move_w = 0.0;
  double gap_w = 0.0;
  double delta = 1.0;
  if (gamma > 0.0) {
    if (!hoffman) require(rho >= sigma2, "gap upper bound requires rho >= sigma2");
    const double need = hoffman ? 8.0 * N * (rho - sigma2 / *hoffman) + 4.0 * N * sigma2
                                : 8.0 * N * (rho - sigma2);
    require(gamma >= need, "gap upper bound requires gamma >= " + std::to_string(need));
    delta = delta_threshold(rho, gamma, sigma2, trace.info.workers, hoffman);
    scale = 1.0 / (gamma * delta);
    move_w = L2 / (4.0 * rho * rho * N);
    gap_w = 1.0 / (2.0 * N);
  } else {
    delta = std::max(rho / modulus - 1.0, 1.0);
    if (hoffman) {
      const double bracket = 2.0 * N * (2.0 * (rho - modulus) * delta + sigma2);
      require(bracket > 0.0, "zero-gamma gap bound: denominator is not positive");
      scale = 1.0 / bracket;
    } else {
      require(rho > sigma2, "zero-gamma gap bound requires rho > sigma2");
      scale = 1.0 / (4.0 * (rho - sigma2) * N * delta);
    }
    move_w = L2 / (2.0 * rho * rho * N);
    gap_w = 1.0 / N;
  }
  rep.notes.push_back("delta = " + std::to_string(delta));
  for (const auto& r : trace.records) {
    const StepSums s = step_sums(r);
    const double lhs = scale * (r.lagrangian - *trace.f_star);
    const double rhs =
        move_w * (s.move_arrived + s.move_deferred) + gap_w * (s.gap_arrived + s.gap_deferred) +
        r.x0_move;
    rep.add(r.k, lhs, rhs);
  }
  return rep;
}

CheckReport check_envelope(const Trace& trace, const RateCertificate& cert,
                           const CheckOptions& opts) {
  require(trace.f_star.has_value(), "envelope check needs the reference optimum F*");
  if (trace.info.gamma == 0.0) {
    CheckReport rep =
        check_gap_upper_bound(trace, cert.lipschitz, cert.sigma2, cert.hoffman, opts);
    rep.check = "envelope_zero_gamma";
    rep.notes.push_back("gamma = 0: rate undefined, per-step upper bound checked instead");
    for (const auto& r : trace.records) {
      const double d = r.lagrangian - *trace.f_star;
      rep.add(r.k, -d, 0.0, "nonnegative");
    }
    return rep;
  }

  CheckReport rep = make_report("envelope", trace, opts);
  const double rho = trace.info.rho;
  const double gamma = trace.info.gamma;
  if (rho < cert.rho_min || gamma < cert.gamma_min)
    rep.notes.push_back("run parameters are below the certified thresholds; violations are "
                        "permitted since the conditions are only sufficient");
  RateCertificate at_run = cert;
  at_run.rho = rho;
  at_run.gamma = gamma;
  at_run.delta = delta_threshold(rho, gamma, cert.sigma2, trace.info.workers, cert.hoffman);
  at_run.eta = 1.0 + 1.0 / (at_run.delta * gamma);
  rep.notes.push_back("eta = 1 + " + std::to_string(1.0 / (at_run.delta * gamma)));

  const double delta0 = trace.delta(0);
  for (const auto& r : trace.records) {
    const double d = r.lagrangian - *trace.f_star;
    rep.add(r.k, -d, 0.0, "nonnegative");
    rep.add(r.k, d, at_run.envelope_factor(r.k + 1) * delta0, "contraction");
  }
  return rep;
}

CheckReport check_descent_lemma(const Trace& trace, double rho, double gamma, double lipschitz,
                                const CheckOptions& opts) {
  if (rho < lipschitz)
    throw ContractError("descent inequality requires rho >= L (rho = " + std::to_string(rho) +
                        ", L = " + std::to_string(lipschitz) + ")");
  require_history(trace);
  CheckReport rep = make_report("descent_lemma", trace, opts);
  const double N = trace.info.workers;
  const double L2 = lipschitz * lipschitz;
  const double eps = 1.0 / rho;
  const double gap_w = (1.0 + rho / eps) / 2.0;
  const double x0_w = (2.0 * gamma + N * rho) / 2.0;
  const double move_w = (L2 + (eps - 1.0) * rho) / 2.0 + L2 / rho;
  rep.notes.push_back("epsilon = 1/rho");
  for (const auto& r : trace.records) {
    const StepSums s = step_sums(r);
    const double rhs = trace.lagrangian(r.k) + gap_w * s.gap_arrived - x0_w * r.x0_move +
                       move_w * s.move_arrived;
    rep.add(r.k, r.lagrangian, rhs);
  }
  return rep;
}

CheckReport check_consensus_bound(const Trace& trace, double lipschitz, double rho,
                                  const CheckOptions& opts) {
  require(rho > 0.0, "consensus bound: rho must be positive");
  require_history(trace);
  CheckReport rep = make_report("consensus_bound", trace, opts);
  const double N = trace.info.workers;
  const double move_w = 2.0 * lipschitz * lipschitz / (rho * rho);
  for (const auto& r : trace.records) {
    const StepSums s = step_sums(r);
    const double rhs = move_w * (s.move_arrived + s.move_deferred) +
                       4.0 * (s.gap_arrived + s.gap_deferred) + 4.0 * N * r.x0_move;
    rep.add(r.k, r.consensus_err, rhs);
  }
  return rep;
}

CheckReport check_weighted_delay_bound(const Trace& trace, double eta, int nu, DelaySubset subset,
                                       const CheckOptions& opts) {
  if (!(eta > 1.0)) throw ContractError("weighted delay bound requires eta > 1");
  require(nu >= 1, "weighted delay bound requires nu >= 1");
  require_history(trace);
  CheckReport rep = make_report(
      subset == DelaySubset::Arrived ? "weighted_delay_arrived" : "weighted_delay_deferred", trace,
      opts);
  const bool arrived = subset == DelaySubset::Arrived;

  std::size_t widest = 1;
  for (const auto& r : trace.records) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < r.stale_gap.size(); ++i)
      if (r.in_arrivals(static_cast<int>(i)) == arrived) ++count;
    widest = std::max(widest, count);
  }
  const double n_bar = static_cast<double>(widest);
  const double geometric = std::expm1((nu - 1) * std::log(eta)) / (eta - 1.0);
  const double coeff = (nu - 1) * n_bar * geometric;
  rep.notes.push_back("N_bar = " + std::to_string(widest) + " (largest subset size)");
  rep.notes.push_back("both sides divided by eta^k");

  double lhs = 0.0;  // sum_{j<=k} eta^{j-k} gap_j
  double rhs = 0.0;  // sum_{j<k} eta^{j+1-k} move_j
  long hypothesis_breaks = 0;
  for (std::size_t j = 0; j < trace.records.size(); ++j) {
    const auto& r = trace.records[j];
    if (j > 0) rhs = rhs / eta + trace.records[j - 1].x0_move;
    double gap = 0.0;
    for (std::size_t i = 0; i < r.stale_gap.size(); ++i) {
      if (r.in_arrivals(static_cast<int>(i)) != arrived) continue;
      gap += r.stale_gap[i];
      const long ji = arrived ? r.last_arrival[i] : r.second_last_arrival[i];
      if (r.k - nu > ji) ++hypothesis_breaks;
    }
    lhs = lhs / eta + gap;
    rep.add(r.k, lhs, coeff * rhs);
  }
  if (hypothesis_breaks > 0)
    rep.notes.push_back(std::to_string(hypothesis_breaks) +
                        " staleness indices fall outside the window j - nu <= j_i");
  return rep;
}

nlohmann::json to_json(const RateCertificate& c) {
  nlohmann::json j;
  j["path"] = c.error_bound_path() ? "error_bound" : "strongly_convex";
  j["L"] = c.lipschitz;
  j["sigma2"] = c.sigma2;
  j["N"] = c.workers;
  j["S"] = c.max_arrivals;
  j["tau"] = c.tau;
  j["c"] = c.hoffman ? nlohmann::json(*c.hoffman) : nlohmann::json(nullptr);
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["rho_min"] = c.rho_min;
  j["gamma_min"] = c.gamma_min;
  j["rho"] = c.rho;
  j["gamma"] = c.gamma;
  j["delta"] = c.delta;
  j["eta"] = c.eta;
  j["eta_minus_one"] = 1.0 / (c.delta * c.gamma);
  return j;
}

nlohmann::json to_json(const CheckReport& rep) {
  nlohmann::json j;
  j["check"] = rep.check;
  j["passed"] = rep.passed();
  j["violations"] = rep.violations;
  j["slack"] = rep.slack;
  j["slack_rule"] = rep.slack_rule;
  j["worst_margin"] = rep.rows.empty() ? nlohmann::json(nullptr) : nlohmann::json(rep.worst_margin);
  j["notes"] = rep.notes;
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json row{{"k", r.k}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"margin", r.margin},
                       {"ok", r.ok}};
    if (!r.label.empty()) row["label"] = r.label;
    rows.push_back(std::move(row));
  }
  return j;
}

}  // namespace adadmm
