#include "adadmm/experiment.hpp"

#include "adadmm/tcp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace adadmm {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& what, long line) {
  throw ContractError(what + " (line " + std::to_string(line) + ")");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

double parse_label(std::string_view token, long line) {
  double v = 0.0;
  if (!parse_double(token, v)) parse_fail("malformed label '" + std::string(token) + "'", line);
  if (v == 1.0) return 1.0;
  if (v == -1.0 || v == 0.0) return -1.0;
  parse_fail("label must be +1, -1 or 0, got '" + std::string(token) + "'", line);
}

Dataset assemble(const std::vector<std::vector<std::pair<Eigen::Index, double>>>& rows,
                 const std::vector<double>& labels, Eigen::Index dim) {
  Dataset d;
  d.features = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), dim);
  d.labels.resize(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (const auto& [idx, val] : rows[r]) d.features(static_cast<Eigen::Index>(r), idx) = val;
    d.labels(static_cast<Eigen::Index>(r)) = labels[r];
  }
  return d;
}

json distribution_to_json(const Distribution& d) {
  switch (d.kind) {
    case Distribution::Kind::Fixed:
      return {{"kind", "fixed"}, {"value", d.a}};
    case Distribution::Kind::Uniform:
      return {{"kind", "uniform"}, {"lo", d.a}, {"hi", d.b}};
    case Distribution::Kind::LogNormal:
      return {{"kind", "lognormal"}, {"mu", d.a}, {"sigma", d.b}};
  }
  return {};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    require(known, "unknown key '" + key + "' in " + where);
  }
}

Distribution distribution_from_json(const json& j, const std::string& where) {
  require(j.is_object() && j.contains("kind"), where + ": distribution needs a 'kind'");
  const std::string kind = j.at("kind");
  if (kind == "fixed") {
    check_keys(j, {"kind", "value"}, where);
    return Distribution::fixed(j.at("value"));
  }
  if (kind == "uniform") {
    check_keys(j, {"kind", "lo", "hi"}, where);
    return Distribution::uniform(j.at("lo"), j.at("hi"));
  }
  if (kind == "lognormal") {
    check_keys(j, {"kind", "mu", "sigma"}, where);
    return Distribution::lognormal(j.at("mu"), j.at("sigma"));
  }
  throw ContractError(where + ": unknown distribution kind '" + kind + "'");
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

std::string source_name(ProblemSource::Kind k) {
  switch (k) {
    case ProblemSource::Kind::Quadratic:
      return "quadratic";
    case ProblemSource::Kind::Logistic:
      return "logistic";
    case ProblemSource::Kind::Dataset:
      return "dataset";
  }
  return "?";
}

std::string backend_name(BackendSpec::Kind k) {
  switch (k) {
    case BackendSpec::Kind::Sim:
      return "sim";
    case BackendSpec::Kind::Schedule:
      return "schedule";
    case BackendSpec::Kind::Tcp:
      return "tcp";
  }
  return "?";
}

}  // namespace

Dataset parse_libsvm(std::istream& in, std::optional<Eigen::Index> dim) {
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  std::vector<double> labels;
  Eigen::Index widest = 0;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    std::istringstream tokens{std::string(text)};
    std::string token;
    tokens >> token;
    labels.push_back(parse_label(token, line_no));
    std::vector<std::pair<Eigen::Index, double>> row;
    long prev = 0;
    while (tokens >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos) parse_fail("expected index:value, got '" + token + "'", line_no);
      long index = 0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + colon, index);
      if (ec != std::errc() || ptr != token.data() + colon)
        parse_fail("malformed feature index in '" + token + "'", line_no);
      if (index < 1) parse_fail("feature indices are 1-based", line_no);
      if (index <= prev) parse_fail("feature indices must be strictly ascending", line_no);
      double value = 0.0;
      if (!parse_double(std::string_view(token).substr(colon + 1), value))
        parse_fail("malformed feature value in '" + token + "'", line_no);
      if (dim && index > *dim)
        parse_fail("feature index " + std::to_string(index) + " exceeds dimension " +
                       std::to_string(*dim),
                   line_no);
      prev = index;
      row.emplace_back(index - 1, value);
    }
    widest = std::max<Eigen::Index>(widest, prev);
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "libsvm input has no samples");
  return assemble(rows, labels, dim.value_or(widest));
}

Dataset parse_libsvm_file(const std::string& path, std::optional<Eigen::Index> dim) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open '" + path + "'");
  return parse_libsvm(in, dim);
}

void write_libsvm(std::ostream& out, const Dataset& data) {
  require_dim(data.labels.size(), data.features.rows(), "write_libsvm labels");
  char buf[64];
  for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
    out << (data.labels(r) > 0 ? "+1" : "-1");
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      const double v = data.features(r, c);
      if (v == 0.0) continue;
      std::snprintf(buf, sizeof buf, " %ld:%.17g", static_cast<long>(c + 1), v);
      out << buf;
    }
    out << '\n';
  }
}

Dataset parse_csv(std::istream& in) {
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  std::vector<double> labels;
  Eigen::Index width = -1;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(trim(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    labels.push_back(parse_label(cells[0], line_no));
    const auto n = static_cast<Eigen::Index>(cells.size()) - 1;
    if (width < 0) width = n;
    if (n != width)
      parse_fail("expected " + std::to_string(width) + " features, got " + std::to_string(n),
                 line_no);
    std::vector<std::pair<Eigen::Index, double>> row;
    for (Eigen::Index c = 0; c < n; ++c) {
      double v = 0.0;
      if (!parse_double(cells[static_cast<std::size_t>(c + 1)], v))
        parse_fail("malformed number '" + std::string(cells[static_cast<std::size_t>(c + 1)]) + "'",
                   line_no);
      row.emplace_back(c, v);
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "csv input has no samples");
  return assemble(rows, labels, width);
}

Dataset load_dataset(const std::string& path, const std::string& format) {
  if (format == "libsvm") return parse_libsvm_file(path);
  if (format == "csv") {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open '" + path + "'");
    return parse_csv(in);
  }
  throw ContractError("unknown dataset format '" + format + "' (expected libsvm or csv)");
}

std::vector<DatasetShard> partition_uniform(const Dataset& data, int workers, std::uint64_t seed) {
  const Eigen::Index m = data.features.rows();
  require(workers >= 1, "partition: need at least one worker");
  require(workers <= m, "partition: " + std::to_string(workers) + " workers but only " +
                            std::to_string(m) + " samples");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<DatasetShard> shards;
  const Eigen::Index base = m / workers;
  const Eigen::Index extra = m % workers;
  Eigen::Index next = 0;
  for (int w = 0; w < workers; ++w) {
    const Eigen::Index size = base + (w < extra ? 1 : 0);
    DatasetShard s;
    s.features.resize(size, data.features.cols());
    s.labels.resize(size);
    for (Eigen::Index r = 0; r < size; ++r) {
      const Eigen::Index src = order[static_cast<std::size_t>(next + r)];
      s.features.row(r) = data.features.row(src);
      s.labels(r) = data.labels(src);
    }
    next += size;
    shards.push_back(std::move(s));
  }
  return shards;
}

Dataset synthetic_logistic(const SyntheticLogisticSpec& spec, std::uint64_t seed) {
  require(spec.samples >= 1 && spec.dim >= 1, "synthetic logistic: need samples and dim >= 1");
  require(spec.feature_scale > 0.0, "synthetic logistic: feature scale must be positive");
  require(0.0 <= spec.label_noise && spec.label_noise < 0.5,
          "synthetic logistic: label noise must lie in [0, 0.5)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution flip(spec.label_noise);

  Vector w(spec.dim);
  for (Eigen::Index j = 0; j < spec.dim; ++j) w(j) = spec.weight_scale * gauss(rng);
  Dataset d;
  d.features.resize(spec.samples, spec.dim);
  d.labels.resize(spec.samples);
  for (Eigen::Index r = 0; r < spec.samples; ++r) {
    for (Eigen::Index j = 0; j < spec.dim; ++j) d.features(r, j) = spec.feature_scale * gauss(rng);
    double y = d.features.row(r).dot(w) >= 0.0 ? 1.0 : -1.0;
    if (flip(rng)) y = -y;
    d.labels(r) = y;
  }
  return d;
}

json to_json(const ExperimentConfig& c) {
  json problem;
  problem["kind"] = source_name(c.problem.kind);
  switch (c.problem.kind) {
    case ProblemSource::Kind::Quadratic:
      problem["dim"] = c.problem.quadratic.dim;
      problem["eig_lo"] = c.problem.quadratic.eig_lo;
      problem["eig_hi"] = c.problem.quadratic.eig_hi;
      problem["q_scale"] = c.problem.quadratic.q_scale;
      break;
    case ProblemSource::Kind::Logistic:
      problem["samples"] = c.problem.logistic.samples;
      problem["dim"] = c.problem.logistic.dim;
      problem["feature_scale"] = c.problem.logistic.feature_scale;
      problem["label_noise"] = c.problem.logistic.label_noise;
      problem["weight_scale"] = c.problem.logistic.weight_scale;
      break;
    case ProblemSource::Kind::Dataset:
      problem["path"] = c.problem.path;
      problem["format"] = c.problem.format;
      break;
  }

  json backend;
  backend["kind"] = backend_name(c.backend.kind);
  json compute = json::array();
  for (const auto& d : c.backend.sim.compute) compute.push_back(distribution_to_json(d));
  backend["sim"] = {{"seed", c.backend.sim.seed},
                    {"compute", compute},
                    {"latency_to_worker", distribution_to_json(c.backend.sim.latency_to_worker)},
                    {"latency_to_master", distribution_to_json(c.backend.sim.latency_to_master)},
                    {"master_compute", distribution_to_json(c.backend.sim.master_compute)}};
  backend["schedule"] = c.backend.schedule;
  backend["bind"] = c.backend.bind;
  backend["tcp_workers"] = c.backend.tcp_workers;

  const auto& pc = c.protocol;
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"problem", problem},
      {"regularizer", {{"kind", c.regularizer.name()}, {"param", c.regularizer.param}}},
      {"protocol",
       {{"rho", pc.rho},
        {"gamma", pc.gamma},
        {"tau", pc.tau},
        {"min_arrivals", pc.min_arrivals},
        {"max_iter", pc.stop.max_iter},
        {"target_objective", optional_json(pc.stop.target_objective)},
        {"consensus_tol", optional_json(pc.stop.consensus_tol)},
        {"stationarity_tol", optional_json(pc.stop.stationarity_tol)},
        {"dual_init", to_string(pc.dual_init)}}},
      {"fista",
       {{"stepsize", optional_json(c.fista.stepsize)},
        {"grad_tol", c.fista.grad_tol},
        {"max_inner", c.fista.max_inner},
        {"restart", c.fista.restart}}},
      {"backend", backend},
      {"rate",
       {{"certify", c.rate.certify},
        {"use_certified", c.rate.use_certified},
        {"max_arrivals", optional_json(c.rate.max_arrivals)},
        {"hoffman", optional_json(c.rate.hoffman)},
        {"gamma_floor", optional_json(c.rate.gamma_floor)},
        {"checks", c.rate.checks}}},
      {"reference", {{"tol", c.reference_tol}, {"max_iter", c.reference_max_iter}}},
      {"outputs",
       {{"trace", c.outputs.trace},
        {"certificate", c.outputs.certificate},
        {"reports", c.outputs.reports},
        {"log", c.outputs.log}}},
  };
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j, {"seed", "workers", "problem", "regularizer", "protocol", "fista", "backend", "rate",
                 "reference", "outputs"},
             "config");
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);

    if (j.contains("problem")) {
      const json& p = j.at("problem");
      check_keys(p, {"kind", "dim", "eig_lo", "eig_hi", "q_scale", "samples", "feature_scale",
                     "label_noise", "weight_scale", "path", "format"},
                 "problem");
      const std::string kind = p.value("kind", std::string("quadratic"));
      if (kind == "quadratic") {
        c.problem.kind = ProblemSource::Kind::Quadratic;
        auto& q = c.problem.quadratic;
        q.dim = p.value("dim", q.dim);
        q.eig_lo = p.value("eig_lo", q.eig_lo);
        q.eig_hi = p.value("eig_hi", q.eig_hi);
        q.q_scale = p.value("q_scale", q.q_scale);
      } else if (kind == "logistic") {
        c.problem.kind = ProblemSource::Kind::Logistic;
        auto& l = c.problem.logistic;
        l.samples = p.value("samples", l.samples);
        l.dim = p.value("dim", l.dim);
        l.feature_scale = p.value("feature_scale", l.feature_scale);
        l.label_noise = p.value("label_noise", l.label_noise);
        l.weight_scale = p.value("weight_scale", l.weight_scale);
      } else if (kind == "dataset") {
        c.problem.kind = ProblemSource::Kind::Dataset;
        c.problem.path = p.at("path");
        c.problem.format = p.value("format", c.problem.format);
      } else {
        throw ContractError("unknown problem kind '" + kind + "'");
      }
    }

    if (j.contains("regularizer")) {
      const json& r = j.at("regularizer");
      check_keys(r, {"kind", "param"}, "regularizer");
      const std::string kind = r.value("kind", std::string("zero"));
      const double param = r.value("param", 0.0);
      if (kind == "zero")
        c.regularizer = Regularizer::zero();
      else if (kind == "box")
        c.regularizer = Regularizer::box(param);
      else if (kind == "l1")
        c.regularizer = Regularizer::l1(param);
      else
        throw ContractError("unknown regularizer kind '" + kind + "'");
    }

    if (j.contains("protocol")) {
      const json& p = j.at("protocol");
      check_keys(p, {"rho", "gamma", "tau", "min_arrivals", "max_iter", "target_objective",
                     "consensus_tol", "stationarity_tol", "dual_init"},
                 "protocol");
      auto& pc = c.protocol;
      pc.rho = p.value("rho", pc.rho);
      pc.gamma = p.value("gamma", pc.gamma);
      pc.tau = p.value("tau", pc.tau);
      pc.min_arrivals = p.value("min_arrivals", pc.min_arrivals);
      pc.stop.max_iter = p.value("max_iter", pc.stop.max_iter);
      pc.stop.target_objective = optional_from<double>(p, "target_objective");
      pc.stop.consensus_tol = optional_from<double>(p, "consensus_tol");
      pc.stop.stationarity_tol = optional_from<double>(p, "stationarity_tol");
      pc.dual_init = dual_init_from_string(p.value("dual_init", std::string("gradient")));
    }

    if (j.contains("fista")) {
      const json& f = j.at("fista");
      check_keys(f, {"stepsize", "grad_tol", "max_inner", "restart"}, "fista");
      c.fista.stepsize = optional_from<double>(f, "stepsize");
      c.fista.grad_tol = f.value("grad_tol", c.fista.grad_tol);
      c.fista.max_inner = f.value("max_inner", c.fista.max_inner);
      c.fista.restart = f.value("restart", c.fista.restart);
    }

    if (j.contains("backend")) {
      const json& b = j.at("backend");
      check_keys(b, {"kind", "sim", "schedule", "bind", "tcp_workers"}, "backend");
      const std::string kind = b.value("kind", std::string("sim"));
      if (kind == "sim")
        c.backend.kind = BackendSpec::Kind::Sim;
      else if (kind == "schedule")
        c.backend.kind = BackendSpec::Kind::Schedule;
      else if (kind == "tcp")
        c.backend.kind = BackendSpec::Kind::Tcp;
      else
        throw ContractError("unknown backend kind '" + kind + "'");
      c.backend.schedule = b.value("schedule", c.backend.schedule);
      c.backend.bind = b.value("bind", c.backend.bind);
      c.backend.tcp_workers = b.value("tcp_workers", c.backend.tcp_workers);
      if (b.contains("sim")) {
        const json& s = b.at("sim");
        check_keys(s, {"seed", "compute", "latency_to_worker", "latency_to_master",
                       "master_compute"},
                   "backend.sim");
        auto& sim = c.backend.sim;
        sim.seed = s.value("seed", sim.seed);
        if (s.contains("compute")) {
          sim.compute.clear();
          const json& comp = s.at("compute");
          if (comp.is_array()) {
            for (const auto& d : comp) sim.compute.push_back(distribution_from_json(d, "compute"));
          } else {
            sim.compute.push_back(distribution_from_json(comp, "compute"));
          }
        }
        if (s.contains("latency_to_worker"))
          sim.latency_to_worker = distribution_from_json(s.at("latency_to_worker"), "latency");
        if (s.contains("latency_to_master"))
          sim.latency_to_master = distribution_from_json(s.at("latency_to_master"), "latency");
        if (s.contains("master_compute"))
          sim.master_compute = distribution_from_json(s.at("master_compute"), "master_compute");
      }
    }

    if (j.contains("rate")) {
      const json& r = j.at("rate");
      check_keys(r, {"certify", "use_certified", "max_arrivals", "hoffman", "gamma_floor", "checks"},
                 "rate");
      c.rate.certify = r.value("certify", c.rate.certify);
      c.rate.use_certified = r.value("use_certified", c.rate.use_certified);
      c.rate.max_arrivals = optional_from<int>(r, "max_arrivals");
      c.rate.hoffman = optional_from<double>(r, "hoffman");
      c.rate.gamma_floor = optional_from<double>(r, "gamma_floor");
      c.rate.checks = r.value("checks", c.rate.checks);
      for (const auto& name : c.rate.checks) {
        static const std::set<std::string> known{"envelope", "descent", "consensus", "delay",
                                                 "gap"};
        require(known.count(name) > 0, "unknown check '" + name + "'");
      }
    }

    if (j.contains("reference")) {
      const json& r = j.at("reference");
      check_keys(r, {"tol", "max_iter"}, "reference");
      c.reference_tol = r.value("tol", c.reference_tol);
      c.reference_max_iter = r.value("max_iter", c.reference_max_iter);
    }

    if (j.contains("outputs")) {
      const json& o = j.at("outputs");
      check_keys(o, {"trace", "certificate", "reports", "log"}, "outputs");
      c.outputs.trace = o.value("trace", c.outputs.trace);
      c.outputs.certificate = o.value("certificate", c.outputs.certificate);
      c.outputs.reports = o.value("reports", c.outputs.reports);
      c.outputs.log = o.value("log", c.outputs.log);
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  require(c.workers >= 1, "config: workers must be at least 1");
  c.protocol.validate(c.workers);
  c.backend.sim.validate(c.workers);
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ContractError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

ConsensusProblem build_problem(const ExperimentConfig& cfg) {
  switch (cfg.problem.kind) {
    case ProblemSource::Kind::Quadratic: {
      const auto& q = cfg.problem.quadratic;
      return random_quadratic_problem(q.dim, cfg.workers, q.eig_lo, q.eig_hi, cfg.regularizer,
                                      cfg.seed, q.q_scale);
    }
    case ProblemSource::Kind::Logistic:
    case ProblemSource::Kind::Dataset: {
      const Dataset data = cfg.problem.kind == ProblemSource::Kind::Logistic
                               ? synthetic_logistic(cfg.problem.logistic, cfg.seed)
                               : load_dataset(cfg.problem.path, cfg.problem.format);
      std::vector<LocalObjective> locals;
      for (auto& shard : partition_uniform(data, cfg.workers, cfg.seed + 1))
        locals.push_back(LocalObjective::logistic(std::move(shard.features), std::move(shard.labels)));
      return ConsensusProblem(std::move(locals), cfg.regularizer);
    }
  }
  throw ContractError("unknown problem source");
}

namespace {

Trace run_backend(const ExperimentConfig& cfg, const ConsensusProblem& p, const ProtocolConfig& pc,
                  const RunOptions& opts, const ExperimentHooks& hooks, std::ostream& log) {
  switch (cfg.backend.kind) {
    case BackendSpec::Kind::Sim:
      return sim_run(p, pc, cfg.fista, cfg.backend.sim, opts);
    case BackendSpec::Kind::Schedule: {
      ScheduledTransport::Schedule schedule;
      if (cfg.backend.schedule == "round_robin") {
        schedule = round_robin_schedule(p.workers(), pc.tau);
      } else if (cfg.backend.schedule == "synchronous") {
        std::vector<int> all(static_cast<std::size_t>(p.workers()));
        std::iota(all.begin(), all.end(), 0);
        schedule = [all](long) { return all; };
      } else {
        throw ContractError("unknown schedule '" + cfg.backend.schedule + "'");
      }
      ScheduledTransport transport(p, pc.rho, cfg.fista, pc.dual_init, std::move(schedule));
      return run_to_completion(p, pc, transport, opts);
    }
    case BackendSpec::Kind::Tcp: {
      const Endpoint bind = Endpoint::parse(cfg.backend.bind);
      TcpMasterTransport master(p.workers(), bind);
      Endpoint target = bind;
      target.port = master.port();
      if (target.host.empty() || target.host == "0.0.0.0") target.host = "127.0.0.1";
      log << "tcp master listening on " << target.to_string() << "\n";
      std::vector<std::thread> threads;
      std::vector<std::string> worker_errors(static_cast<std::size_t>(p.workers()));
      if (cfg.backend.tcp_workers == "threads") {
        for (int i = 0; i < p.workers(); ++i) {
          threads.emplace_back([&, i] {
            try {
              tcp_connect_worker(target, i, p.local(i), pc.rho, cfg.fista, pc.dual_init);
            } catch (const std::exception& e) {
              worker_errors[static_cast<std::size_t>(i)] = e.what();
            }
          });
        }
      } else if (cfg.backend.tcp_workers == "external") {
        if (hooks.on_listening) hooks.on_listening(target.to_string());
      } else {
        throw ContractError("unknown tcp_workers mode '" + cfg.backend.tcp_workers + "'");
      }
      auto join = [&] {
        for (auto& t : threads)
          if (t.joinable()) t.join();
        for (std::size_t i = 0; i < worker_errors.size(); ++i)
          if (!worker_errors[i].empty()) log << "worker " << i << ": " << worker_errors[i] << "\n";
      };
      try {
        Trace t = run_to_completion(p, pc, master, opts);
        join();
        return t;
      } catch (...) {
        master.shutdown();
        join();
        throw;
      }
    }
  }
  throw ContractError("unknown backend");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write '" + path + "'");
  out << text;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentHooks& hooks) {
  ExperimentResult result;
  std::ostringstream log;
  std::string stage = "build problem";
  json reports_json = json::array();

  auto flush_log = [&] {
    try {
      write_text(cfg.outputs.log, log.str());
    } catch (const std::exception&) {
    }
  };

  try {
    log << "config " << to_json(cfg).dump() << "\n";
    const ConsensusProblem p = build_problem(cfg);
    log << "problem: N = " << p.workers() << ", n = " << p.dim() << ", L = " << p.lipschitz()
        << ", sigma2 = " << p.strong_convexity() << "\n";

    stage = "reference solve";
    result.reference = solve_reference(p, cfg.reference_tol, cfg.reference_max_iter);
    log << "reference: F* = " << result.reference->f_star << " after "
        << result.reference->iterations << " iterations, residual " << result.reference->residual
        << "\n";

    ProtocolConfig pc = cfg.protocol;
    const double sigma2 = p.strong_convexity();
    if (cfg.rate.certify || cfg.rate.use_certified) {
      stage = "certify";
      const int S = cfg.rate.max_arrivals.value_or(p.workers());
      result.certificate = certify(p.lipschitz(), sigma2, p.workers(), S, pc.tau,
                                   cfg.rate.gamma_floor, cfg.rate.hoffman);
      log << "certificate " << to_json(*result.certificate).dump() << "\n";
      if (cfg.rate.use_certified) {
        pc.rho = result.certificate->rho;
        pc.gamma = result.certificate->gamma;
        log << "using certified rho = " << pc.rho << ", gamma = " << pc.gamma << "\n";
      }
      write_text(cfg.outputs.certificate, to_json(*result.certificate).dump(2) + "\n");
    }

    stage = "run";
    RunOptions opts;
    opts.f_star = result.reference->f_star;
    opts.grad_tol = cfg.fista.grad_tol;
    try {
      result.trace = run_backend(cfg, p, pc, opts, hooks, log);
    } catch (const RunAborted& e) {
      result.trace = e.partial_trace();
      if (!cfg.outputs.trace.empty()) {
        std::ofstream out(cfg.outputs.trace);
        write_trace_csv(out, result.trace);
      }
      throw;
    }
    const Trace& t = result.trace;
    log << "run: " << t.iterations() << " iterations, stop = " << t.stop_reason
        << ", final objective " << t.objective(t.iterations()) << ", late reports "
        << t.late_reports << ", nonconverged local solves " << t.nonconverged_solves
        << ", elapsed " << t.final_time << " " << t.info.time_unit << "\n";
    if (!cfg.outputs.trace.empty()) {
      std::ofstream out(cfg.outputs.trace);
      require(static_cast<bool>(out), "cannot write '" + cfg.outputs.trace + "'");
      write_trace_csv(out, t);
    }

    const auto& stop = pc.stop;
    const bool has_goal = stop.target_objective || stop.consensus_tol || stop.stationarity_tol;
    result.converged = has_goal ? t.stop_reason != "max_iter" : true;

    stage = "checks";
    for (const auto& name : cfg.rate.checks) {
      CheckReport rep;
      if (name == "envelope") {
        if (!result.certificate) {
          const int S = std::min(measured_arrival_bound(t), p.workers());
          result.certificate =
              certify(p.lipschitz(), sigma2, p.workers(), S, pc.tau, {}, cfg.rate.hoffman);
          log << "certificate from measured S = " << S << "\n";
          write_text(cfg.outputs.certificate, to_json(*result.certificate).dump(2) + "\n");
        }
        rep = check_envelope(t, *result.certificate);
      } else if (name == "descent") {
        rep = check_descent_lemma(t, pc.rho, pc.gamma, p.lipschitz());
      } else if (name == "consensus") {
        rep = check_consensus_bound(t, p.lipschitz(), pc.rho);
      } else if (name == "delay") {
        const double eta = result.certificate ? result.certificate->eta : 1.01;
        for (auto [nu, subset] : {std::pair{pc.tau, DelaySubset::Arrived},
                                  std::pair{2 * pc.tau - 1, DelaySubset::Deferred}}) {
          CheckReport r = check_weighted_delay_bound(t, eta, nu, subset);
          log << "check " << r.check << ": " << (r.passed() ? "pass" : "FAIL") << "\n";
          result.checks_passed = result.checks_passed && r.passed();
          reports_json.push_back(to_json(r));
          result.reports.push_back(std::move(r));
        }
        continue;
      } else if (name == "gap") {
        rep = check_gap_upper_bound(t, p.lipschitz(), sigma2, cfg.rate.hoffman);
      } else {
        throw ContractError("unknown check '" + name + "'");
      }
      log << "check " << rep.check << ": " << (rep.passed() ? "pass" : "FAIL") << " ("
          << rep.violations << " violations, worst margin " << rep.worst_margin << ")\n";
      result.checks_passed = result.checks_passed && rep.passed();
      reports_json.push_back(to_json(rep));
      result.reports.push_back(std::move(rep));
    }
    if (!cfg.rate.checks.empty()) write_text(cfg.outputs.reports, reports_json.dump(2) + "\n");

    result.exit_code = result.converged && result.checks_passed ? 0 : 1;
    log << "exit " << result.exit_code << (result.converged ? "" : " (not converged)") << "\n";
  } catch (const std::exception& e) {
    result.failure = stage + ": " + e.what();
    result.exit_code = 2;
    log << "FAILED during " << result.failure << "\n";
    if (!reports_json.empty()) {
      try {
        write_text(cfg.outputs.reports, reports_json.dump(2) + "\n");
      } catch (const std::exception&) {
      }
    }
  }
  flush_log();
  return result;
}

Trace sync_reference(const ConsensusProblem& p, double rho, long iterations, DualInit init,
                     const FistaConfig& fista) {
  require(rho > 0.0, "sync_reference: rho must be positive");
  require(iterations >= 0, "sync_reference: iterations must be nonnegative");
  const int N = p.workers();
  const Eigen::Index n = p.dim();
  const Regularizer& h = p.regularizer();

  Vector x0 = Vector::Zero(n);
  std::vector<Vector> x(static_cast<std::size_t>(N), Vector::Zero(n));
  std::vector<Vector> lambda;
  for (int i = 0; i < N; ++i)
    lambda.push_back(init == DualInit::Zero ? Vector::Zero(n) : Vector(-p.local(i).gradient(x[0])));

  // Exact local solves for quadratics: (Q + rho I) x = rho x0 - lambda - q.
  std::vector<std::optional<Eigen::LLT<Matrix>>> factor(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    if (const auto* q = std::get_if<Quadratic>(&p.local(i).family()))
      factor[static_cast<std::size_t>(i)].emplace(q->Q + rho * Matrix::Identity(n, n));
  }

  auto lagrangian = [&] {
    double total = h.value(x0);
    for (int i = 0; i < N; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      const Vector r = x[idx] - x0;
      total += p.local(i).value(x[idx]) + lambda[idx].dot(r) + 0.5 * rho * r.squaredNorm();
    }
    return total;
  };
  auto consensus = [&] {
    double total = 0.0;
    for (const auto& xi : x) total += (xi - x0).squaredNorm();
    return total;
  };

  Trace trace;
  trace.info.rho = rho;
  trace.info.tau = 1;
  trace.info.min_arrivals = N;
  trace.info.workers = N;
  trace.info.dim = n;
  trace.info.lipschitz = p.lipschitz();
  trace.info.strong_convexity = p.strong_convexity();
  trace.info.backend = "sync_reference";
  trace.info.time_unit = "iterations";
  trace.info.dual_init = to_string(init);
  trace.lagrangian0 = lagrangian();
  trace.objective0 = objective_value(p, x0);
  trace.consensus0 = consensus();
  trace.x0.push_back(x0);
  trace.x_iterates.push_back(x);
  trace.lambda_iterates.push_back(lambda);

  for (long k = 0; k < iterations; ++k) {
    IterationRecord rec;
    rec.k = k;
    rec.move.resize(static_cast<std::size_t>(N));
    rec.stale_gap.assign(static_cast<std::size_t>(N), 0.0);
    rec.last_arrival.assign(static_cast<std::size_t>(N), k - 1);
    rec.second_last_arrival.assign(static_cast<std::size_t>(N), k - 2 < -1 ? -1 : k - 2);
    rec.delays.assign(static_cast<std::size_t>(N), 0);
    for (int i = 0; i < N; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      Vector next;
      if (auto& llt = factor[idx]) {
        const auto& q = std::get<Quadratic>(p.local(i).family());
        next = llt->solve(rho * x0 - lambda[idx] - q.q);
      } else {
        next = worker_subproblem(p.local(i), lambda[idx], x0, rho, fista, x[idx]).x_new;
      }
      lambda[idx] += rho * (next - x0);
      rec.move[idx] = (next - x[idx]).squaredNorm();
      x[idx] = std::move(next);
      rec.arrivals.push_back(i);
    }
    Vector avg = Vector::Zero(n);
    for (int i = 0; i < N; ++i) avg += lambda[static_cast<std::size_t>(i)] + rho * x[static_cast<std::size_t>(i)];
    avg /= N * rho;
    const Vector x0_next = prox(h, avg, 1.0 / (N * rho));
    rec.x0_move = (x0_next - x0).squaredNorm();
    x0 = x0_next;

    rec.lagrangian = lagrangian();
    rec.objective = objective_value(p, x0);
    rec.consensus_err = consensus();
    const KktResiduals kkt = kkt_residuals(p, x, x0, lambda);
    rec.stationarity = kkt.stationarity;
    rec.consensus_max = kkt.consensus;
    rec.x0_opt = kkt.x0_opt;
    rec.time = static_cast<double>(k + 1);
    trace.x0.push_back(x0);
    trace.x_iterates.push_back(x);
    trace.lambda_iterates.push_back(lambda);
    trace.records.push_back(std::move(rec));
  }
  trace.stop_reason = "max_iter";
  trace.final_time = static_cast<double>(iterations);
  trace.clocks.assign(static_cast<std::size_t>(N) + 1, ClockAccount{0.0, trace.final_time});
  return trace;
}

std::optional<long> iterations_to_target(const Trace& trace, double target) {
  for (long k = 0; k <= trace.iterations(); ++k)
    if (trace.objective(k) <= target) return k;
  return std::nullopt;
}

double master_wait_at(const Trace& trace, long k) {
  return k == 0 ? 0.0 : trace.records.at(static_cast<std::size_t>(k - 1)).master_wait;
}

}  // namespace adadmm
