// Command-line front end: run, check, certify, sync-oracle, gen-data, worker.

#include "adadmm/experiment.hpp"
#include "adadmm/tcp.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <spawn.h>
#include <sys/wait.h>

extern char** environ;

namespace {

namespace fs = std::filesystem;
using adadmm::ExperimentConfig;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> rho;
  std::optional<double> gamma;
  std::optional<int> tau;
  std::optional<int> min_arrivals;
  std::optional<long> max_iter;
  std::optional<std::string> backend;
  std::optional<std::string> bind;
  std::string out_dir;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Problem seed");
  cmd->add_option("--rho", o.rho, "Penalty parameter");
  cmd->add_option("--gamma", o.gamma, "Master proximal weight");
  cmd->add_option("--tau", o.tau, "Maximum tolerable delay");
  cmd->add_option("--min-arrivals", o.min_arrivals, "Minimum arrivals per master iteration");
  cmd->add_option("--max-iter", o.max_iter, "Iteration cap");
  cmd->add_option("--backend", o.backend, "sim, schedule or tcp")
      ->check(CLI::IsMember({"sim", "schedule", "tcp"}));
  cmd->add_option("--bind", o.bind, "TCP bind address host:port");
  cmd->add_option("--out-dir", o.out_dir, "Directory for artifacts");
}

ExperimentConfig apply(ExperimentConfig cfg, const Overrides& o) {
  nlohmann::json j = adadmm::to_json(cfg);
  if (o.seed) j["seed"] = *o.seed;
  if (o.rho) j["protocol"]["rho"] = *o.rho;
  if (o.gamma) j["protocol"]["gamma"] = *o.gamma;
  if (o.tau) j["protocol"]["tau"] = *o.tau;
  if (o.min_arrivals) j["protocol"]["min_arrivals"] = *o.min_arrivals;
  if (o.max_iter) j["protocol"]["max_iter"] = *o.max_iter;
  if (o.backend) j["backend"]["kind"] = *o.backend;
  if (o.bind) j["backend"]["bind"] = *o.bind;
  cfg = adadmm::experiment_config_from_json(j);
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    for (std::string* path : {&cfg.outputs.trace, &cfg.outputs.certificate, &cfg.outputs.reports,
                              &cfg.outputs.log}) {
      if (!path->empty() && fs::path(*path).is_relative()) *path = (fs::path(o.out_dir) / *path).string();
    }
  }
  return cfg;
}

std::vector<pid_t> spawn_workers(const std::string& self, const std::string& config_path,
                                 int workers, const std::string& address) {
  std::vector<pid_t> pids;
  for (int i = 0; i < workers; ++i) {
    std::vector<std::string> args{self, "worker", "--config", config_path, "--id",
                                  std::to_string(i), "--connect", address};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = 0;
    if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv.data(), environ) != 0)
      throw adadmm::TransportError("cannot spawn worker process " + std::to_string(i));
    pids.push_back(pid);
  }
  return pids;
}

int reap(const std::vector<pid_t>& pids) {
  int failures = 0;
  for (pid_t pid : pids) {
    int status = 0;
    if (waitpid(pid, &status, 0) < 0 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
  }
  return failures;
}

int run_command(const std::string& self, const std::string& config_path, const Overrides& o,
                const std::vector<std::string>& checks, bool spawn) {
  ExperimentConfig cfg = apply(adadmm::load_experiment_config(config_path), o);
  if (!checks.empty()) cfg.rate.checks = checks;

  adadmm::ExperimentHooks hooks;
  std::vector<pid_t> children;
  std::string effective_path;
  if (spawn) {
    if (cfg.backend.kind != adadmm::BackendSpec::Kind::Tcp)
      throw adadmm::ContractError("--spawn-workers needs the tcp backend");
    cfg.backend.tcp_workers = "external";
    effective_path = (fs::path(o.out_dir.empty() ? "." : o.out_dir) / "effective_config.json").string();
    std::ofstream(effective_path) << adadmm::to_json(cfg).dump(2) << "\n";
    hooks.on_listening = [&](const std::string& address) {
      children = spawn_workers(self, effective_path, cfg.workers, address);
    };
  }

  const auto result = adadmm::run_experiment(cfg, hooks);
  int bad = 0;
  if (!children.empty()) {
    bad = reap(children);
    if (bad > 0) std::cerr << bad << " worker process(es) exited with failure\n";
  }

  const auto& t = result.trace;
  if (!result.failure.empty()) std::cerr << "error: " << result.failure << "\n";
  if (result.reference)
    std::cout << "reference objective " << result.reference->f_star << "\n";
  std::cout << "iterations " << t.iterations() << " (" << t.stop_reason << ")\n";
  if (!t.x0.empty()) std::cout << "final objective " << t.objective(t.iterations()) << "\n";
  std::cout << "elapsed " << t.final_time << " " << t.info.time_unit << "\n";
  for (const auto& rep : result.reports)
    std::cout << "check " << rep.check << ": " << (rep.passed() ? "pass" : "FAIL") << " ("
              << rep.violations << " violations)\n";
  if (bad > 0 && result.exit_code == 0) return 1;
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous distributed consensus ADMM experiments"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides overrides;
  bool spawn = false;

  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  add_overrides(run, overrides);
  run->add_flag("--spawn-workers", spawn, "Start one worker process per shard (tcp backend)");

  std::vector<std::string> checks{"envelope", "descent", "consensus", "delay"};
  auto* check = app.add_subcommand("check", "Run an experiment and evaluate the inequality checks");
  check->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  check->add_option("--checks", checks, "Subset of envelope, descent, consensus, delay, gap")
      ->delimiter(',');
  add_overrides(check, overrides);

  double L = 1.0, sigma2 = 1.0;
  int N = 1, S = 1, tau = 1;
  std::optional<double> gamma_floor, hoffman;
  auto* cert = app.add_subcommand("certify", "Print rate thresholds as JSON");
  cert->add_option("--lipschitz,-L", L, "Gradient Lipschitz constant")->required();
  cert->add_option("--sigma2", sigma2, "Strong convexity modulus")->required();
  cert->add_option("--workers,-N", N, "Number of workers")->required();
  cert->add_option("--max-arrivals,-S", S, "Strict bound on |A_k| (default N)");
  cert->add_option("--tau", tau, "Maximum tolerable delay")->required();
  cert->add_option("--gamma-floor", gamma_floor, "Lower bound on gamma");
  cert->add_option("--error-bound", hoffman, "Error-bound constant c");

  long iters = 100;
  std::string out_path;
  auto* sync = app.add_subcommand("sync-oracle", "Synchronous consensus ADMM reference trace");
  sync->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  sync->add_option("--iters", iters, "Iterations");
  sync->add_option("--out", out_path, "Trace CSV path")->required();

  adadmm::SyntheticLogisticSpec spec;
  std::uint64_t seed = 1;
  std::string format = "libsvm";
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic logistic dataset");
  gen->add_option("--samples", spec.samples, "Sample count");
  gen->add_option("--dim", spec.dim, "Feature count");
  gen->add_option("--feature-scale", spec.feature_scale, "Feature standard deviation");
  gen->add_option("--label-noise", spec.label_noise, "Label flip probability");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--format", format, "libsvm or csv")->check(CLI::IsMember({"libsvm", "csv"}));
  gen->add_option("--out", out_path, "Output path")->required();

  int worker_id = 0;
  std::string connect;
  auto* worker = app.add_subcommand("worker", "Serve one shard to a tcp master");
  worker->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  worker->add_option("--id", worker_id, "Worker id")->required();
  worker->add_option("--connect", connect, "Master address host:port")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(argv[0], config_path, overrides, {}, spawn);
    if (*check) return run_command(argv[0], config_path, overrides, checks, false);

    if (*cert) {
      if (cert->count("--max-arrivals") == 0) S = N;
      const auto c = adadmm::certify(L, sigma2, N, S, tau, gamma_floor, hoffman);
      std::cout << adadmm::to_json(c).dump(2) << "\n";
      return 0;
    }

    if (*sync) {
      const ExperimentConfig cfg = adadmm::load_experiment_config(config_path);
      const auto p = adadmm::build_problem(cfg);
      auto trace = adadmm::sync_reference(p, cfg.protocol.rho, iters, cfg.protocol.dual_init,
                                          cfg.fista);
      trace.f_star = adadmm::solve_reference(p, cfg.reference_tol, cfg.reference_max_iter).f_star;
      std::ofstream out(out_path);
      if (!out) throw adadmm::ContractError("cannot write '" + out_path + "'");
      adadmm::write_trace_csv(out, trace);
      std::cout << "final objective " << trace.objective(trace.iterations()) << "\n";
      return 0;
    }

    if (*gen) {
      const auto data = adadmm::synthetic_logistic(spec, seed);
      std::ofstream out(out_path);
      if (!out) throw adadmm::ContractError("cannot write '" + out_path + "'");
      if (format == "libsvm") {
        adadmm::write_libsvm(out, data);
      } else {
        out.precision(17);
        for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
          out << (data.labels(r) > 0 ? 1 : -1);
          for (Eigen::Index c = 0; c < data.features.cols(); ++c) out << ',' << data.features(r, c);
          out << '\n';
        }
      }
      return 0;
    }

    if (*worker) {
      const ExperimentConfig cfg = adadmm::load_experiment_config(config_path);
      const auto p = adadmm::build_problem(cfg);
      if (worker_id < 0 || worker_id >= p.workers())
        throw adadmm::ContractError("worker id out of range");
      double rho = cfg.protocol.rho;
      if (cfg.rate.use_certified)
        rho = adadmm::certify(p.lipschitz(), p.strong_convexity(), p.workers(),
                              cfg.rate.max_arrivals.value_or(p.workers()), cfg.protocol.tau,
                              cfg.rate.gamma_floor, cfg.rate.hoffman)
                  .rho;
      return adadmm::tcp_connect_worker(adadmm::Endpoint::parse(connect), worker_id,
                                        p.local(worker_id), rho, cfg.fista,
                                        cfg.protocol.dual_init);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
