#pragma once

#include "adadmm/problem.hpp"
#include "adadmm/protocol.hpp"
#include "adadmm/rate.hpp"
#include "adadmm/sim.hpp"

#include <functional>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace adadmm {

struct Dataset {
  Matrix features;  // one sample per row
  Vector labels;    // +-1
};

using DatasetShard = Dataset;

// LIBSVM text: "<label> <index>:<value> ...", indices 1-based and strictly
// ascending. Labels +1/1 map to +1; -1 and 0 map to -1. Blank lines and lines
// starting with '#' are skipped. `dim` fixes the feature count; otherwise it
// is the largest index seen.
Dataset parse_libsvm(std::istream& in, std::optional<Eigen::Index> dim = {});
Dataset parse_libsvm_file(const std::string& path, std::optional<Eigen::Index> dim = {});
void write_libsvm(std::ostream& out, const Dataset& data);

// CSV: "label,f1,...,fn" per line, same label rule, no header.
Dataset parse_csv(std::istream& in);
Dataset load_dataset(const std::string& path, const std::string& format);

// Seeded shuffle, then a contiguous split; the first m % N shards get one
// extra sample.
std::vector<DatasetShard> partition_uniform(const Dataset& data, int workers, std::uint64_t seed);

struct SyntheticLogisticSpec {
  long samples = 2000;
  Eigen::Index dim = 50;
  double feature_scale = 0.1;  // feature entries ~ N(0, feature_scale^2)
  double label_noise = 0.1;     // probability of flipping a label
  double weight_scale = 1.0;    // planted weights ~ N(0, weight_scale^2)
};

Dataset synthetic_logistic(const SyntheticLogisticSpec& spec, std::uint64_t seed);

struct SyntheticQuadraticSpec {
  Eigen::Index dim = 8;
  double eig_lo = 1.0;
  double eig_hi = 5.0;
  double q_scale = 1.0;
};

struct ProblemSource {
  enum class Kind { Quadratic, Logistic, Dataset };
  Kind kind = Kind::Quadratic;
  SyntheticQuadraticSpec quadratic;
  SyntheticLogisticSpec logistic;
  std::string path;
  std::string format = "libsvm";
};

struct BackendSpec {
  enum class Kind { Sim, Schedule, Tcp };
  Kind kind = Kind::Sim;
  SimConfig sim;
  std::string schedule = "round_robin";  // Schedule backend
  std::string bind = "127.0.0.1:0";      // Tcp backend
  std::string tcp_workers = "threads";   // "threads" or "external"
};

struct RateSpec {
  bool certify = false;
  bool use_certified = false;  // replace rho, gamma by the certificate
  std::optional<int> max_arrivals;
  std::optional<double> hoffman;
  std::optional<double> gamma_floor;
  // any of: envelope, descent, consensus, delay, gap
  std::vector<std::string> checks;
};

struct OutputPaths {
  std::string trace = "trace.csv";
  std::string certificate = "certificate.json";
  std::string reports = "reports.json";
  std::string log = "run.log";
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int workers = 4;
  ProblemSource problem;
  Regularizer regularizer;
  ProtocolConfig protocol;
  FistaConfig fista;
  BackendSpec backend;
  RateSpec rate;
  double reference_tol = 1e-10;
  long reference_max_iter = 2000000;
  OutputPaths outputs;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

ConsensusProblem build_problem(const ExperimentConfig& cfg);

struct ExperimentResult {
  int exit_code = 1;
  bool converged = false;
  bool checks_passed = true;
  std::optional<ReferenceSolution> reference;
  std::optional<RateCertificate> certificate;
  std::vector<CheckReport> reports;
  Trace trace;
  std::string failure;
};

struct ExperimentHooks {
  // Tcp backend with external workers: called once the master listens.
  std::function<void(const std::string& address)> on_listening;
};

// Build the problem, solve the reference, run the protocol on the chosen
// backend, run the requested checks, write the artifacts. Exit code 0 only
// when the run converged and every requested check passed. Artifacts written
// before a failure are kept; the log names the failing stage.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentHooks& hooks = {});

// Standalone synchronous consensus ADMM: all workers update against x0^k,
// then x0^{k+1} = prox of the averaged x and lambda (no proximal weight).
// Records iterates for every state.
Trace sync_reference(const ConsensusProblem& p, double rho, long iterations,
                     DualInit init = DualInit::GradientConsistent,
                     const FistaConfig& fista = {});

// First state k with F(x0^k) <= target.
std::optional<long> iterations_to_target(const Trace& trace, double target);

// Master cumulative wait at state k (0 at k = 0).
double master_wait_at(const Trace& trace, long k);

}  // namespace adadmm
