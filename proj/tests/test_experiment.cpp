#include "adadmm/experiment.hpp"
#include "generators.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace adadmm;
using namespace adadmm::testing;
namespace fs = std::filesystem;

namespace {

Dataset parse(const std::string& text, std::optional<Eigen::Index> dim = {}) {
  std::istringstream in(text);
  return parse_libsvm(in, dim);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ContractError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adadmm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_quadratic(const fs::path& dir) {
  ExperimentConfig cfg;
  cfg.workers = 3;
  cfg.problem.quadratic.dim = 4;
  cfg.protocol.rho = 8.0;
  cfg.protocol.tau = 2;
  cfg.protocol.stop.max_iter = 5000;
  cfg.protocol.stop.consensus_tol = 1e-8;
  cfg.protocol.stop.stationarity_tol = 1e-8;
  cfg.outputs.trace = (dir / "trace.csv").string();
  cfg.outputs.certificate = (dir / "certificate.json").string();
  cfg.outputs.reports = (dir / "reports.json").string();
  cfg.outputs.log = (dir / "run.log").string();
  return cfg;
}

}  // namespace

TEST(Libsvm, DenseRowWithZeroFill) {
  const auto d = parse("+1 1:0.5 3:2.0\n", 3);
  ASSERT_EQ(d.features.rows(), 1);
  EXPECT_EQ(d.features(0, 0), 0.5);
  EXPECT_EQ(d.features(0, 1), 0.0);
  EXPECT_EQ(d.features(0, 2), 2.0);
  EXPECT_EQ(d.labels(0), 1.0);
}

TEST(Libsvm, LabelConventionsAndComments) {
  const auto d = parse("# header\n0 1:1\n\n1 2:1\n-1 1:2\n");
  ASSERT_EQ(d.labels.size(), 3);
  EXPECT_EQ(d.labels(0), -1.0);
  EXPECT_EQ(d.labels(1), 1.0);
  EXPECT_EQ(d.labels(2), -1.0);
  EXPECT_EQ(d.features.cols(), 2);
}

TEST(Libsvm, ErrorsNameTheLine) {
  EXPECT_NE(error_of("+1 1:1\n+1 2:1 1:3\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("+1 1:1\n+1 2:1 1:3\n").find("ascending"), std::string::npos);
  EXPECT_NE(error_of("+1 1:1\n\n+1 x:1\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("2 1:1\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("+1 0:1\n").find("1-based"), std::string::npos);
  EXPECT_NE(error_of("+1 1:abc\n").find("line 1"), std::string::npos);
  EXPECT_THROW(parse("+1 4:1\n", 3), ContractError);
  EXPECT_THROW(parse("# nothing\n"), ContractError);
}

TEST(Libsvm, HundredLineRoundTrip) {
  std::mt19937_64 rng(111);
  Dataset d;
  d.features = gaussian_matrix(100, 12, rng);
  for (Eigen::Index r = 0; r < 100; ++r)
    for (Eigen::Index c = 0; c < 12; ++c)
      if (uniform_real(0, 1, rng) < 0.4) d.features(r, c) = 0.0;
  d.features(0, 11) = 1.0;  // pin the width
  d.labels = labels(100, rng);
  std::stringstream io;
  write_libsvm(io, d);
  const auto back = parse_libsvm(io, 12);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Csv, ParsesAndRejectsRaggedRows) {
  std::istringstream ok("1,0.5,2\n0,1,1\n");
  const auto d = parse_csv(ok);
  EXPECT_EQ(d.features.rows(), 2);
  EXPECT_EQ(d.features(0, 1), 2.0);
  EXPECT_EQ(d.labels(1), -1.0);
  std::istringstream ragged("1,0.5,2\n-1,1\n");
  try {
    parse_csv(ragged);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Partition, SizesDifferByAtMostOne) {
  Dataset d;
  d.features = Matrix::Zero(10, 1);
  d.labels = Vector::Ones(10);
  const auto shards = partition_uniform(d, 3, 1);
  ASSERT_EQ(shards.size(), 3u);
  EXPECT_EQ(shards[0].features.rows(), 4);
  EXPECT_EQ(shards[1].features.rows(), 3);
  EXPECT_EQ(shards[2].features.rows(), 3);
  EXPECT_THROW(partition_uniform(d, 11, 1), ContractError);
}

TEST(Partition, CoversEverySampleExactlyOnce) {
  std::mt19937_64 rng(112);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index m = uniform_int(5, 200, rng);
    Dataset d;
    d.features.resize(m, 2);
    for (Eigen::Index r = 0; r < m; ++r) d.features.row(r) << static_cast<double>(r), -1.0 * r;
    d.labels = labels(m, rng);
    const int N = uniform_int(1, static_cast<int>(std::min<Eigen::Index>(m, 12)), rng);
    const auto shards = partition_uniform(d, N, rng());
    std::multiset<long> seen;
    for (const auto& s : shards) {
      EXPECT_GT(s.features.rows(), 0);
      for (Eigen::Index r = 0; r < s.features.rows(); ++r) {
        const long id = static_cast<long>(s.features(r, 0));
        seen.insert(id);
        EXPECT_EQ(s.labels(r), d.labels(id));
      }
    }
    std::multiset<long> all;
    for (long r = 0; r < m; ++r) all.insert(r);
    EXPECT_EQ(seen, all);
  }
}

TEST(Config, RoundTripsThroughJson) {
  ExperimentConfig c;
  c.seed = 77;
  c.workers = 6;
  c.problem.kind = ProblemSource::Kind::Logistic;
  c.problem.logistic.samples = 321;
  c.regularizer = Regularizer::box(10.0);
  c.protocol.rho = 0.01;
  c.protocol.tau = 11;
  c.protocol.stop.target_objective = 12.5;
  c.protocol.dual_init = DualInit::Zero;
  c.fista.stepsize = 1e-4;
  c.backend.kind = BackendSpec::Kind::Tcp;
  c.backend.sim.compute.assign(6, Distribution::uniform(0.8, 1.2));
  c.backend.sim.compute[5] = Distribution::lognormal(2.0, 0.3);
  c.rate.checks = {"delay", "consensus"};
  c.rate.hoffman = 3.0;
  const auto j = to_json(c);
  const auto back = experiment_config_from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_EQ(experiment_config_from_json(nlohmann::json::parse(j.dump())).protocol.stop.target_objective,
            12.5);
}

TEST(Config, RejectsUnknownKeysAndChecks) {
  auto j = to_json(ExperimentConfig{});
  j["protocol"]["rho_typo"] = 1.0;
  EXPECT_THROW(experiment_config_from_json(j), ContractError);
  j = to_json(ExperimentConfig{});
  j["rate"]["checks"] = {"envelope", "vibes"};
  EXPECT_THROW(experiment_config_from_json(j), ContractError);
  j = to_json(ExperimentConfig{});
  j["backend"]["kind"] = "carrier_pigeon";
  EXPECT_THROW(experiment_config_from_json(j), ContractError);
}

TEST(SyncReference, HandWorkedThreeIterations) {
  Matrix a1(1, 1), a2(1, 1);
  a1 << 1.0;
  a2 << 3.0;
  Vector b1(1), b2(1);
  b1 << -2.0;
  b2 << 1.0;
  ConsensusProblem p({LocalObjective::quadratic(a1, b1), LocalObjective::quadratic(a2, b2)},
                     Regularizer::zero());
  const Trace t = sync_reference(p, 1.0, 3, DualInit::Zero);
  const double x0[] = {0.0, 0.75, 0.5, 0.375};
  const double x1[] = {0.0, 1.0, 0.875, 0.6875};
  const double x2[] = {0.0, -0.25, 0.0, 0.125};
  const double l1[] = {0.0, 1.0, 1.125, 1.3125};
  const double l2[] = {0.0, -0.25, -1.0, -1.375};
  for (int k = 0; k <= 3; ++k) {
    EXPECT_NEAR(t.x0[k](0), x0[k], 1e-15) << k;
    EXPECT_NEAR(t.x_iterates[k][0](0), x1[k], 1e-15) << k;
    EXPECT_NEAR(t.x_iterates[k][1](0), x2[k], 1e-15) << k;
    EXPECT_NEAR(t.lambda_iterates[k][0](0), l1[k], 1e-15) << k;
    EXPECT_NEAR(t.lambda_iterates[k][1](0), l2[k], 1e-15) << k;
  }
}

TEST(SyncReference, ConvergesToTheReferenceOptimum) {
  const auto p = random_quadratic_problem(5, 4, 1.0, 2.0, Regularizer::zero(), 113);
  const Trace t = sync_reference(p, 1.5, 500);
  EXPECT_LT(std::sqrt(t.records.back().consensus_err), 1e-8);
  EXPECT_NEAR(t.objective(500), solve_reference(p, 1e-12).f_star, 1e-8);
}

TEST(Targets, IterationsAndWaitLookups) {
  Trace t;
  t.objective0 = 10.0;
  for (int k = 0; k < 4; ++k) {
    IterationRecord r;
    r.k = k;
    r.objective = 9.0 - 2.0 * k;
    r.master_wait = 1.5 * (k + 1);
    t.records.push_back(r);
  }
  EXPECT_EQ(iterations_to_target(t, 10.0), 0);
  EXPECT_EQ(iterations_to_target(t, 5.0), 3);
  EXPECT_FALSE(iterations_to_target(t, 0.0).has_value());
  EXPECT_EQ(master_wait_at(t, 0), 0.0);
  EXPECT_EQ(master_wait_at(t, 3), 4.5);
}

TEST(BuildProblem, LogisticShardsFollowTheSeed) {
  ExperimentConfig c;
  c.workers = 4;
  c.problem.kind = ProblemSource::Kind::Logistic;
  c.problem.logistic.samples = 50;
  c.problem.logistic.dim = 3;
  const auto a = build_problem(c);
  const auto b = build_problem(c);
  long rows = 0;
  for (int i = 0; i < 4; ++i) {
    const auto& la = std::get<Logistic>(a.local(i).family());
    EXPECT_EQ(la.A, std::get<Logistic>(b.local(i).family()).A);
    rows += la.A.rows();
  }
  EXPECT_EQ(rows, 50);
}

TEST(BuildProblem, LoadsDatasetFiles) {
  const auto dir = scratch_dir("dataset");
  std::mt19937_64 rng(114);
  Dataset d{gaussian_matrix(30, 4, rng), labels(30, rng)};
  {
    std::ofstream out(dir / "data.svm");
    write_libsvm(out, d);
  }
  ExperimentConfig c;
  c.workers = 3;
  c.problem.kind = ProblemSource::Kind::Dataset;
  c.problem.path = (dir / "data.svm").string();
  const auto p = build_problem(c);
  EXPECT_EQ(p.workers(), 3);
  EXPECT_EQ(p.dim(), 4);
  c.problem.path = (dir / "missing.svm").string();
  EXPECT_THROW(build_problem(c), ContractError);
}

TEST(RunExperiment, ConvergedRunWritesArtifactsAndExitsZero) {
  const auto dir = scratch_dir("converged");
  auto cfg = small_quadratic(dir);
  cfg.rate.checks = {"consensus", "descent"};
  const auto res = run_experiment(cfg);
  EXPECT_EQ(res.exit_code, 0) << res.failure;
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.reports.size(), 2u);
  std::ifstream csv(cfg.outputs.trace);
  const auto rows = read_trace_csv(csv);
  EXPECT_EQ(static_cast<long>(rows.size()), res.trace.iterations() + 1);
  EXPECT_TRUE(fs::exists(cfg.outputs.reports));
  EXPECT_TRUE(fs::exists(cfg.outputs.log));
}

TEST(RunExperiment, IterationCapWithoutConvergenceExitsOne) {
  const auto dir = scratch_dir("capped");
  auto cfg = small_quadratic(dir);
  cfg.protocol.stop.max_iter = 2;
  const auto res = run_experiment(cfg);
  EXPECT_FALSE(res.converged);
  EXPECT_EQ(res.exit_code, 1);
}

TEST(RunExperiment, StageFailureExitsTwoAndNamesTheStage) {
  const auto dir = scratch_dir("failing");
  auto cfg = small_quadratic(dir);
  cfg.protocol.min_arrivals = 7;  // more than N
  const auto res = run_experiment(cfg);
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.failure.find("run"), std::string::npos) << res.failure;
  std::ifstream log(cfg.outputs.log);
  std::stringstream text;
  text << log.rdbuf();
  EXPECT_NE(text.str().find("FAILED during run"), std::string::npos);
}

TEST(RunExperiment, CertifiedParametersReplaceTheConfiguredOnes) {
  const auto dir = scratch_dir("certified");
  auto cfg = small_quadratic(dir);
  cfg.rate.use_certified = true;
  cfg.rate.checks = {"envelope"};
  cfg.protocol.stop = StoppingRule{};
  cfg.protocol.stop.max_iter = 100;
  const auto res = run_experiment(cfg);
  ASSERT_TRUE(res.certificate.has_value());
  EXPECT_EQ(res.trace.info.rho, res.certificate->rho);
  EXPECT_EQ(res.trace.info.gamma, res.certificate->gamma);
  EXPECT_EQ(res.exit_code, 0) << res.failure;
  EXPECT_TRUE(fs::exists(cfg.outputs.certificate));
}

TEST(TraceCsv, RoundTrips) {
  const auto p = random_quadratic_problem(2, 2, 1.0, 2.0, Regularizer::zero(), 5);
  ProtocolConfig pc;
  pc.stop.max_iter = 20;
  RunOptions opts;
  opts.f_star = solve_reference(p, 1e-12).f_star;
  const Trace t = sim_run(p, pc, FistaConfig{}, SimConfig{}, opts);
  std::stringstream io;
  write_trace_csv(io, t);
  std::string header;
  std::getline(io, header);
  EXPECT_EQ(header, kTraceCsvHeader);
  io.seekg(0);
  const auto rows = read_trace_csv(io);
  const auto want = trace_rows(t);
  ASSERT_EQ(rows.size(), want.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].objective, want[k].objective);
    EXPECT_EQ(rows[k].delta, want[k].delta);
    EXPECT_EQ(rows[k].arrivals, want[k].arrivals);
  }
}
