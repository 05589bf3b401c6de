#include "adadmm/experiment.hpp"
#include "adadmm/sim.hpp"
#include "adadmm/tcp.hpp"

#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <future>
#include <netinet/in.h>
#include <sys/socket.h>
#include <thread>

using namespace adadmm;
using namespace std::chrono_literals;

namespace {

Socket join_as(std::uint16_t port, int id) {
  Socket s = connect_to(Endpoint{"127.0.0.1", port}, 5000ms);
  s.send_frame(register_frame(id));
  return s;
}

}  // namespace

TEST(Endpoint, ParsesHostAndPort) {
  const auto e = Endpoint::parse("10.0.0.2:5555");
  EXPECT_EQ(e.host, "10.0.0.2");
  EXPECT_EQ(e.port, 5555);
  EXPECT_EQ(e.to_string(), "10.0.0.2:5555");
  EXPECT_THROW(Endpoint::parse("nocolon"), ContractError);
  EXPECT_THROW(Endpoint::parse("host:99999"), ContractError);
}

TEST(TcpMaster, RejectsDuplicateAndOutOfRangeIds) {
  TcpMasterTransport master(2, Endpoint::parse("127.0.0.1:0"), 10s);
  auto started = std::async(std::launch::async, [&] { master.start(Vector::Zero(2)); });

  Socket first = join_as(master.port(), 0);
  std::this_thread::sleep_for(50ms);
  Socket dup = join_as(master.port(), 0);
  Socket wild = join_as(master.port(), 9);
  FrameDecoder d1, d2;
  const auto reply = dup.receive_frame(d1);
  ASSERT_TRUE(reply.has_value());
  EXPECT_EQ(reply->kind, FrameKind::Error);
  EXPECT_NE(reply->text.find("already registered"), std::string::npos) << reply->text;
  const auto reply2 = wild.receive_frame(d2);
  ASSERT_TRUE(reply2.has_value());
  EXPECT_EQ(reply2->kind, FrameKind::Error);

  Socket second = join_as(master.port(), 1);
  started.get();
  FrameDecoder d3;
  const auto hello = second.receive_frame(d3);
  ASSERT_TRUE(hello.has_value());
  EXPECT_EQ(hello->kind, FrameKind::Broadcast);
  EXPECT_EQ(hello->sender, kMasterSender);
  master.shutdown();
}

TEST(TcpMaster, RegistrationTimesOut) {
  TcpMasterTransport master(2, Endpoint::parse("127.0.0.1:0"), 200ms);
  Socket only = join_as(master.port(), 0);
  EXPECT_THROW(master.start(Vector::Zero(1)), TransportError);
}

TEST(TcpMaster, LostWorkerAbortsWithPartialTrace) {
  const auto p = random_quadratic_problem(2, 2, 1.0, 2.0, Regularizer::zero(), 91);
  ProtocolConfig cfg;
  cfg.tau = 1;
  cfg.min_arrivals = 2;
  cfg.stop.max_iter = 100;
  TcpMasterTransport master(2, Endpoint::parse("127.0.0.1:0"));
  const Endpoint where{"127.0.0.1", master.port()};

  std::thread good([&] {
    try {
      tcp_connect_worker(where, 0, p.local(0), cfg.rho, FistaConfig{}, cfg.dual_init);
    } catch (const TransportError&) {
    }
  });
  // Registers, answers three broadcasts, then hangs up.
  std::thread flaky([&] {
    Socket s = join_as(master.port(), 1);
    WorkerState w(1, p.local(1), Vector::Zero(2),
                  initial_dual(p.local(1), Vector::Zero(2), cfg.dual_init));
    FrameDecoder dec;
    for (int round = 0; round < 3; ++round) {
      const auto f = s.receive_frame(dec);
      if (!f || f->kind != FrameKind::Broadcast) return;
      s.send_frame(to_frame(worker_step(w, broadcast_from_frame(*f).x0, cfg.rho, FistaConfig{})));
    }
  });

  try {
    run_to_completion(p, cfg, master);
    FAIL() << "expected the run to abort";
  } catch (const RunAborted& e) {
    // Rounds 0 and 1 always complete. Round 2 completes only when the healthy
    // worker's report reaches the mailbox ahead of the hang-up notice.
    const long done = e.partial_trace().iterations();
    EXPECT_GE(done, 2);
    EXPECT_LE(done, 3);
    EXPECT_NE(std::string(e.what()).find("worker 1"), std::string::npos) << e.what();
  }
  flaky.join();
  good.join();
}

TEST(TcpMaster, AsynchronousLoopbackRunConverges) {
  const auto p = random_quadratic_problem(4, 3, 1.0, 3.0, Regularizer::box(0.5), 92);
  const double f_star = solve_reference(p, 1e-12).f_star;
  ProtocolConfig cfg;
  cfg.rho = 4.0;
  cfg.tau = 3;
  cfg.min_arrivals = 1;
  cfg.stop.max_iter = 20000;
  cfg.stop.consensus_tol = 1e-9;
  cfg.stop.stationarity_tol = 1e-9;
  TcpMasterTransport master(3, Endpoint::parse("127.0.0.1:0"));
  const Endpoint where{"127.0.0.1", master.port()};
  std::vector<std::future<int>> workers;
  for (int i = 0; i < 3; ++i)
    workers.push_back(std::async(std::launch::async, [&, i] {
      return tcp_connect_worker(where, i, p.local(i), cfg.rho, FistaConfig{}, cfg.dual_init);
    }));
  const Trace t = run_to_completion(p, cfg, master);
  for (auto& w : workers) EXPECT_EQ(w.get(), 0);
  EXPECT_EQ(t.stop_reason, "kkt_tolerance");
  EXPECT_NEAR(t.objective(t.iterations()), f_star, 1e-7 * (1 + std::abs(f_star)));
  EXPECT_EQ(t.info.time_unit, "wall_seconds");
  for (const auto& r : t.records)
    for (int d : r.delays) EXPECT_LE(d, cfg.tau - 1);
  ASSERT_EQ(t.clocks.size(), 4u);
  for (const auto& c : t.clocks) EXPECT_LE(c.compute_total, t.final_time + 1e-6);
}

TEST(TcpWorker, ErrorFrameFromMasterIsRaised) {
  Socket listener = listen_on(Endpoint::parse("127.0.0.1:0"), 1);
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ASSERT_EQ(getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&addr), &len), 0);
  const std::uint16_t port = ntohs(addr.sin_port);
  const auto f = LocalObjective::quadratic(Matrix::Identity(1, 1), Vector::Zero(1));
  auto worker = std::async(std::launch::async, [&] {
    return tcp_connect_worker(Endpoint{"127.0.0.1", port}, 0, f, 1.0, FistaConfig{},
                              DualInit::Zero);
  });
  Socket peer(accept(listener.fd(), nullptr, nullptr));
  FrameDecoder dec;
  const auto reg = peer.receive_frame(dec);
  ASSERT_TRUE(reg.has_value());
  EXPECT_EQ(reg->kind, FrameKind::Register);
  peer.send_frame(error_frame(kMasterSender, "go away"));
  EXPECT_THROW(worker.get(), TransportError);
}
