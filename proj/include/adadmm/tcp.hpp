#pragma once

#include "adadmm/protocol.hpp"
#include "adadmm/wire.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace adadmm {

// Owning file descriptor for a stream socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();

  void send_all(std::span<const std::uint8_t> bytes);
  void send_frame(const Frame& f) { send_all(encode_frame(f)); }
  // Blocks until a whole frame arrives. nullopt on orderly EOF.
  std::optional<Frame> receive_frame(FrameDecoder& decoder);
  void shutdown_write();
  // Unblocks any thread sitting in receive on this socket.
  void shutdown_both();

 private:
  int fd_ = -1;
};

// "host:port"; port 0 asks the kernel for an ephemeral port.
struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& address);
  std::string to_string() const;
};

Socket listen_on(const Endpoint& where, int backlog);
Socket connect_to(const Endpoint& where, std::chrono::milliseconds retry_for);

// Master side of the TCP backend. Listens on construction; start() waits for
// exactly N Register frames, then broadcasts x0^0 to everybody. Each
// connection gets its own reader thread feeding one ordered mailbox.
//
// shutdown() sends Shutdown frames and gives workers a grace period to hang
// up before their connections are torn down.
//
// Times are wall-clock seconds since start(). Per-worker compute time is the
// round trip from broadcast send to report receipt, as seen by the master.
class TcpMasterTransport final : public Transport {
 public:
  TcpMasterTransport(int workers, const Endpoint& bind,
                     std::chrono::milliseconds register_timeout = std::chrono::seconds(30));
  ~TcpMasterTransport() override;

  std::uint16_t port() const { return port_; }

  std::string name() const override { return "tcp"; }
  std::string time_unit() const override { return "wall_seconds"; }
  void start(const Vector& x0) override;
  std::optional<Report> poll() override;
  Report wait() override;
  void broadcast(std::span<const int> targets, const Vector& x0, std::uint64_t k) override;
  void shutdown() override;

  TransportClock master_clock() const override;
  std::vector<ClockAccount> clock_accounts() const override { return accounts_; }
  double final_time() const override { return final_time_; }
  long late_reports() const override { return late_; }

 private:
  struct Arrival {
    Report report;
    double time = 0.0;
  };
  using MailItem = std::variant<Arrival, std::string>;  // report or failure reason

  void accept_workers();
  void reader_loop(int worker);
  void post(MailItem item);
  Report take(MailItem item);
  double elapsed() const;

  int workers_;
  std::chrono::milliseconds register_timeout_;
  std::chrono::milliseconds hangup_grace_{2000};
  Socket listener_;
  std::uint16_t port_ = 0;
  std::vector<Socket> peers_;
  std::vector<std::thread> readers_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<MailItem> mailbox_;
  bool stopping_ = false;
  int readers_done_ = 0;

  std::chrono::steady_clock::time_point t0_;
  double wait_total_ = 0.0;
  std::vector<double> sent_at_;
  std::vector<double> busy_total_;
  std::vector<bool> outstanding_;
  std::vector<ClockAccount> accounts_;
  double final_time_ = 0.0;
  long late_ = 0;
  bool started_ = false;
  bool stopped_ = false;
};

// Worker endpoint: register as `worker`, then loop Broadcast -> local update
// -> Report until Shutdown. Returns 0 after a Shutdown frame. Throws
// TransportError on an Error frame or a lost connection.
int tcp_connect_worker(const Endpoint& master, int worker, const LocalObjective& objective,
                       double rho, const FistaConfig& fista, DualInit init,
                       std::chrono::milliseconds connect_retry = std::chrono::seconds(10));

}  // namespace adadmm
