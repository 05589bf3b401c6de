#include "adadmm/tcp.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace adadmm {

namespace {

std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

AddrInfo resolve(const Endpoint& where, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo out;
  const std::string port = std::to_string(where.port);
  const int rc = getaddrinfo(where.host.empty() ? nullptr : where.host.c_str(), port.c_str(),
                             &hints, &out.head);
  if (rc != 0)
    throw TransportError("cannot resolve " + where.to_string() + ": " + gai_strerror(rc));
  return out;
}

void set_nodelay(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

void set_receive_timeout(int fd, std::chrono::milliseconds t) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(t.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((t.count() % 1000) * 1000);
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

}  // namespace

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::send_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send failed"));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::optional<Frame> Socket::receive_frame(FrameDecoder& decoder) {
  std::uint8_t buf[1 << 16];
  while (true) {
    if (auto f = decoder.next()) return f;
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n == 0) {
      if (decoder.buffered() > 0) throw FrameError("connection closed in the middle of a frame");
      return std::nullopt;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw TransportError("receive timed out");
      throw TransportError(errno_text("recv failed"));
    }
    decoder.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
  }
}

void Socket::shutdown_write() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Endpoint Endpoint::parse(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw ContractError("address '" + address + "' lacks ':port'");
  Endpoint e;
  e.host = address.substr(0, colon);
  if (e.host.size() >= 2 && e.host.front() == '[' && e.host.back() == ']')
    e.host = e.host.substr(1, e.host.size() - 2);
  const std::string port = address.substr(colon + 1);
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (port.empty() || used != port.size() || value > 65535)
    throw ContractError("address '" + address + "' has an invalid port");
  e.port = static_cast<std::uint16_t>(value);
  return e;
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

Socket listen_on(const Endpoint& where, int backlog) {
  AddrInfo ai = resolve(where, true);
  std::string last_error = "no usable address";
  for (addrinfo* a = ai.head; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!s.valid()) {
      last_error = errno_text("socket");
      continue;
    }
    int one = 1;
    setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) != 0) {
      last_error = errno_text("bind");
      continue;
    }
    if (::listen(s.fd(), backlog) != 0) {
      last_error = errno_text("listen");
      continue;
    }
    return s;
  }
  throw TransportError("cannot listen on " + where.to_string() + ": " + last_error);
}

Socket connect_to(const Endpoint& where, std::chrono::milliseconds retry_for) {
  const auto deadline = std::chrono::steady_clock::now() + retry_for;
  std::string last_error;
  while (true) {
    AddrInfo ai = resolve(where, false);
    for (addrinfo* a = ai.head; a; a = a->ai_next) {
      Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
      if (!s.valid()) {
        last_error = errno_text("socket");
        continue;
      }
      if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) == 0) {
        set_nodelay(s.fd());
        return s;
      }
      last_error = errno_text("connect");
    }
    if (std::chrono::steady_clock::now() >= deadline)
      throw TransportError("cannot connect to " + where.to_string() + ": " + last_error);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

TcpMasterTransport::TcpMasterTransport(int workers, const Endpoint& bind,
                                       std::chrono::milliseconds register_timeout)
    : workers_(workers), register_timeout_(register_timeout) {
  require(workers >= 1, "tcp master: need at least one worker");
  listener_ = listen_on(bind, workers);
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  if (getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0)
    throw TransportError(errno_text("getsockname"));
  if (addr.ss_family == AF_INET)
    port_ = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  else
    port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  const auto n = static_cast<std::size_t>(workers);
  sent_at_.assign(n, 0.0);
  busy_total_.assign(n, 0.0);
  outstanding_.assign(n, false);
}

TcpMasterTransport::~TcpMasterTransport() {
  try {
    shutdown();
  } catch (const std::exception&) {
  }
  for (auto& t : readers_)
    if (t.joinable()) t.join();
}

double TcpMasterTransport::elapsed() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
}

void TcpMasterTransport::accept_workers() {
  peers_.resize(static_cast<std::size_t>(workers_));
  int registered = 0;
  const auto deadline = std::chrono::steady_clock::now() + register_timeout_;
  while (registered < workers_) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0)
      throw TransportError("only " + std::to_string(registered) + " of " +
                           std::to_string(workers_) + " workers registered before the timeout");
    pollfd pfd{listener_.fd(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("poll on listener"));
    }
    if (rc == 0) continue;
    Socket s(::accept(listener_.fd(), nullptr, nullptr));
    if (!s.valid()) continue;
    set_nodelay(s.fd());
    set_receive_timeout(s.fd(), left);
    FrameDecoder decoder;
    std::optional<Frame> hello;
    try {
      hello = s.receive_frame(decoder);
    } catch (const TransportError&) {
      continue;  // garbage or silence from a stray client; keep waiting
    }
    set_receive_timeout(s.fd(), std::chrono::milliseconds(0));
    if (!hello || hello->kind != FrameKind::Register) {
      s.send_frame(error_frame(kMasterSender, "expected a register frame"));
      continue;
    }
    const auto id = hello->sender;
    if (id >= static_cast<std::uint32_t>(workers_)) {
      s.send_frame(error_frame(kMasterSender, "worker id " + std::to_string(id) +
                                                  " out of range [0, " +
                                                  std::to_string(workers_) + ")"));
      continue;
    }
    if (peers_[id].valid()) {
      s.send_frame(
          error_frame(kMasterSender, "worker id " + std::to_string(id) + " already registered"));
      continue;
    }
    peers_[id] = std::move(s);
    ++registered;
  }
}

void TcpMasterTransport::post(MailItem item) {
  {
    std::lock_guard lock(mu_);
    if (std::holds_alternative<std::string>(item) && stopping_) return;
    mailbox_.push_back(std::move(item));
  }
  cv_.notify_one();
}

void TcpMasterTransport::reader_loop(int worker) {
  auto& sock = peers_[static_cast<std::size_t>(worker)];
  FrameDecoder decoder;
  const std::string who = "worker " + std::to_string(worker);
  struct Done {
    TcpMasterTransport* self;
    ~Done() {
      {
        std::lock_guard lock(self->mu_);
        ++self->readers_done_;
      }
      self->cv_.notify_all();
    }
  } done{this};
  try {
    while (true) {
      auto frame = sock.receive_frame(decoder);
      if (!frame) {
        post(who + " closed its connection");
        return;
      }
      if (frame->kind == FrameKind::Error) {
        post(who + " reported an error: " + frame->text);
        return;
      }
      if (frame->kind != FrameKind::Report || frame->sender != static_cast<std::uint32_t>(worker)) {
        post(who + " sent an unexpected frame");
        return;
      }
      Report r = report_from_frame(*frame);
      post(Arrival{std::move(r), elapsed()});
    }
  } catch (const std::exception& e) {
    post(who + ": " + e.what());
  }
}

Report TcpMasterTransport::take(MailItem item) {
  if (auto* failure = std::get_if<std::string>(&item)) throw TransportError(*failure);
  auto& a = std::get<Arrival>(item);
  const auto idx = static_cast<std::size_t>(a.report.worker);
  busy_total_[idx] += a.time - sent_at_[idx];
  outstanding_[idx] = false;
  return std::move(a.report);
}

void TcpMasterTransport::start(const Vector& x0) {
  require(!started_, "tcp master: start() called twice");
  started_ = true;
  accept_workers();
  t0_ = std::chrono::steady_clock::now();
  for (int i = 0; i < workers_; ++i) readers_.emplace_back([this, i] { reader_loop(i); });
  std::vector<int> everyone(static_cast<std::size_t>(workers_));
  for (int i = 0; i < workers_; ++i) everyone[static_cast<std::size_t>(i)] = i;
  broadcast(everyone, x0, 0);
}

std::optional<Report> TcpMasterTransport::poll() {
  MailItem item;
  {
    std::lock_guard lock(mu_);
    if (mailbox_.empty()) return std::nullopt;
    item = std::move(mailbox_.front());
    mailbox_.pop_front();
  }
  return take(std::move(item));
}

Report TcpMasterTransport::wait() {
  const double begin = elapsed();
  MailItem item;
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return !mailbox_.empty(); });
    item = std::move(mailbox_.front());
    mailbox_.pop_front();
  }
  wait_total_ += elapsed() - begin;
  return take(std::move(item));
}

void TcpMasterTransport::broadcast(std::span<const int> targets, const Vector& x0,
                                   std::uint64_t k) {
  const auto bytes = encode_frame(to_frame(Broadcast{x0, k}));
  for (int i : targets) {
    const auto idx = static_cast<std::size_t>(i);
    sent_at_[idx] = elapsed();
    outstanding_[idx] = true;
    peers_[idx].send_all(bytes);
  }
}

void TcpMasterTransport::shutdown() {
  if (stopped_) return;
  stopped_ = true;
  if (!started_) return;
  final_time_ = elapsed();
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  const auto bytes = encode_frame(shutdown_frame());
  for (auto& peer : peers_) {
    try {
      if (peer.valid()) peer.send_all(bytes);
    } catch (const TransportError&) {
      // that worker is gone already
    }
    peer.shutdown_write();
  }
  {
    std::unique_lock lock(mu_);
    const bool all_gone = cv_.wait_for(lock, hangup_grace_, [this] {
      return readers_done_ == static_cast<int>(readers_.size());
    });
    if (!all_gone)
      for (auto& peer : peers_) peer.shutdown_both();
  }
  for (auto& t : readers_)
    if (t.joinable()) t.join();

  late_ = 0;
  for (const auto& item : mailbox_)
    if (std::holds_alternative<Arrival>(item)) ++late_;

  accounts_.assign(static_cast<std::size_t>(workers_) + 1, ClockAccount{});
  accounts_[0] = {final_time_ - wait_total_, wait_total_};
  for (std::size_t i = 0; i < busy_total_.size(); ++i) {
    double busy = busy_total_[i] + (outstanding_[i] ? final_time_ - sent_at_[i] : 0.0);
    busy = std::clamp(busy, 0.0, final_time_);
    accounts_[i + 1] = {busy, final_time_ - busy};
  }
}

TransportClock TcpMasterTransport::master_clock() const {
  const double now = started_ ? (stopped_ ? final_time_ : elapsed()) : 0.0;
  return {now, now - wait_total_, wait_total_};
}

int tcp_connect_worker(const Endpoint& master, int worker, const LocalObjective& objective,
                       double rho, const FistaConfig& fista, DualInit init,
                       std::chrono::milliseconds connect_retry) {
  Socket sock = connect_to(master, connect_retry);
  sock.send_frame(register_frame(worker));
  const Vector x_init = Vector::Zero(objective.dim());
  WorkerState state(worker, objective, x_init, initial_dual(objective, x_init, init));
  FrameDecoder decoder;
  while (true) {
    auto frame = sock.receive_frame(decoder);
    if (!frame) throw TransportError("master closed the connection without a shutdown frame");
    switch (frame->kind) {
      case FrameKind::Broadcast: {
        const Broadcast b = broadcast_from_frame(*frame);
        if (b.x0.size() != objective.dim())
          throw FrameError("broadcast has dimension " + std::to_string(b.x0.size()) +
                           ", expected " + std::to_string(objective.dim()));
        sock.send_frame(to_frame(worker_step(state, b.x0, rho, fista)));
        break;
      }
      case FrameKind::Shutdown:
        return 0;
      case FrameKind::Error:
        throw TransportError("master rejected worker " + std::to_string(worker) + ": " +
                             frame->text);
      default:
        throw FrameError("worker received an unexpected frame kind");
    }
  }
}

}  // namespace adadmm
