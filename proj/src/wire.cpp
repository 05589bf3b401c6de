#include "adadmm/wire.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <cstring>

namespace adadmm {

namespace {

using Castagnoli = boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true>;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

bool known_kind(std::uint8_t k) { return k >= 1 && k <= 5; }

}  // namespace

std::uint32_t crc32c(std::span<const std::uint8_t> bytes) {
  Castagnoli crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  const std::size_t body = f.kind == FrameKind::Error ? f.text.size() : 8 * f.values.size();
  if (kFrameHeaderBytes + body > kMaxFrameLength) throw FrameError("frame too large to encode");
  std::vector<std::uint8_t> out;
  out.reserve(4 + kFrameHeaderBytes + body + 4);
  put_u32(out, static_cast<std::uint32_t>(kFrameHeaderBytes + body));
  out.push_back(static_cast<std::uint8_t>(f.kind));
  put_u32(out, f.sender);
  put_u64(out, f.tag);
  if (f.kind == FrameKind::Error) {
    out.insert(out.end(), f.text.begin(), f.text.end());
  } else {
    for (double v : f.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u32(out, crc32c(std::span(out).subspan(4)));
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + kFrameHeaderBytes + 4) throw FrameError("frame truncated");
  const std::uint32_t length = get_u32(bytes.data());
  if (length < kFrameHeaderBytes || length > kMaxFrameLength)
    throw FrameError("frame length " + std::to_string(length) + " out of range");
  if (bytes.size() != 4 + static_cast<std::size_t>(length) + 4)
    throw FrameError("frame size does not match its length prefix");
  const auto payload = bytes.subspan(4, length);
  const std::uint32_t stored = get_u32(bytes.data() + 4 + length);
  if (crc32c(payload) != stored) throw FrameError("frame checksum mismatch");

  const std::uint8_t kind = payload[0];
  if (!known_kind(kind)) throw FrameError("unknown frame kind " + std::to_string(kind));
  Frame f;
  f.kind = static_cast<FrameKind>(kind);
  f.sender = get_u32(payload.data() + 1);
  f.tag = get_u64(payload.data() + 5);
  const auto body = payload.subspan(kFrameHeaderBytes);
  if (f.kind == FrameKind::Error) {
    f.text.assign(reinterpret_cast<const char*>(body.data()), body.size());
    return f;
  }
  if (body.size() % 8 != 0) throw FrameError("frame vector payload is not a multiple of 8 bytes");
  f.values.resize(body.size() / 8);
  for (std::size_t j = 0; j < f.values.size(); ++j)
    f.values[j] = std::bit_cast<double>(get_u64(body.data() + 8 * j));
  return f;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameDecoder::next() {
  const std::size_t avail = buffer_.size() - offset_;
  if (avail < 4) return std::nullopt;
  const std::uint32_t length = get_u32(buffer_.data() + offset_);
  if (length < kFrameHeaderBytes || length > kMaxFrameLength)
    throw FrameError("frame length " + std::to_string(length) + " out of range");
  const std::size_t total = 4 + static_cast<std::size_t>(length) + 4;
  if (avail < total) return std::nullopt;
  Frame f = decode_frame(std::span(buffer_).subspan(offset_, total));
  offset_ += total;
  if (offset_ > (1u << 16) && offset_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  return f;
}

Frame to_frame(const Broadcast& b) {
  Frame f;
  f.kind = FrameKind::Broadcast;
  f.sender = kMasterSender;
  f.tag = b.k;
  f.values.assign(b.x0.data(), b.x0.data() + b.x0.size());
  return f;
}

Frame to_frame(const Report& r) {
  require(r.worker >= 0, "report frame: negative worker id");
  require_dim(r.lambda.size(), r.x.size(), "report frame lambda");
  Frame f;
  f.kind = FrameKind::Report;
  f.sender = static_cast<std::uint32_t>(r.worker);
  f.tag = r.k;
  f.values.reserve(static_cast<std::size_t>(2 * r.x.size()));
  f.values.insert(f.values.end(), r.x.data(), r.x.data() + r.x.size());
  f.values.insert(f.values.end(), r.lambda.data(), r.lambda.data() + r.lambda.size());
  return f;
}

Frame shutdown_frame() {
  Frame f;
  f.kind = FrameKind::Shutdown;
  return f;
}

Frame register_frame(int worker) {
  require(worker >= 0, "register frame: negative worker id");
  Frame f;
  f.kind = FrameKind::Register;
  f.sender = static_cast<std::uint32_t>(worker);
  return f;
}

Frame error_frame(std::uint32_t sender, const std::string& text) {
  Frame f;
  f.kind = FrameKind::Error;
  f.sender = sender;
  f.text = text;
  return f;
}

Broadcast broadcast_from_frame(const Frame& f) {
  if (f.kind != FrameKind::Broadcast) throw FrameError("expected a broadcast frame");
  Broadcast b;
  b.k = f.tag;
  b.x0 = Eigen::Map<const Vector>(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
  return b;
}

Report report_from_frame(const Frame& f) {
  if (f.kind != FrameKind::Report) throw FrameError("expected a report frame");
  if (f.values.size() % 2 != 0) throw FrameError("report frame has an odd number of values");
  const auto n = static_cast<Eigen::Index>(f.values.size() / 2);
  Report r;
  r.worker = static_cast<int>(f.sender);
  r.k = f.tag;
  r.x = Eigen::Map<const Vector>(f.values.data(), n);
  r.lambda = Eigen::Map<const Vector>(f.values.data() + n, n);
  return r;
}

}  // namespace adadmm
