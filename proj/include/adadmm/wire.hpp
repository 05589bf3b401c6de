#pragma once

#include "adadmm/protocol.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adadmm {

// Frame layout, all integers little-endian:
//
//   u32 length | u8 kind | u32 sender | u64 tag | f64 values... | u32 crc32c
//
// `length` counts kind, sender, tag and values (13 + 8m bytes); the checksum
// covers exactly those bytes. Error frames carry UTF-8 text in place of the
// values.
enum class FrameKind : std::uint8_t {
  Broadcast = 1,
  Report = 2,  // x then lambda, equal halves
  Shutdown = 3,
  Register = 4,
  Error = 5,
};

inline constexpr std::uint32_t kMasterSender = 0xffffffffu;
inline constexpr std::size_t kFrameHeaderBytes = 13;
inline constexpr std::uint32_t kMaxFrameLength = 1u << 28;

struct Frame {
  FrameKind kind = FrameKind::Shutdown;
  std::uint32_t sender = kMasterSender;
  std::uint64_t tag = 0;
  std::vector<double> values;
  std::string text;  // Error frames only
};

// Malformed or corrupted frame. Fatal for the connection it arrived on.
class FrameError : public TransportError {
 public:
  using TransportError::TransportError;
};

std::uint32_t crc32c(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_frame(const Frame& f);

// Decodes one complete frame. Throws FrameError on bad length, checksum,
// kind or payload size.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Reassembles frames from an arbitrary split of the byte stream.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Frame> next();
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t offset_ = 0;
};

Frame to_frame(const Broadcast& b);
Frame to_frame(const Report& r);
Frame shutdown_frame();
Frame register_frame(int worker);
Frame error_frame(std::uint32_t sender, const std::string& text);

Broadcast broadcast_from_frame(const Frame& f);
Report report_from_frame(const Frame& f);

}  // namespace adadmm
