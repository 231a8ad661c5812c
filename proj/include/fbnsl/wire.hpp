#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fbnsl/numerics.hpp"
#include "fbnsl/secure_stats.hpp"

namespace fbnsl::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'F', 'B', 'N', 'L'};
inline constexpr std::uint8_t kVersion = 1;
/// magic(4) version(1) type(1) round(4) client_id(4) payload_len(8), little-endian.
inline constexpr std::size_t kHeaderSize = 22;

enum class MessageType : std::uint8_t {
  kClientUpdate = 1,
  kServerBroadcast = 2,
  kStatShare = 3,
  kSetupCount = 4,
};

/// The only things that cross the client/server boundary are parameter
/// matrices, masked statistics and counts; there is no sample-carrying type.
struct Message {
  MessageType type = MessageType::kClientUpdate;
  std::uint32_t round = 0;
  std::uint32_t client_id = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const Message&) const = default;
};

using Bytes = std::vector<std::uint8_t>;

Bytes encode(const Message& message);

/// Decodes exactly one message occupying the whole buffer.
/// Short or over-long buffers → FramingError; bad magic, version or type → ProtocolError.
Message decode(std::span<const std::uint8_t> bytes);

struct Header {
  MessageType type;
  std::uint32_t round;
  std::uint32_t client_id;
  std::uint64_t payload_len;
};

/// Validates a kHeaderSize-byte prefix (stream transports read this first).
Header decode_header(std::span<const std::uint8_t> bytes);

// Payload building blocks. Matrices: u32 rows, u32 cols, then rows·cols
// binary64 values in row-major order.
class PayloadWriter {
 public:
  PayloadWriter& u8(std::uint8_t v);
  PayloadWriter& u32(std::uint32_t v);
  PayloadWriter& u64(std::uint64_t v);
  PayloadWriter& f64(double v);
  PayloadWriter& matrix(const Matrix& m);
  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

class PayloadReader {
 public:
  explicit PayloadReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  Matrix matrix();
  /// FramingError unless every byte was consumed.
  void finish() const;

 private:
  std::span<const std::uint8_t> take(std::size_t n);
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Typed messages.
Message client_update(std::uint32_t round, std::uint32_t client_id, const Matrix& local);
Matrix parse_client_update(const Message& m);

struct Broadcast {
  Matrix global;
  bool stop = false;
};
/// Payload: matrix followed by a u8 stop flag.
Message server_broadcast(std::uint32_t round, const Matrix& global, bool stop);
Broadcast parse_server_broadcast(const Message& m);

/// Payload: Σx as d×1 matrix, Σxxᵀ as d×d matrix, u64 masked count, u64 checksum.
Message stat_share(const MaskedShare& share);
MaskedShare parse_stat_share(const Message& m);

/// Payload: u64 sample count (client→server: n_k; server→client: total n).
Message setup_count(std::uint32_t client_id, std::uint64_t count);
std::uint64_t parse_setup_count(const Message& m);

inline constexpr std::uint32_t kServerId = 0xFFFFFFFFu;

}  // namespace fbnsl::wire
