#include "fbnsl/wire.hpp"

#include <bit>
#include <limits>

namespace fbnsl::wire {

namespace {

template <typename T>
void put_le(Bytes& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[i]) << (8 * i);
  return v;
}

void expect_type(const Message& m, MessageType type, const char* what) {
  if (m.type != type) {
    throw ProtocolError(std::string("expected ") + what + " message, got type " +
                        std::to_string(static_cast<int>(m.type)));
  }
}

}  // namespace

Bytes encode(const Message& message) {
  Bytes out;
  out.reserve(kHeaderSize + message.payload.size());
  for (std::uint8_t b : kMagic) out.push_back(b);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(message.type));
  put_le<std::uint32_t>(out, message.round);
  put_le<std::uint32_t>(out, message.client_id);
  put_le<std::uint64_t>(out, message.payload.size());
  out.insert(out.end(), message.payload.begin(), message.payload.end());
  return out;
}

Header decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw FramingError("truncated header: " + std::to_string(bytes.size()) + " of " +
                       std::to_string(kHeaderSize) + " bytes");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw ProtocolError("bad magic");
  }
  if (bytes[4] != kVersion) {
    throw ProtocolError("unsupported wire version " + std::to_string(bytes[4]));
  }
  const std::uint8_t type = bytes[5];
  if (type < 1 || type > 4) throw ProtocolError("unknown message type " + std::to_string(type));
  return {static_cast<MessageType>(type), get_le<std::uint32_t>(bytes.subspan(6)),
          get_le<std::uint32_t>(bytes.subspan(10)), get_le<std::uint64_t>(bytes.subspan(14))};
}

Message decode(std::span<const std::uint8_t> bytes) {
  const Header h = decode_header(bytes);
  const std::size_t available = bytes.size() - kHeaderSize;
  if (h.payload_len != available) {
    throw FramingError("payload length " + std::to_string(h.payload_len) + " but " +
                       std::to_string(available) + " bytes follow the header");
  }
  Message m;
  m.type = h.type;
  m.round = h.round;
  m.client_id = h.client_id;
  m.payload.assign(bytes.begin() + kHeaderSize, bytes.end());
  return m;
}

PayloadWriter& PayloadWriter::u8(std::uint8_t v) {
  bytes_.push_back(v);
  return *this;
}
PayloadWriter& PayloadWriter::u32(std::uint32_t v) {
  put_le(bytes_, v);
  return *this;
}
PayloadWriter& PayloadWriter::u64(std::uint64_t v) {
  put_le(bytes_, v);
  return *this;
}
PayloadWriter& PayloadWriter::f64(double v) {
  put_le(bytes_, std::bit_cast<std::uint64_t>(v));
  return *this;
}
PayloadWriter& PayloadWriter::matrix(const Matrix& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ArgumentError("matrix too large for the wire format");
  }
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  return *this;
}

std::span<const std::uint8_t> PayloadReader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) {
    throw FramingError("payload truncated: need " + std::to_string(n) + " bytes at offset " +
                       std::to_string(pos_));
  }
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t PayloadReader::u8() { return take(1)[0]; }
std::uint32_t PayloadReader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t PayloadReader::u64() { return get_le<std::uint64_t>(take(8)); }
double PayloadReader::f64() { return std::bit_cast<double>(u64()); }

Matrix PayloadReader::matrix() {
  const std::uint32_t rows = u32();
  const std::uint32_t cols = u32();
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  if (count > (bytes_.size() - pos_) / 8) {
    throw FramingError("matrix of " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " exceeds the remaining payload");
  }
  Matrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f64();
  }
  return m;
}

void PayloadReader::finish() const {
  if (pos_ != bytes_.size()) {
    throw FramingError(std::to_string(bytes_.size() - pos_) + " trailing payload bytes");
  }
}

Message client_update(std::uint32_t round, std::uint32_t client_id, const Matrix& local) {
  return {MessageType::kClientUpdate, round, client_id, PayloadWriter().matrix(local).take()};
}

Matrix parse_client_update(const Message& m) {
  expect_type(m, MessageType::kClientUpdate, "ClientUpdate");
  PayloadReader r(m.payload);
  Matrix out = r.matrix();
  r.finish();
  return out;
}

Message server_broadcast(std::uint32_t round, const Matrix& global, bool stop) {
  return {MessageType::kServerBroadcast, round, kServerId,
          PayloadWriter().matrix(global).u8(stop ? 1 : 0).take()};
}

Broadcast parse_server_broadcast(const Message& m) {
  expect_type(m, MessageType::kServerBroadcast, "ServerBroadcast");
  PayloadReader r(m.payload);
  Broadcast b;
  b.global = r.matrix();
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw ProtocolError("invalid stop flag " + std::to_string(flag));
  b.stop = flag == 1;
  r.finish();
  return b;
}

Message stat_share(const MaskedShare& share) {
  PayloadWriter w;
  w.matrix(share.sum_x).matrix(share.sum_xxT).u64(share.count).u64(share.checksum);
  return {MessageType::kStatShare, share.round, share.client_id, w.take()};
}

MaskedShare parse_stat_share(const Message& m) {
  expect_type(m, MessageType::kStatShare, "StatShare");
  PayloadReader r(m.payload);
  MaskedShare s;
  s.client_id = m.client_id;
  s.round = m.round;
  const Matrix sum_x = r.matrix();
  if (sum_x.cols() != 1) throw ProtocolError("StatShare: sum_x must be a column");
  s.sum_x = sum_x.col(0);
  s.sum_xxT = r.matrix();
  if (s.sum_xxT.rows() != sum_x.rows() || s.sum_xxT.cols() != sum_x.rows()) {
    throw ProtocolError("StatShare: sum_xxT shape does not match sum_x");
  }
  s.count = r.u64();
  s.checksum = r.u64();
  r.finish();
  return s;
}

Message setup_count(std::uint32_t client_id, std::uint64_t count) {
  return {MessageType::kSetupCount, 0, client_id, PayloadWriter().u64(count).take()};
}

std::uint64_t parse_setup_count(const Message& m) {
  expect_type(m, MessageType::kSetupCount, "SetupCount");
  PayloadReader r(m.payload);
  const std::uint64_t n = r.u64();
  r.finish();
  return n;
}

}  // namespace fbnsl::wire
