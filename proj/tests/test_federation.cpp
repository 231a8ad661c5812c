#include <doctest.h>

#include <sstream>
#include <thread>

#include "fbnsl/error.hpp"
#include "fbnsl/orchestrate.hpp"
#include "fbnsl/wire.hpp"

using namespace fbnsl;

namespace {

std::vector<ClientDataset> centered_parts(int d, int n, int k, std::uint64_t seed) {
  const Rng rng(seed);
  const DirectedGraph g = sample_er_dag(d, d, rng.split(0));
  auto parts = partition(simulate(sample_linear_sem(g, rng.split(1)), n, rng.split(2)), k);
  for (auto& p : parts) p.samples = center(p.samples);
  return parts;
}

struct Federation {
  std::unique_ptr<ConsensusServer> server;
  std::vector<std::unique_ptr<ConsensusClient>> clients;
};

Federation linear_federation(const std::vector<ClientDataset>& parts, const AdmmConfig& config) {
  Federation f;
  f.server = make_linear_server(static_cast<int>(parts.size()),
                                static_cast<int>(parts[0].samples.cols()), config);
  for (const auto& p : parts) f.clients.push_back(make_linear_client(p.client_id, p.samples, config));
  return f;
}

}  // namespace

TEST_CASE("codec round trip") {
  Rng rng(1);
  Matrix m(5, 5);
  for (Eigen::Index i = 0; i < 25; ++i) m.data()[i] = rng.normal();
  const wire::Message msg = wire::client_update(7, 3, m);
  const wire::Bytes bytes = wire::encode(msg);
  CHECK(bytes.size() == wire::kHeaderSize + 8 + 25 * 8);
  const wire::Message back = wire::decode(bytes);
  CHECK(back == msg);
  CHECK(wire::parse_client_update(back) == m);

  const auto b = wire::parse_server_broadcast(wire::decode(wire::encode(wire::server_broadcast(4, m, true))));
  CHECK(b.global == m);
  CHECK(b.stop);
  CHECK(wire::parse_setup_count(wire::decode(wire::encode(wire::setup_count(2, 1234)))) == 1234);
}

TEST_CASE("codec byte layout") {
  const wire::Message msg = wire::client_update(1, 2, Matrix::Constant(1, 1, 2.0));
  const wire::Bytes bytes = wire::encode(msg);
  const wire::Bytes header = {'F', 'B', 'N', 'L', 1, 1, 1, 0, 0, 0, 2, 0, 0, 0, 16, 0, 0, 0, 0, 0, 0, 0};
  const wire::Bytes payload = {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0x40};
  CHECK(wire::Bytes(bytes.begin(), bytes.begin() + 22) == header);
  CHECK(wire::Bytes(bytes.begin() + 22, bytes.end()) == payload);
}

TEST_CASE("codec rejects malformed input") {
  const wire::Bytes stray = {1, 2, 3};
  CHECK_THROWS_AS(wire::decode(stray), FramingError);

  wire::Bytes good = wire::encode(wire::setup_count(0, 5));
  wire::Bytes bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(wire::decode(bad_magic), ProtocolError);
  wire::Bytes bad_version = good;
  bad_version[4] = 2;
  CHECK_THROWS_AS(wire::decode(bad_version), ProtocolError);
  wire::Bytes bad_type = good;
  bad_type[5] = 9;
  CHECK_THROWS_AS(wire::decode(bad_type), ProtocolError);
  wire::Bytes truncated(good.begin(), good.end() - 1);
  CHECK_THROWS_AS(wire::decode(truncated), FramingError);

  // A matrix header claiming more data than the payload holds.
  wire::Message huge{wire::MessageType::kClientUpdate, 1, 0,
                     wire::PayloadWriter().u32(1000).u32(1000).take()};
  CHECK_THROWS_AS(wire::parse_client_update(wire::decode(wire::encode(huge))), FramingError);
  CHECK_THROWS_AS(wire::parse_setup_count(wire::decode(wire::encode(huge))), ProtocolError);
}

TEST_CASE("codec is total on random bytes") {
  Rng rng(5);
  const wire::Bytes seed_frame = wire::encode(wire::client_update(3, 1, Matrix::Ones(2, 2)));
  for (int t = 0; t < 5000; ++t) {
    wire::Bytes b;
    if (t % 2 == 0) {
      b.resize(rng.next() % 64);
      for (auto& x : b) x = static_cast<std::uint8_t>(rng.next());
    } else {
      b = seed_frame;
      b[rng.next() % b.size()] ^= static_cast<std::uint8_t>(1 + rng.next() % 255);
      if (rng.coin()) b.resize(rng.next() % b.size());
    }
    try {
      const wire::Message m = wire::decode(b);
      switch (m.type) {
        case wire::MessageType::kClientUpdate: wire::parse_client_update(m); break;
        case wire::MessageType::kServerBroadcast: wire::parse_server_broadcast(m); break;
        case wire::MessageType::kStatShare: wire::parse_stat_share(m); break;
        case wire::MessageType::kSetupCount: wire::parse_setup_count(m); break;
      }
    } catch (const ProtocolError&) {
      // typed rejection is the expected outcome
    }
  }
}

TEST_CASE("round barrier") {
  RoundBarrier b(3, 2);
  using A = RoundBarrier::Admission;
  CHECK(b.admit(0, 3) == A::kAccepted);
  CHECK(b.admit(0, 3) == A::kDuplicate);
  CHECK(b.admit(1, 2) == A::kWrongRound);
  CHECK(b.admit(5, 3) == A::kUnknownClient);
  CHECK_FALSE(b.complete());
  CHECK(b.missing() == std::vector<std::uint32_t>{1});
  CHECK(b.admit(1, 3) == A::kAccepted);
  CHECK(b.complete());
  CHECK(b.missing().empty());
}

TEST_CASE("in-process and TCP runs give identical traces") {
  const auto parts = centered_parts(3, 60, 2, 9);
  AdmmConfig config = AdmmConfig::linear_defaults();
  config.keep_iterates = true;
  config.max_rounds = 15;

  Federation a = linear_federation(parts, config);
  FederationOptions inproc;
  orchestrate(inproc, *a.server, a.clients);

  Federation b = linear_federation(parts, config);
  FederationOptions tcp;
  tcp.transport = TransportKind::kTcp;
  orchestrate(tcp, *b.server, b.clients);

  const auto& ia = a.server->trace().iterates;
  const auto& ib = b.server->trace().iterates;
  REQUIRE(ia.size() == ib.size());
  REQUIRE(!ia.empty());
  for (std::size_t i = 0; i < ia.size(); ++i) CHECK(ia[i] == ib[i]);

  // Same as driving the roles directly.
  Federation c = linear_federation(parts, config);
  drive_consensus(*c.server, c.clients);
  CHECK(c.server->global() == a.server->global());
}

TEST_CASE("barrier holds the round until every client reports") {
  const auto parts = centered_parts(3, 30, 3, 4);
  AdmmConfig config = AdmmConfig::linear_defaults();
  config.max_rounds = 5;
  Federation f = linear_federation(parts, config);
  orchestrate({}, *f.server, f.clients);
  CHECK(f.server->round() == 5);
  CHECK(f.server->trace().rows.size() == 5);
}

TEST_CASE("duplicates are rejected and logged") {
  AdmmConfig config = AdmmConfig::linear_defaults();
  config.max_rounds = 1;
  auto server = make_linear_server(2, 2, config);
  InProcessHub hub(2);
  auto endpoint = hub.server_endpoint();
  auto c0 = hub.client_endpoint(0);
  auto c1 = hub.client_endpoint(1);

  std::ostringstream log;
  FederationOptions options;
  options.log = &log;
  options.timeout = Millis(5000);

  std::thread clients([&] {
    c0->send(wire::setup_count(0, 3));
    c0->send(wire::setup_count(0, 3));
    c1->send(wire::setup_count(1, 2));
    CHECK(wire::parse_setup_count(c0->receive(Millis(5000))) == 5);
    CHECK(wire::parse_setup_count(c1->receive(Millis(5000))) == 5);
    c0->send(wire::client_update(1, 0, Matrix::Zero(2, 2)));
    c0->send(wire::client_update(1, 0, Matrix::Ones(2, 2)));
    c1->send(wire::client_update(1, 1, Matrix::Zero(2, 2)));
    CHECK(wire::parse_server_broadcast(c0->receive(Millis(5000))).stop);
    CHECK(wire::parse_server_broadcast(c1->receive(Millis(5000))).stop);
  });
  serve_consensus(*endpoint, *server, options);
  clients.join();
  CHECK(log.str().find("rejected duplicate from client 0") != std::string::npos);
  // The first update won: both locals were zero, so W stays zero.
  CHECK(server->global().isZero());
}

TEST_CASE("a silent TCP client aborts the run with its id") {
  AdmmConfig config = AdmmConfig::linear_defaults();
  auto server = make_linear_server(2, 2, config);
  auto client = make_linear_client(0, Matrix::Zero(3, 2), config);
  TcpServerEndpoint endpoint("127.0.0.1", 0);
  const auto port = endpoint.port();
  FederationOptions options;
  options.timeout = Millis(300);

  std::thread worker([&] {
    try {
      TcpClientEndpoint ep("127.0.0.1", port, Millis(2000));
      join_consensus(ep, *client, options);
    } catch (const Error&) {
    }
  });
  std::thread silent([&] {
    TcpClientEndpoint ep("127.0.0.1", port, Millis(2000));
    std::this_thread::sleep_for(Millis(800));
  });
  endpoint.accept_clients(2, Millis(2000));
  std::string message;
  try {
    serve_consensus(endpoint, *server, options);
  } catch (const TimeoutError& e) {
    message = e.what();
  }
  endpoint.close();
  worker.join();
  silent.join();
  CHECK(message.find("client 1") != std::string::npos);
}

TEST_CASE("single client degenerates to a local loop") {
  const auto parts = centered_parts(4, 200, 1, 2);
  const AdmmConfig config = AdmmConfig::linear_defaults();
  Federation f = linear_federation(parts, config);
  orchestrate({}, *f.server, f.clients);
  const AdmmResult direct = run_admm(parts, config);
  CHECK(f.server->global() == direct.w);
}

TEST_CASE("shares travel over both transports") {
  std::vector<MaskedShare> shares;
  for (int k = 0; k < 3; ++k) {
    const LocalStatistics s = local_stats(Matrix::Random(4, 2));
    shares.push_back(mask_statistics(s, k, pairwise_seeds(99, 3, k)));
  }
  for (TransportKind kind : {TransportKind::kInProcess, TransportKind::kTcp}) {
    FederationOptions options;
    options.transport = kind;
    auto received = exchange_shares(options, shares);
    REQUIRE(received.size() == 3);
    std::sort(received.begin(), received.end(),
              [](const MaskedShare& a, const MaskedShare& b) { return a.client_id < b.client_id; });
    for (int k = 0; k < 3; ++k) {
      CHECK(received[k].sum_x == shares[k].sum_x);
      CHECK(received[k].sum_xxT == shares[k].sum_xxT);
      CHECK(received[k].checksum == shares[k].checksum);
    }
    CHECK(secure_sum(received, 3).count == 12);
  }
}

TEST_CASE("bind address parsing") {
  CHECK(parse_host_port("10.0.0.1:8080") == std::pair<std::string, std::uint16_t>{"10.0.0.1", 8080});
  CHECK_THROWS_AS(parse_host_port("nocolon"), ArgumentError);
  CHECK_THROWS_AS(parse_host_port("h:99999"), ArgumentError);
}
