#include <doctest.h>

#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include "myoloop/dataset.hpp"
#include "myoloop/error.hpp"
#include "myoloop/loopserver.hpp"

using namespace myo;
using nlohmann::json;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

struct World {
  ParticipantModel participant = make_participant(ParticipantConfig{}, 41);
  SleevePlacement placement = don_sleeve(participant, DonOptions{}, 42);
  KalmanParams kf;

  World() {
    SeriesOptions o;
    o.sessions = 2;
    o.repetitions = 2;
    const auto sessions = record_series(participant, o, 43);
    kf = fit_feature_kalman(accumulate(sessions));
  }

  LoopCore core(std::uint64_t seed = 1) const {
    return LoopCore(std::make_unique<KalmanFeatureDecoder>(kf), participant, placement, seed);
  }
};

const World& world() {
  static const World w;
  return w;
}

json parse(const std::string& s) { return json::parse(s); }

std::vector<KinematicState> scripted_intent(const TargetSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.05);
  std::vector<KinematicState> out;
  KinematicState u{};
  for (std::size_t t = 0; t < kTrialTicks; ++t) {
    for (std::size_t d = 0; d < kDof; ++d) u[d] += 0.08 * (spec.target[d] - u[d]) + n(rng);
    out.push_back(u);
  }
  return out;
}

json start_message(const TargetSpec& spec, std::uint64_t seed) {
  return {{"type", "start_trial"},
          {"selected_dofs", spec.selected_dofs},
          {"target", spec.target},
          {"seed", seed}};
}

class Client {
 public:
  explicit Client(std::uint16_t port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/ws");
  }
  void send(const json& j) { ws_.write(asio::buffer(j.dump())); }
  json read() {
    beast::flat_buffer b;
    ws_.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  }
  json read_type(const std::string& type) {
    for (;;) {
      auto j = read();
      if (j["type"] == type) return j;
    }
  }
  void close() { ws_.close(websocket::close_code::normal); }

 private:
  asio::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

struct RunningServer {
  LoopServer server;
  std::thread thread;
  RunningServer(LoopCore core, const ServerOptions& o) : server(std::move(core), o) {
    thread = std::thread([this] { server.run(); });
  }
  ~RunningServer() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("core protocol") {
  auto core = world().core();
  SUBCASE("hello and errors") {
    CHECK(parse(core.handle("{\"type\":\"hello\"}", true).reply.at(0)) == parse(LoopCore::hello_frame()));
    CHECK(parse(LoopCore::hello_frame())["channels"] == 32);
    CHECK(parse(core.handle("{not json", true).reply.at(0))["type"] == "error");
    CHECK(parse(core.handle("{\"x\":1}", true).reply.at(0))["type"] == "error");
    CHECK(parse(core.handle("{\"type\":\"dance\"}", true).reply.at(0))["type"] == "error");
    CHECK(parse(core.handle("{\"type\":\"intent\",\"dof\":[1,2]}", true).reply.at(0))["type"] == "error");
    CHECK(parse(core.handle("{\"type\":\"stop\"}", true).reply.at(0))["type"] == "error");
  }
  SUBCASE("observers are read-only") {
    const auto out = core.handle("{\"type\":\"intent\",\"dof\":[0.5,0,0,0,0,0]}", false);
    CHECK(parse(out.reply.at(0))["type"] == "error");
    CHECK(core.intent() == KinematicState{});
  }
  SUBCASE("intent is clamped and held between messages") {
    const auto out = core.handle("{\"type\":\"intent\",\"dof\":[2,-3,0.25,0,0,0]}", true);
    CHECK(out.intent_received);
    CHECK(core.intent() == KinematicState{1, -1, 0.25, 0, 0, 0});
    for (std::uint64_t t = 0; t < 5; ++t) {
      const auto s = parse(*core.tick().state);
      CHECK(s["tick"] == t);
      CHECK(s["intent"] == json{1.0, -1.0, 0.25, 0.0, 0.0, 0.0});
    }
  }
  SUBCASE("rest intent decodes near rest") {
    for (int t = 0; t < 150; ++t) {
      const auto s = parse(*core.tick().state);
      if (t < 45) continue;
      for (double v : s["decoded"].get<std::vector<double>>()) CHECK(std::abs(v) < 0.2);
    }
  }
  SUBCASE("trial lifecycle") {
    TargetSpec spec;
    spec.selected_dofs = {1};
    spec.target[1] = 0.5;
    const auto started = core.handle(start_message(spec, 9).dump(), true);
    CHECK(parse(started.broadcast.at(0))["type"] == "trial_started");
    CHECK(core.trial_active());
    CHECK(parse(core.handle(start_message(spec, 9).dump(), true).reply.at(0))["type"] == "error");
    for (std::size_t t = 0; t + 1 < kTrialTicks; ++t) {
      const auto out = core.tick();
      REQUIRE(out.broadcast.empty());
      const auto s = parse(*out.state);
      CHECK(s["trial_ms"].get<double>() == doctest::Approx((t + 1) * 1000.0 / 30));
    }
    const auto last = core.tick();
    const auto done = parse(last.broadcast.at(0));
    CHECK(done["type"] == "trial_done");
    CHECK(done["partial"] == false);
    CHECK(done["ticks"] == kTrialTicks);
    CHECK(!core.trial_active());
    CHECK(core.stats().trials_completed == 1);
  }
  SUBCASE("stop mid-trial flags a partial result") {
    TargetSpec spec;
    spec.selected_dofs = {0};
    spec.target[0] = -0.4;
    core.handle(start_message(spec, 2).dump(), true);
    for (int t = 0; t < 30; ++t) core.tick();
    const auto out = core.handle("{\"type\":\"stop\"}", true);
    const auto done = parse(out.broadcast.at(0));
    CHECK(done["partial"] == true);
    CHECK(done["ticks"] == 30);
    CHECK(core.stats().trials_completed == 0);
  }
}

TEST_CASE("core replay matches batch external mode bit for bit") {
  const auto& w = world();
  auto core = w.core();
  TargetSpec spec;
  spec.selected_dofs = {2, 4};
  spec.target[2] = 0.6;
  spec.target[4] = -0.35;
  const auto intents = scripted_intent(spec, 5);

  KalmanFeatureDecoder dec(w.kf);
  TrialOptions ext;
  ext.source = IntentSource::External;
  ext.external_intent = intents;
  ext.seed = 77;
  const auto batch = run_trial(dec, w.participant, w.placement, spec, ext);

  core.handle(start_message(spec, 77).dump(), true);
  json done;
  for (std::size_t t = 0; t < kTrialTicks; ++t) {
    core.handle(json{{"type", "intent"}, {"dof", intents[t]}}.dump(), true);
    const auto out = core.tick();
    const auto s = parse(*out.state);
    REQUIRE(s["decoded"].get<KinematicState>() == batch.decoded[t]);
    if (!out.broadcast.empty()) done = parse(out.broadcast[0]);
  }
  CHECK(done["hold_duration_s"].get<double>() == batch.hold_duration_s);
}

TEST_CASE("websocket server") {
  const auto& w = world();
  ServerOptions opt;
  opt.lockstep = true;
  RunningServer rs(w.core(), opt);
  const auto port = rs.server.port();
  REQUIRE(port != 0);

  Client a(port);
  CHECK(a.read()["type"] == "hello");

  SUBCASE("second client is an observer") {
    Client b(port);
    CHECK(b.read()["type"] == "hello");
    const auto notice = b.read();
    CHECK(notice["type"] == "notice");
    CHECK(notice["role"] == "observer");
    b.send({{"type", "intent"}, {"dof", {0.1, 0, 0, 0, 0, 0}}});
    CHECK(b.read_type("error")["message"].get<std::string>().find("read-only") != std::string::npos);
    b.send({{"type", "hello"}});
    CHECK(b.read()["type"] == "hello");
  }

  SUBCASE("malformed frames get error replies") {
    a.send("not an object");
    CHECK(a.read()["type"] == "error");
  }

  SUBCASE("wire replay matches batch external mode") {
    TargetSpec spec;
    spec.selected_dofs = {3};
    spec.target[3] = 0.45;
    const auto intents = scripted_intent(spec, 8);
    KalmanFeatureDecoder dec(w.kf);
    TrialOptions ext;
    ext.source = IntentSource::External;
    ext.external_intent = intents;
    ext.seed = 123;
    const auto batch = run_trial(dec, w.participant, w.placement, spec, ext);

    a.send(start_message(spec, 123));
    CHECK(a.read_type("trial_started")["seed"] == 123);
    std::vector<KinematicState> decoded;
    std::uint64_t last_tick = 0;
    for (std::size_t t = 0; t < kTrialTicks; ++t) {
      a.send({{"type", "intent"}, {"dof", intents[t]}});
      const auto s = a.read_type("state");
      if (t > 0) CHECK(s["tick"].get<std::uint64_t>() == last_tick + 1);
      last_tick = s["tick"].get<std::uint64_t>();
      decoded.push_back(s["decoded"].get<KinematicState>());
    }
    const auto done = a.read_type("trial_done");
    CHECK(decoded == batch.decoded);
    CHECK(done["hold_duration_s"].get<double>() == batch.hold_duration_s);
    CHECK(done["partial"] == false);
  }

  SUBCASE("stop mid-trial") {
    TargetSpec spec;
    spec.selected_dofs = {0};
    spec.target[0] = 0.5;
    a.send(start_message(spec, 1));
    a.read_type("trial_started");
    for (int t = 0; t < 10; ++t) {
      a.send({{"type", "intent"}, {"dof", {0.5, 0, 0, 0, 0, 0}}});
      a.read_type("state");
    }
    a.send({{"type", "stop"}});
    const auto done = a.read_type("trial_done");
    CHECK(done["partial"] == true);
    CHECK(done["ticks"] == 10);
  }

  SUBCASE("plain HTTP is refused") {
    asio::io_context ioc;
    beast::tcp_stream s(ioc);
    tcp::resolver r(ioc);
    s.connect(r.resolve("127.0.0.1", std::to_string(port)));
    beast::http::request<beast::http::empty_body> req{beast::http::verb::get, "/", 11};
    req.set(beast::http::field::host, "127.0.0.1");
    beast::http::write(s, req);
    beast::flat_buffer b;
    beast::http::response<beast::http::string_body> res;
    beast::http::read(s, b, res);
    CHECK(res.result() == beast::http::status::not_found);
  }
  a.close();
}

TEST_CASE("real-time server ticks at 30 Hz") {
  ServerOptions opt;
  RunningServer rs(world().core(), opt);
  Client a(rs.server.port());
  CHECK(a.read()["type"] == "hello");
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t first = 0, last = 0;
  for (int i = 0; i < 30; ++i) {
    const auto s = a.read_type("state");
    if (i == 0) first = s["tick"].get<std::uint64_t>();
    else CHECK(s["tick"].get<std::uint64_t>() > last);
    last = s["tick"].get<std::uint64_t>();
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed > 0.8);
  CHECK(elapsed < 3.0);
  CHECK(last - first >= 29);
  a.close();
}

TEST_CASE("binding a busy port fails") {
  ServerOptions opt;
  LoopServer first(world().core(), opt);
  opt.port = first.port();
  CHECK_THROWS_AS(LoopServer(world().core(), opt), Error);
}
