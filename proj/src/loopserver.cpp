#include "myoloop/loopserver.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include "myoloop/error.hpp"

namespace myo {

namespace {

using nlohmann::ordered_json;

constexpr double kTickMs = 1000.0 / kTickRateHz;

ordered_json vec_json(const KinematicState& k) {
  ordered_json a = ordered_json::array();
  for (double v : k) a.push_back(v);
  return a;
}

KinematicState parse_vec6(const nlohmann::json& j, const char* field) {
  require(j.is_array() && j.size() == kDof, ErrorKind::Parse,
          std::string("'") + field + "' must be an array of 6 numbers");
  KinematicState k{};
  for (std::size_t d = 0; d < kDof; ++d) {
    require(j[d].is_number(), ErrorKind::Parse, std::string("'") + field + "' must hold numbers");
    k[d] = j[d].get<double>();
    require(std::isfinite(k[d]), ErrorKind::Parse, std::string("'") + field + "' must be finite");
  }
  return k;
}

}  // namespace

// ---------------------------------------------------------------------------
// LoopCore

LoopCore::LoopCore(std::unique_ptr<TrialDecoder> decoder, ParticipantModel participant,
                   SleevePlacement placement, std::uint64_t seed)
    : decoder_(std::move(decoder)),
      participant_(std::move(participant)),
      placement_(std::move(placement)),
      idle_(participant_, placement_, emg_seed(seed)) {
  require(decoder_ != nullptr, ErrorKind::Domain, "loop needs a decoder");
  decoder_->reset();
}

std::string LoopCore::hello_frame() {
  return ordered_json{{"type", "hello"}, {"channels", kElectrodes}, {"tick_hz", 30}}.dump();
}

std::string LoopCore::error_frame(const std::string& message) {
  return ordered_json{{"type", "error"}, {"message", message}}.dump();
}

LoopOutput LoopCore::handle(const std::string& text, bool controller) {
  LoopOutput out;
  nlohmann::json msg;
  try {
    msg = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    out.reply.push_back(error_frame(std::string("malformed JSON: ") + e.what()));
    return out;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    out.reply.push_back(error_frame("message must be an object with a string 'type'"));
    return out;
  }
  const std::string type = msg["type"].get<std::string>();

  if (type == "hello") {
    out.reply.push_back(hello_frame());
    return out;
  }
  if (type != "intent" && type != "start_trial" && type != "stop") {
    out.reply.push_back(error_frame("unknown message type '" + type + "'"));
    return out;
  }
  if (!controller) {
    out.reply.push_back(error_frame("read-only connection: another client controls the loop"));
    return out;
  }

  try {
    if (type == "intent") {
      require(msg.contains("dof"), ErrorKind::Parse, "intent needs 'dof'");
      intent_ = clamp_state(parse_vec6(msg["dof"], "dof"));
      out.intent_received = true;
    } else if (type == "start_trial") {
      require(!trial_, ErrorKind::Domain, "a trial is already running");
      require(msg.contains("selected_dofs") && msg["selected_dofs"].is_array(), ErrorKind::Parse,
              "start_trial needs a 'selected_dofs' array");
      require(msg.contains("target"), ErrorKind::Parse, "start_trial needs 'target'");
      require(msg.contains("seed") && msg["seed"].is_number_unsigned(), ErrorKind::Parse,
              "start_trial needs a non-negative integer 'seed'");
      TargetSpec spec;
      for (const auto& d : msg["selected_dofs"]) {
        require(d.is_number_integer(), ErrorKind::Parse, "selected_dofs must hold integers");
        spec.selected_dofs.push_back(d.get<int>());
      }
      spec.target = parse_vec6(msg["target"], "target");
      const auto seed = msg["seed"].get<std::uint64_t>();
      trial_.emplace(*decoder_, participant_, placement_, spec, seed);
      out.broadcast.push_back(ordered_json{{"type", "trial_started"},
                                           {"selected_dofs", spec.selected_dofs},
                                           {"target", vec_json(spec.target)},
                                           {"seed", seed}}
                                  .dump());
    } else {
      require(trial_.has_value(), ErrorKind::Domain, "no trial is running");
      return finish_trial();
    }
  } catch (const Error& e) {
    out.reply.push_back(error_frame(e.what()));
  }
  return out;
}

LoopOutput LoopCore::tick(bool emit_state) {
  LoopOutput out;
  const std::uint64_t index = stats_.ticks++;
  ordered_json state{{"type", "state"}, {"tick", index}};

  if (trial_) {
    TickOutcome o;
    try {
      o = trial_->step(intent_);
    } catch (const Error& e) {
      out.broadcast.push_back(error_frame(std::string("trial aborted: ") + e.what()));
      auto done = finish_trial();
      out.broadcast.insert(out.broadcast.end(), done.broadcast.begin(), done.broadcast.end());
      return out;
    }
    decoded_ = o.decoded;
    if (emit_state) {
      state["decoded"] = vec_json(o.decoded);
      state["intent"] = vec_json(o.intent);
      state["target"] = vec_json(trial_->target().target);
      state["in_window"] = o.in_window;
      state["hold_ms"] = static_cast<double>(o.hold_run_ticks) * kTickMs;
      state["trial_ms"] = static_cast<double>(o.tick + 1) * kTickMs;
      out.state = state.dump();
    }
    if (trial_->done()) out.broadcast = finish_trial().broadcast;
    return out;
  }

  decoded_ = idle_.advance(*decoder_, intent_);
  if (emit_state) {
    state["decoded"] = vec_json(decoded_);
    state["intent"] = vec_json(intent_);
    state["target"] = vec_json(KinematicState{});
    state["in_window"] = false;
    state["hold_ms"] = 0.0;
    state["trial_ms"] = 0.0;
    out.state = state.dump();
  }
  return out;
}

LoopOutput LoopCore::finish_trial() {
  LoopOutput out;
  const TrialResult r = trial_->result();
  trial_.reset();
  decoder_->reset();
  if (!r.partial) {
    ++stats_.trials_completed;
    stats_.total_hold_s += r.hold_duration_s;
  }
  const double mean = stats_.trials_completed
                          ? stats_.total_hold_s / static_cast<double>(stats_.trials_completed)
                          : 0.0;
  out.broadcast.push_back(ordered_json{{"type", "trial_done"},
                                       {"hold_duration_s", r.hold_duration_s},
                                       {"partial", r.partial},
                                       {"ticks", r.decoded.size()},
                                       {"seed", r.seed},
                                       {"trials_completed", stats_.trials_completed},
                                       {"mean_hold_s", mean}}
                              .dump());
  return out;
}

// ---------------------------------------------------------------------------
// LoopServer

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class Session;

struct Inbound {
  std::uint64_t client = 0;
  bool controller = false;
  std::string text;
};

}  // namespace

struct detail::LoopServerImpl {
  LoopServerImpl(LoopCore c, const ServerOptions& o) : core(std::move(c)), options(o), acceptor(ioc) {}

  void accept();
  void attach(const std::shared_ptr<Session>& s);
  void detach(std::uint64_t id);
  void push_inbound(Inbound msg);
  void dispatch(std::uint64_t client, LoopOutput out);
  void tick_loop();

  // Owned by the tick thread once run() starts.
  LoopCore core;
  ServerOptions options;

  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::optional<asio::signal_set> signals;

  // io-thread state
  std::map<std::uint64_t, std::weak_ptr<Session>> sessions;
  std::optional<std::uint64_t> controller;
  std::uint64_t next_id = 1;

  // Mailbox from the connections to the tick loop.
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Inbound> inbox;
  std::atomic<bool> stopping{false};
};

namespace {

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, detail::LoopServerImpl& server)
      : stream_(std::move(socket)), server_(server) {}

  std::uint64_t id = 0;
  bool controller = false;

  void start() {
    http::async_read(stream_, buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       self->on_request(ec);
                     });
  }

  void send(std::shared_ptr<const std::string> frame, bool droppable) {
    if (!ws_) return;
    if (droppable && queue_.size() >= server_.options.max_queued_frames) return;
    queue_.push_back(std::move(frame));
    if (queue_.size() == 1) write_next();
  }

  void close() {
    if (ws_) {
      beast::error_code ec;
      beast::get_lowest_layer(*ws_).socket().close(ec);
    } else {
      beast::error_code ec;
      stream_.socket().close(ec);
    }
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return;
    if (!websocket::is_upgrade(request_) || request_.target() != "/ws") {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found,
                                                                     request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "myoloop loop server: open a websocket at /ws\n";
      res->prepare_payload();
      res->keep_alive(false);
      http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      });
      return;
    }
    stream_.expires_never();
    ws_.emplace(std::move(stream_));
    ws_->set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_->async_accept(request_, [self = shared_from_this()](beast::error_code ec2) {
      if (ec2) return;
      self->server_.attach(self);
      self->read_next();
    });
  }

  void read_next() {
    ws_->async_read(read_buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->server_.detach(self->id);
        return;
      }
      std::string text = beast::buffers_to_string(self->read_buffer_.data());
      self->read_buffer_.consume(self->read_buffer_.size());
      self->server_.push_inbound({self->id, self->controller, std::move(text)});
      self->read_next();
    });
  }

  void write_next() {
    ws_->text(true);
    ws_->async_write(asio::buffer(*queue_.front()),
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       self->queue_.pop_front();
                       if (!self->queue_.empty()) self->write_next();
                     });
  }

  beast::tcp_stream stream_;
  std::optional<websocket::stream<beast::tcp_stream>> ws_;
  beast::flat_buffer buffer_, read_buffer_;
  http::request<http::string_body> request_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  detail::LoopServerImpl& server_;
};

}  // namespace

void detail::LoopServerImpl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<Session>(std::move(socket), *this)->start();
    accept();
  });
}

void detail::LoopServerImpl::attach(const std::shared_ptr<Session>& s) {
  s->id = next_id++;
  s->controller = !controller.has_value();
  if (s->controller) controller = s->id;
  sessions[s->id] = s;
  s->send(std::make_shared<const std::string>(LoopCore::hello_frame()), false);
  if (!s->controller) {
    const std::string notice =
        ordered_json{{"type", "notice"},
                     {"role", "observer"},
                     {"message", "another client controls the loop; this connection is read-only"}}
            .dump();
    s->send(std::make_shared<const std::string>(notice), false);
  }
}

void detail::LoopServerImpl::detach(std::uint64_t id) {
  sessions.erase(id);
  if (controller == id) controller.reset();
}

void detail::LoopServerImpl::push_inbound(Inbound msg) {
  {
    std::lock_guard lock(mu);
    inbox.push_back(std::move(msg));
  }
  cv.notify_one();
}

void detail::LoopServerImpl::dispatch(std::uint64_t client, LoopOutput out) {
  if (out.reply.empty() && out.broadcast.empty() && !out.state) return;
  asio::post(ioc, [this, client, out = std::move(out)] {
    if (!out.reply.empty()) {
      if (auto it = sessions.find(client); it != sessions.end()) {
        if (auto s = it->second.lock())
          for (const auto& f : out.reply) s->send(std::make_shared<const std::string>(f), false);
      }
    }
    std::shared_ptr<const std::string> state;
    if (out.state) state = std::make_shared<const std::string>(*out.state);
    std::vector<std::shared_ptr<const std::string>> frames;
    for (const auto& f : out.broadcast) frames.push_back(std::make_shared<const std::string>(f));
    for (auto& [id, weak] : sessions) {
      auto s = weak.lock();
      if (!s) continue;
      if (state) s->send(state, true);
      for (const auto& f : frames) s->send(f, false);
    }
  });
}

void detail::LoopServerImpl::tick_loop() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(1.0 / kTickRateHz));
  auto deadline = clock::now() + period;

  while (!stopping.load()) {
    std::deque<Inbound> batch;
    {
      std::unique_lock lock(mu);
      if (options.lockstep) {
        cv.wait(lock, [&] { return stopping.load() || !inbox.empty(); });
      } else {
        cv.wait_until(lock, deadline, [&] { return stopping.load(); });
      }
      if (stopping.load()) break;
      batch.swap(inbox);
    }

    for (auto& msg : batch) {
      LoopOutput out = core.handle(msg.text, msg.controller);
      const bool advance = options.lockstep && out.intent_received;
      dispatch(msg.client, std::move(out));
      if (advance) dispatch(0, core.tick(true));
    }
    if (options.lockstep) continue;

    // Running more than a full period late means this tick's frame would be
    // stale on arrival; keep the state update but skip the send.
    const bool late = clock::now() > deadline + period;
    dispatch(0, core.tick(!late));
    deadline += period;
  }
}

LoopServer::LoopServer(LoopCore core, const ServerOptions& options)
    : impl_(std::make_unique<detail::LoopServerImpl>(std::move(core), options)) {
  try {
    const tcp::endpoint ep(asio::ip::make_address(options.host), options.port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen();
  } catch (const boost::system::system_error& e) {
    fail(ErrorKind::Io, "cannot listen on " + options.host + ":" + std::to_string(options.port) +
                            ": " + e.what());
  }
  if (options.handle_signals) {
    impl_->signals.emplace(impl_->ioc, SIGINT, SIGTERM);
    impl_->signals->async_wait([this](beast::error_code ec, int) {
      if (!ec) stop();
    });
  }
}

LoopServer::~LoopServer() { stop(); }

std::uint16_t LoopServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void LoopServer::run() {
  impl_->accept();
  std::thread ticker([this] { impl_->tick_loop(); });
  impl_->ioc.run();
  stop();
  ticker.join();
}

void LoopServer::stop() {
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->stopping.exchange(true)) return;
  }
  impl_->cv.notify_all();
  asio::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    if (impl->signals) impl->signals->cancel(ec);
    for (auto& [id, weak] : impl->sessions)
      if (auto s = weak.lock()) s->close();
    impl->sessions.clear();
    impl->ioc.stop();
  });
}

}  // namespace myo
