#include "hpa/bridge.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include "hpa/metrics.hpp"

namespace hpa {

using Json = nlohmann::ordered_json;

namespace {

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const Json& j, const char* key) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::kInvalidArgument, std::string("missing field '") + key + "'");
  }
  const Json& a = j.at(key);
  if (!a.is_array() || a.size() != 3) {
    throw Error(ErrorCode::kInvalidArgument, std::string("'") + key + "' must be a 3-vector");
  }
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!a[i].is_number()) {
      throw Error(ErrorCode::kInvalidArgument, std::string("'") + key + "' must be numeric");
    }
    v(i) = a[i].get<double>();
  }
  if (!v.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, std::string("'") + key + "' not finite");
  }
  return v;
}

Json parse_object(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "message must be a JSON object");
  return j;
}

}  // namespace

TelemetryFrame make_frame(const TraceRecord& rec) {
  TelemetryFrame f;
  f.time = rec.time;
  f.quad_pos = rec.truth.quad_pos;
  f.quad_att = rec.truth.attitude;
  f.load_pos = rec.truth.load_pos;
  f.cable_dir = cable_state(rec.truth).direction;
  f.mode = rec.detected_mode;
  f.load_cam = rec.payload_camera;
  f.thrust = rec.command.thrust;
  f.rates = rec.command.body_rates;
  f.in_fov = in_fov(rec.payload_camera, kDefaultFovHalfX, kDefaultFovHalfY);
  return f;
}

std::string frame_to_json(const TelemetryFrame& f) {
  Json j;
  j["type"] = "telemetry";
  j["schema"] = kSchemaVersion;
  j["time"] = f.time;
  j["quad_pos"] = vec_json(f.quad_pos);
  j["quad_att"] = Json::array({f.quad_att.w(), f.quad_att.x(), f.quad_att.y(), f.quad_att.z()});
  j["load_pos"] = vec_json(f.load_pos);
  j["cable_dir"] = vec_json(f.cable_dir);
  j["mode"] = to_string(f.mode);
  j["load_cam"] = vec_json(f.load_cam);
  j["thrust"] = f.thrust;
  j["rates"] = vec_json(f.rates);
  j["in_fov"] = f.in_fov;
  return j.dump();
}

TelemetryFrame frame_from_json(const std::string& text) {
  const Json j = parse_object(text);
  try {
    if (j.at("type") != "telemetry") throw Error(ErrorCode::kInvalidArgument, "not a telemetry frame");
    if (j.at("schema") != kSchemaVersion) throw Error(ErrorCode::kInvalidArgument, "schema mismatch");
    TelemetryFrame f;
    f.time = j.at("time").get<double>();
    f.quad_pos = vec_from(j, "quad_pos");
    const Json& q = j.at("quad_att");
    f.quad_att = Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                      q.at(3).get<double>());
    f.load_pos = vec_from(j, "load_pos");
    f.cable_dir = vec_from(j, "cable_dir");
    const std::string mode = j.at("mode").get<std::string>();
    if (mode != "taut" && mode != "slack") throw Error(ErrorCode::kInvalidArgument, "bad mode");
    f.mode = mode == "taut" ? HybridMode::kTaut : HybridMode::kSlack;
    f.load_cam = vec_from(j, "load_cam");
    f.thrust = j.at("thrust").get<double>();
    f.rates = vec_from(j, "rates");
    f.in_fov = j.at("in_fov").get<bool>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad telemetry frame: ") + e.what());
  }
}

std::string hello_message() {
  Json j;
  j["type"] = "hello";
  j["schema"] = kSchemaVersion;
  return j.dump();
}

const char* to_string(CommandKind k) {
  switch (k) {
    case CommandKind::kGrab: return "grab";
    case CommandKind::kMoveTo: return "move_to";
    case CommandKind::kRelease: return "release";
    case CommandKind::kImpulse: return "impulse";
    case CommandKind::kSetReference: return "set_reference";
    case CommandKind::kSelectController: return "select_controller";
  }
  return "unknown";
}

OperatorCommand parse_command(const std::string& text) {
  const Json j = parse_object(text);
  if (!j.contains("type") || !j.at("type").is_string()) {
    throw Error(ErrorCode::kInvalidArgument, "missing command type");
  }
  const std::string type = j.at("type").get<std::string>();
  OperatorCommand c;
  if (j.contains("timestamp")) {
    if (!j.at("timestamp").is_number()) throw Error(ErrorCode::kInvalidArgument, "timestamp must be numeric");
    c.timestamp = j.at("timestamp").get<double>();
  }
  if (j.contains("id")) {
    const Json& id = j.at("id");
    c.id = id.is_string() ? id.get<std::string>() : id.dump();
  }
  if (type == "grab") {
    c.kind = CommandKind::kGrab;
  } else if (type == "move_to") {
    c.kind = CommandKind::kMoveTo;
    c.vector = vec_from(j, "position");
    if (j.contains("duration")) {
      if (!j.at("duration").is_number()) throw Error(ErrorCode::kInvalidArgument, "duration must be numeric");
      c.duration = j.at("duration").get<double>();
      if (!(c.duration > 0.0 && c.duration < 60.0)) {
        throw Error(ErrorCode::kInvalidArgument, "duration must be in (0, 60) s");
      }
    }
  } else if (type == "release") {
    c.kind = CommandKind::kRelease;
  } else if (type == "impulse") {
    c.kind = CommandKind::kImpulse;
    c.vector = vec_from(j, "impulse");
    if (c.vector.norm() > 5.0) throw Error(ErrorCode::kInvalidArgument, "impulse larger than 5 N*s");
    if (j.contains("target")) {
      const std::string t = j.at("target").is_string() ? j.at("target").get<std::string>() : "";
      if (t == "load") {
        c.target = DisturbanceTarget::kLoad;
      } else if (t == "quad") {
        c.target = DisturbanceTarget::kQuad;
      } else {
        throw Error(ErrorCode::kInvalidArgument, "target must be 'load' or 'quad'");
      }
    }
  } else if (type == "set_reference") {
    c.kind = CommandKind::kSetReference;
    c.vector = vec_from(j, "position");
  } else if (type == "select_controller") {
    c.kind = CommandKind::kSelectController;
    if (!j.contains("controller") || !j.at("controller").is_string()) {
      throw Error(ErrorCode::kInvalidArgument, "missing controller name");
    }
    try {
      c.controller = controller_from_string(j.at("controller").get<std::string>());
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what());
    }
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown command type '" + type + "'");
  }
  return c;
}

std::string command_to_json(const OperatorCommand& c) {
  Json j;
  j["type"] = to_string(c.kind);
  switch (c.kind) {
    case CommandKind::kMoveTo:
      j["position"] = vec_json(c.vector);
      j["duration"] = c.duration;
      break;
    case CommandKind::kImpulse:
      j["impulse"] = vec_json(c.vector);
      j["target"] = c.target == DisturbanceTarget::kLoad ? "load" : "quad";
      break;
    case CommandKind::kSetReference:
      j["position"] = vec_json(c.vector);
      break;
    case CommandKind::kSelectController:
      j["controller"] = to_string(c.controller);
      break;
    default:
      break;
  }
  j["timestamp"] = c.timestamp;
  if (!c.id.empty()) j["id"] = c.id;
  return j.dump();
}

void apply_command(Simulation& sim, const OperatorCommand& c) {
  switch (c.kind) {
    case CommandKind::kGrab: sim.grab(); break;
    case CommandKind::kMoveTo: sim.move_to(c.vector, c.duration); break;
    case CommandKind::kRelease: sim.release(); break;
    case CommandKind::kImpulse: sim.impulse(c.target, c.vector); break;
    case CommandKind::kSetReference: sim.set_reference(c.vector); break;
    case CommandKind::kSelectController: sim.select_controller(c.controller); break;
  }
}

// ---------------------------------------------------------------------------

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

using Message = std::shared_ptr<const std::string>;

class Session;

struct Hub {
  virtual ~Hub() = default;
  virtual void joined(const std::shared_ptr<Session>& s) = 0;
  virtual void left(Session* s) = 0;
  virtual void received(const std::shared_ptr<Session>& s, std::string text) = 0;
};

// Lives on the network thread only.
class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->open_ = true;
      self->hub_.joined(self);
      self->send(std::make_shared<const std::string>(hello_message()));
      self->read();
    });
  }

  void send(Message m, bool droppable = false) {
    if (!open_) return;
    // A slow client loses telemetry, never replies.
    if (droppable && queue_.size() >= 32) return;
    queue_.push_back(std::move(m));
    if (queue_.size() == 1) write();
  }

  void close() {
    if (!open_) return;
    open_ = false;
    ws_.async_close(websocket::close_code::going_away,
                    [self = shared_from_this()](beast::error_code) {});
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->fail();
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->hub_.received(self, std::move(text));
      self->read();
    });
  }

  void write() {
    ws_.async_write(net::buffer(*queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) {
                        self->fail();
                        return;
                      }
                      self->queue_.pop_front();
                      if (!self->queue_.empty()) self->write();
                    });
  }

  void fail() {
    if (!open_ && queue_.empty()) return;
    open_ = false;
    queue_.clear();
    hub_.left(this);
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<Message> queue_;
  Hub& hub_;
  bool open_ = false;
};

Message reply(const char* type, const OperatorCommand* c, double time, const std::string& message) {
  Json j;
  j["type"] = type;
  if (c) {
    j["command"] = to_string(c->kind);
    if (!c->id.empty()) j["id"] = c->id;
  }
  if (time >= 0.0) j["time"] = time;
  if (!message.empty()) j["message"] = message;
  return std::make_shared<const std::string>(j.dump());
}

}  // namespace

struct BridgeServer::Impl : Hub {
  Scenario scenario;
  BridgeOptions options;

  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::set<std::shared_ptr<Session>> sessions;  // network thread only

  struct Pending {
    std::weak_ptr<Session> from;
    OperatorCommand command;
  };
  std::mutex queue_mutex;
  std::deque<Pending> pending;

  std::atomic<bool> running{false};
  std::thread net_thread;
  std::thread sim_thread;

  Impl(const Scenario& s, const BridgeOptions& o) : scenario(s), options(o) {}

  void joined(const std::shared_ptr<Session>& s) override { sessions.insert(s); }

  void left(Session* s) override {
    for (auto it = sessions.begin(); it != sessions.end(); ++it) {
      if (it->get() == s) {
        sessions.erase(it);
        return;
      }
    }
  }

  void received(const std::shared_ptr<Session>& s, std::string text) override {
    try {
      OperatorCommand c = parse_command(text);
      std::lock_guard<std::mutex> lock(queue_mutex);
      pending.push_back({s, std::move(c)});
    } catch (const Error& e) {
      s->send(reply("error", nullptr, -1.0, e.what()));
    }
  }

  // Called from the simulation thread.
  void to_session(const std::weak_ptr<Session>& w, Message m) {
    net::post(ioc, [w, m = std::move(m)] {
      if (auto s = w.lock()) s->send(m);
    });
  }

  void broadcast(Message m, bool droppable) {
    net::post(ioc, [this, m = std::move(m), droppable] {
      for (const auto& s : sessions) s->send(m, droppable);
    });
  }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<Session>(std::move(socket), *this)->run();
      accept();
    });
  }

  void drain(Simulation& sim) {
    std::deque<Pending> batch;
    {
      std::lock_guard<std::mutex> lock(queue_mutex);
      batch.swap(pending);
    }
    for (const Pending& p : batch) {
      try {
        apply_command(sim, p.command);
        to_session(p.from, reply("ack", &p.command, sim.time(), ""));
      } catch (const Error& e) {
        to_session(p.from, reply("error", &p.command, sim.time(), e.what()));
      }
    }
  }

  void simulate() {
    using clock = std::chrono::steady_clock;
    Simulation sim(scenario);
    const double plant = scenario.rates.plant;
    auto origin = clock::now();
    long origin_steps = 0;
    long frames = 0;
    while (running) {
      const double wall = std::chrono::duration<double>(clock::now() - origin).count();
      const long target = origin_steps + static_cast<long>(wall * options.speed * plant);
      if (sim.steps_taken() >= target) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        continue;
      }
      try {
        while (running && sim.steps_taken() < target) {
          drain(sim);
          const long k = sim.steps_taken();
          const long due = static_cast<long>(std::floor(k * options.telemetry_hz / plant));
          if (due >= frames) {
            TraceRecord rec;
            sim.step(&rec);
            frames = due + 1;
            broadcast(std::make_shared<const std::string>(frame_to_json(make_frame(rec))), true);
          } else {
            sim.step();
          }
        }
      } catch (const Error& e) {
        broadcast(reply("error", nullptr, sim.time(),
                        std::string("simulation failed, restarting: ") + e.what()),
                  false);
        sim = Simulation(scenario);
        origin = clock::now();
        origin_steps = 0;
        frames = 0;
      }
    }
  }
};

BridgeServer::BridgeServer(const Scenario& scenario, const BridgeOptions& options)
    : impl_(std::make_unique<Impl>(scenario, options)) {
  scenario.validate();
  if (!(options.telemetry_hz > 0.0) || !(options.speed > 0.0)) {
    throw Error(ErrorCode::kConfig, "telemetry rate and speed must be > 0");
  }
}

BridgeServer::~BridgeServer() { stop(); }

unsigned short BridgeServer::start() {
  Impl& s = *impl_;
  const tcp::endpoint ep(net::ip::make_address(s.options.address), s.options.port);
  beast::error_code ec;
  s.acceptor.open(ep.protocol(), ec);
  if (!ec) s.acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) s.acceptor.bind(ep, ec);
  if (!ec) s.acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw Error(ErrorCode::kConfig, "cannot listen on port " + std::to_string(s.options.port) + ": " + ec.message());
  const unsigned short port = s.acceptor.local_endpoint().port();
  s.running = true;
  s.accept();
  s.net_thread = std::thread([&s] {
    auto guard = net::make_work_guard(s.ioc);
    s.ioc.run();
  });
  s.sim_thread = std::thread([&s] { s.simulate(); });
  return port;
}

void BridgeServer::stop() {
  Impl& s = *impl_;
  if (!s.running.exchange(false)) return;
  if (s.sim_thread.joinable()) s.sim_thread.join();
  net::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
    for (const auto& session : s.sessions) session->close();
    s.sessions.clear();
  });
  // Give close frames a moment before tearing down the loop.
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  s.ioc.stop();
  if (s.net_thread.joinable()) s.net_thread.join();
}

}  // namespace hpa
