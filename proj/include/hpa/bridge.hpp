#pragma once

#include <memory>
#include <string>

#include "hpa/simulator.hpp"

namespace hpa {

inline constexpr int kSchemaVersion = 1;

/// Snapshot streamed to clients. SI units, world frame unless noted.
struct TelemetryFrame {
  double time = 0.0;
  Vec3 quad_pos = Vec3::Zero();
  Quat quad_att = Quat::Identity();
  Vec3 load_pos = Vec3::Zero();
  Vec3 cable_dir = -Vec3::UnitZ();
  HybridMode mode = HybridMode::kTaut;  // detected
  Vec3 load_cam = Vec3::Zero();         // camera frame
  double thrust = 0.0;                  // commanded, N
  Vec3 rates = Vec3::Zero();            // commanded body rates, rad/s
  bool in_fov = false;
};

TelemetryFrame make_frame(const TraceRecord& rec);

/// {"type":"telemetry","schema":1,"time":...} with a fixed key order.
std::string frame_to_json(const TelemetryFrame& f);
TelemetryFrame frame_from_json(const std::string& text);

/// First message on every connection.
std::string hello_message();

enum class CommandKind { kGrab, kMoveTo, kRelease, kImpulse, kSetReference, kSelectController };

const char* to_string(CommandKind k);

/// Wire form: {"type":"grab"}, {"type":"move_to","position":[x,y,z],"duration":s},
/// {"type":"release"}, {"type":"impulse","impulse":[..],"target":"load"|"quad"},
/// {"type":"set_reference","position":[..]},
/// {"type":"select_controller","controller":"hpa_mpc"}. "timestamp" and
/// "id" are optional on all of them.
struct OperatorCommand {
  CommandKind kind = CommandKind::kGrab;
  Vec3 vector = Vec3::Zero();
  double duration = 0.2;  // move_to only
  DisturbanceTarget target = DisturbanceTarget::kLoad;
  ControllerKind controller = ControllerKind::kHpaMpc;
  double timestamp = 0.0;
  std::string id;
};

/// Throws Error(kInvalidArgument) with a readable message on bad input.
OperatorCommand parse_command(const std::string& text);
std::string command_to_json(const OperatorCommand& c);

/// Applies a validated command. Throws Error(kInvalidArgument) when the
/// command is not valid in the current state; the simulation is unchanged.
void apply_command(Simulation& sim, const OperatorCommand& c);

struct BridgeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double telemetry_hz = 30.0;
  double speed = 1.0;          // simulated seconds per wall second
};

/// WebSocket bridge around a real-time Simulation. One network thread runs
/// all sessions; one simulation thread owns the Simulation and drains the
/// command queue before every plant step.
class BridgeServer {
 public:
  BridgeServer(const Scenario& scenario, const BridgeOptions& options);
  ~BridgeServer();
  BridgeServer(const BridgeServer&) = delete;
  BridgeServer& operator=(const BridgeServer&) = delete;

  /// Binds and starts both threads. Returns the bound port.
  unsigned short start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hpa
