#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hpa/controller_geometric.hpp"
#include "hpa/controller_mpc.hpp"
#include "hpa/dynamics.hpp"
#include "hpa/estimator.hpp"
#include "hpa/trajectories.hpp"

namespace hpa {

enum class ControllerKind { kHpaMpc, kNonHybridMpc, kGeometric };

const char* to_string(ControllerKind k);
ControllerKind controller_from_string(const std::string& s);

enum class DisturbanceTarget { kLoad, kQuad };
enum class DisturbanceKind { kImpulse, kConstant, kHold };

/// Waypoint of a scripted hold path.
struct HoldWaypoint {
  double time = 0.0;  // s, absolute
  Vec3 pos = Vec3::Zero();
};

/// Scripted external action on one body.
///   impulse:  `vector` in N*s, applied once at `start`.
///   constant: `vector` in N, applied over [start, end).
///   hold:     the load follows the waypoints over [start, end), starting
///             from wherever it was grabbed. Only valid for the load.
struct Disturbance {
  double start = 0.0;
  double end = 0.0;
  DisturbanceTarget target = DisturbanceTarget::kLoad;
  DisturbanceKind kind = DisturbanceKind::kImpulse;
  Vec3 vector = Vec3::Zero();
  std::vector<HoldWaypoint> waypoints;

  bool active(double t) const;
};

/// Smooth point-to-point path: each segment eases in and out, so the
/// velocity is continuous and zero at every waypoint.
struct HoldPath {
  std::vector<HoldWaypoint> points;

  Vec3 position(double t) const;
  Vec3 velocity(double t) const;
};

/// Horizontal random walk kept within `radius` of `center`, one waypoint
/// every `step` seconds. The height stays at center.z().
std::vector<HoldWaypoint> random_walk_waypoints(std::uint64_t seed, const Vec3& center,
                                                double radius, double start,
                                                double duration, double step);

struct SensorNoise {
  bool enabled = true;
  double quad_pos = 0.005;   // m
  double quad_vel = 0.02;    // m/s
  double cable_pos = 0.005;  // m, body-frame payload offset
  double cable_vel = 0.05;   // m/s
};

struct Rates {
  int plant = 1000;      // Hz
  int controller = 150;  // Hz
  int measurement = 30;  // Hz

  void validate() const;
};

struct Scenario {
  std::string name = "scenario";
  double duration = 10.0;  // s
  ControllerKind controller = ControllerKind::kHpaMpc;
  TrajectorySource trajectory = HoverSource{};
  /// Defaults to the reference state at t = 0.
  std::optional<SystemState> initial_state;
  std::vector<Disturbance> disturbances;
  std::uint64_t seed = 1;
  SensorNoise noise;
  Rates rates;
  MpcConfig mpc;
  GeomGains geometric;
  EstimatorConfig estimator;
  Vec3 rate_gains = Vec3(20.0, 20.0, 10.0);  // 1/s, low-level body-rate loop
  double thrust_time_constant = 0.05;        // s, motor spin-up lag on the MPC thrust
  int record_every = 1;                      // plant steps per trace record
  VehicleParams params;

  void validate() const;
};

struct MpcDiagnostics {
  double kkt_residual = 0.0;
  double cost = 0.0;
  int sqp_iterations = 0;
  bool newton_diverged = false;
  bool qp_infeasible = false;
  bool failed = false;
};

struct TraceRecord {
  double time = 0.0;
  SystemState truth;
  SystemState estimate;
  HybridMode true_mode = HybridMode::kTaut;
  HybridMode detected_mode = HybridMode::kTaut;
  ControlInput input;
  MpcCommand command;  // thrust/rates fed to the rate loop (MPC only)
  MpcDiagnostics mpc;
  Vec3 payload_camera = Vec3::Zero();
  Vec3 load_ref = Vec3::Zero();
  Vec3 quad_ref = Vec3::Zero();
};

struct RunStats {
  int controller_calls = 0;
  int controller_failures = 0;
  int impacts = 0;
  double mean_solve_time = 0.0;  // s, wall clock
  double max_solve_time = 0.0;
};

struct SimResult {
  std::vector<TraceRecord> trace;
  RunStats stats;
  bool truncated = false;
  ErrorCode error = ErrorCode::kInvalidArgument;  // meaningful if truncated
  std::string message;
};

/// Closed-loop lockstep simulation. Deterministic for a fixed scenario.
SimResult run(const Scenario& scenario);

/// Steppable form of run(). Operator actions take effect at the next step.
class Simulation {
 public:
  explicit Simulation(const Scenario& scenario);
  ~Simulation();
  Simulation(Simulation&&) noexcept;
  Simulation& operator=(Simulation&&) noexcept;

  /// One plant step. Fills `record` with the state at the start of the step.
  /// Throws Error (ControllerFailure, NonFinite); the simulation is then dead.
  void step(TraceRecord* record = nullptr);

  double time() const;
  long steps_taken() const;
  /// True once the scenario duration has been simulated. step() keeps going.
  bool done() const;
  const Scenario& scenario() const;
  const SystemState& state() const;
  HybridMode true_mode() const;
  HybridMode detected_mode() const;
  const RunStats& stats() const;

  void impulse(DisturbanceTarget target, const Vec3& j);
  /// Hold the load where it is until release(). Overrides scripted holds.
  void grab();
  /// Move a grabbed load to `pos` over `duration` seconds.
  void move_to(const Vec3& pos, double duration);
  void release();
  bool grabbed() const;
  /// Switches the trajectory to a hover at `load_pos`.
  void set_reference(const Vec3& load_pos);
  void select_controller(ControllerKind kind);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Exact cable measurement of the true relative state plus Gaussian noise.
/// Pass rng = nullptr for the noise-free value.
CableMeasurement synthesize_measurement(const SystemState& x, const VehicleParams& p,
                                        const SensorNoise& noise, std::mt19937_64* rng);

/// Velocity change from an impulse on the targeted body.
SystemState apply_impulse(const SystemState& x, const Disturbance& d,
                          const VehicleParams& p);

/// Kinematic override of the load for a hold at time t.
SystemState apply_hold(const SystemState& x, const HoldPath& path, double t);

/// Body-rate tracking moment J K (w_cmd - w) + w x J w.
Vec3 rate_loop_moment(const Vec3& rates_cmd, const Vec3& rates, const Vec3& gains,
                      const VehicleParams& p);

/// One plant step with true-mode event handling. Slack->taut crossings are
/// located by bisection and resolved with the impact map inside the step.
struct PlantStep {
  SystemState state;
  HybridMode mode = HybridMode::kTaut;
  bool impact = false;
};
PlantStep plant_step(const SystemState& x, HybridMode mode, const ControlInput& u,
                     double dt, const VehicleParams& p, const ExternalForces& ext = {});

// Scenario files (JSON) and trace export.
Scenario scenario_from_json(const std::string& text);
std::string scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::string& path);

/// Column order of the CSV export, comma separated.
std::string trace_csv_header();
void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace);
void write_trace_jsonl(std::ostream& os, const std::vector<TraceRecord>& trace);
/// Inverse of the writers for the exported fields. Throws kConfig.
std::vector<TraceRecord> read_trace_csv(std::istream& is);
std::vector<TraceRecord> read_trace_jsonl(std::istream& is);

}  // namespace hpa
