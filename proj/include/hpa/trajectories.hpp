#pragma once

#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "hpa/common.hpp"
#include "hpa/dynamics.hpp"

namespace hpa {

/// x = a sin(s), y = b sin(n s + phi), z = c sin(m s) + psi, with the phase
/// s = 2 pi t / period_scale.
struct LissajousParams {
  double a = 2.0;
  double b = 0.5;
  double c = 0.0;
  double n = 2.0;
  double m_rel = 1.0;
  double phi = 0.0;
  double psi = 0.7;
  double period_scale = 5.0;  // s
};

/// Payload reference and its time derivatives. Jerk and snap are optional;
/// they sharpen the flatness map when available.
struct KinematicSample {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Vec3 acc = Vec3::Zero();
  std::optional<Vec3> jerk;
  std::optional<Vec3> snap;
};

KinematicSample lissajous(double t, const LissajousParams& p);

struct HoverSource {
  Vec3 pos = Vec3(0.0, 0.0, 0.7);
};

struct LineSource {
  Vec3 origin = Vec3(0.0, 0.0, 0.7);
  Vec3 velocity = Vec3(0.5, 0.0, 0.0);
};

struct LissajousSource {
  LissajousParams params;
};

/// Arbitrary position profile; derivatives come from central differences.
struct FunctionSource {
  std::function<Vec3(double)> position;
};

using TrajectorySource =
    std::variant<HoverSource, LineSource, LissajousSource, FunctionSource>;

KinematicSample sample(const TrajectorySource& source, double t);

/// Nominal taut-system state along a payload reference.
struct ReferencePoint {
  Vec3 load_pos = Vec3::Zero();
  Vec3 load_vel = Vec3::Zero();
  Vec3 load_acc = Vec3::Zero();
  Vec3 quad_pos = Vec3::Zero();
  Vec3 quad_vel = Vec3::Zero();
  Vec3 quad_acc = Vec3::Zero();
  Vec3 cable_dir = -Vec3::UnitZ();  // robot -> payload
  Vec3 cable_rate = Vec3::Zero();
  Vec3 cable_acc = Vec3::Zero();
  double yaw = 0.0;
  double thrust = 0.0;               // nominal collective thrust, N
  Quat attitude = Quat::Identity();  // thrust axis along body z, given yaw
  Vec3 body_rates = Vec3::Zero();
  Vec3 body_rates_dot = Vec3::Zero();
};

/// Attitude with body z along `thrust_dir` and heading `yaw`.
Mat3 attitude_from_thrust(const Vec3& thrust_dir, double yaw);

/// Differential-flatness map from the payload reference to the nominal
/// quadrotor state. Throws kDegenerateTension when acc + g e3 vanishes.
ReferencePoint flat_map(const KinematicSample& load_ref,
                        const VehicleParams& p, double yaw = 0.0);

/// As above, sampling the source; also fills body rates and their
/// derivative from the attitude trajectory.
ReferencePoint flat_map(const TrajectorySource& source, double t,
                        const VehicleParams& p, double yaw = 0.0);

std::vector<ReferencePoint> horizon_refs(double t0, double dt, int steps,
                                         const TrajectorySource& source,
                                         const VehicleParams& p,
                                         double yaw = 0.0);

/// Full SystemState laid out from a reference point.
SystemState state_from_reference(const ReferencePoint& ref);

}  // namespace hpa
