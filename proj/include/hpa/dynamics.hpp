#pragma once

#include "hpa/common.hpp"

namespace hpa {

enum class HybridMode : int { kSlack = 0, kTaut = 1 };

inline const char* to_string(HybridMode mode) {
  return mode == HybridMode::kTaut ? "taut" : "slack";
}

/// Full stacked state of the quadrotor + point-mass payload.
struct SystemState {
  Vec3 load_pos = Vec3::Zero();
  Vec3 load_vel = Vec3::Zero();
  Vec3 quad_pos = Vec3::Zero();
  Vec3 quad_vel = Vec3::Zero();
  Quat attitude = Quat::Identity();  // world <- body
  Vec3 body_rates = Vec3::Zero();    // body frame

  Mat3 rotation() const { return attitude.toRotationMatrix(); }
  bool all_finite() const;
};

// Vector layout used by integrators and the MPC transcription.
inline constexpr int kStateDim = 19;
inline constexpr int kInputDim = 4;
inline constexpr int kLoadPos = 0;
inline constexpr int kLoadVel = 3;
inline constexpr int kQuadPos = 6;
inline constexpr int kQuadVel = 9;
inline constexpr int kAttitude = 12;  // w, x, y, z
inline constexpr int kRates = 16;

using StateVector = Eigen::Matrix<double, kStateDim, 1>;

StateVector to_vector(const SystemState& x);
SystemState from_vector(const StateVector& v);

struct ControlInput {
  Vec4 motor_speeds = Vec4::Zero();  // rad/s
};

/// Physical constants of the vehicle. Defaults match a 0.72 kg quadrotor
/// carrying a 0.1 kg payload on a 0.5 m cable.
///
/// Mixer table (X configuration, body frame x forward / y left / z up):
///
///   motor  position      spin   yaw sign
///   1      front-right   CW     +1
///   2      back-left     CW     +1
///   3      front-left    CCW    -1
///   4      back-right    CCW    -1
///
/// A clockwise rotor (seen from above) pushes the airframe counter-clockwise,
/// i.e. a positive body-z reaction moment of k_m * w^2.
struct VehicleParams {
  double quad_mass = 0.72;
  double load_mass = 0.1;
  double cable_length = 0.5;
  Mat3 inertia = Eigen::Vector3d(2.5e-3, 2.5e-3, 4.3e-3).asDiagonal();
  double motor_constant = 8.54858e-6;
  double moment_constant = 0.016 * 8.54858e-6;
  double arm_length = 0.17;
  double gravity = 9.81;
  Mat3 cam_rotation = Mat3::Identity();     // body <- camera
  Vec3 cam_translation = Vec3::Zero();      // camera origin in body frame
  double motor_speed_min = 0.0;
  double motor_speed_max = 0.0;             // 0 selects thrust-to-weight 2.5

  double total_mass() const { return quad_mass + load_mass; }
  double max_motor_speed() const;
  /// Equal per-motor speed producing the given collective thrust.
  double motor_speed_for_thrust(double thrust) const;
  void validate() const;
};

struct CableState {
  Vec3 direction = -Vec3::UnitZ();  // robot -> payload
  Vec3 rate = Vec3::Zero();
};

/// Cable direction and rate from the relative kinematics. The direction is
/// normalised by the actual separation.
CableState cable_state(const SystemState& x);
double separation(const SystemState& x);
/// d/dt |x_L - x_Q|, positive when the bodies move apart.
double radial_rate(const SystemState& x);

struct ExternalForces {
  Vec3 on_load = Vec3::Zero();
  Vec3 on_quad = Vec3::Zero();
};

double thrust_from_motors(const ControlInput& u, const VehicleParams& p);
Vec3 moment_from_motors(const ControlInput& u, const VehicleParams& p);
/// Maps squared motor speeds to [f, Mx, My, Mz].
Mat4 allocation_matrix(const VehicleParams& p);
/// Inverse allocation with per-motor saturation.
ControlInput motors_from_wrench(double thrust, const Vec3& moment,
                                const VehicleParams& p);

/// Taut-mode vector field. Throws kInconsistentConstraint when the bodies are
/// not separated by the cable length (tolerance 1e-3 l).
StateVector taut_derivative(const SystemState& x, const ControlInput& u,
                            const VehicleParams& p,
                            const ExternalForces& ext = {});
/// Slack-mode vector field: free-falling payload, decoupled quadrotor.
StateVector slack_derivative(const SystemState& x, const ControlInput& u,
                             const VehicleParams& p,
                             const ExternalForces& ext = {});

/// Cable tension magnitude implied by the taut equations. Negative values
/// mean the cable would have to push, i.e. the taut model no longer holds.
double cable_tension(const SystemState& x, const ControlInput& u,
                     const VehicleParams& p, const ExternalForces& ext = {});

/// Fixed-step RK4 plant step. Renormalises the attitude and, in taut mode,
/// projects the payload back onto the cable sphere.
SystemState step(const SystemState& x, const ControlInput& u, HybridMode mode,
                 double dt, const VehicleParams& p,
                 const ExternalForces& ext = {});

/// Perfectly inelastic slack->taut impulse along the cable axis.
SystemState impact_map(const SystemState& x, const VehicleParams& p);

namespace detail {

// Unchecked kernels on the packed vector; the MPC evaluates these away from
// the constraint manifold, so no consistency check is applied.
StateVector taut_rhs(const StateVector& x, const Vec4& motor_speeds,
                     const VehicleParams& p, const ExternalForces& ext = {});
StateVector slack_rhs(const StateVector& x, const Vec4& motor_speeds,
                      const VehicleParams& p, const ExternalForces& ext = {});
StateVector hybrid_rhs(const StateVector& x, const Vec4& motor_speeds,
                       HybridMode mode, const VehicleParams& p,
                       const ExternalForces& ext = {});
/// One classical RK4 step without any projection.
StateVector rk4(const StateVector& x, const Vec4& motor_speeds,
                HybridMode mode, double dt, const VehicleParams& p,
                const ExternalForces& ext = {});
Vec4 quaternion_derivative(const Vec4& q_wxyz, const Vec3& body_rates);

}  // namespace detail

}  // namespace hpa
