#pragma once

#include "hpa/common.hpp"
#include "hpa/dynamics.hpp"
#include "hpa/trajectories.hpp"

namespace hpa {

/// Gains of the taut-only payload controller. The integral clamp bounds the
/// integral contribution to the desired force, per axis, in N.
struct GeomGains {
  Mat3 kp = Vec3(4.0, 4.0, 6.0).asDiagonal();
  Mat3 kd = Vec3(4.0, 4.0, 5.0).asDiagonal();
  Mat3 ki = Vec3(0.1, 0.1, 0.1).asDiagonal();
  Mat3 kq = Vec3(40.0, 40.0, 40.0).asDiagonal();
  Mat3 kw = Vec3(12.0, 12.0, 12.0).asDiagonal();
  Mat3 kr = Vec3(2.0, 2.0, 0.3).asDiagonal();
  Mat3 kom = Vec3(0.13, 0.13, 0.06).asDiagonal();
  Vec3 integral_clamp = Vec3::Constant(2.0);

  void validate() const;
};

/// Running integral of the payload position error, m*s.
struct GeomIntegral {
  Vec3 value = Vec3::Zero();
};

struct DesiredForce {
  Vec3 force = Vec3::Zero();
  GeomIntegral integral;
};

/// PID on the payload error with (m + mL)(acc_des + g) and centripetal
/// feedforward. Advances the integral by dt (dt = 0 leaves it unchanged).
DesiredForce desired_force(const SystemState& x, const ReferencePoint& ref,
                           const GeomGains& gains, const VehicleParams& p,
                           const GeomIntegral& integral, double dt);

/// Unit tension direction F_des / |F_des| (payload -> robot).
Vec3 desired_cable(const Vec3& f_des);

/// e_R = 0.5 (R^T R_d - R_d^T R)^vee
Vec3 rotation_error(const Mat3& R, const Mat3& R_des);

struct GeomOutput {
  double thrust = 0.0;
  Vec3 moment = Vec3::Zero();
  Vec3 force = Vec3::Zero();  // F, the commanded force on the quadrotor
  Mat3 R_des = Mat3::Identity();
  Vec3 e_q = Vec3::Zero();
  Vec3 e_w = Vec3::Zero();
  Vec3 e_R = Vec3::Zero();
  Vec3 e_Omega = Vec3::Zero();
};

/// Cable-attitude and attitude loops. Body-rate feedforward from the
/// reference is used only when `rate_feedforward` is set.
GeomOutput thrust_and_moment(const SystemState& x, const ReferencePoint& ref,
                             const Vec3& f_des, const GeomGains& gains,
                             const VehicleParams& p, bool rate_feedforward = false);

/// Stateful wrapper that threads the integral between calls.
class GeometricController {
 public:
  GeometricController(const VehicleParams& p, const GeomGains& gains,
                      bool rate_feedforward = false);

  GeomOutput update(const SystemState& x, const ReferencePoint& ref, double dt);
  ControlInput motors(const GeomOutput& out) const;
  void reset() { integral_ = {}; }
  const GeomIntegral& integral() const { return integral_; }

 private:
  VehicleParams params_;
  GeomGains gains_;
  bool rate_feedforward_;
  GeomIntegral integral_;
};

}  // namespace hpa
