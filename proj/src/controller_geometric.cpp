#include "hpa/controller_geometric.hpp"

#include <sstream>

namespace hpa {

void GeomGains::validate() const {
  const Mat3* all[] = {&kp, &kd, &ki, &kq, &kw, &kr, &kom};
  for (const Mat3* m : all) {
    if ((m->diagonal().array() < 0).any()) {
      throw Error(ErrorCode::kInvalidArgument, "geometric gains must be non-negative");
    }
  }
  if ((integral_clamp.array() <= 0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "integral clamp must be positive");
  }
}

DesiredForce desired_force(const SystemState& x, const ReferencePoint& ref,
                           const GeomGains& gains, const VehicleParams& p,
                           const GeomIntegral& integral, double dt) {
  const double mt = p.total_mass();
  const Vec3 ex = ref.load_pos - x.load_pos;
  const Vec3 ev = ref.load_vel - x.load_vel;

  DesiredForce out;
  out.integral.value = integral.value + dt * ex;
  for (int i = 0; i < 3; ++i) {
    const double k = mt * gains.ki(i, i);
    if (k > 0) {
      const double lim = gains.integral_clamp(i) / k;
      out.integral.value(i) = std::clamp(out.integral.value(i), -lim, lim);
    }
  }
  const CableState c = cable_state(x);
  out.force = mt * (gains.kp * ex + gains.kd * ev + gains.ki * out.integral.value) +
              mt * (ref.load_acc + p.gravity * e3()) +
              p.quad_mass * p.cable_length * c.rate.squaredNorm() * c.direction;
  return out;
}

Vec3 desired_cable(const Vec3& f_des) {
  const double n = f_des.norm();
  if (!(n > 1e-6)) {
    std::ostringstream msg;
    msg << "desired payload force too small (" << n << " N)";
    throw Error(ErrorCode::kDegenerateForce, msg.str());
  }
  return f_des / n;
}

Vec3 rotation_error(const Mat3& R, const Mat3& R_des) {
  return 0.5 * vee(R.transpose() * R_des - R_des.transpose() * R);
}

GeomOutput thrust_and_moment(const SystemState& x, const ReferencePoint& ref,
                             const Vec3& f_des, const GeomGains& gains,
                             const VehicleParams& p, bool rate_feedforward) {
  const double ml = p.quad_mass * p.cable_length;
  // Cable quantities in the robot -> payload convention; the tension
  // direction is negated at this boundary.
  const CableState c = cable_state(x);
  const Vec3& q = c.direction;
  const Vec3& qd = c.rate;
  const Vec3 w = q.cross(qd);
  const Vec3 q_des = -desired_cable(f_des);
  const Vec3 w_des = ref.cable_dir.cross(ref.cable_rate);

  GeomOutput out;
  out.e_q = q_des.cross(q);
  out.e_w = w + q.cross(q.cross(w_des));
  out.force = q.dot(f_des) * q -
              ml * q.cross(gains.kq * out.e_q + gains.kw * out.e_w + q.dot(w_des) * qd) +
              ml * q.cross(q_des.cross(ref.cable_acc));

  const Mat3 R = x.rotation();
  out.thrust = out.force.dot(R * e3());
  out.R_des = attitude_from_thrust(desired_cable(out.force), ref.yaw);
  const Vec3 om_des = rate_feedforward ? ref.body_rates : Vec3::Zero();
  const Vec3 om_dot_des = rate_feedforward ? ref.body_rates_dot : Vec3::Zero();
  const Mat3 RtRd = R.transpose() * out.R_des;
  out.e_R = rotation_error(R, out.R_des);
  out.e_Omega = RtRd * om_des - x.body_rates;
  const Vec3& om = x.body_rates;
  out.moment = gains.kr * out.e_R + gains.kom * out.e_Omega + om.cross(p.inertia * om) -
               p.inertia * (hat(om) * RtRd * om_des - RtRd * om_dot_des);
  return out;
}

GeometricController::GeometricController(const VehicleParams& p, const GeomGains& gains,
                                         bool rate_feedforward)
    : params_(p), gains_(gains), rate_feedforward_(rate_feedforward) {
  gains_.validate();
}

GeomOutput GeometricController::update(const SystemState& x, const ReferencePoint& ref,
                                       double dt) {
  const DesiredForce fd = desired_force(x, ref, gains_, params_, integral_, dt);
  integral_ = fd.integral;
  return thrust_and_moment(x, ref, fd.force, gains_, params_, rate_feedforward_);
}

ControlInput GeometricController::motors(const GeomOutput& out) const {
  return motors_from_wrench(out.thrust, out.moment, params_);
}

}  // namespace hpa
