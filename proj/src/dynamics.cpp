#include "hpa/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hpa {

bool SystemState::all_finite() const {
  return load_pos.allFinite() && load_vel.allFinite() && quad_pos.allFinite() &&
         quad_vel.allFinite() && attitude.coeffs().allFinite() &&
         body_rates.allFinite();
}

StateVector to_vector(const SystemState& x) {
  StateVector v;
  v.segment<3>(kLoadPos) = x.load_pos;
  v.segment<3>(kLoadVel) = x.load_vel;
  v.segment<3>(kQuadPos) = x.quad_pos;
  v.segment<3>(kQuadVel) = x.quad_vel;
  v(kAttitude) = x.attitude.w();
  v(kAttitude + 1) = x.attitude.x();
  v(kAttitude + 2) = x.attitude.y();
  v(kAttitude + 3) = x.attitude.z();
  v.segment<3>(kRates) = x.body_rates;
  return v;
}

SystemState from_vector(const StateVector& v) {
  SystemState x;
  x.load_pos = v.segment<3>(kLoadPos);
  x.load_vel = v.segment<3>(kLoadVel);
  x.quad_pos = v.segment<3>(kQuadPos);
  x.quad_vel = v.segment<3>(kQuadVel);
  x.attitude = Quat(v(kAttitude), v(kAttitude + 1), v(kAttitude + 2),
                    v(kAttitude + 3));
  x.body_rates = v.segment<3>(kRates);
  return x;
}

double VehicleParams::max_motor_speed() const {
  if (motor_speed_max > 0.0) return motor_speed_max;
  return std::sqrt(2.5 * total_mass() * gravity / (4.0 * motor_constant));
}

double VehicleParams::motor_speed_for_thrust(double thrust) const {
  return std::sqrt(std::max(thrust, 0.0) / (4.0 * motor_constant));
}

void VehicleParams::validate() const {
  std::ostringstream err;
  if (!(quad_mass > 0)) err << "quad_mass must be positive; ";
  if (!(load_mass > 0)) err << "load_mass must be positive; ";
  if (!(cable_length > 0)) err << "cable_length must be positive; ";
  if (!(motor_constant > 0)) err << "motor_constant must be positive; ";
  if (!(arm_length > 0)) err << "arm_length must be positive; ";
  if (!(gravity > 0)) err << "gravity must be positive; ";
  if (!inertia.isApprox(inertia.transpose(), 1e-12) ||
      Eigen::LLT<Mat3>(inertia).info() != Eigen::Success) {
    err << "inertia must be symmetric positive definite; ";
  }
  if (!(cam_rotation.transpose() * cam_rotation).isIdentity(1e-9)) {
    err << "cam_rotation must be orthonormal; ";
  }
  if (motor_speed_min < 0 || max_motor_speed() <= motor_speed_min) {
    err << "motor speed bounds invalid; ";
  }
  if (!err.str().empty()) throw Error(ErrorCode::kInvalidArgument, err.str());
}

double separation(const SystemState& x) {
  return (x.load_pos - x.quad_pos).norm();
}

double radial_rate(const SystemState& x) {
  const Vec3 rel = x.load_pos - x.quad_pos;
  const double d = rel.norm();
  if (d == 0.0) return 0.0;
  return rel.dot(x.load_vel - x.quad_vel) / d;
}

CableState cable_state(const SystemState& x) {
  const Vec3 rel = x.load_pos - x.quad_pos;
  const double d = rel.norm();
  CableState c;
  if (d == 0.0) return c;
  c.direction = rel / d;
  c.rate = (x.load_vel - x.quad_vel) / d;
  return c;
}

Mat4 allocation_matrix(const VehicleParams& p) {
  const double kf = p.motor_constant;
  const double km = p.moment_constant;
  const double a = p.arm_length / std::sqrt(2.0);
  Mat4 A;
  A << kf, kf, kf, kf,
       -a * kf, a * kf, a * kf, -a * kf,
       -a * kf, a * kf, -a * kf, a * kf,
       km, km, -km, -km;
  return A;
}

double thrust_from_motors(const ControlInput& u, const VehicleParams& p) {
  return p.motor_constant * u.motor_speeds.squaredNorm();
}

Vec3 moment_from_motors(const ControlInput& u, const VehicleParams& p) {
  const Vec4 w2 = u.motor_speeds.cwiseAbs2();
  return (allocation_matrix(p) * w2).tail<3>();
}

ControlInput motors_from_wrench(double thrust, const Vec3& moment,
                                const VehicleParams& p) {
  Vec4 wrench;
  wrench << thrust, moment;
  const Vec4 w2 = allocation_matrix(p).partialPivLu().solve(wrench);
  const double lo = p.motor_speed_min * p.motor_speed_min;
  const double hi = p.max_motor_speed() * p.max_motor_speed();
  ControlInput u;
  for (int i = 0; i < 4; ++i) {
    u.motor_speeds(i) = std::sqrt(std::clamp(w2(i), lo, hi));
  }
  return u;
}

namespace detail {

namespace {

Mat3 rotation_of(const StateVector& x) {
  return Quat(x(kAttitude), x(kAttitude + 1), x(kAttitude + 2),
              x(kAttitude + 3))
      .normalized()
      .toRotationMatrix();
}

// Shared rigid-body part: quaternion kinematics and Euler's equation.
void attitude_rhs(const StateVector& x, const Vec4& w, const VehicleParams& p,
                  StateVector& dx) {
  const Vec3 omega = x.segment<3>(kRates);
  dx.segment<4>(kAttitude) =
      quaternion_derivative(x.segment<4>(kAttitude), omega);
  Vec4 w2 = w.cwiseAbs2();
  const Vec3 moment = (allocation_matrix(p) * w2).tail<3>();
  dx.segment<3>(kRates) =
      p.inertia.ldlt().solve(moment - omega.cross(p.inertia * omega));
}

}  // namespace

Vec4 quaternion_derivative(const Vec4& q, const Vec3& om) {
  // 0.5 * q (x) [0, omega]
  Vec4 dq;
  dq(0) = -0.5 * (q(1) * om.x() + q(2) * om.y() + q(3) * om.z());
  dq(1) = 0.5 * (q(0) * om.x() + q(2) * om.z() - q(3) * om.y());
  dq(2) = 0.5 * (q(0) * om.y() + q(3) * om.x() - q(1) * om.z());
  dq(3) = 0.5 * (q(0) * om.z() + q(1) * om.y() - q(2) * om.x());
  return dq;
}

StateVector taut_rhs(const StateVector& x, const Vec4& w,
                     const VehicleParams& p, const ExternalForces& ext) {
  const double m = p.quad_mass;
  const double mL = p.load_mass;
  const double l = p.cable_length;
  const Vec3 ge3 = p.gravity * e3();

  const Vec3 q = (x.segment<3>(kLoadPos) - x.segment<3>(kQuadPos)) / l;
  const Vec3 qd = (x.segment<3>(kLoadVel) - x.segment<3>(kQuadVel)) / l;
  const double f = p.motor_constant * w.squaredNorm();
  const Vec3 u = f * rotation_of(x) * e3() + ext.on_quad;
  const Vec3& fl = ext.on_load;

  // (m + mL)(xL'' + g) = (q.u - m l |q'|^2) q, plus the load-force terms.
  const Vec3 load_acc =
      ((q.dot(u) - m * l * qd.squaredNorm()) * q +
       ((m + mL) * fl - m * q.dot(fl) * q) / mL) /
          (m + mL) -
      ge3;
  // m l (q'' + |q'|^2 q) = q x (q x u), plus the load-force term.
  const Vec3 cable_acc =
      (q.cross(q.cross(u)) - (m / mL) * q.cross(q.cross(fl))) / (m * l) -
      qd.squaredNorm() * q;

  StateVector dx;
  dx.segment<3>(kLoadPos) = x.segment<3>(kLoadVel);
  dx.segment<3>(kLoadVel) = load_acc;
  dx.segment<3>(kQuadPos) = x.segment<3>(kQuadVel);
  dx.segment<3>(kQuadVel) = load_acc - l * cable_acc;
  attitude_rhs(x, w, p, dx);
  return dx;
}

StateVector slack_rhs(const StateVector& x, const Vec4& w,
                      const VehicleParams& p, const ExternalForces& ext) {
  const Vec3 ge3 = p.gravity * e3();
  const double f = p.motor_constant * w.squaredNorm();
  StateVector dx;
  dx.segment<3>(kLoadPos) = x.segment<3>(kLoadVel);
  dx.segment<3>(kLoadVel) = ext.on_load / p.load_mass - ge3;
  dx.segment<3>(kQuadPos) = x.segment<3>(kQuadVel);
  dx.segment<3>(kQuadVel) =
      (f * rotation_of(x) * e3() + ext.on_quad) / p.quad_mass - ge3;
  attitude_rhs(x, w, p, dx);
  return dx;
}

StateVector hybrid_rhs(const StateVector& x, const Vec4& w, HybridMode mode,
                       const VehicleParams& p, const ExternalForces& ext) {
  return mode == HybridMode::kTaut ? taut_rhs(x, w, p, ext)
                                   : slack_rhs(x, w, p, ext);
}

StateVector rk4(const StateVector& x, const Vec4& w, HybridMode mode,
                double dt, const VehicleParams& p, const ExternalForces& ext) {
  const StateVector k1 = hybrid_rhs(x, w, mode, p, ext);
  const StateVector k2 = hybrid_rhs(x + 0.5 * dt * k1, w, mode, p, ext);
  const StateVector k3 = hybrid_rhs(x + 0.5 * dt * k2, w, mode, p, ext);
  const StateVector k4 = hybrid_rhs(x + dt * k3, w, mode, p, ext);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

StateVector taut_derivative(const SystemState& x, const ControlInput& u,
                            const VehicleParams& p,
                            const ExternalForces& ext) {
  const double d = separation(x);
  if (std::abs(d - p.cable_length) > 1e-3 * p.cable_length) {
    std::ostringstream msg;
    msg << "taut dynamics evaluated at separation " << d
        << " m, cable length " << p.cable_length << " m";
    throw Error(ErrorCode::kInconsistentConstraint, msg.str());
  }
  return detail::taut_rhs(to_vector(x), u.motor_speeds, p, ext);
}

StateVector slack_derivative(const SystemState& x, const ControlInput& u,
                             const VehicleParams& p,
                             const ExternalForces& ext) {
  return detail::slack_rhs(to_vector(x), u.motor_speeds, p, ext);
}

double cable_tension(const SystemState& x, const ControlInput& u,
                     const VehicleParams& p, const ExternalForces& ext) {
  const double m = p.quad_mass;
  const double mL = p.load_mass;
  const CableState c = cable_state(x);
  const Vec3 thrust =
      thrust_from_motors(u, p) * x.rotation() * e3() + ext.on_quad;
  return (m * c.direction.dot(ext.on_load) - mL * c.direction.dot(thrust) +
          m * mL * p.cable_length * c.rate.squaredNorm()) /
         (m + mL);
}

SystemState step(const SystemState& x, const ControlInput& u, HybridMode mode,
                 double dt, const VehicleParams& p, const ExternalForces& ext) {
  if (!(dt > 0)) throw Error(ErrorCode::kInvalidArgument, "dt must be > 0");
  StateVector v = detail::rk4(to_vector(x), u.motor_speeds, mode, dt, p, ext);
  if (!v.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "plant integration produced NaN/Inf");
  }
  SystemState next = from_vector(v);
  next.attitude.normalize();

  if (mode == HybridMode::kTaut) {
    const Vec3 rel = next.load_pos - next.quad_pos;
    const double d = rel.norm();
    if (d > 0.0) {
      const Vec3 n = rel / d;
      next.load_pos = next.quad_pos + p.cable_length * n;
      // Remove the radial relative velocity while keeping total momentum.
      const double drift = n.dot(next.load_vel - next.quad_vel);
      const double M = p.total_mass();
      next.load_vel -= (p.quad_mass / M) * drift * n;
      next.quad_vel += (p.load_mass / M) * drift * n;
    }
  }
  return next;
}

SystemState impact_map(const SystemState& x, const VehicleParams& p) {
  const Vec3 rel = x.load_pos - x.quad_pos;
  const double d = rel.norm();
  if (d < p.cable_length * (1.0 - 1e-9)) {
    std::ostringstream msg;
    msg << "impact map requires an extended cable, separation " << d
        << " m < " << p.cable_length << " m";
    throw Error(ErrorCode::kNotExtended, msg.str());
  }
  const Vec3 n = rel / d;
  SystemState out = x;
  out.load_pos = x.quad_pos + p.cable_length * n;

  const double vq = n.dot(x.quad_vel);
  const double vl = n.dot(x.load_vel);
  if (vl - vq <= 1e-12) return out;

  const double m = p.quad_mass;
  const double mL = p.load_mass;
  const double common = (m * vq + mL * vl) / (m + mL);
  out.quad_vel = x.quad_vel + (common - vq) * n;
  out.load_vel = x.load_vel + (common - vl) * n;
  return out;
}

}  // namespace hpa
