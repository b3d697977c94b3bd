#include "hpa/trajectories.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace hpa {

KinematicSample lissajous(double t, const LissajousParams& p) {
  const double w = 2.0 * std::numbers::pi / p.period_scale;
  const double s = w * t;
  const double sx = std::sin(s), cx = std::cos(s);
  const double ay = p.n * s + p.phi;
  const double sy = std::sin(ay), cy = std::cos(ay);
  const double az = p.m_rel * s;
  const double sz = std::sin(az), cz = std::cos(az);
  const double ny = p.n * w, nz = p.m_rel * w;

  KinematicSample k;
  k.pos = Vec3(p.a * sx, p.b * sy, p.c * sz + p.psi);
  k.vel = Vec3(p.a * w * cx, p.b * ny * cy, p.c * nz * cz);
  k.acc = -Vec3(p.a * w * w * sx, p.b * ny * ny * sy, p.c * nz * nz * sz);
  k.jerk = -Vec3(p.a * w * w * w * cx, p.b * ny * ny * ny * cy,
                 p.c * nz * nz * nz * cz);
  k.snap = Vec3(p.a * std::pow(w, 4) * sx, p.b * std::pow(ny, 4) * sy,
                p.c * std::pow(nz, 4) * sz);
  return k;
}

namespace {

KinematicSample sample_function(const FunctionSource& f, double t) {
  const double h = 1e-4;
  const Vec3 p0 = f.position(t);
  const Vec3 p1 = f.position(t + h), m1 = f.position(t - h);
  const Vec3 p2 = f.position(t + 2 * h), m2 = f.position(t - 2 * h);
  KinematicSample k;
  k.pos = p0;
  k.vel = (p1 - m1) / (2 * h);
  k.acc = (p1 - 2 * p0 + m1) / (h * h);
  k.jerk = (p2 - 2 * p1 + 2 * m1 - m2) / (2 * h * h * h);
  return k;
}

}  // namespace

KinematicSample sample(const TrajectorySource& source, double t) {
  return std::visit(
      [t](const auto& s) -> KinematicSample {
        using S = std::decay_t<decltype(s)>;
        KinematicSample k;
        if constexpr (std::is_same_v<S, HoverSource>) {
          k.pos = s.pos;
          k.jerk = Vec3::Zero();
          k.snap = Vec3::Zero();
        } else if constexpr (std::is_same_v<S, LineSource>) {
          k.pos = s.origin + s.velocity * t;
          k.vel = s.velocity;
          k.jerk = Vec3::Zero();
          k.snap = Vec3::Zero();
        } else if constexpr (std::is_same_v<S, LissajousSource>) {
          k = lissajous(t, s.params);
        } else {
          k = sample_function(s, t);
        }
        return k;
      },
      source);
}

Mat3 attitude_from_thrust(const Vec3& thrust_dir, double yaw) {
  const Vec3 b3 = thrust_dir.normalized();
  const Vec3 heading(std::cos(yaw), std::sin(yaw), 0.0);
  Vec3 b2 = b3.cross(heading);
  if (b2.norm() < 1e-9) b2 = b3.cross(Vec3::UnitX());
  b2.normalize();
  const Vec3 b1 = b2.cross(b3);
  Mat3 R;
  R << b1, b2, b3;
  return R;
}

ReferencePoint flat_map(const KinematicSample& k, const VehicleParams& p,
                        double yaw) {
  const double l = p.cable_length;
  const Vec3 v = k.acc + p.gravity * e3();  // proportional to the tension
  const double vn = v.norm();
  if (vn < 1e-6) {
    std::ostringstream msg;
    msg << "payload reference in free fall (|acc + g e3| = " << vn << ")";
    throw Error(ErrorCode::kDegenerateTension, msg.str());
  }
  const Vec3 n = v / vn;
  const Vec3 vd = k.jerk.value_or(Vec3::Zero());
  const Vec3 vdd = k.snap.value_or(Vec3::Zero());
  const Mat3 P = Mat3::Identity() - n * n.transpose();
  const Vec3 nd = P * vd / vn;
  const Vec3 ndd = (P * vdd - 2.0 * nd * n.dot(vd) - n * nd.dot(vd)) / vn;

  ReferencePoint r;
  r.load_pos = k.pos;
  r.load_vel = k.vel;
  r.load_acc = k.acc;
  r.yaw = yaw;
  r.cable_dir = -n;
  r.cable_rate = -nd;
  r.cable_acc = -ndd;
  r.quad_pos = k.pos - l * r.cable_dir;
  r.quad_vel = k.vel - l * r.cable_rate;
  r.quad_acc = k.acc - l * r.cable_acc;
  // Total external force on the system equals thrust minus gravity.
  const Vec3 thrust_vec = p.quad_mass * (r.quad_acc + p.gravity * e3()) +
                          p.load_mass * v;
  r.thrust = thrust_vec.norm();
  r.attitude = Quat(attitude_from_thrust(thrust_vec, yaw));
  return r;
}

ReferencePoint flat_map(const TrajectorySource& source, double t,
                        const VehicleParams& p, double yaw) {
  ReferencePoint r = flat_map(sample(source, t), p, yaw);
  // Body rates from the attitude trajectory: hat(Omega) = R^T dR/dt.
  const double h = 1e-3;
  const Mat3 R0 = r.attitude.toRotationMatrix();
  const Mat3 Rp = flat_map(sample(source, t + h), p, yaw).attitude.toRotationMatrix();
  const Mat3 Rm = flat_map(sample(source, t - h), p, yaw).attitude.toRotationMatrix();
  const Mat3 dR = (Rp - Rm) / (2 * h);
  const Mat3 ddR = (Rp - 2 * R0 + Rm) / (h * h);
  const Mat3 W = R0.transpose() * dR;
  r.body_rates = vee(0.5 * (W - W.transpose()));
  // d/dt (R^T dR) = dR^T dR + R^T ddR
  const Mat3 Wd = dR.transpose() * dR + R0.transpose() * ddR;
  r.body_rates_dot = vee(0.5 * (Wd - Wd.transpose()));
  return r;
}

std::vector<ReferencePoint> horizon_refs(double t0, double dt, int steps,
                                         const TrajectorySource& source,
                                         const VehicleParams& p, double yaw) {
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "horizon needs N >= 1");
  std::vector<ReferencePoint> refs;
  refs.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    refs.push_back(flat_map(source, t0 + k * dt, p, yaw));
  }
  return refs;
}

SystemState state_from_reference(const ReferencePoint& ref) {
  SystemState x;
  x.load_pos = ref.load_pos;
  x.load_vel = ref.load_vel;
  x.quad_pos = ref.quad_pos;
  x.quad_vel = ref.quad_vel;
  x.attitude = ref.attitude;
  x.body_rates = ref.body_rates;
  return x;
}

}  // namespace hpa
