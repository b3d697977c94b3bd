#include <cmath>
#include <random>

#include "doctest.h"
#include "hpa/controller_geometric.hpp"

using namespace hpa;

namespace {

Vec3 rand3(std::mt19937_64& rng, double s) {
  std::normal_distribution<double> n(0.0, s);
  return Vec3(n(rng), n(rng), n(rng));
}

Mat3 random_rotation(std::mt19937_64& rng, double s) {
  const Vec3 aa = rand3(rng, s);
  return Eigen::AngleAxisd(aa.norm(), aa.normalized()).toRotationMatrix();
}

SystemState hover(const VehicleParams& p) {
  SystemState x;
  x.load_pos = Vec3(0, 0, 0.7);
  x.quad_pos = x.load_pos + p.cable_length * e3();
  return x;
}

ReferencePoint hover_ref(const VehicleParams& p) {
  KinematicSample k;
  k.pos = Vec3(0, 0, 0.7);
  return flat_map(k, p);
}

SystemState random_taut(std::mt19937_64& rng, const VehicleParams& p) {
  SystemState x;
  x.quad_pos = rand3(rng, 0.5);
  const Vec3 q = (Vec3(0, 0, -1) + rand3(rng, 0.3)).normalized();
  x.load_pos = x.quad_pos + p.cable_length * q;
  x.quad_vel = rand3(rng, 0.5);
  Vec3 qd = rand3(rng, 0.5);
  qd -= qd.dot(q) * q;
  x.load_vel = x.quad_vel + p.cable_length * qd;
  x.attitude = Quat(random_rotation(rng, 0.3));
  x.body_rates = rand3(rng, 0.5);
  return x;
}

}  // namespace

TEST_CASE("desired force at hover equals the total weight") {
  const VehicleParams p;
  const DesiredForce fd = desired_force(hover(p), hover_ref(p), GeomGains{}, p, {}, 0.0);
  CHECK((fd.force - Vec3(0, 0, 8.0442)).norm() < 1e-12);
}

TEST_CASE("pure position error with only K_p") {
  const VehicleParams p;
  GeomGains g;
  g.kd.setZero();
  g.ki.setZero();
  SystemState x = hover(p);
  const Vec3 e(0.1, -0.2, 0.05);
  ReferencePoint ref = hover_ref(p);
  ref.load_pos += e;
  const DesiredForce fd = desired_force(x, ref, g, p, {}, 0.0);
  const Vec3 ff = p.total_mass() * p.gravity * e3();
  CHECK((fd.force - ff - p.total_mass() * g.kp * e).norm() < 1e-12);
}

TEST_CASE("desired force matches term-by-term evaluation") {
  const VehicleParams p;
  GeomGains g;
  std::mt19937_64 rng(41);
  for (int i = 0; i < 100; ++i) {
    const SystemState x = random_taut(rng, p);
    ReferencePoint ref = hover_ref(p);
    ref.load_pos = rand3(rng, 1.0);
    ref.load_vel = rand3(rng, 1.0);
    ref.load_acc = rand3(rng, 1.0);
    GeomIntegral integ;
    integ.value = rand3(rng, 0.1);
    const double dt = 0.01;
    const DesiredForce fd = desired_force(x, ref, g, p, integ, dt);
    const double mt = p.quad_mass + p.load_mass;
    Vec3 expect = Vec3::Zero();
    for (int a = 0; a < 3; ++a) {
      const double ex = ref.load_pos(a) - x.load_pos(a);
      const double ev = ref.load_vel(a) - x.load_vel(a);
      double ie = integ.value(a) + dt * ex;
      const double lim = g.integral_clamp(a) / (mt * g.ki(a, a));
      ie = std::max(-lim, std::min(lim, ie));
      expect(a) = mt * (g.kp(a, a) * ex + g.kd(a, a) * ev + g.ki(a, a) * ie) +
                  mt * (ref.load_acc(a) + (a == 2 ? p.gravity : 0.0));
    }
    const Vec3 rel = x.load_pos - x.quad_pos;
    const Vec3 qd = (x.load_vel - x.quad_vel) / rel.norm();
    expect += p.quad_mass * p.cable_length * qd.dot(qd) * rel.normalized();
    CHECK((fd.force - expect).norm() < 1e-10);
  }
}

TEST_CASE("integral contribution is clamped") {
  const VehicleParams p;
  GeomGains g;
  ReferencePoint ref = hover_ref(p);
  ref.load_pos += Vec3(5, 0, 0);
  GeomIntegral integ;
  for (int i = 0; i < 10000; ++i) integ = desired_force(hover(p), ref, g, p, integ, 0.01).integral;
  CHECK(p.total_mass() * g.ki(0, 0) * integ.value.x() == doctest::Approx(2.0));
}

TEST_CASE("desired cable direction") {
  CHECK((desired_cable(Vec3(0, 0, 3)) - e3()).norm() < 1e-15);
  std::mt19937_64 rng(42);
  for (int i = 0; i < 100; ++i) {
    const Vec3 f = rand3(rng, 5.0);
    CHECK(std::abs(desired_cable(f).norm() - 1.0) < 1e-12);
    CHECK((desired_cable(f) - desired_cable(3.7 * f)).norm() < 1e-15);
  }
  try {
    desired_cable(Vec3(1e-7, 0, 0));
    FAIL("expected DegenerateForce");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateForce);
  }
}

TEST_CASE("hover equilibrium gives weight thrust and zero moment") {
  const VehicleParams p;
  const GeomGains g;
  const SystemState x = hover(p);
  const ReferencePoint ref = hover_ref(p);
  const DesiredForce fd = desired_force(x, ref, g, p, {}, 0.0);
  const GeomOutput out = thrust_and_moment(x, ref, fd.force, g, p);
  CHECK(out.thrust == doctest::Approx(p.total_mass() * p.gravity).epsilon(1e-12));
  CHECK(out.moment.norm() < 1e-12);
  CHECK(out.e_R.norm() < 1e-15);
  CHECK(out.e_Omega.norm() < 1e-15);
}

TEST_CASE("attitude errors") {
  std::mt19937_64 rng(43);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = random_rotation(rng, 1.0), Rd = random_rotation(rng, 1.0);
    CHECK(rotation_error(R, R).norm() < 1e-15);
    CHECK((rotation_error(R, Rd) + rotation_error(Rd, R)).norm() == 0.0);
  }
}

TEST_CASE("cable error is orthogonal to both directions") {
  const VehicleParams p;
  const GeomGains g;
  std::mt19937_64 rng(44);
  for (int i = 0; i < 100; ++i) {
    const SystemState x = random_taut(rng, p);
    const Vec3 f = Vec3(0, 0, 8) + rand3(rng, 2.0);
    const GeomOutput out = thrust_and_moment(x, hover_ref(p), f, g, p);
    const Vec3 q = cable_state(x).direction;
    const Vec3 q_des = -desired_cable(f);
    CHECK(std::abs(out.e_q.dot(q)) < 1e-12);
    CHECK(std::abs(out.e_q.dot(q_des)) < 1e-12);
    // The thrust is the projection of F on the body z axis.
    CHECK(out.thrust == doctest::Approx(out.force.dot(x.rotation() * e3())));
  }
}

TEST_CASE("closed loop on the taut plant settles the payload") {
  const VehicleParams p;
  GeometricController ctl(p, GeomGains{});
  const ReferencePoint ref = hover_ref(p);
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 3; ++trial) {
    ctl.reset();
    SystemState x = hover(p);
    const Vec3 q = (Vec3(0, 0, -1) + rand3(rng, 0.1)).normalized();
    x.quad_pos += rand3(rng, 0.05);
    x.load_pos = x.quad_pos + p.cable_length * q;
    ControlInput u;
    double err_after = 0.0;
    for (int k = 0; k < 6000; ++k) {
      if (k % 7 == 0) {  // ~150 Hz controller on the 1 kHz plant
        const GeomOutput out = ctl.update(x, ref, 0.007);
        u = ctl.motors(out);
      }
      x = step(x, u, HybridMode::kTaut, 1e-3, p);
      if (k >= 5000) err_after = std::max(err_after, (x.load_pos - ref.load_pos).norm());
    }
    CHECK(err_after < 0.01);
  }
}
