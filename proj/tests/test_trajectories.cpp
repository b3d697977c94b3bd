#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "hpa/trajectories.hpp"

using namespace hpa;

namespace {

LissajousParams figure_eight(double period) {
  LissajousParams p;
  p.a = 2.0;
  p.b = 0.5;
  p.n = 2.0;
  p.c = 0.0;
  p.period_scale = period;
  return p;
}

}  // namespace

TEST_CASE("lissajous closed form") {
  LissajousParams p = figure_eight(5.0);
  p.psi = 0.7;
  const KinematicSample k0 = lissajous(0.0, p);
  CHECK(k0.pos.x() == 0.0);
  CHECK(k0.pos.y() == 0.0);
  CHECK(k0.pos.z() == 0.7);

  const double t = std::numbers::pi / 2.0 * p.period_scale;
  const double s = 2.0 * std::numbers::pi * t / p.period_scale;
  const KinematicSample k = lissajous(t, p);
  CHECK(k.pos.x() == doctest::Approx(2.0 * std::sin(s)).epsilon(1e-14));
  CHECK(k.pos.y() == doctest::Approx(0.5 * std::sin(2.0 * s)).epsilon(1e-14));
}

TEST_CASE("lissajous derivatives agree with finite differences") {
  LissajousParams p = figure_eight(3.5);
  p.c = 0.3;
  p.m_rel = 3.0;
  p.phi = 0.4;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> time(0.0, 20.0);
  const double h = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const double t = time(rng);
    const KinematicSample k = lissajous(t, p);
    const KinematicSample kp = lissajous(t + h, p);
    const KinematicSample km = lissajous(t - h, p);
    CHECK(((kp.pos - km.pos) / (2 * h) - k.vel).norm() < 1e-6);
    CHECK(((kp.vel - km.vel) / (2 * h) - k.acc).norm() < 1e-6);
    CHECK(((kp.acc - km.acc) / (2 * h) - *k.jerk).norm() < 1e-6);
    CHECK(((*kp.jerk - *km.jerk) / (2 * h) - *k.snap).norm() < 1e-5);
  }
}

TEST_CASE("lissajous derivatives match the symbolic expressions") {
  LissajousParams p = figure_eight(4.0);
  p.c = 0.2;
  p.m_rel = 1.5;
  p.phi = -0.3;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> time(-10.0, 10.0);
  const double w = 2.0 * std::numbers::pi / p.period_scale;
  for (int i = 0; i < 1000; ++i) {
    const double t = time(rng);
    const KinematicSample k = lissajous(t, p);
    const double s = w * t;
    CHECK(std::abs(k.vel.x() - p.a * w * std::cos(s)) < 1e-9);
    CHECK(std::abs(k.vel.y() - p.b * p.n * w * std::cos(p.n * s + p.phi)) < 1e-9);
    CHECK(std::abs(k.vel.z() - p.c * p.m_rel * w * std::cos(p.m_rel * s)) < 1e-9);
    CHECK(std::abs(k.acc.x() + p.a * w * w * std::sin(s)) < 1e-9);
    CHECK(std::abs(k.acc.y() + p.b * p.n * p.n * w * w *
                                   std::sin(p.n * s + p.phi)) < 1e-9);
  }
}

TEST_CASE("flat_map at hover and along a constant-velocity line") {
  const VehicleParams vp;
  KinematicSample k;
  k.pos = Vec3(0.1, -0.2, 0.7);
  const ReferencePoint r = flat_map(k, vp);
  CHECK((r.cable_dir - Vec3(0, 0, -1)).norm() < 1e-15);
  CHECK((r.quad_pos - (k.pos + Vec3(0, 0, 0.5))).norm() < 1e-15);
  CHECK(r.thrust == doctest::Approx(vp.total_mass() * vp.gravity));

  const TrajectorySource line = LineSource{Vec3(0, 0, 1), Vec3(0.5, 0.2, 0)};
  const ReferencePoint rl = flat_map(line, 2.0, vp);
  CHECK((rl.cable_dir - Vec3(0, 0, -1)).norm() < 1e-15);
  CHECK((rl.quad_pos - rl.load_pos - Vec3(0, 0, 0.5)).norm() < 1e-15);
  CHECK((rl.quad_vel - Vec3(0.5, 0.2, 0)).norm() < 1e-15);
}

TEST_CASE("flat_map rejects a free-falling payload reference") {
  KinematicSample k;
  k.acc = Vec3(0, 0, -9.81);
  try {
    flat_map(k, VehicleParams{});
    FAIL("expected DegenerateTension");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateTension);
  }
}

TEST_CASE("flat_map satisfies the taut constraint along the table trajectories") {
  const VehicleParams vp;
  for (double period : {5.0, 4.0, 3.5}) {
    const TrajectorySource src = LissajousSource{figure_eight(period)};
    for (int i = 0; i <= 2000; ++i) {
      const double t = 0.01 * i;
      const ReferencePoint r = flat_map(src, t, vp);
      CHECK(std::abs((r.quad_pos - r.load_pos).norm() - vp.cable_length) < 1e-12);
    }
  }
}

TEST_CASE("flat_map derivative chain is consistent in time") {
  const VehicleParams vp;
  const TrajectorySource src = LissajousSource{figure_eight(3.5)};
  const double h = 1e-4;
  for (double t : {0.3, 1.1, 2.7, 5.0}) {
    const ReferencePoint r = flat_map(src, t, vp);
    const ReferencePoint rp = flat_map(src, t + h, vp);
    const ReferencePoint rm = flat_map(src, t - h, vp);
    CHECK(((rp.quad_pos - rm.quad_pos) / (2 * h) - r.quad_vel).norm() < 1e-6);
    CHECK(((rp.quad_vel - rm.quad_vel) / (2 * h) - r.quad_acc).norm() < 1e-5);
    CHECK(((rp.cable_dir - rm.cable_dir) / (2 * h) - r.cable_rate).norm() < 1e-6);
    // dR/dt = R hat(Omega)
    const Mat3 dR = (rp.attitude.toRotationMatrix() -
                     rm.attitude.toRotationMatrix()) / (2 * h);
    CHECK((dR - r.attitude.toRotationMatrix() * hat(r.body_rates)).norm() < 1e-4);
  }
}

TEST_CASE("horizon_refs sampling") {
  const VehicleParams vp;
  const TrajectorySource hover = HoverSource{Vec3(0, 0, 0.7)};
  const auto refs = horizon_refs(0.0, 0.1, 10, hover, vp);
  REQUIRE(refs.size() == 10);
  for (const auto& r : refs) {
    CHECK(r.load_pos == refs.front().load_pos);
    CHECK(r.quad_pos == refs.front().quad_pos);
  }

  const TrajectorySource liss = LissajousSource{figure_eight(4.0)};
  const auto one = horizon_refs(1.234, 0.1, 1, liss, vp);
  const ReferencePoint direct = flat_map(liss, 1.234, vp);
  CHECK(one.front().quad_pos == direct.quad_pos);

  const LineSource line{Vec3(1, 2, 3), Vec3(-0.5, 0.25, 0.1)};
  const auto pts = horizon_refs(0.5, 0.1, 10, line, vp);
  for (int k = 0; k < 10; ++k) {
    const double t = 0.5 + 0.1 * k;
    CHECK((pts[k].load_pos - (line.origin + line.velocity * t)).norm() < 1e-14);
  }
  CHECK_THROWS_AS(horizon_refs(0.0, 0.1, 0, hover, vp), Error);
}

TEST_CASE("function sources use finite-difference derivatives") {
  const VehicleParams vp;
  const FunctionSource f{[](double t) { return Vec3(std::sin(t), 0.0, 0.7); }};
  const KinematicSample k = sample(f, 0.5);
  CHECK(k.vel.x() == doctest::Approx(std::cos(0.5)).epsilon(1e-7));
  CHECK(k.acc.x() == doctest::Approx(-std::sin(0.5)).epsilon(1e-5));
  const ReferencePoint r = flat_map(TrajectorySource{f}, 0.5, vp);
  CHECK(std::abs((r.quad_pos - r.load_pos).norm() - vp.cable_length) < 1e-12);
}
