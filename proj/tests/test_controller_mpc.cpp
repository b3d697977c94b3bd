#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "hpa/controller_mpc.hpp"

using namespace hpa;

namespace {

Vec3 rand3(std::mt19937_64& rng, double s) {
  std::normal_distribution<double> n(0.0, s);
  return Vec3(n(rng), n(rng), n(rng));
}

Quat small_rotation(std::mt19937_64& rng, double s) {
  const Vec3 aa = rand3(rng, s);
  return Quat(Eigen::AngleAxisd(aa.norm(), aa.norm() > 0 ? Vec3(aa.normalized()) : Vec3::UnitZ()));
}

SystemState hover_state(const VehicleParams& p) {
  SystemState x;
  x.quad_pos = Vec3(0, 0, 1.2);
  x.load_pos = Vec3(0, 0, 0.7);
  (void)p;
  return x;
}

// Random taut-consistent state near hover.
SystemState random_taut(std::mt19937_64& rng, const VehicleParams& p, double spread) {
  SystemState x;
  x.quad_pos = rand3(rng, 0.3);
  Vec3 q = (Vec3(0, 0, -1) + rand3(rng, spread)).normalized();
  x.load_pos = x.quad_pos + p.cable_length * q;
  x.quad_vel = rand3(rng, spread);
  Vec3 qd = rand3(rng, spread);
  qd -= qd.dot(q) * q;
  x.load_vel = x.quad_vel + p.cable_length * qd;
  x.attitude = small_rotation(rng, spread);
  x.body_rates = rand3(rng, spread);
  return x;
}

ControlInput hover_input(const VehicleParams& p, double mass) {
  ControlInput u;
  u.motor_speeds.setConstant(p.motor_speed_for_thrust(mass * p.gravity));
  return u;
}

MpcProblem hover_problem(const VehicleParams& p, HybridMode mode = HybridMode::kTaut) {
  MpcProblem pr;
  pr.params = p;
  const int n = pr.config.horizon_steps;
  pr.initial_state = hover_state(p);
  pr.mode_schedule.assign(n, mode);
  const double mass = mode == HybridMode::kTaut ? p.total_mass() : p.quad_mass;
  pr.state_refs.assign(n, hover_state(p));
  pr.input_refs.assign(n, hover_input(p, mass));
  return pr;
}

double input_range(const MpcProblem& pr) {
  return pr.config.upper_bound(pr.params) - pr.config.lower_bound(pr.params);
}

Eigen::VectorXd stacked_inputs(const MpcSolution& s) {
  Eigen::VectorXd v(4 * s.input_traj.size());
  for (std::size_t k = 0; k < s.input_traj.size(); ++k) {
    v.segment<4>(4 * k) = s.input_traj[k].motor_speeds;
  }
  return v;
}

}  // namespace

TEST_CASE("Gauss-Legendre step keeps taut hover fixed") {
  const VehicleParams p;
  const SystemState x = hover_state(p);
  bool diverged = true;
  const SystemState y = discrete_dynamics(x, hover_input(p, p.total_mass()),
                                          HybridMode::kTaut, 0.1, p,
                                          kDefaultGlSubsteps, &diverged);
  CHECK(!diverged);
  CHECK((to_vector(y) - to_vector(x)).norm() < 1e-9);
}

TEST_CASE("slack Gauss-Legendre step is ballistic for the payload") {
  const VehicleParams p;
  SystemState x = hover_state(p);
  x.load_pos = Vec3(0.1, 0, 0.9);
  const double dt = 0.1;
  const SystemState y =
      discrete_dynamics(x, hover_input(p, p.quad_mass), HybridMode::kSlack, dt, p);
  CHECK((y.quad_pos - x.quad_pos).norm() < 1e-12);
  CHECK(y.load_pos.z() == doctest::Approx(0.9 - 0.5 * p.gravity * dt * dt).epsilon(1e-12));
}

TEST_CASE("Gauss-Legendre step matches fine RK4") {
  const VehicleParams p;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> spin(0.98, 1.02);
  const double w_hover = p.motor_speed_for_thrust(p.total_mass() * p.gravity);
  for (int i = 0; i < 40; ++i) {
    const SystemState x = random_taut(rng, p, 0.3);
    ControlInput u;
    for (int j = 0; j < 4; ++j) u.motor_speeds(j) = w_hover * spin(rng);
    const HybridMode mode = i % 2 ? HybridMode::kTaut : HybridMode::kSlack;
    const double dt = 0.1;
    StateVector ref = to_vector(x);
    for (int k = 0; k < 100; ++k) ref = detail::rk4(ref, u.motor_speeds, mode, dt / 100, p);
    ref.segment<4>(kAttitude).normalize();
    bool diverged = true;
    const StateVector y = to_vector(discrete_dynamics(x, u, mode, dt, p, kDefaultGlSubsteps, &diverged));
    CHECK(!diverged);
    CHECK((y - ref).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("Gauss-Legendre sensitivities match finite differences") {
  const VehicleParams p;
  std::mt19937_64 rng(32);
  const double w_hover = p.motor_speed_for_thrust(p.total_mass() * p.gravity);
  for (int i = 0; i < 10; ++i) {
    const StateVector x = to_vector(random_taut(rng, p, 0.2));
    const Vec4 w = Vec4::Constant(w_hover) + 20.0 * Vec4::Random();
    const HybridMode mode = i % 2 ? HybridMode::kTaut : HybridMode::kSlack;
    const detail::GlStep s = detail::gauss_legendre_step(x, w, mode, 0.1, p, true);
    for (int j = 0; j < kStateDim; ++j) {
      StateVector xp = x, xm = x;
      xp(j) += 1e-6;
      xm(j) -= 1e-6;
      const StateVector fd = (detail::gauss_legendre_step(xp, w, mode, 0.1, p, false).next -
                              detail::gauss_legendre_step(xm, w, mode, 0.1, p, false).next) / 2e-6;
      CHECK((s.A.col(j) - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
    }
    for (int j = 0; j < kInputDim; ++j) {
      Vec4 wp = w, wm = w;
      wp(j) += 1e-3;
      wm(j) -= 1e-3;
      const StateVector fd = (detail::gauss_legendre_step(x, wp, mode, 0.1, p, false).next -
                              detail::gauss_legendre_step(x, wm, mode, 0.1, p, false).next) / 2e-3;
      CHECK((s.B.col(j) - fd).norm() <= 1e-5 * std::max(1e-3, fd.norm()));
    }
  }
}

TEST_CASE("payload in the camera frame") {
  VehicleParams p;
  SystemState x;
  x.quad_pos = Vec3(1, 2, 3);
  x.load_pos = x.quad_pos - 0.5 * e3();
  CHECK((payload_in_camera(x, p) - Vec3(0, 0, -0.5)).norm() < 1e-15);

  p.cam_translation = Vec3(0.05, -0.02, 0.03);
  CHECK((payload_in_camera(x, p) - (Vec3(0, 0, -0.5) - p.cam_translation)).norm() < 1e-15);

  std::mt19937_64 rng(33);
  for (int i = 0; i < 100; ++i) {
    p.cam_rotation = small_rotation(rng, 1.0).toRotationMatrix();
    p.cam_translation = rand3(rng, 0.1);
    SystemState s;
    s.quad_pos = rand3(rng, 2.0);
    s.load_pos = rand3(rng, 2.0);
    s.attitude = small_rotation(rng, 2.0);
    const Vec3 c = payload_in_camera(s, p);
    const Mat3 R = s.rotation();
    const Vec3 world = s.quad_pos + R * (p.cam_translation + p.cam_rotation * c);
    CHECK((world - s.load_pos).norm() < 1e-12);
  }
}

TEST_CASE("stage cost examples and gating") {
  const VehicleParams p;
  const MpcConfig c;
  const SystemState xr = hover_state(p);
  const ControlInput ur = hover_input(p, p.total_mass());
  CHECK(stage_cost(xr, ur, xr, ur, HybridMode::kTaut, c, p) == 0.0);
  CHECK(stage_cost(xr, ur, xr, ur, HybridMode::kSlack, c, p) == 0.0);

  MpcConfig nocam = c;
  nocam.q_cam.setZero();
  SystemState x = xr;
  x.load_pos += Vec3(0.2, -0.1, 0.05);
  x.load_vel = Vec3(0.3, 0.0, 0.1);
  CHECK(stage_cost(x, ur, xr, ur, HybridMode::kSlack, nocam, p) == 0.0);
  CHECK(stage_cost(x, ur, xr, ur, HybridMode::kTaut, nocam, p) > 0.0);

  // Slack cost is blind to the payload reference when Q_cam = 0.
  std::mt19937_64 rng(34);
  for (int i = 0; i < 100; ++i) {
    const SystemState s = random_taut(rng, p, 0.3);
    SystemState r1 = random_taut(rng, p, 0.3), r2 = r1;
    r2.load_pos += rand3(rng, 1.0);
    r2.load_vel += rand3(rng, 1.0);
    CHECK(stage_cost(s, ur, r1, ur, HybridMode::kSlack, nocam, p) ==
          stage_cost(s, ur, r2, ur, HybridMode::kSlack, nocam, p));
  }
}

TEST_CASE("stage cost equals the hand-expanded quadratic form") {
  const VehicleParams p;
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> wdist(0.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    MpcConfig c;
    for (int j = 0; j < kErrDim; ++j) {
      c.q_taut(j) = wdist(rng);
      c.q_slack(j) = wdist(rng);
    }
    for (int j = 0; j < 4; ++j) {
      c.r_taut(j) = wdist(rng);
      c.r_slack(j) = wdist(rng);
    }
    c.q_cam = Vec2(wdist(rng), wdist(rng));
    const SystemState x = random_taut(rng, p, 0.5), xr = random_taut(rng, p, 0.5);
    ControlInput u, ur;
    u.motor_speeds = 400.0 * Vec4::Ones() + 50.0 * Vec4::Random();
    ur.motor_speeds = 400.0 * Vec4::Ones() + 50.0 * Vec4::Random();
    const HybridMode mode = i % 2 ? HybridMode::kTaut : HybridMode::kSlack;
    const ErrorVector& Q = mode == HybridMode::kTaut ? c.q_taut : c.q_slack;
    const Vec4& R = mode == HybridMode::kTaut ? c.r_taut : c.r_slack;

    // Independent evaluation.
    double expect = 0.0;
    const Vec3 e_parts[6] = {
        x.load_pos - xr.load_pos, x.load_vel - xr.load_vel, x.quad_pos - xr.quad_pos,
        x.quad_vel - xr.quad_vel,
        [&] {
          Quat e = xr.attitude.conjugate() * x.attitude;
          return e.w() < 0 ? Vec3(-e.vec()) : Vec3(e.vec());
        }(),
        x.body_rates - xr.body_rates};
    for (int b = 0; b < 6; ++b)
      for (int j = 0; j < 3; ++j) expect += Q(3 * b + j) * e_parts[b](j) * e_parts[b](j);
    for (int j = 0; j < 4; ++j) {
      const double d = u.motor_speeds(j) - ur.motor_speeds(j);
      expect += R(j) * d * d;
    }
    const Mat3 Rb = x.rotation();
    const Vec3 cam = Rb.transpose() * (x.load_pos - x.quad_pos);
    expect += c.q_cam(0) * cam.x() * cam.x() + c.q_cam(1) * cam.y() * cam.y();
    CHECK(stage_cost(x, u, xr, ur, mode, c, p) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("moving the payload off the camera axis raises the cost") {
  const VehicleParams p;
  const MpcConfig c;
  const SystemState xr = hover_state(p);
  const ControlInput ur = hover_input(p, p.total_mass());
  double prev = stage_cost(xr, ur, xr, ur, HybridMode::kSlack, c, p);
  for (int k = 1; k <= 10; ++k) {
    SystemState x = xr;
    const double ang = 0.05 * k;
    x.load_pos = x.quad_pos + 0.5 * Vec3(std::sin(ang), 0, -std::cos(ang));
    const double cost = stage_cost(x, ur, xr, ur, HybridMode::kSlack, c, p);
    CHECK(cost > prev);
    prev = cost;
  }
}

TEST_CASE("solve at the hover reference returns the hover command") {
  const VehicleParams p;
  MpcProblem pr = hover_problem(p);
  const MpcSolution s = solve(pr);
  CHECK(s.command.thrust == doctest::Approx(p.total_mass() * p.gravity).epsilon(1e-6));
  CHECK(s.command.body_rates.norm() < 1e-6);
  CHECK(s.cost < 1e-8);
  CHECK(s.state_traj.size() == 11);
  CHECK(s.input_traj.size() == 10);
  CHECK(!s.newton_diverged);
  CHECK(!s.qp_infeasible);
}

TEST_CASE("slack problem with displaced payload holds the quadrotor") {
  const VehicleParams p;
  MpcProblem pr = hover_problem(p, HybridMode::kSlack);
  pr.config.q_cam.setZero();
  pr.initial_state.load_pos = Vec3(0.15, 0.1, 0.9);
  pr.initial_state.load_vel = Vec3(0.5, 0, 1.0);
  const MpcSolution s = solve(pr);
  CHECK(s.command.thrust == doctest::Approx(p.quad_mass * p.gravity).epsilon(1e-6));
  CHECK(s.command.body_rates.norm() < 1e-6);
}

TEST_CASE("RTI first stage is close to the converged solve") {
  const VehicleParams p;
  std::mt19937_64 rng(36);
  for (int i = 0; i < 5; ++i) {
    MpcProblem pr = hover_problem(p);
    pr.initial_state.quad_pos += rand3(rng, 0.03);
    pr.initial_state.load_pos = pr.initial_state.quad_pos - 0.5 * e3();
    pr.initial_state.quad_vel = rand3(rng, 0.05);
    pr.initial_state.load_vel = pr.initial_state.quad_vel;
    const MpcSolution rti = solve(pr);
    MpcProblem full = pr;
    full.config.max_sqp_iters = 50;
    full.config.tolerance = 1e-8;
    const MpcSolution conv = solve(full);
    const double diff =
        (rti.input_traj[0].motor_speeds - conv.input_traj[0].motor_speeds).cwiseAbs().maxCoeff();
    CHECK(diff < 0.05 * input_range(pr));
    CHECK(conv.kkt_residual < full.config.tolerance);
  }
}

TEST_CASE("Gauss-Newton gradient matches finite differences of the objective") {
  const VehicleParams p;
  std::mt19937_64 rng(37);
  for (int i = 0; i < 5; ++i) {
    MpcProblem pr = hover_problem(p, i % 2 ? HybridMode::kTaut : HybridMode::kSlack);
    pr.initial_state = random_taut(rng, p, 0.1);
    pr.initial_state.quad_pos += Vec3(0, 0, 1.2);
    pr.initial_state.load_pos += Vec3(0, 0, 1.2);
    Eigen::VectorXd U(40);
    const double w0 = pr.input_refs[0].motor_speeds(0);
    for (int k = 0; k < 40; ++k) U(k) = w0 + 5.0 * std::sin(1.3 * k + i);
    const Eigen::VectorXd g = detail::rollout_gradient(pr, U);
    Eigen::VectorXd fd(40);
    for (int k = 0; k < 40; ++k) {
      Eigen::VectorXd up = U, um = U;
      up(k) += 1e-3;
      um(k) -= 1e-3;
      fd(k) = (detail::rollout_objective(pr, up) - detail::rollout_objective(pr, um)) / 2e-3;
    }
    CHECK((g - fd).norm() <= 1e-4 * fd.norm());
  }
}

TEST_CASE("inputs respect the motor bounds") {
  const VehicleParams p;
  std::mt19937_64 rng(38);
  for (int i = 0; i < 10; ++i) {
    MpcProblem pr = hover_problem(p);
    // Large errors push the optimum against the bounds.
    pr.initial_state.quad_pos += rand3(rng, 1.0);
    pr.initial_state.load_pos = pr.initial_state.quad_pos - 0.5 * e3();
    pr.config.motor_max = 600.0;
    pr.config.motor_min = 200.0;
    pr.config.max_sqp_iters = 3;
    const MpcSolution s = solve(pr);
    for (const auto& u : s.input_traj) {
      CHECK(u.motor_speeds.minCoeff() >= 200.0 - 1e-8);
      CHECK(u.motor_speeds.maxCoeff() <= 600.0 + 1e-8);
    }
  }
}

TEST_CASE("warm-started RTI on a static problem converges to the SQP solution") {
  const VehicleParams p;
  MpcProblem pr = hover_problem(p);
  pr.initial_state.quad_pos += Vec3(0.05, -0.03, 0.02);
  pr.initial_state.load_pos = pr.initial_state.quad_pos - 0.5 * e3();
  MpcProblem full = pr;
  full.config.max_sqp_iters = 100;
  full.config.tolerance = 1e-10;
  const Eigen::VectorXd target = stacked_inputs(solve(full));

  MpcSolution s = solve(pr);
  double prev = (stacked_inputs(s) - target).cwiseAbs().maxCoeff();
  for (int k = 1; k < 20; ++k) {
    s = solve(pr, &s);
    const double d = (stacked_inputs(s) - target).cwiseAbs().maxCoeff();
    CHECK(d <= prev + 1e-9);
    prev = d;
  }
  CHECK(prev / input_range(pr) < 1e-4);
}

TEST_CASE("command loop uses a single mode over the horizon") {
  const VehicleParams p;
  const MpcConfig c;
  const TrajectorySource hover = HoverSource{Vec3(0, 0, 0.7)};
  const auto refs = horizon_refs(0.0, c.dt(), c.horizon_steps, hover, p);
  SystemState x = hover_state(p);
  x.load_pos = Vec3(0.05, 0, 0.85);

  const MpcStep slack = command_loop_step(0.0, x, HybridMode::kSlack, refs, c, p, nullptr);
  CHECK(slack.command.thrust < p.total_mass() * p.gravity * 0.95);
  const MpcStep taut = command_loop_step(0.0, hover_state(p), HybridMode::kTaut, refs, c, p,
                                         &slack.solution);
  CHECK(taut.command.thrust == doctest::Approx(p.total_mass() * p.gravity).epsilon(0.02));

  // Determinism.
  const MpcStep a = command_loop_step(0.01, x, HybridMode::kTaut, refs, c, p, &slack.solution);
  const MpcStep b = command_loop_step(0.01, x, HybridMode::kTaut, refs, c, p, &slack.solution);
  CHECK(a.command.thrust == b.command.thrust);
  CHECK(a.command.body_rates == b.command.body_rates);
  CHECK(stacked_inputs(a.solution) == stacked_inputs(b.solution));
}

TEST_CASE("solver rejects malformed problems") {
  const VehicleParams p;
  MpcProblem pr = hover_problem(p);
  pr.mode_schedule[3] = HybridMode::kSlack;
  CHECK_THROWS_AS(solve(pr), Error);
  pr = hover_problem(p);
  pr.state_refs.pop_back();
  CHECK_THROWS_AS(solve(pr), Error);
  pr = hover_problem(p);
  pr.initial_state.quad_pos.x() = NAN;
  try {
    solve(pr);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
  }
}
