#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "hpa/estimator.hpp"

using namespace hpa;

namespace {

Quat random_attitude(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d v(n(rng), n(rng), n(rng), n(rng));
  v.normalize();
  return Quat(v[0], v[1], v[2], v[3]);
}

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return Vec3(n(rng), n(rng), n(rng));
}

Vec6 random_belief_mean(std::mt19937_64& rng) {
  Vec6 x;
  x.head<3>() = random_vec(rng, 1.0).normalized();
  Vec3 r = random_vec(rng, 1.0);
  x.tail<3>() = r - r.dot(x.head<3>()) * x.head<3>();
  return x;
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

// Taut pendulum under constant hover thrust, sampled by the simulator plant.
struct Pendulum {
  VehicleParams p;
  SystemState x;
  ControlInput u;

  explicit Pendulum(double swing) {
    x.quad_pos = Vec3(0, 0, 1);
    const Vec3 q(std::sin(swing), 0.0, -std::cos(swing));
    x.load_pos = x.quad_pos + p.cable_length * q;
    u.motor_speeds.setConstant(p.motor_speed_for_thrust(p.total_mass() * p.gravity));
  }

  double thrust() const { return thrust_from_motors(u, p); }

  void advance(double dt, int substeps) {
    for (int i = 0; i < substeps; ++i) {
      x = step(x, u, HybridMode::kTaut, dt / substeps, p);
    }
  }

  CableMeasurement measure(std::mt19937_64& rng, double sp, double sv) const {
    const Mat3 R = x.rotation();
    std::normal_distribution<double> np(0.0, sp), nv(0.0, sv);
    CableMeasurement z;
    z.pos_body = R.transpose() * (x.load_pos - x.quad_pos) +
                 Vec3(np(rng), np(rng), np(rng));
    z.vel_body = R.transpose() * (x.load_vel - x.quad_vel) -
                 x.body_rates.cross(R.transpose() * (x.load_pos - x.quad_pos)) +
                 Vec3(nv(rng), nv(rng), nv(rng));
    return z;
  }
};

}  // namespace

TEST_CASE("process model at the vertical equilibrium") {
  const VehicleParams p;
  CableBelief b;
  NoiseConfig noise;
  const EkfResult r = ekf_predict(b, 8.0, Quat::Identity(), 0.01, p, noise);
  CHECK((r.belief.direction() - Vec3(0, 0, -1)).norm() < 1e-15);
  CHECK(r.belief.rate().norm() < 1e-15);
  CHECK(r.status == EkfStatus::kOk);

  noise.process_cov.setZero();
  const EkfResult r0 = ekf_predict(b, 8.0, Quat::Identity(), 1e-12, p, noise);
  CHECK((r0.belief.covariance - b.covariance).norm() < 1e-9);
}

TEST_CASE("process Jacobian matches finite differences") {
  const VehicleParams p;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec6 x = random_belief_mean(rng);
    const Vec3 u = random_vec(rng, 5.0);
    const Mat6 A = ekf_process_jacobian(x, u, p);
    Mat6 fd;
    const double h = 1e-6;
    for (int j = 0; j < 6; ++j) {
      Vec6 dx = Vec6::Zero();
      dx[j] = h;
      fd.col(j) = (ekf_process(x + dx, u, p) - ekf_process(x - dx, u, p)) / (2 * h);
    }
    CHECK((A - fd).norm() <= 1e-5 * std::max(1.0, A.norm()));
  }
}

TEST_CASE("propagated mean matches the integrated process model to O(dt^2)") {
  const VehicleParams p;
  std::mt19937_64 rng(4);
  const NoiseConfig noise;
  for (int i = 0; i < 20; ++i) {
    CableBelief b;
    b.mean = random_belief_mean(rng);
    const Quat att = random_attitude(rng);
    const double f = 8.0;
    const Vec3 u = f * (att.toRotationMatrix() * e3());
    double prev_err = 0.0;
    for (double dt : {1e-3, 5e-4}) {
      // Reference: RK4 with fine substeps.
      Vec6 xr = b.mean;
      const int n = 100;
      const double h = dt / n;
      for (int k = 0; k < n; ++k) {
        const Vec6 k1 = ekf_process(xr, u, p);
        const Vec6 k2 = ekf_process(xr + 0.5 * h * k1, u, p);
        const Vec6 k3 = ekf_process(xr + 0.5 * h * k2, u, p);
        const Vec6 k4 = ekf_process(xr + h * k3, u, p);
        xr += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      }
      const EkfResult r = ekf_predict(b, f, att, dt, p, noise);
      const double err = (r.belief.mean - xr).norm();
      const double scale = 1.0 + ekf_process(b.mean, u, p).squaredNorm() +
                           ekf_process_jacobian(b.mean, u, p).norm();
      CHECK(err < 10.0 * scale * dt * dt);
      if (prev_err > 1e-14) CHECK(err < 0.4 * prev_err);
      prev_err = err;
    }
  }
}

TEST_CASE("measurement model and Jacobian") {
  const VehicleParams p;
  Vec6 x;
  x << 0, 0, -1, 0, 0, 0;
  const Vec6 z = ekf_measurement(x, Mat3::Identity(), Vec3::Zero(), p);
  CHECK((z.head<3>() - Vec3(0, 0, -0.5)).norm() < 1e-15);
  CHECK(z.tail<3>().norm() < 1e-15);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Vec6 xm = random_belief_mean(rng);
    const Mat3 R = random_attitude(rng).toRotationMatrix();
    const Vec3 w = random_vec(rng, 2.0);
    const Mat6 H = ekf_measurement_jacobian(R, w, p);
    Mat6 fd;
    const double h = 1e-6;
    for (int j = 0; j < 6; ++j) {
      Vec6 dx = Vec6::Zero();
      dx[j] = h;
      fd.col(j) = (ekf_measurement(xm + dx, R, w, p) -
                   ekf_measurement(xm - dx, R, w, p)) / (2 * h);
    }
    CHECK((H - fd).norm() <= 1e-5 * H.norm());
  }
}

TEST_CASE("zero innovation leaves the mean and shrinks the covariance") {
  const VehicleParams p;
  const NoiseConfig noise;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    CableBelief b;
    b.mean = random_belief_mean(rng);
    const Quat att = random_attitude(rng);
    const Vec3 w = random_vec(rng, 1.0);
    const Vec6 h = ekf_measurement(b.mean, att.toRotationMatrix(), w, p);
    const CableMeasurement z{h.head<3>(), h.tail<3>()};
    const EkfResult r = ekf_update(b, z, att, w, p, noise);
    CHECK((r.belief.mean - b.mean).norm() < 1e-12);
    CHECK(r.belief.covariance.trace() <= b.covariance.trace());
  }
}

TEST_CASE("singular innovation covariance skips the update") {
  const VehicleParams p;
  NoiseConfig noise;
  noise.measurement_cov.setZero();
  CableBelief b;
  b.covariance.setZero();
  const CableMeasurement z{Vec3(0.1, 0, -0.4), Vec3::Zero()};
  const EkfResult r = ekf_update(b, z, Quat::Identity(), Vec3::Zero(), p, noise);
  CHECK(r.status == EkfStatus::kSingularInnovation);
  CHECK(r.belief.mean == b.mean);
}

TEST_CASE("non-PSD covariance is repaired and reported") {
  const VehicleParams p;
  const NoiseConfig noise;
  CableBelief b;
  b.covariance = Mat6::Identity() * 0.1;
  b.covariance(0, 0) = -0.05;
  const EkfResult r = ekf_predict(b, 8.0, Quat::Identity(), 0.01, p, noise);
  CHECK(r.status == EkfStatus::kNonPSD);
  CHECK(r.min_eigenvalue < -1e-10);
  Eigen::SelfAdjointEigenSolver<Mat6> es(r.belief.covariance);
  CHECK(es.eigenvalues().minCoeff() >= 1e-12 * 0.999);
  CHECK((r.belief.covariance - r.belief.covariance.transpose()).norm() == 0.0);
}

TEST_CASE("covariance stays PSD over 10^4 random cycles") {
  const VehicleParams p;
  const NoiseConfig noise;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> thrust(0.0, 20.0);
  CableBelief b;
  double worst = 1.0;
  bool all_ok = true;
  for (int i = 0; i < 10000; ++i) {
    const Quat att = random_attitude(rng);
    const Vec3 w = random_vec(rng, 1.0);
    EkfResult r = ekf_predict(b, thrust(rng), att, 1.0 / 150.0, p, noise);
    worst = std::min(worst, r.min_eigenvalue);
    all_ok = all_ok && r.status == EkfStatus::kOk;
    const CableMeasurement z{random_vec(rng, 0.3), random_vec(rng, 1.0)};
    r = ekf_update(r.belief, z, att, w, p, noise);
    worst = std::min(worst, r.min_eigenvalue);
    all_ok = all_ok && r.status == EkfStatus::kOk;
    CHECK(std::abs(r.belief.direction().norm() - 1.0) < 1e-12);
    b = r.belief;
  }
  CHECK(worst >= -1e-10);
  CHECK(all_ok);
}

TEST_CASE("load state from belief") {
  const VehicleParams p;
  CableBelief b;
  const LoadEstimate l0 = load_state_from_belief(b, Vec3::Zero(), Vec3(1, 2, 3), p);
  CHECK((l0.pos - Vec3(0, 0, -0.5)).norm() < 1e-15);
  CHECK((l0.vel - Vec3(1, 2, 3)).norm() < 1e-15);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    CableBelief rb;
    rb.mean = random_belief_mean(rng);
    const Vec3 xq = random_vec(rng, 1.0), vq = random_vec(rng, 1.0);
    const LoadEstimate l = load_state_from_belief(rb, xq, vq, p);
    Vec6 back;
    back << (l.pos - xq) / p.cable_length, (l.vel - vq) / p.cable_length;
    CHECK((back - rb.mean).norm() < 1e-14);
  }
}

TEST_CASE("belief from measurement inverts the measurement model") {
  const VehicleParams p;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const Vec6 x = random_belief_mean(rng);
    const Quat att = random_attitude(rng);
    const Vec3 w = random_vec(rng, 1.0);
    const Vec6 h = ekf_measurement(x, att.toRotationMatrix(), w, p);
    const CableBelief b = belief_from_measurement({h.head<3>(), h.tail<3>()}, att, w, p);
    CHECK((b.mean - x).norm() < 1e-12);
    CHECK(b.covariance == Mat6::Identity() * 0.1);
  }
}

TEST_CASE("detector threshold examples") {
  const VehicleParams p;
  auto run = [&](double sep) {
    ModeDetectorState det;
    det.filter_alpha = 1.0;
    return detect_mode(det, Vec3(0, 0, -sep), Vec3::Zero(), p);
  };
  CHECK(run(0.44) == HybridMode::kSlack);
  CHECK(run(0.46) == HybridMode::kTaut);
  CHECK(run(0.5) == HybridMode::kTaut);
}

TEST_CASE("detector with alpha = 1 is the raw threshold rule") {
  const VehicleParams p;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> sep(0.3, 0.55);
  ModeDetectorState det;
  det.filter_alpha = 1.0;
  for (int i = 0; i < 10000; ++i) {
    const double s = sep(rng);
    const Vec3 d = random_vec(rng, 1.0).normalized() * s;
    const Vec3 xq = random_vec(rng, 1.0);
    const HybridMode m = detect_mode(det, xq + d, xq, p);
    const double actual = (xq + d - xq).norm();
    CHECK(m == (actual < p.cable_length - det.epsilon ? HybridMode::kSlack
                                                      : HybridMode::kTaut));
  }
}

TEST_CASE("detector settles to taut once the separation stays near l") {
  const VehicleParams p;
  std::mt19937_64 rng(11);
  const double l = p.cable_length;
  for (double alpha : {0.2, 0.4, 0.8}) {
    ModeDetectorState det;
    det.filter_alpha = alpha;
    // Worst case start: filter primed at zero separation.
    detect_mode(det, Vec3::Zero(), Vec3::Zero(), p);
    // Window after which (1 - alpha)^n * l < epsilon / 2.
    const int window = static_cast<int>(
        std::ceil(std::log(det.epsilon / (2 * l)) / std::log(1.0 - alpha)));
    std::uniform_real_distribution<double> high(l - det.epsilon / 2, l);
    for (int k = 0; k < 200; ++k) {
      const HybridMode m = detect_mode(det, Vec3(0, 0, -high(rng)), Vec3::Zero(), p);
      if (k + 1 >= window) CHECK(m == HybridMode::kTaut);
    }
  }
}

TEST_CASE("detector parameter validation") {
  const VehicleParams p;
  ModeDetectorState det;
  det.epsilon = 0.6;
  CHECK_THROWS_AS(det.validate(p), Error);
  det.epsilon = 0.05;
  det.filter_alpha = 0.0;
  CHECK_THROWS_AS(det.validate(p), Error);
  det.filter_alpha = 1.0;
  CHECK_NOTHROW(det.validate(p));
}

TEST_CASE("EKF converges on a noisy taut pendulum") {
  Pendulum sim(20.0 * std::numbers::pi / 180.0);
  const VehicleParams& p = sim.p;
  const NoiseConfig noise;
  std::mt19937_64 rng(12);
  const double dt = 1.0 / 150.0;

  // Start from a deliberately wrong belief.
  CableBelief b;
  b.mean << std::sin(-0.3), 0.2, -std::cos(0.3), 0, 0, 0;
  b.mean.head<3>().normalize();
  double err_after_2s = 0.0;
  double worst_eig = 1.0;
  for (int k = 1; k <= 500; ++k) {
    EkfResult r = ekf_predict(b, sim.thrust(), sim.x.attitude, dt, p, noise);
    worst_eig = std::min(worst_eig, r.min_eigenvalue);
    sim.advance(dt, 7);
    r = ekf_update(r.belief, sim.measure(rng, 0.005, 0.05), sim.x.attitude,
                   sim.x.body_rates, p, noise);
    worst_eig = std::min(worst_eig, r.min_eigenvalue);
    b = r.belief;
    const double err = angle_between(b.direction(), cable_state(sim.x).direction);
    if (k * dt >= 2.0) err_after_2s = std::max(err_after_2s, err);
  }
  CHECK(err_after_2s * 180.0 / std::numbers::pi < 2.0);
  CHECK(worst_eig >= -1e-10);
}

TEST_CASE("exact measurements drive the error to zero") {
  Pendulum sim(15.0 * std::numbers::pi / 180.0);
  const VehicleParams& p = sim.p;
  NoiseConfig noise;
  noise.measurement_cov.setZero();
  std::mt19937_64 rng(13);
  const double dt = 1.0 / 150.0;
  CableBelief b;
  b.mean << 0.3, 0.0, -1.0, 0.0, 0.2, 0.0;
  b.mean.head<3>().normalize();
  std::vector<double> errs;
  for (int k = 0; k < 400; ++k) {
    const EkfResult r = ekf_predict(b, sim.thrust(), sim.x.attitude, dt, p, noise);
    sim.advance(dt, 7);
    b = ekf_update(r.belief, sim.measure(rng, 0.0, 0.0), sim.x.attitude,
                   sim.x.body_rates, p, noise).belief;
    errs.push_back(angle_between(b.direction(), cable_state(sim.x).direction));
  }
  CHECK(errs.back() < 1e-9);
  for (std::size_t i = 51; i < errs.size(); ++i) CHECK(errs[i] <= errs[i - 1] + 1e-9);
}

TEST_CASE("exact measurements with the default noise keep the error small") {
  Pendulum sim(15.0 * std::numbers::pi / 180.0);
  const VehicleParams& p = sim.p;
  const NoiseConfig noise;
  std::mt19937_64 rng(14);
  const double dt = 1.0 / 150.0;
  CableBelief b;
  double worst = 0.0;
  for (int k = 0; k < 400; ++k) {
    const EkfResult r = ekf_predict(b, sim.thrust(), sim.x.attitude, dt, p, noise);
    sim.advance(dt, 7);
    b = ekf_update(r.belief, sim.measure(rng, 0.0, 0.0), sim.x.attitude,
                   sim.x.body_rates, p, noise).belief;
    if (k >= 50) {
      worst = std::max(worst, angle_between(b.direction(), cable_state(sim.x).direction));
    }
  }
  // Residual comes from the Euler process model, not from the measurements.
  CHECK(worst * 180.0 / std::numbers::pi < 1.0);
}

TEST_CASE("payload estimator switches between EKF and ballistic fixes") {
  VehicleParams p;
  EstimatorConfig cfg;
  cfg.filter_alpha = 1.0;
  PayloadEstimator est(p, cfg);
  QuadEstimate quad;
  quad.pos = Vec3(0, 0, 1);
  CHECK(!est.initialized());

  CHECK(est.measure({Vec3(0, 0, -0.5), Vec3::Zero()}, quad) == HybridMode::kTaut);
  REQUIRE(est.belief().has_value());
  CHECK((est.load(quad).pos - Vec3(0, 0, 0.5)).norm() < 1e-12);

  // Slack fix: payload 0.3 m below, rising at 1 m/s.
  CHECK(est.measure({Vec3(0, 0, -0.3), Vec3(0, 0, 1)}, quad) == HybridMode::kSlack);
  CHECK(!est.belief().has_value());
  est.predict(0.1, 8.0, Quat::Identity());
  const LoadEstimate l = est.load(quad);
  CHECK(l.pos.z() == doctest::Approx(0.7 + 0.1 - 0.5 * 9.81 * 0.01));
  CHECK(l.vel.z() == doctest::Approx(1.0 - 0.981));

  // Back to taut: EKF re-seeded from the raw measurement.
  CHECK(est.measure({Vec3(0.3, 0, -0.4), Vec3::Zero()}, quad) == HybridMode::kTaut);
  REQUIRE(est.belief().has_value());
  CHECK((est.belief()->direction() - Vec3(0.6, 0, -0.8)).norm() < 1e-12);
}
