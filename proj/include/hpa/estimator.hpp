#pragma once

#include <optional>

#include "hpa/common.hpp"
#include "hpa/dynamics.hpp"

namespace hpa {

/// EKF state over the cable: direction q (robot -> payload) and its rate.
struct CableBelief {
  Vec6 mean = (Vec6() << 0, 0, -1, 0, 0, 0).finished();
  Mat6 covariance = Mat6::Identity() * 0.1;

  Vec3 direction() const { return mean.head<3>(); }
  Vec3 rate() const { return mean.tail<3>(); }
};

struct NoiseConfig {
  Mat6 process_cov = Mat6::Identity() * 1e-4;
  Mat6 measurement_cov =
      (Vec6() << 1e-3, 1e-3, 1e-3, 1e-2, 1e-2, 1e-2).finished().asDiagonal();

  void validate() const;
};

/// Payload position and velocity relative to the quadrotor, body frame.
struct CableMeasurement {
  Vec3 pos_body = Vec3::Zero();
  Vec3 vel_body = Vec3::Zero();
};

enum class EkfStatus { kOk, kNonPSD, kSingularInnovation };

const char* to_string(EkfStatus s);

struct EkfResult {
  CableBelief belief;
  EkfStatus status = EkfStatus::kOk;
  double min_eigenvalue = 0.0;  // of the covariance before any repair
};

/// Continuous process model Xdot = f(X, u) with u = thrust * R e3.
Vec6 ekf_process(const Vec6& x, const Vec3& u, const VehicleParams& p);
/// d f / d X, analytic.
Mat6 ekf_process_jacobian(const Vec6& x, const Vec3& u, const VehicleParams& p);

/// Predicted measurement h(X) = [R^T l q; l (R^T qdot - Omega x R^T q)].
Vec6 ekf_measurement(const Vec6& x, const Mat3& R, const Vec3& body_rates,
                     const VehicleParams& p);
Mat6 ekf_measurement_jacobian(const Mat3& R, const Vec3& body_rates,
                              const VehicleParams& p);

EkfResult ekf_predict(const CableBelief& belief, double thrust, const Quat& attitude,
                      double dt, const VehicleParams& p, const NoiseConfig& noise);

/// Joseph-form update. On a singular innovation covariance the belief is
/// returned unchanged with kSingularInnovation.
EkfResult ekf_update(const CableBelief& belief, const CableMeasurement& z,
                     const Quat& attitude, const Vec3& body_rates,
                     const VehicleParams& p, const NoiseConfig& noise);

/// Belief mean reconstructed from a raw measurement (inverse of h).
CableBelief belief_from_measurement(const CableMeasurement& z, const Quat& attitude,
                                    const Vec3& body_rates, const VehicleParams& p,
                                    double init_var = 0.1);

struct LoadEstimate {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
};

LoadEstimate load_state_from_belief(const CableBelief& belief, const Vec3& quad_pos,
                                    const Vec3& quad_vel, const VehicleParams& p);

struct ModeDetectorState {
  double epsilon = 0.05;
  double filtered_length = 0.0;
  double filter_alpha = 0.8;
  HybridMode current_mode = HybridMode::kTaut;
  bool primed = false;  // first sample seeds the filter

  void validate(const VehicleParams& p) const;
};

/// One detector tick: low-pass the separation, then threshold at l - epsilon.
HybridMode detect_mode(ModeDetectorState& det, const Vec3& load_pos,
                       const Vec3& quad_pos, const VehicleParams& p);

/// Quadrotor state as seen by the estimator (noisy in simulation).
struct QuadEstimate {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Quat attitude = Quat::Identity();
  Vec3 body_rates = Vec3::Zero();
};

struct EstimatorConfig {
  NoiseConfig noise;
  double epsilon = 0.05;
  double filter_alpha = 0.8;
  double init_var = 0.1;
  /// Run the EKF through slack phases as if the cable never went slack.
  /// The detector still runs; only the estimate ignores it.
  bool assume_taut = false;
};

/// Full payload pipeline: detector on the raw separation, EKF while taut,
/// ballistic propagation of the last raw fix while slack.
class PayloadEstimator {
 public:
  PayloadEstimator(const VehicleParams& params, const EstimatorConfig& config);

  /// Time update, called at the controller rate.
  void predict(double dt, double thrust, const Quat& attitude);
  /// Measurement tick (camera rate). Returns the detected mode.
  HybridMode measure(const CableMeasurement& z, const QuadEstimate& quad);

  HybridMode mode() const { return detector_.current_mode; }
  const ModeDetectorState& detector() const { return detector_; }
  const std::optional<CableBelief>& belief() const { return belief_; }
  EkfStatus last_status() const { return last_status_; }
  bool initialized() const { return have_fix_; }
  void set_assume_taut(bool on) { config_.assume_taut = on; }

  /// Payload estimate in the world frame for the given quadrotor estimate.
  LoadEstimate load(const QuadEstimate& quad) const;

 private:
  VehicleParams params_;
  EstimatorConfig config_;
  ModeDetectorState detector_;
  std::optional<CableBelief> belief_;
  EkfStatus last_status_ = EkfStatus::kOk;
  bool have_fix_ = false;
  LoadEstimate raw_;         // last raw world-frame fix
  double since_fix_ = 0.0;   // s
};

}  // namespace hpa
