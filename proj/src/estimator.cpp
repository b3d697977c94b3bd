#include "hpa/estimator.hpp"

#include <Eigen/Eigenvalues>


namespace hpa {

const char* to_string(EkfStatus s) {
  switch (s) {
    case EkfStatus::kOk: return "ok";
    case EkfStatus::kNonPSD: return "non_psd";
    case EkfStatus::kSingularInnovation: return "singular_innovation";
  }
  return "unknown";
}

namespace {

bool is_psd(const Mat6& m) {
  if (!m.allFinite() || (m - m.transpose()).norm() > 1e-9 * (1.0 + m.norm())) {
    return false;
  }
  Eigen::SelfAdjointEigenSolver<Mat6> es(m);
  return es.eigenvalues().minCoeff() >= -1e-12;
}

// Symmetrize and clamp eigenvalues. Returns the smallest eigenvalue seen.
double repair(Mat6& P) {
  P = (0.5 * (P + P.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Mat6> es(P);
  const double min_eig = es.eigenvalues().minCoeff();
  if (min_eig < 1e-12) {
    const Vec6 ev = es.eigenvalues().cwiseMax(1e-12);
    P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    P = (0.5 * (P + P.transpose())).eval();
  }
  return min_eig;
}

EkfStatus finish(Mat6& P, double& min_eig) {
  min_eig = repair(P);
  return min_eig < -1e-10 ? EkfStatus::kNonPSD : EkfStatus::kOk;
}

void renormalize(Vec6& x) {
  const double n = x.head<3>().norm();
  if (n > 1e-12) x.head<3>() /= n;
}

}  // namespace

void NoiseConfig::validate() const {
  if (!is_psd(process_cov)) throw Error(ErrorCode::kInvalidArgument, "Q_N not PSD");
  if (!is_psd(measurement_cov)) throw Error(ErrorCode::kInvalidArgument, "Q_V not PSD");
}

Vec6 ekf_process(const Vec6& x, const Vec3& u, const VehicleParams& p) {
  const Vec3 q = x.head<3>(), qd = x.tail<3>();
  Vec6 f;
  f.head<3>() = qd;
  f.tail<3>() = q.cross(q.cross(u)) / (p.quad_mass * p.cable_length) -
                qd.squaredNorm() * q;
  return f;
}

Mat6 ekf_process_jacobian(const Vec6& x, const Vec3& u, const VehicleParams& p) {
  const Vec3 q = x.head<3>(), qd = x.tail<3>();
  // q x (q x u) = q (q.u) - u (q.q)
  const Mat3 dcross = q.dot(u) * Mat3::Identity() + q * u.transpose() -
                      2.0 * u * q.transpose();
  Mat6 A = Mat6::Zero();
  A.topRightCorner<3, 3>() = Mat3::Identity();
  A.bottomLeftCorner<3, 3>() = dcross / (p.quad_mass * p.cable_length) -
                               qd.squaredNorm() * Mat3::Identity();
  A.bottomRightCorner<3, 3>() = -2.0 * q * qd.transpose();
  return A;
}

Vec6 ekf_measurement(const Vec6& x, const Mat3& R, const Vec3& body_rates,
                     const VehicleParams& p) {
  const double l = p.cable_length;
  const Vec3 qb = R.transpose() * x.head<3>();
  Vec6 z;
  z.head<3>() = l * qb;
  z.tail<3>() = l * (R.transpose() * x.tail<3>() - body_rates.cross(qb));
  return z;
}

Mat6 ekf_measurement_jacobian(const Mat3& R, const Vec3& body_rates,
                              const VehicleParams& p) {
  const double l = p.cable_length;
  Mat6 H = Mat6::Zero();
  H.topLeftCorner<3, 3>() = l * R.transpose();
  H.bottomLeftCorner<3, 3>() = -l * hat(body_rates) * R.transpose();
  H.bottomRightCorner<3, 3>() = l * R.transpose();
  return H;
}

EkfResult ekf_predict(const CableBelief& belief, double thrust, const Quat& attitude,
                      double dt, const VehicleParams& p, const NoiseConfig& noise) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "ekf_predict: dt must be > 0");
  if (!belief.mean.allFinite() || !belief.covariance.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "ekf_predict: belief not finite");
  }
  const Vec3 u = thrust * (attitude.toRotationMatrix() * e3());
  const Mat6 F = Mat6::Identity() + dt * ekf_process_jacobian(belief.mean, u, p);
  EkfResult r;
  r.belief.mean = belief.mean + dt * ekf_process(belief.mean, u, p);
  renormalize(r.belief.mean);
  r.belief.covariance = F * belief.covariance * F.transpose() + noise.process_cov * dt;
  r.status = finish(r.belief.covariance, r.min_eigenvalue);
  return r;
}

EkfResult ekf_update(const CableBelief& belief, const CableMeasurement& z,
                     const Quat& attitude, const Vec3& body_rates,
                     const VehicleParams& p, const NoiseConfig& noise) {
  if (!z.pos_body.allFinite() || !z.vel_body.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "ekf_update: measurement not finite");
  }
  const Mat3 R = attitude.toRotationMatrix();
  const Mat6 H = ekf_measurement_jacobian(R, body_rates, p);
  Vec6 zv;
  zv << z.pos_body, z.vel_body;
  const Vec6 innov = zv - ekf_measurement(belief.mean, R, body_rates, p);
  const Mat6& P = belief.covariance;
  const Mat6 S = H * P * H.transpose() + noise.measurement_cov;

  EkfResult r;
  r.belief = belief;
  Eigen::LDLT<Mat6> ldlt(S);
  const double smax = S.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, smax)) {
    r.status = EkfStatus::kSingularInnovation;
    r.min_eigenvalue = Eigen::SelfAdjointEigenSolver<Mat6>(P).eigenvalues().minCoeff();
    return r;
  }
  const Mat6 K = ldlt.solve(H * P).transpose();  // P H^T S^-1 with S, P symmetric
  r.belief.mean = belief.mean + K * innov;
  renormalize(r.belief.mean);
  const Mat6 IKH = Mat6::Identity() - K * H;
  r.belief.covariance = IKH * P * IKH.transpose() +
                        K * noise.measurement_cov * K.transpose();
  r.status = finish(r.belief.covariance, r.min_eigenvalue);
  return r;
}

CableBelief belief_from_measurement(const CableMeasurement& z, const Quat& attitude,
                                    const Vec3& body_rates, const VehicleParams& p,
                                    double init_var) {
  const Mat3 R = attitude.toRotationMatrix();
  const double l = p.cable_length;
  const Vec3 qb = z.pos_body.norm() > 1e-9 ? Vec3(z.pos_body.normalized())
                                           : Vec3(-Vec3::UnitZ());
  CableBelief b;
  b.mean.head<3>() = R * qb;
  b.mean.tail<3>() = R * (z.vel_body / l + body_rates.cross(qb));
  b.covariance = Mat6::Identity() * init_var;
  return b;
}

LoadEstimate load_state_from_belief(const CableBelief& belief, const Vec3& quad_pos,
                                    const Vec3& quad_vel, const VehicleParams& p) {
  return {quad_pos + p.cable_length * belief.direction(),
          quad_vel + p.cable_length * belief.rate()};
}

void ModeDetectorState::validate(const VehicleParams& p) const {
  if (!(epsilon > 0.0 && epsilon < p.cable_length)) {
    throw Error(ErrorCode::kInvalidArgument, "detector epsilon must lie in (0, l)");
  }
  if (!(filter_alpha > 0.0 && filter_alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "detector alpha must lie in (0, 1]");
  }
}

HybridMode detect_mode(ModeDetectorState& det, const Vec3& load_pos,
                       const Vec3& quad_pos, const VehicleParams& p) {
  if (!load_pos.allFinite() || !quad_pos.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "detect_mode: positions not finite");
  }
  const double sep = (load_pos - quad_pos).norm();
  if (!det.primed) {
    det.filtered_length = sep;
    det.primed = true;
  } else {
    det.filtered_length =
        det.filter_alpha * sep + (1.0 - det.filter_alpha) * det.filtered_length;
  }
  det.current_mode = det.filtered_length < p.cable_length - det.epsilon
                         ? HybridMode::kSlack
                         : HybridMode::kTaut;
  return det.current_mode;
}

PayloadEstimator::PayloadEstimator(const VehicleParams& params,
                                   const EstimatorConfig& config)
    : params_(params), config_(config) {
  config_.noise.validate();
  detector_.epsilon = config.epsilon;
  detector_.filter_alpha = config.filter_alpha;
  detector_.validate(params_);
}

void PayloadEstimator::predict(double dt, double thrust, const Quat& attitude) {
  if (!have_fix_) return;
  since_fix_ += dt;
  if (belief_ && (config_.assume_taut || detector_.current_mode == HybridMode::kTaut)) {
    const EkfResult r = ekf_predict(*belief_, thrust, attitude, dt, params_, config_.noise);
    belief_ = r.belief;
    last_status_ = r.status;
  }
}

HybridMode PayloadEstimator::measure(const CableMeasurement& z, const QuadEstimate& quad) {
  const Mat3 R = quad.attitude.toRotationMatrix();
  raw_.pos = quad.pos + R * z.pos_body;
  raw_.vel = quad.vel + R * (z.vel_body + quad.body_rates.cross(z.pos_body));
  since_fix_ = 0.0;
  have_fix_ = true;

  const HybridMode before = detector_.current_mode;
  const HybridMode mode = detect_mode(detector_, raw_.pos, quad.pos, params_);
  if (config_.assume_taut) {
    if (!belief_) {
      belief_ = belief_from_measurement(z, quad.attitude, quad.body_rates, params_,
                                        config_.init_var);
      last_status_ = EkfStatus::kOk;
    } else {
      const EkfResult r =
          ekf_update(*belief_, z, quad.attitude, quad.body_rates, params_, config_.noise);
      belief_ = r.belief;
      last_status_ = r.status;
    }
    return mode;
  }
  if (mode == HybridMode::kSlack) {
    belief_.reset();
    return mode;
  }
  if (!belief_ || before == HybridMode::kSlack) {
    belief_ = belief_from_measurement(z, quad.attitude, quad.body_rates, params_,
                                      config_.init_var);
    last_status_ = EkfStatus::kOk;
    return mode;
  }
  const EkfResult r =
      ekf_update(*belief_, z, quad.attitude, quad.body_rates, params_, config_.noise);
  belief_ = r.belief;
  last_status_ = r.status;
  return mode;
}

LoadEstimate PayloadEstimator::load(const QuadEstimate& quad) const {
  if (!have_fix_) {
    return {quad.pos - params_.cable_length * e3(), quad.vel};
  }
  if (belief_ && (config_.assume_taut || detector_.current_mode == HybridMode::kTaut)) {
    return load_state_from_belief(*belief_, quad.pos, quad.vel, params_);
  }
  const double t = since_fix_;
  const double g = params_.gravity;
  return {raw_.pos + raw_.vel * t - 0.5 * g * t * t * e3(), raw_.vel - g * t * e3()};
}

}  // namespace hpa
