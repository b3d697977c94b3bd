#include "hpa/controller_mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "hpa/box_qp.hpp"

namespace hpa {

using StateMat = Eigen::Matrix<double, kStateDim, kStateDim>;
using InputMat = Eigen::Matrix<double, kStateDim, kInputDim>;

ErrorVector error_weights(double load_pos, double load_vel, double quad_pos,
                          double quad_vel, double attitude, double rates) {
  ErrorVector w;
  w << Vec3::Constant(load_pos), Vec3::Constant(load_vel), Vec3::Constant(quad_pos),
      Vec3::Constant(quad_vel), Vec3::Constant(attitude), Vec3::Constant(rates);
  return w;
}

double MpcConfig::lower_bound(const VehicleParams& p) const {
  return motor_min.value_or(p.motor_speed_min);
}

double MpcConfig::upper_bound(const VehicleParams& p) const {
  return motor_max.value_or(p.max_motor_speed());
}

void MpcConfig::validate() const {
  std::ostringstream err;
  if (horizon_steps < 2) err << "horizon_steps must be >= 2; ";
  if (!(horizon_time > 0)) err << "horizon_time must be positive; ";
  if ((q_taut.array() < 0).any() || (q_slack.array() < 0).any() ||
      (r_taut.array() < 0).any() || (r_slack.array() < 0).any() ||
      (q_cam.array() < 0).any()) {
    err << "weights must be non-negative; ";
  }
  if (integrator_steps < 1) err << "integrator_steps must be >= 1; ";
  if (max_sqp_iters < 1) err << "max_sqp_iters must be >= 1; ";
  if (!(tolerance > 0)) err << "tolerance must be positive; ";
  if (!err.str().empty()) throw Error(ErrorCode::kInvalidArgument, err.str());
}

void MpcProblem::validate() const {
  config.validate();
  const auto n = static_cast<std::size_t>(config.horizon_steps);
  if (mode_schedule.size() != n || state_refs.size() != n || input_refs.size() != n) {
    throw Error(ErrorCode::kInvalidArgument, "MPC references must have N entries");
  }
  for (HybridMode m : mode_schedule) {
    if (m != mode_schedule.front()) {
      throw Error(ErrorCode::kInvalidArgument, "mode schedule must be constant");
    }
  }
  if (!initial_state.all_finite()) {
    throw Error(ErrorCode::kNonFinite, "MPC initial state not finite");
  }
}

namespace {

void normalize_attitude(StateVector& x) {
  const double n = x.segment<4>(kAttitude).norm();
  if (n > 0) x.segment<4>(kAttitude) /= n;
}

// Jacobian of v -> v/|v| on the quaternion block.
StateMat normalization_jacobian(const StateVector& raw) {
  StateMat Nj = StateMat::Identity();
  const Vec4 q = raw.segment<4>(kAttitude);
  const double n = q.norm();
  const Vec4 u = q / n;
  Nj.block<4, 4>(kAttitude, kAttitude) = (Mat4::Identity() - u * u.transpose()) / n;
  return Nj;
}

// Central-difference Jacobians of the vector field.
void rhs_jacobians(const StateVector& x, const Vec4& w, HybridMode mode,
                   const VehicleParams& p, StateMat& Jx, InputMat& Ju) {
  for (int j = 0; j < kStateDim; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
    StateVector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    Jx.col(j) = (detail::hybrid_rhs(xp, w, mode, p) -
                 detail::hybrid_rhs(xm, w, mode, p)) / (2 * h);
  }
  for (int j = 0; j < kInputDim; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(w(j)));
    Vec4 wp = w, wm = w;
    wp(j) += h;
    wm(j) -= h;
    Ju.col(j) = (detail::hybrid_rhs(x, wp, mode, p) -
                 detail::hybrid_rhs(x, wm, mode, p)) / (2 * h);
  }
}

// Butcher tableau of the two-stage Gauss-Legendre method.
const double kS3 = std::sqrt(3.0);
const Eigen::Matrix2d kGlA =
    (Eigen::Matrix2d() << 0.25, 0.25 - kS3 / 6.0, 0.25 + kS3 / 6.0, 0.25).finished();

Vec3 attitude_error_raw(const Vec4& q_wxyz, const Quat& q_ref) {
  const Quat q = Quat(q_wxyz(0), q_wxyz(1), q_wxyz(2), q_wxyz(3)).normalized();
  const Quat e = q_ref.conjugate() * q;
  return e.w() >= 0 ? Vec3(e.vec()) : Vec3(-e.vec());
}

Vec3 camera_point(const StateVector& x, const VehicleParams& p) {
  const Quat q = Quat(x(kAttitude), x(kAttitude + 1), x(kAttitude + 2),
                      x(kAttitude + 3)).normalized();
  const Mat3 R = q.toRotationMatrix();
  const Mat3 Rwc = R * p.cam_rotation;
  return Rwc.transpose() *
         (x.segment<3>(kLoadPos) - x.segment<3>(kQuadPos) - R * p.cam_translation);
}

struct Weights {
  ErrorVector q;
  Vec4 r;
  Vec2 cam;
};

Weights weights_for(HybridMode mode, const MpcConfig& c) {
  if (mode == HybridMode::kTaut) return {c.q_taut.cwiseSqrt(), c.r_taut.cwiseSqrt(),
                                         c.q_cam.cwiseSqrt()};
  return {c.q_slack.cwiseSqrt(), c.r_slack.cwiseSqrt(), c.q_cam.cwiseSqrt()};
}

ResidualVector residual(const StateVector& x, const Vec4& w, const StateVector& xr,
                        const Quat& q_ref, const Vec4& wr, const Weights& sw,
                        const VehicleParams& p) {
  ErrorVector e;
  e.head<12>() = x.head<12>() - xr.head<12>();
  e.segment<3>(12) = attitude_error_raw(x.segment<4>(kAttitude), q_ref);
  e.segment<3>(15) = x.segment<3>(kRates) - xr.segment<3>(kRates);
  ResidualVector r;
  r.head<kErrDim>() = sw.q.cwiseProduct(e);
  r.segment<kInputDim>(kErrDim) = sw.r.cwiseProduct(w - wr);
  r.tail<2>() = sw.cam.cwiseProduct(camera_point(x, p).head<2>());
  return r;
}

using ResJx = Eigen::Matrix<double, kResidualDim, kStateDim>;
using ResJu = Eigen::Matrix<double, kResidualDim, kInputDim>;

void residual_jacobians(const StateVector& x, const Vec4& w, const StateVector& xr,
                        const Quat& q_ref, const Vec4& wr, const Weights& sw,
                        const VehicleParams& p, ResJx& Jx, ResJu& Ju) {
  for (int j = 0; j < kStateDim; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
    StateVector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    Jx.col(j) = (residual(xp, w, xr, q_ref, wr, sw, p) -
                 residual(xm, w, xr, q_ref, wr, sw, p)) / (2 * h);
  }
  // The input enters linearly.
  Ju.setZero();
  Ju.block<kInputDim, kInputDim>(kErrDim, 0) = sw.r.asDiagonal();
}

struct Horizon {
  int n;
  int substeps;
  double dt;
  HybridMode mode;
  Weights sw;
  std::vector<StateVector> xr;
  std::vector<Quat> qr;
  std::vector<Vec4> wr;
  double lo, hi;
};

Horizon make_horizon(const MpcProblem& pr) {
  Horizon h;
  h.n = pr.config.horizon_steps;
  h.dt = pr.config.dt();
  h.substeps = pr.config.integrator_steps;
  h.mode = pr.mode_schedule.front();
  h.sw = weights_for(h.mode, pr.config);
  for (int k = 0; k < h.n; ++k) {
    h.xr.push_back(to_vector(pr.state_refs[k]));
    h.qr.push_back(pr.state_refs[k].attitude.normalized());
    h.wr.push_back(pr.input_refs[k].motor_speeds);
  }
  h.lo = pr.config.lower_bound(pr.params);
  h.hi = pr.config.upper_bound(pr.params);
  return h;
}

double hover_motor_speed(HybridMode mode, const VehicleParams& p) {
  const double mass = mode == HybridMode::kTaut ? p.total_mass() : p.quad_mass;
  return p.motor_speed_for_thrust(mass * p.gravity);
}

template <typename T>
T lerp_at(const std::vector<T>& v, double idx) {
  if (idx <= 0.0) return v.front();
  const double last = static_cast<double>(v.size() - 1);
  if (idx >= last) return v.back();
  const auto i = static_cast<std::size_t>(std::floor(idx));
  const double a = idx - static_cast<double>(i);
  return (1.0 - a) * v[i] + a * v[i + 1];
}

}  // namespace

namespace detail {

namespace {

GlStep single_gl_step(const StateVector& x, const Vec4& w, HybridMode mode,
                      double dt, const VehicleParams& p, bool sensitivities) {
  constexpr int n = kStateDim;
  using Stage = Eigen::Matrix<double, 2 * n, 1>;
  using StageMat = Eigen::Matrix<double, 2 * n, 2 * n>;
  GlStep out;

  StateMat J0;
  InputMat B0;
  rhs_jacobians(x, w, mode, p, J0, B0);
  StageMat M = StageMat::Identity();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) M.block<n, n>(i * n, j * n) -= dt * kGlA(i, j) * J0;
  const Eigen::PartialPivLU<StageMat> lu(M);

  const StateVector f0 = hybrid_rhs(x, w, mode, p);
  Stage K;
  K << f0, f0;
  auto stage_point = [&](const Stage& k, int i) -> StateVector {
    return x + dt * (kGlA(i, 0) * k.head<n>() + kGlA(i, 1) * k.tail<n>());
  };

  bool converged = false;
  for (out.newton_iters = 0; out.newton_iters < 10; ++out.newton_iters) {
    Stage R;
    R.head<n>() = K.head<n>() - hybrid_rhs(stage_point(K, 0), w, mode, p);
    R.tail<n>() = K.tail<n>() - hybrid_rhs(stage_point(K, 1), w, mode, p);
    if (!R.allFinite()) break;
    if (R.lpNorm<Eigen::Infinity>() < 1e-10) {
      converged = true;
      break;
    }
    K -= lu.solve(R);
  }

  if (!converged) {
    out.newton_diverged = true;
    StateVector raw = rk4(x, w, mode, dt, p);
    out.next = raw;
    normalize_attitude(out.next);
    if (sensitivities) {
      for (int j = 0; j < n; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
        StateVector xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        StateVector a = rk4(xp, w, mode, dt, p), b = rk4(xm, w, mode, dt, p);
        normalize_attitude(a);
        normalize_attitude(b);
        out.A.col(j) = (a - b) / (2 * h);
      }
      for (int j = 0; j < kInputDim; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(w(j)));
        Vec4 wp = w, wm = w;
        wp(j) += h;
        wm(j) -= h;
        StateVector a = rk4(x, wp, mode, dt, p), b = rk4(x, wm, mode, dt, p);
        normalize_attitude(a);
        normalize_attitude(b);
        out.B.col(j) = (a - b) / (2 * h);
      }
    }
    return out;
  }

  const StateVector raw = x + 0.5 * dt * (K.head<n>() + K.tail<n>());
  out.next = raw;
  normalize_attitude(out.next);
  if (!sensitivities) return out;

  // Implicit function theorem on K - f(x + dt A K, u) = 0.
  StateMat J[2];
  InputMat Bu[2];
  for (int i = 0; i < 2; ++i) rhs_jacobians(stage_point(K, i), w, mode, p, J[i], Bu[i]);
  StageMat D = StageMat::Identity();
  Eigen::Matrix<double, 2 * n, n> rx;
  Eigen::Matrix<double, 2 * n, kInputDim> ru;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) D.block<n, n>(i * n, j * n) -= dt * kGlA(i, j) * J[i];
    rx.block<n, n>(i * n, 0) = J[i];
    ru.block<n, kInputDim>(i * n, 0) = Bu[i];
  }
  const Eigen::PartialPivLU<StageMat> dlu(D);
  const Eigen::Matrix<double, 2 * n, n> dKdx = dlu.solve(rx);
  const Eigen::Matrix<double, 2 * n, kInputDim> dKdu = dlu.solve(ru);
  const StateMat Araw =
      StateMat::Identity() + 0.5 * dt * (dKdx.topRows<n>() + dKdx.bottomRows<n>());
  const InputMat Braw = 0.5 * dt * (dKdu.topRows<n>() + dKdu.bottomRows<n>());
  const StateMat Nj = normalization_jacobian(raw);
  out.A = Nj * Araw;
  out.B = Nj * Braw;
  return out;
}

}  // namespace

GlStep gauss_legendre_step(const StateVector& x, const Vec4& w, HybridMode mode,
                           double dt, const VehicleParams& p, bool sensitivities,
                           int substeps) {
  if (substeps < 1) throw Error(ErrorCode::kInvalidArgument, "substeps must be >= 1");
  GlStep out = single_gl_step(x, w, mode, dt / substeps, p, sensitivities);
  for (int i = 1; i < substeps; ++i) {
    const GlStep s = single_gl_step(out.next, w, mode, dt / substeps, p, sensitivities);
    out.next = s.next;
    out.newton_diverged = out.newton_diverged || s.newton_diverged;
    out.newton_iters += s.newton_iters;
    if (sensitivities) {
      out.B = (s.A * out.B + s.B).eval();
      out.A = (s.A * out.A).eval();
    }
  }
  return out;
}

}  // namespace detail

SystemState discrete_dynamics(const SystemState& x, const ControlInput& u,
                              HybridMode mode, double dt, const VehicleParams& p,
                              int substeps, bool* newton_diverged) {
  if (!(dt > 0)) throw Error(ErrorCode::kInvalidArgument, "discrete_dynamics: dt must be > 0");
  const detail::GlStep s =
      detail::gauss_legendre_step(to_vector(x), u.motor_speeds, mode, dt, p, false,
                                  substeps);
  if (newton_diverged) *newton_diverged = s.newton_diverged;
  return from_vector(s.next);
}

Vec3 payload_in_camera(const SystemState& x, const VehicleParams& p) {
  return camera_point(to_vector(x), p);
}

Vec3 attitude_error(const Quat& q, const Quat& q_ref) {
  return attitude_error_raw(Vec4(q.w(), q.x(), q.y(), q.z()), q_ref.normalized());
}

ErrorVector state_error(const SystemState& x, const SystemState& x_ref) {
  ErrorVector e;
  e << x.load_pos - x_ref.load_pos, x.load_vel - x_ref.load_vel,
      x.quad_pos - x_ref.quad_pos, x.quad_vel - x_ref.quad_vel,
      attitude_error(x.attitude, x_ref.attitude), x.body_rates - x_ref.body_rates;
  return e;
}

ResidualVector stage_residual(const SystemState& x, const ControlInput& u,
                              const SystemState& x_ref, const ControlInput& u_ref,
                              HybridMode mode, const MpcConfig& c,
                              const VehicleParams& p) {
  return residual(to_vector(x), u.motor_speeds, to_vector(x_ref),
                  x_ref.attitude.normalized(), u_ref.motor_speeds, weights_for(mode, c), p);
}

double stage_cost(const SystemState& x, const ControlInput& u,
                  const SystemState& x_ref, const ControlInput& u_ref,
                  HybridMode mode, const MpcConfig& c, const VehicleParams& p) {
  return stage_residual(x, u, x_ref, u_ref, mode, c, p).squaredNorm();
}

namespace {

struct Linearization {
  std::vector<StateMat> A;
  std::vector<InputMat> B;
  std::vector<StateVector> defect;
  std::vector<ResidualVector> r;
  std::vector<ResJx> Rx;
  std::vector<ResJu> Ru;
  bool newton_diverged = false;
};

Linearization linearize(const Horizon& h, const std::vector<StateVector>& S,
                        const std::vector<Vec4>& U, const VehicleParams& p) {
  Linearization lin;
  lin.A.resize(h.n);
  lin.B.resize(h.n);
  lin.defect.resize(h.n);
  lin.r.resize(h.n);
  lin.Rx.resize(h.n);
  lin.Ru.resize(h.n);
  for (int k = 0; k < h.n; ++k) {
    const detail::GlStep st = detail::gauss_legendre_step(S[k], U[k], h.mode, h.dt, p, true, h.substeps);
    lin.newton_diverged = lin.newton_diverged || st.newton_diverged;
    lin.A[k] = st.A;
    lin.B[k] = st.B;
    lin.defect[k] = st.next - S[k + 1];
    lin.r[k] = residual(S[k], U[k], h.xr[k], h.qr[k], h.wr[k], h.sw, p);
    residual_jacobians(S[k], U[k], h.xr[k], h.qr[k], h.wr[k], h.sw, p, lin.Rx[k], lin.Ru[k]);
  }
  return lin;
}

// Condensed Gauss-Newton model: residual ~ M dU + c, and node increments
// dS_k = G_k dU + g_k.
struct Condensed {
  Eigen::MatrixXd M;
  Eigen::VectorXd c;
  std::vector<Eigen::MatrixXd> G;
  std::vector<StateVector> g;
};

Condensed condense(const Horizon& h, const Linearization& lin) {
  const int nu = kInputDim * h.n;
  Condensed out;
  out.M = Eigen::MatrixXd::Zero(kResidualDim * h.n, nu);
  out.c = Eigen::VectorXd::Zero(kResidualDim * h.n);
  out.G.assign(h.n + 1, Eigen::MatrixXd::Zero(kStateDim, nu));
  out.g.assign(h.n + 1, StateVector::Zero());
  for (int k = 0; k < h.n; ++k) {
    const int row = k * kResidualDim;
    out.M.block(row, 0, kResidualDim, nu) = lin.Rx[k] * out.G[k];
    out.M.block(row, k * kInputDim, kResidualDim, kInputDim) += lin.Ru[k];
    out.c.segment<kResidualDim>(row) = lin.r[k] + lin.Rx[k] * out.g[k];
    out.G[k + 1] = lin.A[k] * out.G[k];
    out.G[k + 1].block(0, k * kInputDim, kStateDim, kInputDim) += lin.B[k];
    out.g[k + 1] = lin.A[k] * out.g[k] + lin.defect[k];
  }
  return out;
}

double total_cost(const Horizon& h, const std::vector<StateVector>& S,
                  const std::vector<Vec4>& U, const VehicleParams& p) {
  double c = 0.0;
  for (int k = 0; k < h.n; ++k) {
    c += residual(S[k], U[k], h.xr[k], h.qr[k], h.wr[k], h.sw, p).squaredNorm();
  }
  return c;
}

std::vector<StateVector> rollout(const Horizon& h, const StateVector& x0,
                                 const std::vector<Vec4>& U, const VehicleParams& p,
                                 bool* diverged) {
  std::vector<StateVector> S(h.n + 1);
  S[0] = x0;
  for (int k = 0; k < h.n; ++k) {
    const detail::GlStep st = detail::gauss_legendre_step(S[k], U[k], h.mode, h.dt, p, false, h.substeps);
    if (diverged) *diverged = *diverged || st.newton_diverged;
    S[k + 1] = st.next;
  }
  return S;
}

std::vector<Vec4> unpack(const Eigen::VectorXd& v, int n) {
  std::vector<Vec4> U(n);
  for (int k = 0; k < n; ++k) U[k] = v.segment<kInputDim>(k * kInputDim);
  return U;
}

}  // namespace

MpcSolution solve(const MpcProblem& pr, const MpcSolution* warm) {
  const auto t_start = std::chrono::steady_clock::now();
  pr.validate();
  const Horizon h = make_horizon(pr);
  const VehicleParams& p = pr.params;
  const StateVector x0 = to_vector(pr.initial_state);
  MpcSolution sol;
  sol.time = pr.time;
  sol.mode = h.mode;

  std::vector<Vec4> U(h.n);
  std::vector<StateVector> S;
  // A solution whose integrator diverged is not a usable linearization point.
  const bool usable_warm = warm && warm->mode == h.mode && !warm->newton_diverged &&
                           warm->input_traj.size() == static_cast<std::size_t>(h.n) &&
                           warm->state_traj.size() == static_cast<std::size_t>(h.n + 1);
  if (usable_warm) {
    const double shift = (pr.time - warm->time) / h.dt;
    std::vector<Vec4> wu;
    std::vector<StateVector> ws;
    for (const auto& u : warm->input_traj) wu.push_back(u.motor_speeds);
    for (const auto& s : warm->state_traj) ws.push_back(to_vector(s));
    S.resize(h.n + 1);
    for (int k = 0; k < h.n; ++k) U[k] = lerp_at(wu, k + shift);
    for (int k = 0; k <= h.n; ++k) {
      S[k] = lerp_at(ws, k + shift);
      normalize_attitude(S[k]);
    }
    S[0] = x0;
  } else {
    for (auto& u : U) u.setConstant(hover_motor_speed(h.mode, p));
    S = rollout(h, x0, U, p, &sol.newton_diverged);
  }
  for (auto& u : U) u = u.cwiseMax(h.lo).cwiseMin(h.hi);

  const int nu = kInputDim * h.n;
  for (sol.sqp_iterations = 0; sol.sqp_iterations < pr.config.max_sqp_iters;) {
    const Linearization lin = linearize(h, S, U, p);
    sol.newton_diverged = sol.newton_diverged || lin.newton_diverged;
    const Condensed cd = condense(h, lin);
    Eigen::MatrixXd H = cd.M.transpose() * cd.M;
    H.diagonal().array() += 1e-9 * (1.0 + H.diagonal().maxCoeff());
    const Eigen::VectorXd g = cd.M.transpose() * cd.c;
    Eigen::VectorXd lb(nu), ub(nu);
    for (int k = 0; k < h.n; ++k) {
      lb.segment<kInputDim>(k * kInputDim) = Vec4::Constant(h.lo) - U[k];
      ub.segment<kInputDim>(k * kInputDim) = Vec4::Constant(h.hi) - U[k];
    }
    const BoxQpResult qp = solve_box_qp(H, g, lb, ub, Eigen::VectorXd::Zero(nu));
    ++sol.sqp_iterations;
    if (!qp.feasible || !qp.converged || !qp.x.allFinite()) {
      sol.qp_infeasible = true;
      break;
    }
    double gap = 0.0;
    for (const auto& d : lin.defect) gap = std::max(gap, d.lpNorm<Eigen::Infinity>());
    double step = qp.x.lpNorm<Eigen::Infinity>();
    for (int k = 0; k < h.n; ++k) {
      U[k] = (U[k] + qp.x.segment<kInputDim>(k * kInputDim)).cwiseMax(h.lo).cwiseMin(h.hi);
    }
    for (int k = 1; k <= h.n; ++k) {
      const StateVector ds = cd.G[k] * qp.x + cd.g[k];
      step = std::max(step, ds.lpNorm<Eigen::Infinity>());
      S[k] += ds;
      normalize_attitude(S[k]);
    }
    sol.kkt_residual = std::max(step, gap);
    if (sol.kkt_residual < pr.config.tolerance) break;
  }

  for (const auto& s : S) {
    if (!s.allFinite()) throw Error(ErrorCode::kNonFinite, "MPC produced non-finite states");
  }
  sol.cost = total_cost(h, S, U, p);
  for (const auto& s : S) sol.state_traj.push_back(from_vector(s));
  for (const auto& u : U) sol.input_traj.push_back(ControlInput{u});
  sol.command.thrust = thrust_from_motors(sol.input_traj[1], p);
  sol.command.body_rates = sol.state_traj[1].body_rates;
  sol.solve_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return sol;
}

MpcReferences mpc_references(const std::vector<ReferencePoint>& refs, HybridMode mode,
                             const VehicleParams& p) {
  MpcReferences out;
  for (const ReferencePoint& r : refs) {
    SystemState x = state_from_reference(r);
    double thrust = r.thrust;
    if (mode == HybridMode::kSlack) {
      const Vec3 f = p.quad_mass * (r.quad_acc + p.gravity * e3());
      thrust = f.norm();
      x.attitude = Quat(attitude_from_thrust(f, r.yaw));
    }
    const Vec3 moment = p.inertia * r.body_rates_dot + r.body_rates.cross(p.inertia * r.body_rates);
    out.states.push_back(x);
    out.inputs.push_back(motors_from_wrench(thrust, moment, p));
  }
  return out;
}

MpcStep command_loop_step(double time, const SystemState& estimate, HybridMode mode,
                          const std::vector<ReferencePoint>& refs,
                          const MpcConfig& config, const VehicleParams& p,
                          const MpcSolution* prev) {
  MpcProblem pr;
  pr.time = time;
  pr.initial_state = estimate;
  pr.mode_schedule.assign(config.horizon_steps, mode);
  MpcReferences mr = mpc_references(refs, mode, p);
  pr.state_refs = std::move(mr.states);
  pr.input_refs = std::move(mr.inputs);
  pr.config = config;
  pr.params = p;

  MpcStep out;
  try {
    out.solution = solve(pr, prev);
    out.command = out.solution.command;
    if (out.solution.qp_infeasible && prev) {
      out.command = prev->command;
      out.failed = true;
    }
  } catch (const Error&) {
    if (!prev) throw;
    out.solution = *prev;
    out.solution.reused_previous = true;
    out.command = prev->command;
    out.failed = true;
  }
  return out;
}

namespace detail {

double rollout_objective(const MpcProblem& pr, const Eigen::VectorXd& inputs) {
  const Horizon h = make_horizon(pr);
  const std::vector<Vec4> U = unpack(inputs, h.n);
  const auto S = rollout(h, to_vector(pr.initial_state), U, pr.params, nullptr);
  return total_cost(h, S, U, pr.params);
}

Eigen::VectorXd rollout_gradient(const MpcProblem& pr, const Eigen::VectorXd& inputs) {
  const Horizon h = make_horizon(pr);
  const std::vector<Vec4> U = unpack(inputs, h.n);
  const auto S = rollout(h, to_vector(pr.initial_state), U, pr.params, nullptr);
  const Linearization lin = linearize(h, S, U, pr.params);
  const Condensed cd = condense(h, lin);
  return 2.0 * cd.M.transpose() * cd.c;
}

}  // namespace detail

}  // namespace hpa
