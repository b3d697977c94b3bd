#pragma once

#include <optional>
#include <vector>

#include "hpa/common.hpp"
#include "hpa/dynamics.hpp"
#include "hpa/trajectories.hpp"

namespace hpa {

// Stage residual layout: 18 state-error terms, 4 input terms, 2 camera terms.
inline constexpr int kErrDim = 18;
inline constexpr int kResidualDim = kErrDim + kInputDim + 2;

using ErrorVector = Eigen::Matrix<double, kErrDim, 1>;
using ResidualVector = Eigen::Matrix<double, kResidualDim, 1>;

/// Diagonal weights on the state error
/// [load pos, load vel, quad pos, quad vel, attitude, body rates].
ErrorVector error_weights(double load_pos, double load_vel, double quad_pos,
                          double quad_vel, double attitude, double rates);

inline constexpr int kDefaultGlSubsteps = 4;

struct MpcConfig {
  int horizon_steps = 10;
  int integrator_steps = kDefaultGlSubsteps;  // Gauss-Legendre steps per interval
  double horizon_time = 1.0;  // s
  ErrorVector q_taut = error_weights(2000, 100, 1, 1, 1, 1);
  Vec4 r_taut = Vec4::Constant(3e-3);
  ErrorVector q_slack = error_weights(0, 0, 200, 20, 1, 1);
  Vec4 r_slack = Vec4::Constant(3e-3);
  Vec2 q_cam = Vec2::Constant(50.0);
  /// Motor speed bounds, rad/s. Unset values come from VehicleParams.
  std::optional<double> motor_min;
  std::optional<double> motor_max;
  double tolerance = 1e-6;
  int max_sqp_iters = 1;

  double dt() const { return horizon_time / horizon_steps; }
  double lower_bound(const VehicleParams& p) const;
  double upper_bound(const VehicleParams& p) const;
  void validate() const;
};

struct MpcProblem {
  double time = 0.0;  // s, time of initial_state
  SystemState initial_state;
  std::vector<HybridMode> mode_schedule;
  std::vector<SystemState> state_refs;
  std::vector<ControlInput> input_refs;
  MpcConfig config;
  VehicleParams params;

  void validate() const;
};

struct MpcCommand {
  double thrust = 0.0;               // N
  Vec3 body_rates = Vec3::Zero();    // rad/s
};

struct MpcSolution {
  double time = 0.0;
  HybridMode mode = HybridMode::kTaut;
  std::vector<SystemState> state_traj;   // N + 1
  std::vector<ControlInput> input_traj;  // N
  MpcCommand command;
  double kkt_residual = 0.0;
  double solve_time = 0.0;  // s, wall clock
  double cost = 0.0;
  int sqp_iterations = 0;
  bool newton_diverged = false;
  bool qp_infeasible = false;
  bool reused_previous = false;
};

/// Two-stage Gauss-Legendre integration of the mode-selected vector field
/// over dt, split into `substeps` equal steps. A step whose Newton solve does
/// not converge falls back to RK4 and sets *newton_diverged.
SystemState discrete_dynamics(const SystemState& x, const ControlInput& u,
                              HybridMode mode, double dt, const VehicleParams& p,
                              int substeps = kDefaultGlSubsteps,
                              bool* newton_diverged = nullptr);

/// Payload position in the camera frame: (R R_C)^T (x_L - x_Q - R t_C).
Vec3 payload_in_camera(const SystemState& x, const VehicleParams& p);

/// Vector part of q_ref^-1 (x) q, sign fixed so the scalar part is >= 0.
Vec3 attitude_error(const Quat& q, const Quat& q_ref);

ErrorVector state_error(const SystemState& x, const SystemState& x_ref);

/// Weighted residual whose squared norm is the stage cost.
ResidualVector stage_residual(const SystemState& x, const ControlInput& u,
                              const SystemState& x_ref, const ControlInput& u_ref,
                              HybridMode mode, const MpcConfig& c,
                              const VehicleParams& p);

double stage_cost(const SystemState& x, const ControlInput& u,
                  const SystemState& x_ref, const ControlInput& u_ref,
                  HybridMode mode, const MpcConfig& c, const VehicleParams& p);

/// Multiple-shooting Gauss-Newton SQP. One iteration when max_sqp_iters = 1
/// (real-time iteration); warm started from a time-shifted previous solution
/// of the same mode, otherwise from hover inputs.
MpcSolution solve(const MpcProblem& problem, const MpcSolution* warm_start = nullptr);

struct MpcReferences {
  std::vector<SystemState> states;
  std::vector<ControlInput> inputs;
};

/// State and input references for the horizon. In slack mode the quadrotor
/// reference is the nominal quad trajectory flown without the payload.
MpcReferences mpc_references(const std::vector<ReferencePoint>& refs, HybridMode mode,
                             const VehicleParams& p);

struct MpcStep {
  MpcSolution solution;
  MpcCommand command;
  bool failed = false;
};

/// Builds the constant-mode problem from the estimate and the horizon
/// references, solves it, and extracts the second-stage command. On solver
/// failure the previous command is re-issued and `failed` is set.
MpcStep command_loop_step(double time, const SystemState& estimate, HybridMode mode,
                          const std::vector<ReferencePoint>& refs,
                          const MpcConfig& config, const VehicleParams& p,
                          const MpcSolution* prev);

namespace detail {

struct GlStep {
  StateVector next;
  Eigen::Matrix<double, kStateDim, kStateDim> A;
  Eigen::Matrix<double, kStateDim, kInputDim> B;
  bool newton_diverged = false;
  int newton_iters = 0;
};

/// Gauss-Legendre step on the packed state with sensitivities of the
/// (renormalised) result.
GlStep gauss_legendre_step(const StateVector& x, const Vec4& w, HybridMode mode,
                           double dt, const VehicleParams& p, bool sensitivities,
                           int substeps = kDefaultGlSubsteps);

/// Objective of the transcribed problem with states eliminated by forward
/// simulation (single shooting) from the initial state.
double rollout_objective(const MpcProblem& problem, const Eigen::VectorXd& inputs);

/// Gauss-Newton gradient of the condensed objective at a consistent
/// (defect-free) rollout.
Eigen::VectorXd rollout_gradient(const MpcProblem& problem, const Eigen::VectorXd& inputs);

}  // namespace detail

}  // namespace hpa
