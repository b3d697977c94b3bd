#include "hpa/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <memory>
#include <ostream>

namespace hpa {

const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kHpaMpc: return "hpa_mpc";
    case ControllerKind::kNonHybridMpc: return "non_hybrid_mpc";
    case ControllerKind::kGeometric: return "geometric";
  }
  return "unknown";
}

ControllerKind controller_from_string(const std::string& s) {
  if (s == "hpa_mpc" || s == "hpa") return ControllerKind::kHpaMpc;
  if (s == "non_hybrid_mpc" || s == "taut") return ControllerKind::kNonHybridMpc;
  if (s == "geometric") return ControllerKind::kGeometric;
  throw Error(ErrorCode::kConfig, "unknown controller '" + s + "'");
}

bool Disturbance::active(double t) const {
  if (kind == DisturbanceKind::kImpulse) return false;
  return t >= start && t < end;
}

namespace {

// Quintic ease 0 -> 1 with zero slope and curvature at both ends.
double ease(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }
double ease_dot(double s) { return 30.0 * s * s * (1.0 - s) * (1.0 - s); }

}  // namespace

Vec3 HoldPath::position(double t) const {
  if (points.empty()) throw Error(ErrorCode::kInvalidArgument, "empty hold path");
  if (t <= points.front().time) return points.front().pos;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const HoldWaypoint& a = points[i - 1];
    const HoldWaypoint& b = points[i];
    if (t < b.time) {
      const double s = (t - a.time) / (b.time - a.time);
      return a.pos + ease(s) * (b.pos - a.pos);
    }
  }
  return points.back().pos;
}

Vec3 HoldPath::velocity(double t) const {
  if (points.empty()) throw Error(ErrorCode::kInvalidArgument, "empty hold path");
  for (std::size_t i = 1; i < points.size(); ++i) {
    const HoldWaypoint& a = points[i - 1];
    const HoldWaypoint& b = points[i];
    if (t >= a.time && t < b.time) {
      const double T = b.time - a.time;
      return ease_dot((t - a.time) / T) / T * (b.pos - a.pos);
    }
  }
  return Vec3::Zero();
}

std::vector<HoldWaypoint> random_walk_waypoints(std::uint64_t seed, const Vec3& center,
                                                double radius, double start,
                                                double duration, double step) {
  if (!(radius >= 0.0) || !(step > 0.0) || !(duration >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "random walk: bad radius/step/duration");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5 * radius);
  std::vector<HoldWaypoint> out;
  Vec3 pos = center;
  out.push_back({start, pos});
  const int count = static_cast<int>(std::floor(duration / step + 1e-9));
  for (int i = 1; i <= count; ++i) {
    Vec3 next = pos;
    next.x() += n(rng);
    next.y() += n(rng);
    Vec3 off = next - center;
    off.z() = 0.0;
    if (off.norm() > radius) next = center + off * (radius / off.norm());
    pos = next;
    out.push_back({start + i * step, pos});
  }
  return out;
}

void Rates::validate() const {
  if (plant <= 0 || controller <= 0 || measurement <= 0) {
    throw Error(ErrorCode::kConfig, "rates must be positive");
  }
  if (controller > plant || measurement > plant) {
    throw Error(ErrorCode::kConfig, "controller and measurement rates must not exceed the plant rate");
  }
}

void Scenario::validate() const {
  if (!(duration >= 0.0) || !std::isfinite(duration)) {
    throw Error(ErrorCode::kConfig, "duration must be finite and >= 0");
  }
  rates.validate();
  if (record_every < 1) throw Error(ErrorCode::kConfig, "record_every must be >= 1");
  params.validate();
  mpc.validate();
  estimator.noise.validate();
  if (!(rate_gains.array() >= 0.0).all()) {
    throw Error(ErrorCode::kConfig, "rate gains must be >= 0");
  }
  if (!(thrust_time_constant >= 0.0)) {
    throw Error(ErrorCode::kConfig, "thrust_time_constant must be >= 0");
  }
  double last = -1e300;
  for (const Disturbance& d : disturbances) {
    if (d.start < last) throw Error(ErrorCode::kConfig, "disturbances must be ordered by start time");
    last = d.start;
    if (d.kind != DisturbanceKind::kImpulse && !(d.end > d.start)) {
      throw Error(ErrorCode::kConfig, "disturbance window must have end > start");
    }
    if (!d.vector.allFinite()) throw Error(ErrorCode::kConfig, "disturbance vector not finite");
    if (d.kind == DisturbanceKind::kHold) {
      if (d.target != DisturbanceTarget::kLoad) {
        throw Error(ErrorCode::kConfig, "hold applies to the load only");
      }
      for (std::size_t i = 1; i < d.waypoints.size(); ++i) {
        if (!(d.waypoints[i].time > d.waypoints[i - 1].time)) {
          throw Error(ErrorCode::kConfig, "hold waypoints must have increasing times");
        }
      }
    }
  }
  if (initial_state && !initial_state->all_finite()) {
    throw Error(ErrorCode::kConfig, "initial state not finite");
  }
}

CableMeasurement synthesize_measurement(const SystemState& x, const VehicleParams& p,
                                        const SensorNoise& noise, std::mt19937_64* rng) {
  (void)p;
  const Mat3 R = x.rotation();
  CableMeasurement z;
  z.pos_body = R.transpose() * (x.load_pos - x.quad_pos);
  z.vel_body = R.transpose() * (x.load_vel - x.quad_vel) - x.body_rates.cross(z.pos_body);
  if (rng && noise.enabled) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 3; ++i) z.pos_body(i) += noise.cable_pos * n(*rng);
    for (int i = 0; i < 3; ++i) z.vel_body(i) += noise.cable_vel * n(*rng);
  }
  return z;
}

SystemState apply_impulse(const SystemState& x, const Disturbance& d,
                          const VehicleParams& p) {
  SystemState out = x;
  if (d.target == DisturbanceTarget::kLoad) {
    out.load_vel += d.vector / p.load_mass;
  } else {
    out.quad_vel += d.vector / p.quad_mass;
  }
  return out;
}

SystemState apply_hold(const SystemState& x, const HoldPath& path, double t) {
  SystemState out = x;
  out.load_pos = path.position(t);
  out.load_vel = path.velocity(t);
  return out;
}

Vec3 rate_loop_moment(const Vec3& rates_cmd, const Vec3& rates, const Vec3& gains,
                      const VehicleParams& p) {
  return p.inertia * gains.cwiseProduct(rates_cmd - rates) +
         rates.cross(p.inertia * rates);
}

namespace {

double gap(const SystemState& x, const VehicleParams& p) {
  return separation(x) - p.cable_length;
}

}  // namespace

PlantStep plant_step(const SystemState& x, HybridMode mode, const ControlInput& u,
                     double dt, const VehicleParams& p, const ExternalForces& ext) {
  PlantStep out;
  if (mode == HybridMode::kTaut && cable_tension(x, u, p, ext) < 0.0) {
    mode = HybridMode::kSlack;
  }
  if (mode == HybridMode::kTaut) {
    out.state = step(x, u, HybridMode::kTaut, dt, p, ext);
    out.mode = HybridMode::kTaut;
    return out;
  }

  const SystemState full = step(x, u, HybridMode::kSlack, dt, p, ext);
  if (gap(full, p) < 0.0) {
    out.state = full;
    out.mode = HybridMode::kSlack;
    return out;
  }

  // Bracket the first time the cable reaches full length.
  double lo = 0.0, hi = dt;
  SystemState at_hi = full;
  if (gap(x, p) >= 0.0) {
    hi = 0.0;
    at_hi = x;
  } else {
    for (int i = 0; i < 60 && hi - lo > 1e-12; ++i) {
      const double mid = 0.5 * (lo + hi);
      const SystemState s = step(x, u, HybridMode::kSlack, mid, p, ext);
      if (gap(s, p) >= 0.0) {
        hi = mid;
        at_hi = s;
      } else {
        lo = mid;
      }
    }
  }
  SystemState after = impact_map(at_hi, p);
  out.impact = true;
  const double rest = dt - hi;
  if (rest <= 1e-12) {
    out.state = after;
    out.mode = HybridMode::kTaut;
    return out;
  }
  if (cable_tension(after, u, p, ext) < 0.0) {
    // Rebounds straight into slack; the remaining motion is free.
    out.state = step(after, u, HybridMode::kSlack, rest, p, ext);
    out.mode = HybridMode::kSlack;
    if (gap(out.state, p) > 0.0) {
      out.state = impact_map(out.state, p);
      out.mode = HybridMode::kTaut;
    }
    return out;
  }
  out.state = step(after, u, HybridMode::kTaut, rest, p, ext);
  out.mode = HybridMode::kTaut;
  return out;
}

namespace {

bool fires(long k, int rate, int plant) {
  if (k == 0) return true;
  return (k * rate) / plant != ((k - 1) * rate) / plant;
}

// Quad pinned to a held load by the cable: project back onto the sphere and
// drop the outward radial velocity.
SystemState tether_quad(const SystemState& x, const VehicleParams& p) {
  const Vec3 rel = x.quad_pos - x.load_pos;
  const double d = rel.norm();
  if (d <= p.cable_length || d == 0.0) return x;
  const Vec3 n = rel / d;
  SystemState out = x;
  out.quad_pos = x.load_pos + p.cable_length * n;
  const double vr = n.dot(x.quad_vel - x.load_vel);
  if (vr > 0.0) out.quad_vel -= vr * n;
  return out;
}

// Mode change caused by a velocity jump while taut.
HybridMode after_jump(SystemState& x, HybridMode mode, const VehicleParams& p, int& impacts) {
  if (mode != HybridMode::kTaut) return mode;
  if (radial_rate(x) < 0.0) return HybridMode::kSlack;
  if (radial_rate(x) > 0.0) {
    x = impact_map(x, p);
    ++impacts;
  }
  return HybridMode::kTaut;
}

struct HoldState {
  const Disturbance* event = nullptr;
  HoldPath path;
};

}  // namespace

struct Simulation::Impl {
  Scenario sc;
  const VehicleParams& p;
  int plant_hz;
  double dt;
  long steps;
  long k = 0;

  std::mt19937_64 quad_rng;
  std::mt19937_64 cable_rng;
  std::normal_distribution<double> unit{0.0, 1.0};

  SystemState x;
  HybridMode mode;
  PayloadEstimator estimator;
  GeometricController geo;
  std::optional<MpcSolution> prev;
  MpcCommand cmd;
  MpcDiagnostics diag;
  ControlInput held_motors;
  double thrust_lp = 0.0;
  SystemState est;
  double last_ctrl_time = 0.0;
  int consecutive_failures = 0;
  double solve_time_sum = 0.0;
  RunStats stats;

  std::vector<bool> impulse_done;
  HoldState hold;
  // Operator hold; overrides any scripted hold while set.
  std::optional<HoldPath> grab;

  explicit Impl(const Scenario& s)
      : sc(s),
        p(sc.params),
        plant_hz(sc.rates.plant),
        dt(1.0 / plant_hz),
        steps(std::lround(sc.duration * plant_hz)),
        quad_rng(sc.seed * 2 + 1),
        cable_rng(sc.seed * 2 + 2),
        x(sc.initial_state ? *sc.initial_state
                           : state_from_reference(flat_map(sc.trajectory, 0.0, p))),
        mode(gap(x, p) < -1e-9 ? HybridMode::kSlack : HybridMode::kTaut),
        estimator(p, estimator_config()),
        geo(p, sc.geometric),
        est(x),
        impulse_done(sc.disturbances.size(), false) {
    cmd.thrust = p.total_mass() * p.gravity;
  }

  bool is_mpc() const { return sc.controller != ControllerKind::kGeometric; }
  bool hybrid() const { return sc.controller == ControllerKind::kHpaMpc; }

  EstimatorConfig estimator_config() const {
    EstimatorConfig c = sc.estimator;
    if (sc.controller != ControllerKind::kHpaMpc) c.assume_taut = true;
    return c;
  }

  double time() const { return static_cast<double>(k) / plant_hz; }

  void step(TraceRecord* record);
};

void Simulation::Impl::step(TraceRecord* record) {
  const double t = time();

  // Scripted disturbances that act on the state directly.
  ExternalForces ext;
  const Disturbance* active_hold = nullptr;
  for (std::size_t i = 0; i < sc.disturbances.size(); ++i) {
    const Disturbance& d = sc.disturbances[i];
    if (d.kind == DisturbanceKind::kImpulse) {
      if (!impulse_done[i] && t >= d.start) {
        impulse_done[i] = true;
        x = apply_impulse(x, d, p);
        mode = after_jump(x, mode, p, stats.impacts);
      }
    } else if (d.active(t)) {
      if (d.kind == DisturbanceKind::kConstant) {
        (d.target == DisturbanceTarget::kLoad ? ext.on_load : ext.on_quad) += d.vector;
      } else if (!active_hold) {
        active_hold = &d;
      }
    }
  }
  if (active_hold != hold.event) {
    hold.event = active_hold;
    if (active_hold) {
      hold.path.points.clear();
      hold.path.points.push_back({t, x.load_pos});
      for (const HoldWaypoint& w : active_hold->waypoints) {
        if (w.time > t) hold.path.points.push_back(w);
      }
    }
  }
  const HoldPath* path = grab ? &*grab : hold.event ? &hold.path : nullptr;
  if (path) {
    x = apply_hold(x, *path, t);
    mode = gap(x, p) < -1e-9 ? HybridMode::kSlack : HybridMode::kTaut;
  }

  const QuadEstimate quad_true{x.quad_pos, x.quad_vel, x.attitude, x.body_rates};

  if (fires(k, sc.rates.measurement, plant_hz)) {
    const CableMeasurement z = synthesize_measurement(x, p, sc.noise, &cable_rng);
    estimator.measure(z, quad_true);
  }

  if (fires(k, sc.rates.controller, plant_hz)) {
    QuadEstimate q = quad_true;
    if (sc.noise.enabled) {
      for (int i = 0; i < 3; ++i) q.pos(i) += sc.noise.quad_pos * unit(quad_rng);
      for (int i = 0; i < 3; ++i) q.vel(i) += sc.noise.quad_vel * unit(quad_rng);
    }
    const LoadEstimate le = estimator.load(q);
    est = x;
    est.quad_pos = q.pos;
    est.quad_vel = q.vel;
    est.load_pos = le.pos;
    est.load_vel = le.vel;

    const double ctrl_dt = k == 0 ? 1.0 / sc.rates.controller : t - last_ctrl_time;
    last_ctrl_time = t;
    ++stats.controller_calls;
    if (is_mpc()) {
      const HybridMode m = hybrid() ? estimator.mode() : HybridMode::kTaut;
      const int N = sc.mpc.horizon_steps;
      const auto refs = horizon_refs(t, sc.mpc.dt(), N, sc.trajectory, p);
      const auto t0 = std::chrono::steady_clock::now();
      MpcStep s = command_loop_step(t, est, m, refs, sc.mpc, p, prev ? &*prev : nullptr);
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      solve_time_sum += el;
      stats.max_solve_time = std::max(stats.max_solve_time, el);
      stats.mean_solve_time = solve_time_sum / stats.controller_calls;
      if (!std::isfinite(s.command.thrust) || !s.command.body_rates.allFinite()) {
        throw Error(ErrorCode::kControllerFailure, "MPC produced a non-finite command");
      }
      cmd = s.command;
      diag.kkt_residual = s.solution.kkt_residual;
      diag.cost = s.solution.cost;
      diag.sqp_iterations = s.solution.sqp_iterations;
      diag.newton_diverged = s.solution.newton_diverged;
      diag.qp_infeasible = s.solution.qp_infeasible;
      diag.failed = s.failed;
      if (s.failed) {
        ++stats.controller_failures;
        if (++consecutive_failures >= 10) {
          throw Error(ErrorCode::kControllerFailure, "MPC failed 10 consecutive cycles");
        }
      } else {
        consecutive_failures = 0;
      }
      prev = std::move(s.solution);
    } else {
      const ReferencePoint ref = flat_map(sc.trajectory, t, p);
      held_motors = geo.motors(geo.update(est, ref, ctrl_dt));
    }
  }

  ControlInput u;
  if (is_mpc()) {
    if (k == 0) thrust_lp = cmd.thrust;
    thrust_lp += dt / (sc.thrust_time_constant + dt) * (cmd.thrust - thrust_lp);
    u = motors_from_wrench(thrust_lp,
                           rate_loop_moment(cmd.body_rates, x.body_rates, sc.rate_gains, p), p);
  } else {
    u = held_motors;
  }

  if (record) {
    TraceRecord& r = *record;
    r.time = t;
    r.truth = x;
    r.estimate = est;
    r.true_mode = mode;
    r.detected_mode = estimator.mode();
    r.input = u;
    r.command = is_mpc() ? cmd : MpcCommand{};
    r.mpc = is_mpc() ? diag : MpcDiagnostics{};
    r.payload_camera = payload_in_camera(x, p);
    const ReferencePoint ref = flat_map(sc.trajectory, t, p);
    r.load_ref = ref.load_pos;
    r.quad_ref = ref.quad_pos;
  }

  if (path) {
    SystemState next = hpa::step(x, u, HybridMode::kSlack, dt, p, ext);
    next = apply_hold(next, *path, t + dt);
    next = tether_quad(next, p);
    x = next;
    mode = gap(x, p) < -1e-9 ? HybridMode::kSlack : HybridMode::kTaut;
  } else {
    const PlantStep ps = plant_step(x, mode, u, dt, p, ext);
    x = ps.state;
    mode = ps.mode;
    if (ps.impact) ++stats.impacts;
  }
  ++k;
  if (!x.all_finite()) throw Error(ErrorCode::kNonFinite, "plant state not finite");

  estimator.predict(dt, thrust_from_motors(u, p), x.attitude);
}

Simulation::Simulation(const Scenario& scenario) {
  scenario.validate();
  impl_ = std::make_unique<Impl>(scenario);
}

Simulation::~Simulation() = default;
Simulation::Simulation(Simulation&&) noexcept = default;
Simulation& Simulation::operator=(Simulation&&) noexcept = default;

void Simulation::step(TraceRecord* record) { impl_->step(record); }

double Simulation::time() const { return impl_->time(); }
long Simulation::steps_taken() const { return impl_->k; }
bool Simulation::done() const { return impl_->k >= impl_->steps; }
const Scenario& Simulation::scenario() const { return impl_->sc; }
const SystemState& Simulation::state() const { return impl_->x; }
HybridMode Simulation::true_mode() const { return impl_->mode; }
HybridMode Simulation::detected_mode() const { return impl_->estimator.mode(); }
const RunStats& Simulation::stats() const { return impl_->stats; }

void Simulation::impulse(DisturbanceTarget target, const Vec3& j) {
  Impl& s = *impl_;
  Disturbance d;
  d.target = target;
  d.vector = j;
  s.x = apply_impulse(s.x, d, s.p);
  s.mode = after_jump(s.x, s.mode, s.p, s.stats.impacts);
}

bool Simulation::grabbed() const { return impl_->grab.has_value(); }

void Simulation::grab() {
  Impl& s = *impl_;
  if (s.grab) throw Error(ErrorCode::kInvalidArgument, "payload already grabbed");
  HoldPath path;
  path.points.push_back({s.time(), s.x.load_pos});
  s.grab = path;
}

void Simulation::move_to(const Vec3& pos, double duration) {
  Impl& s = *impl_;
  if (!s.grab) throw Error(ErrorCode::kInvalidArgument, "move_to requires a grabbed payload");
  if (!pos.allFinite()) throw Error(ErrorCode::kInvalidArgument, "move_to target not finite");
  if (!(duration > 0.0)) throw Error(ErrorCode::kInvalidArgument, "move_to duration must be > 0");
  const double t = s.time();
  HoldPath path;
  path.points.push_back({t, s.x.load_pos});
  path.points.push_back({t + duration, pos});
  s.grab = path;
}

void Simulation::release() {
  Impl& s = *impl_;
  if (!s.grab) throw Error(ErrorCode::kInvalidArgument, "payload is not grabbed");
  s.grab.reset();
}

void Simulation::set_reference(const Vec3& load_pos) {
  if (!load_pos.allFinite()) throw Error(ErrorCode::kInvalidArgument, "reference not finite");
  impl_->sc.trajectory = HoverSource{load_pos};
}

void Simulation::select_controller(ControllerKind kind) {
  Impl& s = *impl_;
  if (kind == s.sc.controller) return;
  s.sc.controller = kind;
  s.estimator.set_assume_taut(kind != ControllerKind::kHpaMpc);
  s.prev.reset();
  s.consecutive_failures = 0;
  s.geo.reset();
  s.cmd.thrust = s.thrust_lp > 0.0 ? s.thrust_lp : s.p.total_mass() * s.p.gravity;
  s.held_motors = ControlInput{Vec4::Constant(s.p.motor_speed_for_thrust(s.cmd.thrust))};
}

SimResult run(const Scenario& sc) {
  SimResult res;
  Simulation sim(sc);
  try {
    while (!sim.done()) {
      if (sim.steps_taken() % sc.record_every == 0) {
        TraceRecord rec;
        sim.step(&rec);
        res.trace.push_back(rec);
      } else {
        sim.step();
      }
    }
  } catch (const Error& e) {
    res.truncated = true;
    res.error = e.code();
    res.message = e.what();
  }
  res.stats = sim.stats();
  return res;
}

namespace {

void put(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, ",%.17g", v);
  s += buf;
}

void put3(std::string& s, const Vec3& v) {
  for (int i = 0; i < 3; ++i) put(s, v(i));
}

}  // namespace

std::string trace_csv_header() {
  std::string h = "time,true_mode,detected_mode";
  auto vec = [&h](const char* name) {
    for (const char* a : {"x", "y", "z"}) {
      h += ",";
      h += name;
      h += "_";
      h += a;
    }
  };
  vec("load_pos");
  vec("load_vel");
  vec("quad_pos");
  vec("quad_vel");
  h += ",att_w,att_x,att_y,att_z";
  vec("rates");
  vec("est_load_pos");
  vec("est_load_vel");
  vec("est_quad_pos");
  vec("est_quad_vel");
  h += ",motor_1,motor_2,motor_3,motor_4,cmd_thrust";
  vec("cmd_rates");
  h += ",kkt_residual,mpc_cost,sqp_iterations,mpc_failed";
  vec("cam");
  vec("load_ref");
  vec("quad_ref");
  return h;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
  os << trace_csv_header() << '\n';
  std::string line;
  for (const TraceRecord& r : trace) {
    char head[64];
    std::snprintf(head, sizeof head, "%.17g,%d,%d", r.time, static_cast<int>(r.true_mode),
                  static_cast<int>(r.detected_mode));
    line = head;
    put3(line, r.truth.load_pos);
    put3(line, r.truth.load_vel);
    put3(line, r.truth.quad_pos);
    put3(line, r.truth.quad_vel);
    put(line, r.truth.attitude.w());
    put3(line, r.truth.attitude.vec());
    put3(line, r.truth.body_rates);
    put3(line, r.estimate.load_pos);
    put3(line, r.estimate.load_vel);
    put3(line, r.estimate.quad_pos);
    put3(line, r.estimate.quad_vel);
    for (int i = 0; i < 4; ++i) put(line, r.input.motor_speeds(i));
    put(line, r.command.thrust);
    put3(line, r.command.body_rates);
    put(line, r.mpc.kkt_residual);
    put(line, r.mpc.cost);
    put(line, r.mpc.sqp_iterations);
    put(line, r.mpc.failed ? 1 : 0);
    put3(line, r.payload_camera);
    put3(line, r.load_ref);
    put3(line, r.quad_ref);
    os << line << '\n';
  }
}

std::vector<TraceRecord> read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != trace_csv_header()) {
    throw Error(ErrorCode::kConfig, "trace CSV header does not match");
  }
  const std::size_t columns = std::count(line.begin(), line.end(), ',') + 1;
  std::vector<TraceRecord> out;
  std::vector<double> v;
  int n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    v.clear();
    const char* c = line.c_str();
    for (;;) {
      char* end = nullptr;
      v.push_back(std::strtod(c, &end));
      if (end == c) throw Error(ErrorCode::kConfig, "trace CSV line " + std::to_string(n) + ": bad number");
      if (*end == '\0') break;
      if (*end != ',') throw Error(ErrorCode::kConfig, "trace CSV line " + std::to_string(n) + ": bad separator");
      c = end + 1;
    }
    if (v.size() != columns) {
      throw Error(ErrorCode::kConfig, "trace CSV line " + std::to_string(n) + ": wrong column count");
    }
    std::size_t i = 0;
    auto next = [&] { return v[i++]; };
    auto next3 = [&] {
      const Vec3 r(v[i], v[i + 1], v[i + 2]);
      i += 3;
      return r;
    };
    TraceRecord r;
    r.time = next();
    r.true_mode = next() != 0.0 ? HybridMode::kTaut : HybridMode::kSlack;
    r.detected_mode = next() != 0.0 ? HybridMode::kTaut : HybridMode::kSlack;
    r.truth.load_pos = next3();
    r.truth.load_vel = next3();
    r.truth.quad_pos = next3();
    r.truth.quad_vel = next3();
    const double w = next();
    const Vec3 qv = next3();
    r.truth.attitude = Quat(w, qv.x(), qv.y(), qv.z());
    r.truth.body_rates = next3();
    r.estimate.load_pos = next3();
    r.estimate.load_vel = next3();
    r.estimate.quad_pos = next3();
    r.estimate.quad_vel = next3();
    for (int m = 0; m < 4; ++m) r.input.motor_speeds(m) = next();
    r.command.thrust = next();
    r.command.body_rates = next3();
    r.mpc.kkt_residual = next();
    r.mpc.cost = next();
    r.mpc.sqp_iterations = static_cast<int>(next());
    r.mpc.failed = next() != 0.0;
    r.payload_camera = next3();
    r.load_ref = next3();
    r.quad_ref = next3();
    out.push_back(r);
  }
  return out;
}

}  // namespace hpa
