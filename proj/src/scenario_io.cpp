#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "hpa/simulator.hpp"

namespace hpa {

using Json = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kConfig, what); }

Vec3 vec3(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) bad(std::string(what) + ": expected [x, y, z]");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) bad(std::string(what) + ": non-numeric entry");
    v(i) = j[i].get<double>();
  }
  return v;
}

Json arr(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

template <class T>
void opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      bad(std::string(key) + ": " + e.what());
    }
  }
}

void opt_vec(const Json& j, const char* key, Vec3& out) {
  if (j.contains(key)) out = vec3(j.at(key), key);
}

TrajectorySource trajectory_from(const Json& j) {
  const std::string type = j.value("type", "hover");
  if (type == "hover") {
    HoverSource h;
    opt_vec(j, "pos", h.pos);
    return h;
  }
  if (type == "line") {
    LineSource l;
    opt_vec(j, "origin", l.origin);
    opt_vec(j, "velocity", l.velocity);
    return l;
  }
  if (type == "lissajous") {
    LissajousSource s;
    LissajousParams& lp = s.params;
    opt(j, "a", lp.a);
    opt(j, "b", lp.b);
    opt(j, "c", lp.c);
    opt(j, "n", lp.n);
    opt(j, "m", lp.m_rel);
    opt(j, "phi", lp.phi);
    opt(j, "psi", lp.psi);
    opt(j, "period", lp.period_scale);
    if (!(lp.period_scale > 0.0)) bad("lissajous period must be > 0");
    return s;
  }
  bad("unknown trajectory type '" + type + "'");
}

Json trajectory_to(const TrajectorySource& src) {
  if (const auto* h = std::get_if<HoverSource>(&src)) {
    return Json{{"type", "hover"}, {"pos", arr(h->pos)}};
  }
  if (const auto* l = std::get_if<LineSource>(&src)) {
    return Json{{"type", "line"}, {"origin", arr(l->origin)}, {"velocity", arr(l->velocity)}};
  }
  if (const auto* s = std::get_if<LissajousSource>(&src)) {
    const LissajousParams& lp = s->params;
    return Json{{"type", "lissajous"}, {"a", lp.a}, {"b", lp.b}, {"c", lp.c},
                {"n", lp.n}, {"m", lp.m_rel}, {"phi", lp.phi}, {"psi", lp.psi},
                {"period", lp.period_scale}};
  }
  throw Error(ErrorCode::kConfig, "function trajectories cannot be serialised");
}

SystemState state_from(const Json& j) {
  SystemState x;
  opt_vec(j, "load_pos", x.load_pos);
  opt_vec(j, "load_vel", x.load_vel);
  opt_vec(j, "quad_pos", x.quad_pos);
  opt_vec(j, "quad_vel", x.quad_vel);
  opt_vec(j, "body_rates", x.body_rates);
  if (j.contains("attitude")) {
    const Json& q = j.at("attitude");
    if (!q.is_array() || q.size() != 4) bad("attitude: expected [w, x, y, z]");
    x.attitude = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                      q[3].get<double>());
    if (!(x.attitude.norm() > 0.0)) bad("attitude must be nonzero");
    x.attitude.normalize();
  }
  return x;
}

Json state_to(const SystemState& x) {
  return Json{{"load_pos", arr(x.load_pos)},
              {"load_vel", arr(x.load_vel)},
              {"quad_pos", arr(x.quad_pos)},
              {"quad_vel", arr(x.quad_vel)},
              {"attitude", Json::array({x.attitude.w(), x.attitude.x(), x.attitude.y(),
                                        x.attitude.z()})},
              {"body_rates", arr(x.body_rates)}};
}

Disturbance disturbance_from(const Json& j) {
  Disturbance d;
  const std::string type = j.value("type", "");
  if (type == "impulse") d.kind = DisturbanceKind::kImpulse;
  else if (type == "constant") d.kind = DisturbanceKind::kConstant;
  else if (type == "hold") d.kind = DisturbanceKind::kHold;
  else bad("unknown disturbance type '" + type + "'");
  const std::string target = j.value("target", "load");
  if (target == "load") d.target = DisturbanceTarget::kLoad;
  else if (target == "quad") d.target = DisturbanceTarget::kQuad;
  else bad("unknown disturbance target '" + target + "'");
  opt(j, "start", d.start);
  d.end = d.start;
  opt(j, "end", d.end);
  opt_vec(j, "vector", d.vector);
  if (j.contains("waypoints")) {
    for (const Json& w : j.at("waypoints")) {
      if (!w.is_array() || w.size() != 4) bad("waypoint: expected [t, x, y, z]");
      d.waypoints.push_back({w[0].get<double>(),
                             Vec3(w[1].get<double>(), w[2].get<double>(), w[3].get<double>())});
    }
  }
  if (j.contains("random_walk")) {
    const Json& r = j.at("random_walk");
    Vec3 center(0.0, 0.0, 0.9);
    double radius = 0.4, step = 1.0;
    std::uint64_t seed = 1;
    opt_vec(r, "center", center);
    opt(r, "radius", radius);
    opt(r, "step", step);
    opt(r, "seed", seed);
    const double lead = r.value("lead", 1.0);
    const auto pts = random_walk_waypoints(seed, center, radius, d.start + lead,
                                           d.end - d.start - lead, step);
    d.waypoints.insert(d.waypoints.end(), pts.begin(), pts.end());
  }
  return d;
}

Json disturbance_to(const Disturbance& d) {
  static const char* kinds[] = {"impulse", "constant", "hold"};
  Json j{{"type", kinds[static_cast<int>(d.kind)]},
         {"target", d.target == DisturbanceTarget::kLoad ? "load" : "quad"},
         {"start", d.start},
         {"end", d.end},
         {"vector", arr(d.vector)}};
  if (!d.waypoints.empty()) {
    Json w = Json::array();
    for (const HoldWaypoint& p : d.waypoints) {
      w.push_back(Json::array({p.time, p.pos.x(), p.pos.y(), p.pos.z()}));
    }
    j["waypoints"] = w;
  }
  return j;
}

ErrorVector weights_from(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 6) bad(std::string(what) + ": expected 6 block weights");
  return error_weights(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                       j[3].get<double>(), j[4].get<double>(), j[5].get<double>());
}

Json weights_to(const ErrorVector& w) {
  // Blocks of three, attitude and rates included.
  Json j = Json::array();
  for (int b = 0; b < 6; ++b) j.push_back(w(3 * b));
  return j;
}

}  // namespace

Scenario scenario_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) bad("scenario must be a JSON object");

  Scenario s;
  opt(j, "name", s.name);
  opt(j, "duration", s.duration);
  if (j.contains("controller")) s.controller = controller_from_string(j.at("controller").get<std::string>());
  if (j.contains("trajectory")) s.trajectory = trajectory_from(j.at("trajectory"));
  if (j.contains("initial_state")) s.initial_state = state_from(j.at("initial_state"));
  if (j.contains("disturbances")) {
    for (const Json& d : j.at("disturbances")) s.disturbances.push_back(disturbance_from(d));
  }
  opt(j, "seed", s.seed);
  opt(j, "record_every", s.record_every);
  opt(j, "thrust_time_constant", s.thrust_time_constant);
  if (j.contains("noise")) {
    const Json& n = j.at("noise");
    opt(n, "enabled", s.noise.enabled);
    opt(n, "quad_pos", s.noise.quad_pos);
    opt(n, "quad_vel", s.noise.quad_vel);
    opt(n, "cable_pos", s.noise.cable_pos);
    opt(n, "cable_vel", s.noise.cable_vel);
  }
  if (j.contains("rates")) {
    const Json& r = j.at("rates");
    opt(r, "plant", s.rates.plant);
    opt(r, "controller", s.rates.controller);
    opt(r, "measurement", s.rates.measurement);
  }
  if (j.contains("mpc")) {
    const Json& m = j.at("mpc");
    opt(m, "horizon_steps", s.mpc.horizon_steps);
    opt(m, "horizon_time", s.mpc.horizon_time);
    opt(m, "max_sqp_iters", s.mpc.max_sqp_iters);
    if (m.contains("q_taut")) s.mpc.q_taut = weights_from(m.at("q_taut"), "q_taut");
    if (m.contains("q_slack")) s.mpc.q_slack = weights_from(m.at("q_slack"), "q_slack");
    if (m.contains("r")) {
      const double r = m.at("r").get<double>();
      s.mpc.r_taut = s.mpc.r_slack = Vec4::Constant(r);
    }
    if (m.contains("q_cam")) {
      const Json& q = m.at("q_cam");
      if (q.is_number()) s.mpc.q_cam = Vec2::Constant(q.get<double>());
      else if (q.is_array() && q.size() == 2) s.mpc.q_cam = Vec2(q[0].get<double>(), q[1].get<double>());
      else bad("q_cam: expected a number or [qx, qy]");
    }
  }
  if (j.contains("estimator")) {
    const Json& e = j.at("estimator");
    opt(e, "epsilon", s.estimator.epsilon);
    opt(e, "filter_alpha", s.estimator.filter_alpha);
    opt(e, "init_var", s.estimator.init_var);
  }
  if (j.contains("params")) {
    const Json& p = j.at("params");
    opt(p, "quad_mass", s.params.quad_mass);
    opt(p, "load_mass", s.params.load_mass);
    opt(p, "cable_length", s.params.cable_length);
  }
  s.validate();
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  Json j;
  j["name"] = s.name;
  j["duration"] = s.duration;
  j["controller"] = to_string(s.controller);
  j["trajectory"] = trajectory_to(s.trajectory);
  if (s.initial_state) j["initial_state"] = state_to(*s.initial_state);
  Json d = Json::array();
  for (const Disturbance& e : s.disturbances) d.push_back(disturbance_to(e));
  j["disturbances"] = d;
  j["seed"] = s.seed;
  j["record_every"] = s.record_every;
  j["thrust_time_constant"] = s.thrust_time_constant;
  j["noise"] = Json{{"enabled", s.noise.enabled},
                    {"quad_pos", s.noise.quad_pos},
                    {"quad_vel", s.noise.quad_vel},
                    {"cable_pos", s.noise.cable_pos},
                    {"cable_vel", s.noise.cable_vel}};
  j["rates"] = Json{{"plant", s.rates.plant},
                    {"controller", s.rates.controller},
                    {"measurement", s.rates.measurement}};
  j["mpc"] = Json{{"horizon_steps", s.mpc.horizon_steps},
                  {"horizon_time", s.mpc.horizon_time},
                  {"max_sqp_iters", s.mpc.max_sqp_iters},
                  {"q_taut", weights_to(s.mpc.q_taut)},
                  {"q_slack", weights_to(s.mpc.q_slack)},
                  {"r", s.mpc.r_taut(0)},
                  {"q_cam", Json::array({s.mpc.q_cam(0), s.mpc.q_cam(1)})}};
  j["estimator"] = Json{{"epsilon", s.estimator.epsilon},
                        {"filter_alpha", s.estimator.filter_alpha},
                        {"init_var", s.estimator.init_var}};
  j["params"] = Json{{"quad_mass", s.params.quad_mass},
                     {"load_mass", s.params.load_mass},
                     {"cable_length", s.params.cable_length}};
  return j.dump(2);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return scenario_from_json(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_trace_jsonl(std::ostream& os, const std::vector<TraceRecord>& trace) {
  for (const TraceRecord& r : trace) {
    const SystemState& x = r.truth;
    Json j{{"t", r.time},
           {"mode", to_string(r.true_mode)},
           {"detected", to_string(r.detected_mode)},
           {"load_pos", arr(x.load_pos)},
           {"load_vel", arr(x.load_vel)},
           {"quad_pos", arr(x.quad_pos)},
           {"quad_vel", arr(x.quad_vel)},
           {"attitude", Json::array({x.attitude.w(), x.attitude.x(), x.attitude.y(),
                                     x.attitude.z()})},
           {"body_rates", arr(x.body_rates)},
           {"est_load_pos", arr(r.estimate.load_pos)},
           {"est_load_vel", arr(r.estimate.load_vel)},
           {"est_quad_pos", arr(r.estimate.quad_pos)},
           {"est_quad_vel", arr(r.estimate.quad_vel)},
           {"motors", Json::array({r.input.motor_speeds(0), r.input.motor_speeds(1),
                                   r.input.motor_speeds(2), r.input.motor_speeds(3)})},
           {"cmd_thrust", r.command.thrust},
           {"cmd_rates", arr(r.command.body_rates)},
           {"kkt", r.mpc.kkt_residual},
           {"cost", r.mpc.cost},
           {"sqp_iterations", r.mpc.sqp_iterations},
           {"mpc_failed", r.mpc.failed},
           {"cam", arr(r.payload_camera)},
           {"load_ref", arr(r.load_ref)},
           {"quad_ref", arr(r.quad_ref)}};
    os << j.dump() << '\n';
  }
}

namespace {

HybridMode mode_from(const Json& j) {
  const std::string m = j.get<std::string>();
  if (m == "taut") return HybridMode::kTaut;
  if (m == "slack") return HybridMode::kSlack;
  throw Error(ErrorCode::kConfig, "bad mode '" + m + "'");
}

}  // namespace

std::vector<TraceRecord> read_trace_jsonl(std::istream& is) {
  std::vector<TraceRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      TraceRecord r;
      r.time = j.at("t").get<double>();
      r.true_mode = mode_from(j.at("mode"));
      r.detected_mode = mode_from(j.at("detected"));
      r.truth.load_pos = vec3(j.at("load_pos"), "load_pos");
      r.truth.load_vel = vec3(j.at("load_vel"), "load_vel");
      r.truth.quad_pos = vec3(j.at("quad_pos"), "quad_pos");
      r.truth.quad_vel = vec3(j.at("quad_vel"), "quad_vel");
      const Json& q = j.at("attitude");
      r.truth.attitude = Quat(q.at(0).get<double>(), q.at(1).get<double>(),
                              q.at(2).get<double>(), q.at(3).get<double>());
      r.truth.body_rates = vec3(j.at("body_rates"), "body_rates");
      r.estimate.load_pos = vec3(j.at("est_load_pos"), "est_load_pos");
      r.estimate.load_vel = vec3(j.at("est_load_vel"), "est_load_vel");
      r.estimate.quad_pos = vec3(j.at("est_quad_pos"), "est_quad_pos");
      r.estimate.quad_vel = vec3(j.at("est_quad_vel"), "est_quad_vel");
      const Json& m = j.at("motors");
      for (int i = 0; i < 4; ++i) r.input.motor_speeds(i) = m.at(i).get<double>();
      r.command.thrust = j.at("cmd_thrust").get<double>();
      r.command.body_rates = vec3(j.at("cmd_rates"), "cmd_rates");
      r.mpc.kkt_residual = j.at("kkt").get<double>();
      r.mpc.cost = j.at("cost").get<double>();
      r.mpc.sqp_iterations = j.at("sqp_iterations").get<int>();
      r.mpc.failed = j.at("mpc_failed").get<bool>();
      r.payload_camera = vec3(j.at("cam"), "cam");
      r.load_ref = vec3(j.at("load_ref"), "load_ref");
      r.quad_ref = vec3(j.at("quad_ref"), "quad_ref");
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, "trace line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hpa
