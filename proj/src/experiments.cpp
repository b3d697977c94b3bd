#include "hpa/experiments.hpp"

#include <cstdio>

namespace hpa {

namespace {

Disturbance kick(double impulse) {
  Disturbance d;
  d.start = 2.0;
  d.vector = Vec3(0.0, 0.0, impulse);
  return d;
}

}  // namespace

Scenario lissajous_scenario(double period, bool noise, double amplitude) {
  Scenario s;
  char name[48];
  std::snprintf(name, sizeof name, "lissajous_T%g", period);
  s.name = name;
  s.duration = 2.0 * period;
  LissajousSource ls;
  ls.params.a *= amplitude;
  ls.params.b *= amplitude;
  ls.params.period_scale = period;
  s.trajectory = ls;
  s.noise.enabled = noise;
  return s;
}

Scenario hover_lift_scenario(ControllerKind controller, double impulse) {
  Scenario s;
  s.name = "hover_lift";
  s.duration = 5.0;
  s.controller = controller;
  if (impulse != 0.0) s.disturbances.push_back(kick(impulse));
  return s;
}

Scenario line_lift_scenario(ControllerKind controller, double impulse) {
  Scenario s = hover_lift_scenario(controller, impulse);
  s.name = "line_lift";
  s.trajectory = LineSource{};
  return s;
}

Scenario perception_scenario(double q_cam) {
  Scenario s;
  s.name = "perception_walk";
  s.duration = 23.0;
  s.mpc.q_cam = Vec2::Constant(q_cam);
  Disturbance lift;
  lift.start = 1.0;
  lift.vector = Vec3(0.0, 0.0, 0.3);
  Disturbance hold;
  hold.kind = DisturbanceKind::kHold;
  hold.start = 1.15;
  hold.end = 21.5;
  hold.waypoints = random_walk_waypoints(7, Vec3(0.0, 0.0, 1.02), 0.4, 1.5, 20.0, 1.0);
  s.disturbances = {lift, hold};
  return s;
}

std::vector<Scenario> shipped_scenarios() {
  Scenario hover;
  hover.name = "hover";
  hover.duration = 5.0;
  hover.trajectory = HoverSource{Vec3(0.0, 0.0, 0.7)};

  Scenario hover_geo = hover;
  hover_geo.name = "hover_geometric";
  hover_geo.controller = ControllerKind::kGeometric;

  std::vector<Scenario> out{hover, hover_geo};
  for (ControllerKind c : {ControllerKind::kHpaMpc, ControllerKind::kNonHybridMpc}) {
    const std::string suffix = c == ControllerKind::kHpaMpc ? "" : "_baseline";
    out.push_back(hover_lift_scenario(c));
    out.back().name += suffix;
    out.push_back(line_lift_scenario(c));
    out.back().name += suffix;
  }
  for (double T : kTrackingPeriods) out.push_back(lissajous_scenario(T));
  out.push_back(perception_scenario(2000.0));
  Scenario blind = perception_scenario(0.0);
  blind.name = "perception_walk_no_cam";
  out.push_back(blind);
  return out;
}

}  // namespace hpa
