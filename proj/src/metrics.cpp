#include "hpa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace hpa {

namespace {

void require(const std::vector<TraceRecord>& trace) {
  if (trace.empty()) throw Error(ErrorCode::kEmptyTrace, "trace is empty");
}

}  // namespace

RmseReport rmse(const std::vector<TraceRecord>& trace, const std::function<Vec3(double)>& reference,
                const std::string& label) {
  require(trace);
  RmseReport r;
  r.label = label;
  Vec3 sum = Vec3::Zero();
  for (const TraceRecord& rec : trace) {
    r.max_load_speed = std::max(r.max_load_speed, rec.truth.load_vel.norm());
    if (rec.true_mode != HybridMode::kTaut) continue;
    const Vec3 e = rec.truth.load_pos - reference(rec.time);
    sum += e.cwiseAbs2();
    ++r.samples;
  }
  if (r.samples > 0) r.rmse = (sum / r.samples).cwiseSqrt();
  return r;
}

RmseReport rmse(const std::vector<TraceRecord>& trace, const std::string& label) {
  require(trace);
  RmseReport r;
  r.label = label;
  Vec3 sum = Vec3::Zero();
  for (const TraceRecord& rec : trace) {
    r.max_load_speed = std::max(r.max_load_speed, rec.truth.load_vel.norm());
    if (rec.true_mode != HybridMode::kTaut) continue;
    sum += (rec.truth.load_pos - rec.load_ref).cwiseAbs2();
    ++r.samples;
  }
  if (r.samples > 0) r.rmse = (sum / r.samples).cwiseSqrt();
  return r;
}

bool in_fov(const Vec3& cam, double half_x, double half_y) {
  return std::abs(std::atan2(cam.x(), -cam.z())) <= half_x &&
         std::abs(std::atan2(cam.y(), -cam.z())) <= half_y;
}

double fov_retention(const std::vector<TraceRecord>& trace, double half_x, double half_y) {
  require(trace);
  int inside = 0;
  for (const TraceRecord& r : trace) {
    if (in_fov(r.payload_camera, half_x, half_y)) ++inside;
  }
  return static_cast<double>(inside) / trace.size();
}

ImpactSeverity impact_severity(const std::vector<TraceRecord>& trace, double window) {
  std::vector<double> events;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i - 1].detected_mode == HybridMode::kSlack &&
        trace[i].detected_mode == HybridMode::kTaut) {
      events.push_back(trace[i].time);
    }
  }
  if (events.empty()) throw Error(ErrorCode::kNoTransitions, "no slack->taut transition in trace");
  ImpactSeverity s;
  s.events = static_cast<int>(events.size());
  for (const TraceRecord& r : trace) {
    const bool near = std::any_of(events.begin(), events.end(), [&](double te) {
      return std::abs(r.time - te) <= window;
    });
    if (!near) continue;
    s.peak_quad_vz = std::max(s.peak_quad_vz, std::abs(r.truth.quad_vel.z()));
    s.peak_rates = std::max(s.peak_rates, r.truth.body_rates.norm());
  }
  return s;
}

std::vector<Interval> slack_windows(const std::vector<TraceRecord>& trace) {
  std::vector<Interval> out;
  bool open = false;
  for (const TraceRecord& r : trace) {
    const bool slack = r.true_mode == HybridMode::kSlack;
    if (slack && !open) {
      out.push_back({r.time, r.time});
      open = true;
    }
    if (slack) out.back().end = r.time;
    if (!slack) open = false;
  }
  return out;
}

double slack_quad_deviation(const std::vector<TraceRecord>& trace) {
  double dev = 0.0;
  for (const TraceRecord& r : trace) {
    if (r.true_mode == HybridMode::kSlack) {
      dev = std::max(dev, std::abs(r.truth.quad_pos.z() - r.quad_ref.z()));
    }
  }
  return dev;
}

std::vector<ModeLag> mode_lags(const std::vector<TraceRecord>& trace) {
  std::vector<ModeLag> out;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].true_mode == trace[i - 1].true_mode) continue;
    ModeLag m;
    m.time = trace[i].time;
    m.to = trace[i].true_mode;
    for (std::size_t j = i; j < trace.size(); ++j) {
      if (trace[j].true_mode != m.to) break;
      if (trace[j].detected_mode == m.to) {
        m.lag = trace[j].time - m.time;
        break;
      }
    }
    out.push_back(m);
  }
  return out;
}

double max_mode_lag(const std::vector<TraceRecord>& trace) {
  double worst = 0.0;
  for (const ModeLag& m : mode_lags(trace)) worst = std::max(worst, m.lag);
  return worst;
}

std::string format_rmse_table(const std::vector<RmseReport>& reports) {
  std::string out = "label                      rmse_x   rmse_y   rmse_z   max|v_L|  samples\n";
  char line[160];
  for (const RmseReport& r : reports) {
    std::snprintf(line, sizeof line, "%-24s %8.4f %8.4f %8.4f %9.3f %8d\n", r.label.c_str(),
                  r.rmse.x(), r.rmse.y(), r.rmse.z(), r.max_load_speed, r.samples);
    out += line;
  }
  out += "(RMSE over taut samples only)\n";
  return out;
}

std::string rmse_json(const std::vector<RmseReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const RmseReport& r : reports) {
    j.push_back({{"label", r.label},
                 {"rmse", {r.rmse.x(), r.rmse.y(), r.rmse.z()}},
                 {"max_load_speed", r.max_load_speed},
                 {"taut_samples", r.samples}});
  }
  return j.dump(2);
}

}  // namespace hpa
