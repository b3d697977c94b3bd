#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hpa/simulator.hpp"

namespace hpa {

/// Per-axis payload RMSE over taut samples, plus the peak payload speed over
/// the whole trace.
struct RmseReport {
  std::string label;
  Vec3 rmse = Vec3::Zero();  // m
  double max_load_speed = 0.0;  // m/s
  int samples = 0;              // taut samples used
};

/// RMSE against the reference stored in each record.
RmseReport rmse(const std::vector<TraceRecord>& trace, const std::string& label = "");
RmseReport rmse(const std::vector<TraceRecord>& trace,
                const std::function<Vec3(double)>& reference,
                const std::string& label = "");

inline constexpr double kDefaultFovHalfX = 45.0 * 3.14159265358979323846 / 180.0;
inline constexpr double kDefaultFovHalfY = 35.0 * 3.14159265358979323846 / 180.0;

/// Camera looks along its -z axis. A sample counts when both angular offsets
/// are inside the half-angles.
bool in_fov(const Vec3& cam, double half_x, double half_y);
double fov_retention(const std::vector<TraceRecord>& trace,
                     double half_x = kDefaultFovHalfX, double half_y = kDefaultFovHalfY);

struct ImpactSeverity {
  double peak_quad_vz = 0.0;  // m/s
  double peak_rates = 0.0;    // rad/s
  int events = 0;
};

/// Extrema of |v_z| of the quadrotor and |Omega| in windows around detected
/// slack->taut events. Throws kNoTransitions when there is none.
ImpactSeverity impact_severity(const std::vector<TraceRecord>& trace, double window = 0.2);

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

/// Maximal runs of true slack mode.
std::vector<Interval> slack_windows(const std::vector<TraceRecord>& trace);

/// Largest |z_Q - z_Q,ref| over true-slack samples; 0 without slack.
double slack_quad_deviation(const std::vector<TraceRecord>& trace);

/// Delay from each true mode change to the detector reporting the new mode.
/// A change the detector never reports before the true mode flips again (or
/// the trace ends) has infinite lag.
struct ModeLag {
  double time = 0.0;  // of the true change
  HybridMode to = HybridMode::kTaut;
  double lag = std::numeric_limits<double>::infinity();
};
std::vector<ModeLag> mode_lags(const std::vector<TraceRecord>& trace);
double max_mode_lag(const std::vector<TraceRecord>& trace);

std::string format_rmse_table(const std::vector<RmseReport>& reports);
std::string rmse_json(const std::vector<RmseReport>& reports);

}  // namespace hpa
