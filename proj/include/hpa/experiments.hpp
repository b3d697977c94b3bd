#pragma once

#include <array>
#include <vector>

#include "hpa/simulator.hpp"

namespace hpa {

/// Lissajous periods of the tracking table, s.
inline constexpr std::array<double, 3> kTrackingPeriods = {5.0, 4.0, 3.5};

/// Published hardware RMSE per period (rows x, y, z), m, and peak payload
/// speed, m/s. Printed next to the simulated values.
inline constexpr std::array<std::array<double, 3>, 3> kPublishedRmse = {{
    {0.052, 0.021, 0.039},
    {0.068, 0.032, 0.044},
    {0.073, 0.027, 0.043},
}};
inline constexpr std::array<double, 3> kPublishedMaxSpeed = {3.0, 3.6, 4.2};

/// Two periods of the a = 2, b = 0.5, n = 2 figure. `amplitude` scales a and b.
Scenario lissajous_scenario(double period, bool noise = true, double amplitude = 1.0);

/// Hover at (0, 0, 0.7) with an upward kick on the payload at t = 2 s.
Scenario hover_lift_scenario(ControllerKind controller, double impulse = 0.4);

/// Straight line at 0.5 m/s along x with the same kick at t = 2 s.
Scenario line_lift_scenario(ControllerKind controller, double impulse = 0.4);

/// A short kick makes the cable slack, then a hand holds the payload 0.18 m
/// below the hover height and walks it over a 0.4 m disk for 20 s.
Scenario perception_scenario(double q_cam);

/// The scenarios shipped under scenarios/, one file per entry named
/// `<name>.json`.
std::vector<Scenario> shipped_scenarios();

}  // namespace hpa
