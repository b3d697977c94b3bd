#pragma once

#include <iosfwd>
#include <vector>

#include "hpa/simulator.hpp"

namespace hpa {

/// Process exit codes of hpa_sim.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSimulation = 3;

/// Entry point of hpa_sim. Errors go to `err` as one JSON object per line.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Worker count for batch subcommands: HPA_SIM_THREADS if set and valid,
/// otherwise the hardware concurrency, never more than `jobs`.
int batch_threads(int jobs);

/// Runs every scenario, up to batch_threads() at a time. Results keep the
/// input order.
std::vector<SimResult> run_batch(const std::vector<Scenario>& scenarios);

}  // namespace hpa
