#include "hpa/cli.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <boost/version.hpp>
#include <json.hpp>

#include "hpa/bridge.hpp"
#include "hpa/experiments.hpp"
#include "hpa/metrics.hpp"

namespace hpa {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Failure {
  int exit_code;
  std::string kind;
  std::string message;
};

Failure classify(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return {kExitConfig, "config", e.what()};
    default:
      return {kExitSimulation, "simulation", e.what()};
  }
}

int report(std::ostream& err, const Failure& f) {
  Json j;
  j["error"] = f.kind;
  j["message"] = f.message;
  err << j.dump() << '\n';
  return f.exit_code;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kConfig, "cannot write " + path.string());
  os << text;
  if (!os) throw Error(ErrorCode::kConfig, "cannot write " + path.string());
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kConfig, "cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

Json stats_json(const RunStats& s) {
  Json j;
  j["controller_calls"] = s.controller_calls;
  j["controller_failures"] = s.controller_failures;
  j["impacts"] = s.impacts;
  j["mean_solve_time_ms"] = s.mean_solve_time * 1e3;
  j["max_solve_time_ms"] = s.max_solve_time * 1e3;
  return j;
}

Json versions_json() {
  Json j;
  j["hpa_sim"] = kVersion;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  j["boost"] = std::to_string(BOOST_VERSION / 100000) + "." +
               std::to_string(BOOST_VERSION / 100 % 1000);
#ifdef __VERSION__
  j["compiler"] = __VERSION__;
#endif
  return j;
}

// --- run -------------------------------------------------------------------

struct RunOptions {
  std::string scenario;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> controller;
  std::string format = "csv";
};

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  Scenario s = load_scenario(o.scenario);
  if (o.seed) s.seed = *o.seed;
  if (o.controller) s.controller = controller_from_string(*o.controller);
  s.validate();
  const fs::path dir = prepare_out(o.out);

  const SimResult r = run(s);

  std::ostringstream trace;
  if (o.format == "csv") {
    write_trace_csv(trace, r.trace);
  } else {
    write_trace_jsonl(trace, r.trace);
  }
  const fs::path trace_path = dir / ("trace." + o.format);
  write_file(trace_path, trace.str());

  std::vector<RmseReport> reports;
  if (!r.trace.empty()) reports.push_back(rmse(r.trace, s.name));
  write_file(dir / "rmse.json", rmse_json(reports) + "\n");

  Json m;
  m["scenario_file"] = o.scenario;
  m["name"] = s.name;
  m["seed"] = s.seed;
  m["controller"] = to_string(s.controller);
  m["format"] = o.format;
  m["trace"] = trace_path.filename().string();
  m["records"] = r.trace.size();
  m["truncated"] = r.truncated;
  if (r.truncated) m["error"] = r.message;
  m["stats"] = stats_json(r.stats);
  m["versions"] = versions_json();
  m["scenario"] = Json::parse(scenario_to_json(s));
  write_file(dir / "manifest.json", m.dump(2) + "\n");

  out << "scenario " << s.name << " (" << to_string(s.controller) << ", seed " << s.seed
      << "): " << r.trace.size() << " records\n";
  if (!reports.empty()) out << format_rmse_table(reports);
  char line[96];
  std::snprintf(line, sizeof line, "mean solve time %.3f ms over %d calls\n",
                r.stats.mean_solve_time * 1e3, r.stats.controller_calls);
  out << line;
  out << "wrote " << trace_path.string() << ", " << (dir / "rmse.json").string() << ", "
      << (dir / "manifest.json").string() << '\n';
  if (r.truncated) {
    return report(err, {kExitSimulation, "simulation", "run truncated: " + r.message});
  }
  return kExitOk;
}

// --- table1 ----------------------------------------------------------------

struct TableOptions {
  std::optional<std::string> out;
  std::uint64_t seed = 1;
  bool noiseless = false;
  double amplitude = 1.0;
  std::vector<double> periods{kTrackingPeriods.begin(), kTrackingPeriods.end()};
};

// Column of the published table for a period, -1 if it has none.
int published_column(double period) {
  for (std::size_t i = 0; i < kTrackingPeriods.size(); ++i) {
    if (std::abs(kTrackingPeriods[i] - period) < 1e-9) return static_cast<int>(i);
  }
  return -1;
}

int cmd_table1(const TableOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<Scenario> runs;
  for (double T : o.periods) {
    if (!(T > 0.0)) throw Error(ErrorCode::kConfig, "periods must be > 0");
    Scenario s = lissajous_scenario(T, !o.noiseless, o.amplitude);
    s.seed = o.seed;
    runs.push_back(s);
  }
  const std::vector<SimResult> results = run_batch(runs);

  std::vector<RmseReport> reports;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (results[i].trace.empty()) throw Error(ErrorCode::kControllerFailure, runs[i].name + ": empty trace");
    reports.push_back(rmse(results[i].trace, runs[i].name));
  }

  std::string text = "Payload RMSE [m], simulated (published)";
  text += o.noiseless ? ", noiseless sensors\n" : ", noisy sensors\n";
  char cell[64];
  text += "        ";
  for (double T : o.periods) {
    char head[16];
    std::snprintf(head, sizeof head, "%gs", T);
    std::snprintf(cell, sizeof cell, "  T = %-14s", head);
    text += cell;
  }
  text += '\n';
  const char* axes[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    std::snprintf(cell, sizeof cell, "%-8s", axes[a]);
    text += cell;
    for (std::size_t i = 0; i < o.periods.size(); ++i) {
      const int c = published_column(o.periods[i]);
      if (c >= 0) {
        std::snprintf(cell, sizeof cell, "  %.4f (%.3f)    ", reports[i].rmse[a], kPublishedRmse[c][a]);
      } else {
        std::snprintf(cell, sizeof cell, "  %.4f (  -  )    ", reports[i].rmse[a]);
      }
      text += cell;
    }
    text += '\n';
  }
  text += "max|v_L|";
  for (std::size_t i = 0; i < o.periods.size(); ++i) {
    const int c = published_column(o.periods[i]);
    if (c >= 0) {
      std::snprintf(cell, sizeof cell, "  %.2f   (%.1f)      ", reports[i].max_load_speed, kPublishedMaxSpeed[c]);
    } else {
      std::snprintf(cell, sizeof cell, "  %.2f   ( - )      ", reports[i].max_load_speed);
    }
    text += cell;
  }
  text += "\n(taut samples only; max|v_L| in m/s)\n";
  out << text;

  if (o.out) {
    const fs::path dir = prepare_out(*o.out);
    Json j;
    j["noise"] = !o.noiseless;
    j["seed"] = o.seed;
    j["amplitude"] = o.amplitude;
    j["runs"] = Json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      Json r;
      r["period"] = o.periods[i];
      r["rmse"] = {reports[i].rmse.x(), reports[i].rmse.y(), reports[i].rmse.z()};
      r["max_load_speed"] = reports[i].max_load_speed;
      const int c = published_column(o.periods[i]);
      if (c >= 0) {
        r["published_rmse"] = {kPublishedRmse[c][0], kPublishedRmse[c][1], kPublishedRmse[c][2]};
        r["published_max_speed"] = kPublishedMaxSpeed[c];
      }
      r["truncated"] = results[i].truncated;
      r["stats"] = stats_json(results[i].stats);
      j["runs"].push_back(r);
    }
    write_file(dir / "table1.json", j.dump(2) + "\n");
  }

  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (results[i].truncated) {
      return report(err, {kExitSimulation, "simulation", runs[i].name + ": " + results[i].message});
    }
  }
  return kExitOk;
}

// --- compare ---------------------------------------------------------------

struct CompareOptions {
  std::optional<std::string> out;
  std::uint64_t seed = 1;
  double impulse = 0.4;
};

int cmd_compare(const CompareOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<Scenario> runs;
  for (ControllerKind c : {ControllerKind::kHpaMpc, ControllerKind::kNonHybridMpc}) {
    runs.push_back(hover_lift_scenario(c, o.impulse));
    runs.push_back(line_lift_scenario(c, o.impulse));
  }
  for (Scenario& s : runs) s.seed = o.seed;
  const std::vector<SimResult> results = run_batch(runs);

  Json all = Json::array();
  out << "scenario    controller       slack windows [s]        z dev [m]  peak|vz_Q|  peak|W|   max lag [s]\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& tr = results[i].trace;
    Json j;
    j["scenario"] = runs[i].name;
    j["controller"] = to_string(runs[i].controller);
    j["impulse"] = o.impulse;
    std::string wins;
    j["slack_windows"] = Json::array();
    for (const Interval& w : slack_windows(tr)) {
      const double d = w.end - w.start + 1.0 / runs[i].rates.plant;
      j["slack_windows"].push_back({{"start", w.start}, {"duration", d}});
      char b[24];
      std::snprintf(b, sizeof b, "%s%.3f", wins.empty() ? "" : ",", d);
      wins += b;
    }
    if (wins.empty()) wins = "none";
    const double dev = slack_quad_deviation(tr);
    j["slack_z_deviation"] = dev;
    char sev[48] = "        -         -";
    try {
      const ImpactSeverity s = impact_severity(tr);
      j["impact"] = {{"peak_quad_vz", s.peak_quad_vz}, {"peak_rates", s.peak_rates}, {"events", s.events}};
      std::snprintf(sev, sizeof sev, "%9.3f %9.3f", s.peak_quad_vz, s.peak_rates);
    } catch (const Error&) {
      j["impact"] = nullptr;
    }
    const double lag = tr.empty() ? 0.0 : max_mode_lag(tr);
    j["max_mode_lag"] = std::isfinite(lag) ? Json(lag) : Json(nullptr);
    j["truncated"] = results[i].truncated;
    if (results[i].truncated) j["error"] = results[i].message;
    all.push_back(j);

    char line[256];
    std::snprintf(line, sizeof line, "%-11s %-16s %-24s %9.4f %s %9.3f%s\n", runs[i].name.c_str(),
                  to_string(runs[i].controller), wins.c_str(), dev, sev, lag,
                  results[i].truncated ? "  (truncated)" : "");
    out << line;
  }
  if (o.out) write_file(prepare_out(*o.out) / "compare.json", all.dump(2) + "\n");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (results[i].truncated) {
      return report(err, {kExitSimulation, "simulation",
                          runs[i].name + "/" + to_string(runs[i].controller) + ": " + results[i].message});
    }
  }
  return kExitOk;
}

// --- serve -----------------------------------------------------------------

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct ServeOptions {
  std::optional<std::string> scenario;
  std::string address = "127.0.0.1";
  unsigned short port = 8765;
  double speed = 1.0;
  double telemetry_hz = 30.0;
};

int cmd_serve(const ServeOptions& o, std::ostream& out) {
  Scenario s;
  s.name = "interactive";
  if (o.scenario) s = load_scenario(*o.scenario);
  BridgeOptions b;
  b.address = o.address;
  b.port = o.port;
  b.speed = o.speed;
  b.telemetry_hz = o.telemetry_hz;
  BridgeServer server(s, b);
  const unsigned short port = server.start();
  Json j;
  j["listening"] = b.address;
  j["port"] = port;
  j["schema"] = kSchemaVersion;
  out << j.dump() << std::endl;
  g_interrupted = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return kExitOk;
}

}  // namespace

int batch_threads(int jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HPA_SIM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<int>(v);
  }
  return std::max(1, std::min(n, jobs));
}

std::vector<SimResult> run_batch(const std::vector<Scenario>& scenarios) {
  std::vector<SimResult> results(scenarios.size());
  const int workers = batch_threads(static_cast<int>(scenarios.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < scenarios.size();) results[i] = run(scenarios[i]);
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  return results;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid payload MPC simulator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  RunOptions ro;
  CLI::App* run_cmd = app.add_subcommand("run", "Run one scenario file and write trace, RMSE and manifest");
  run_cmd->add_option("--scenario", ro.scenario, "Scenario JSON file")->required();
  run_cmd->add_option("--out", ro.out, "Output directory");
  run_cmd->add_option("--seed", ro.seed, "Override the scenario seed");
  run_cmd->add_option("--controller", ro.controller, "hpa|taut|geometric (or hpa_mpc|non_hybrid_mpc)");
  run_cmd->add_option("--format", ro.format, "Trace format")->check(CLI::IsMember({"csv", "jsonl"}));

  TableOptions to;
  CLI::App* table_cmd = app.add_subcommand("table1", "Lissajous tracking RMSE at the three periods");
  table_cmd->add_option("--out", to.out, "Also write table1.json here");
  table_cmd->add_option("--seed", to.seed, "Noise seed");
  table_cmd->add_flag("--noiseless", to.noiseless, "Disable sensor noise");
  table_cmd->add_option("--amplitude", to.amplitude, "Scale of the x/y amplitudes");
  table_cmd->add_option("--periods", to.periods, "Periods in seconds");

  CompareOptions co;
  CLI::App* compare_cmd = app.add_subcommand("compare", "Hybrid vs taut-forced MPC under a payload kick");
  compare_cmd->add_option("--out", co.out, "Also write compare.json here");
  compare_cmd->add_option("--seed", co.seed, "Noise seed");
  compare_cmd->add_option("--impulse", co.impulse, "Upward impulse on the payload, N*s");

  ServeOptions so;
  CLI::App* serve_cmd = app.add_subcommand("serve", "Real-time WebSocket bridge");
  serve_cmd->add_option("--scenario", so.scenario, "Scenario JSON file (default hover)");
  serve_cmd->add_option("--address", so.address, "Listen address");
  serve_cmd->add_option("--port", so.port, "Listen port, 0 for any");
  serve_cmd->add_option("--speed", so.speed, "Simulated seconds per wall second");
  serve_cmd->add_option("--telemetry-hz", so.telemetry_hz, "Telemetry rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report(err, {kExitConfig, "config", e.what()});
  }

  try {
    if (*run_cmd) return cmd_run(ro, out, err);
    if (*table_cmd) return cmd_table1(to, out, err);
    if (*compare_cmd) return cmd_compare(co, out, err);
    if (*serve_cmd) return cmd_serve(so, out);
  } catch (const Error& e) {
    return report(err, classify(e));
  } catch (const std::exception& e) {
    return report(err, {kExitSimulation, "internal", e.what()});
  }
  return kExitConfig;
}

}  // namespace hpa
