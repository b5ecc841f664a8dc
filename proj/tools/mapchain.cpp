#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mapchain/sim.hpp"

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level_from_env() {
  const char* env = std::getenv("MAPCHAIN_LOG");
  if (env == nullptr) return LogLevel::error;
  const std::string v(env);
  if (v == "debug") return LogLevel::debug;
  if (v == "info") return LogLevel::info;
  return LogLevel::error;
}

constexpr int kExitOk = 0;
constexpr int kExitInvalidScenario = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mapchain: self-healing map data chain simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> ticks_override;
  bool quiet = false;

  auto* run_cmd = app.add_subcommand("run", "run a scenario and write per-tick metrics as CSV");
  run_cmd->add_option("scenario", scenario_path, "scenario file")->required();
  run_cmd->add_option("--out", out_path, "CSV destination, '-' for standard output");
  run_cmd->add_option("--seed-override", seed_override, "replace the [sim] seed");
  run_cmd->add_option("--ticks", ticks_override, "replace the [sim] tick count");
  run_cmd->add_flag("--quiet", quiet, "suppress the final report");

  std::string net_scenario;
  std::string net_format = "text";
  auto* net_cmd = app.add_subcommand("network", "print the road network of a scenario");
  net_cmd->add_option("scenario", net_scenario, "scenario file")->required();
  net_cmd->add_option("--format", net_format, "text or hex")->check(CLI::IsMember({"text", "hex"}));

  CLI11_PARSE(app, argc, argv);

  const LogLevel level = log_level_from_env();
  auto log = [level](int lvl, const std::string& msg) {
    if (lvl <= static_cast<int>(level)) std::cerr << "mapchain: " << msg << '\n';
  };

  mapchain::Scenario scenario;
  std::optional<mapchain::Simulation> sim;
  try {
    scenario = mapchain::load_scenario(run_cmd->parsed() ? scenario_path : net_scenario);
    if (seed_override) scenario.seed = *seed_override;
    if (ticks_override) scenario.ticks = *ticks_override;
    sim.emplace(scenario, log);
  } catch (const mapchain::Error& e) {
    log(0, std::string("invalid scenario: ") + e.what());
    return kExitInvalidScenario;
  }

  if (net_cmd->parsed()) {
    if (net_format == "hex") {
      std::cout << mapchain::to_hex(mapchain::encode_network(sim->network())) << '\n';
    } else {
      std::cout << mapchain::network_to_text(sim->network());
    }
    return kExitOk;
  }

  try {
    log(1, "running " + std::to_string(scenario.ticks) + " ticks with " + std::to_string(scenario.vehicles) +
               " vehicles on " + std::to_string(sim->network().size()) + " segments");
    const auto result = sim->run();
    if (out_path == "-") {
      std::cout.imbue(std::locale::classic());
      mapchain::emit_csv(result.metrics, std::cout);
    } else if (!out_path.empty()) {
      mapchain::emit_csv(result.metrics, std::filesystem::path(out_path));
    }
    if (!quiet) {
      const auto& r = result.report;
      std::cerr << "ticks " << r.ticks << ", complete horizons " << r.complete_horizons << "/" << r.horizons
                << ", frames " << r.frames_sent << " sent / " << r.frames_dropped << " lost"
                << ", healing patches " << r.healing_patches << ", master mismatch " << r.final_master_mismatch
                << ", cache mismatch " << r.final_cache_mismatch << ", patch bytes " << r.patch_bytes
                << ", uplink bytes " << r.uplink_bytes << '\n';
    }
  } catch (const std::exception& e) {
    log(0, std::string("runtime error: ") + e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
