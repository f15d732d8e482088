#pragma once

#include <cstdint>
#include <string>

#include "epigvi/flow.hpp"
#include "epigvi/gvi.hpp"
#include "epigvi/population.hpp"
#include "epigvi/simulator.hpp"

namespace epigvi {

/// Whole-pipeline configuration with sections mirroring the modules.
/// Section seeds default to derivations of the global seed; explicitly
/// configured seeds win.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";

  int n_agents = 10000;
  std::uint64_t population_seed = 0;
  PopulationConfig population;

  SimConfig simulator;

  FlowConfig flow;
  std::uint64_t flow_init_seed = 0;

  ScoringRuleConfig scoring;
  KlConfig kl;
  TrainConfig training;

  void validate() const;
};

/// Parses a UTF-8 JSON config file. Unknown keys anywhere are rejected and
/// every diagnostic names the offending field path. `seed_override`, when
/// set, replaces the global seed before section seeds are derived.
RunConfig parse_run_config(const std::string& path,
                           const std::uint64_t* seed_override = nullptr);
RunConfig parse_run_config_text(const std::string& text,
                                const std::uint64_t* seed_override = nullptr);

/// Effective configuration (all defaults resolved) as a JSON document.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace epigvi
