#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epigvi/errors.hpp"

namespace epigvi {

enum class AgeClass : std::uint8_t { Child, Adult, Retired };
enum class VenueKind : std::uint8_t { None, School, Company };

const char* to_string(AgeClass a);
const char* to_string(VenueKind v);

struct Agent {
  int id = 0;
  AgeClass age_class = AgeClass::Adult;
  double susceptibility = 1.0;
  int household = -1;
  VenueKind venue_kind = VenueKind::None;
  int venue = -1;  // -1 when venue_kind == None
};

struct PopulationConfig {
  double child_share = 0.2;
  double adult_share = 0.6;
  double retired_share = 0.2;
  double child_susceptibility = 1.0;
  double adult_susceptibility = 1.0;
  double retired_susceptibility = 1.0;
  /// Probability of household size k is household_size_probs[k-1].
  std::vector<double> household_size_probs = {0.3, 0.35, 0.2, 0.15};
  int school_capacity = 500;
  int company_capacity = 100;

  void validate() const;  // throws ConfigError naming the offending field
  std::string canonical_string() const;
  std::uint64_t hash() const;  // FNV-1a of the canonical string
};

/// Immutable synthetic population: agents partitioned into households, with
/// children in schools and adults in companies. Group member lists are
/// sorted by agent id.
struct Population {
  std::vector<Agent> agents;
  std::vector<std::vector<int>> households;
  std::vector<std::vector<int>> schools;
  std::vector<std::vector<int>> companies;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  int size() const { return static_cast<int>(agents.size()); }
};

/// Deterministically generates a population. Age-class counts follow the
/// configured shares up to rounding; classes are spread through the id range
/// by a seeded shuffle; households are filled by sequentially drawn sizes
/// (last one truncated); venues fill to capacity in id order.
Population synthesize(int n_agents, std::uint64_t seed,
                      const PopulationConfig& config = {});

void save(const Population& p, const std::string& path);
Population load_population(const std::string& path);

}  // namespace epigvi
