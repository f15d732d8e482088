#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "epigvi/population.hpp"

using namespace epigvi;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string temp_path(const char* name) {
  return std::string("pop_test_") + name + ".txt";
}

bool structurally_equal(const Population& a, const Population& b) {
  if (a.size() != b.size() || a.seed != b.seed ||
      a.config_hash != b.config_hash)
    return false;
  for (int i = 0; i < a.size(); ++i) {
    const Agent &x = a.agents[i], &y = b.agents[i];
    if (x.id != y.id || x.age_class != y.age_class ||
        x.susceptibility != y.susceptibility || x.household != y.household ||
        x.venue_kind != y.venue_kind || x.venue != y.venue)
      return false;
  }
  return a.households == b.households && a.schools == b.schools &&
         a.companies == b.companies;
}

}  // namespace

TEST_CASE("synthesis is deterministic: identical serialized bytes") {
  const Population p1 = synthesize(1000, 7);
  const Population p2 = synthesize(1000, 7);
  const std::string f1 = temp_path("det1"), f2 = temp_path("det2");
  save(p1, f1);
  save(p2, f2);
  CHECK(slurp(f1) == slurp(f2));
  CHECK(!slurp(f1).empty());
  std::remove(f1.c_str());
  std::remove(f2.c_str());
}

TEST_CASE("age class counts follow the configured shares") {
  const Population p = synthesize(1000, 7);
  int children = 0;
  for (const Agent& a : p.agents)
    if (a.age_class == AgeClass::Child) ++children;
  CHECK(children >= 180);
  CHECK(children <= 220);
}

TEST_CASE("household sizes follow the categorical distribution") {
  // Expected mean of {1:0.3, 2:0.35, 3:0.2, 4:0.15} is
  // 1*0.3 + 2*0.35 + 3*0.2 + 4*0.15 = 2.2.
  const double expected_mean = 1 * 0.3 + 2 * 0.35 + 3 * 0.2 + 4 * 0.15;
  const Population p = synthesize(1000, 11);
  const double mean =
      static_cast<double>(p.size()) / static_cast<double>(p.households.size());
  CHECK(std::abs(mean - expected_mean) < 0.2);
}

TEST_CASE("groups partition the relevant agent subsets and are non-empty") {
  const Population p = synthesize(1234, 3);
  std::size_t in_households = 0;
  for (const auto& h : p.households) {
    CHECK(!h.empty());
    in_households += h.size();
  }
  CHECK(in_households == static_cast<std::size_t>(p.size()));

  std::size_t in_schools = 0, in_companies = 0, children = 0, adults = 0;
  for (const auto& s : p.schools) {
    CHECK(!s.empty());
    in_schools += s.size();
  }
  for (const auto& c : p.companies) {
    CHECK(!c.empty());
    in_companies += c.size();
  }
  std::set<int> seen;
  for (const Agent& a : p.agents) {
    CHECK(a.household >= 0);
    if (a.age_class == AgeClass::Child) {
      ++children;
      CHECK(a.venue_kind == VenueKind::School);
    } else if (a.age_class == AgeClass::Adult) {
      ++adults;
      CHECK(a.venue_kind == VenueKind::Company);
    } else {
      CHECK(a.venue_kind == VenueKind::None);
      CHECK(a.venue == -1);
    }
    CHECK(seen.insert(a.id).second);
  }
  CHECK(in_schools == children);
  CHECK(in_companies == adults);
}

TEST_CASE("venues fill to capacity before a new one opens") {
  PopulationConfig cfg;
  cfg.school_capacity = 40;
  cfg.company_capacity = 25;
  const Population p = synthesize(1000, 5, cfg);
  for (std::size_t i = 0; i + 1 < p.schools.size(); ++i)
    CHECK(p.schools[i].size() == 40);
  for (std::size_t i = 0; i + 1 < p.companies.size(); ++i)
    CHECK(p.companies[i].size() == 25);
}

TEST_CASE("member lists are sorted by agent id") {
  const Population p = synthesize(500, 21);
  for (const auto& g : p.households)
    CHECK(std::is_sorted(g.begin(), g.end()));
  for (const auto& g : p.schools) CHECK(std::is_sorted(g.begin(), g.end()));
  for (const auto& g : p.companies) CHECK(std::is_sorted(g.begin(), g.end()));
}

TEST_CASE("invalid configs are rejected with the field name") {
  PopulationConfig cfg;
  cfg.child_share = 1.5;
  cfg.adult_share = 0.6;
  CHECK_THROWS_WITH_AS(synthesize(100, 1, cfg),
                       doctest::Contains("age_shares"), ConfigError);

  PopulationConfig bad_hh;
  bad_hh.household_size_probs = {0.5, 0.4};  // sums to 0.9
  CHECK_THROWS_WITH_AS(synthesize(100, 1, bad_hh),
                       doctest::Contains("household_size_probs"), ConfigError);

  PopulationConfig bad_cap;
  bad_cap.school_capacity = 0;
  CHECK_THROWS_WITH_AS(synthesize(100, 1, bad_cap),
                       doctest::Contains("school_capacity"), ConfigError);

  CHECK_THROWS_AS(synthesize(5, 1), ConfigError);
}

TEST_CASE("save/load round-trips structurally") {
  PopulationConfig cfg;
  cfg.child_susceptibility = 1.25;
  const Population p = synthesize(300, 17, cfg);
  const std::string f = temp_path("roundtrip");
  save(p, f);
  const Population q = load_population(f);
  CHECK(structurally_equal(p, q));
  std::remove(f.c_str());
}

TEST_CASE("load rejects an agent referencing a missing group") {
  const Population p = synthesize(50, 2);
  const std::string f = temp_path("refcheck");
  save(p, f);
  std::string text = slurp(f);
  // Point the first agent at a household beyond the declared count.
  const std::string needle = "\n0,";
  const auto pos = text.find(needle);
  REQUIRE(pos != std::string::npos);
  const auto line_end = text.find('\n', pos + 1);
  std::string row = text.substr(pos + 1, line_end - pos - 1);
  auto first_comma = row.find(',');
  auto second = row.find(',', first_comma + 1);
  auto third = row.find(',', second + 1);
  auto fourth = row.find(',', third + 1);
  row = row.substr(0, third + 1) + "99999" + row.substr(fourth);
  text = text.substr(0, pos + 1) + row + text.substr(line_end);
  std::ofstream(f, std::ios::binary) << text;
  CHECK_THROWS_WITH_AS(load_population(f),
                       doctest::Contains("missing household"), ParseError);
  std::remove(f.c_str());
}

TEST_CASE("load rejects an empty file") {
  const std::string f = temp_path("empty");
  std::ofstream(f, std::ios::binary) << "";
  CHECK_THROWS_AS(load_population(f), ParseError);
  std::remove(f.c_str());
}
