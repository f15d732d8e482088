#include "epigvi/population.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "epigvi/rng.hpp"

namespace epigvi {

const char* to_string(AgeClass a) {
  switch (a) {
    case AgeClass::Child:
      return "child";
    case AgeClass::Adult:
      return "adult";
    case AgeClass::Retired:
      return "retired";
  }
  return "?";
}

const char* to_string(VenueKind v) {
  switch (v) {
    case VenueKind::None:
      return "none";
    case VenueKind::School:
      return "school";
    case VenueKind::Company:
      return "company";
  }
  return "?";
}

void PopulationConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ConfigError(std::string("population.") + field +
                        ": must be a finite non-negative number");
  };
  positive(child_share, "age_shares.child");
  positive(adult_share, "age_shares.adult");
  positive(retired_share, "age_shares.retired");
  const double share_sum = child_share + adult_share + retired_share;
  if (std::abs(share_sum - 1.0) > 1e-9)
    throw ConfigError("population.age_shares: shares must sum to 1 (got " +
                      std::to_string(share_sum) + ")");
  positive(child_susceptibility, "susceptibility.child");
  positive(adult_susceptibility, "susceptibility.adult");
  positive(retired_susceptibility, "susceptibility.retired");
  if (household_size_probs.empty())
    throw ConfigError("population.household_size_probs: must not be empty");
  double psum = 0.0;
  for (double p : household_size_probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw ConfigError(
          "population.household_size_probs: entries must be non-negative");
    psum += p;
  }
  if (std::abs(psum - 1.0) > 1e-9)
    throw ConfigError(
        "population.household_size_probs: probabilities must sum to 1 (got " +
        std::to_string(psum) + ")");
  if (school_capacity <= 0)
    throw ConfigError("population.school_capacity: must be positive");
  if (company_capacity <= 0)
    throw ConfigError("population.company_capacity: must be positive");
}

std::string PopulationConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "shares=" << child_share << "," << adult_share << "," << retired_share
     << ";psi=" << child_susceptibility << "," << adult_susceptibility << ","
     << retired_susceptibility << ";hh=";
  for (std::size_t i = 0; i < household_size_probs.size(); ++i)
    os << (i ? "," : "") << household_size_probs[i];
  os << ";school=" << school_capacity << ";company=" << company_capacity;
  return os.str();
}

std::uint64_t PopulationConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_string()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Population synthesize(int n_agents, std::uint64_t seed,
                      const PopulationConfig& config) {
  config.validate();
  if (n_agents < 10)
    throw ConfigError("population.n_agents: at least 10 agents required");

  // Exact quota allocation keeps class shares within rounding of the
  // targets; the shuffle spreads classes through the id range so households
  // mix ages.
  const int n_children =
      static_cast<int>(std::lround(config.child_share * n_agents));
  const int n_retired =
      static_cast<int>(std::lround(config.retired_share * n_agents));
  const int n_adults = n_agents - n_children - n_retired;
  if (n_adults < 0)
    throw ConfigError("population.age_shares: shares leave no room for adults");

  std::vector<AgeClass> classes;
  classes.reserve(n_agents);
  classes.insert(classes.end(), n_children, AgeClass::Child);
  classes.insert(classes.end(), n_adults, AgeClass::Adult);
  classes.insert(classes.end(), n_retired, AgeClass::Retired);
  Rng rng(derive_seed(seed, /*stream=*/0x706f70));
  rng.shuffle(classes);

  Population pop;
  pop.seed = seed;
  pop.config_hash = config.hash();
  pop.agents.resize(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    Agent& a = pop.agents[i];
    a.id = i;
    a.age_class = classes[i];
    switch (a.age_class) {
      case AgeClass::Child:
        a.susceptibility = config.child_susceptibility;
        a.venue_kind = VenueKind::School;
        break;
      case AgeClass::Adult:
        a.susceptibility = config.adult_susceptibility;
        a.venue_kind = VenueKind::Company;
        break;
      case AgeClass::Retired:
        a.susceptibility = config.retired_susceptibility;
        a.venue_kind = VenueKind::None;
        break;
    }
  }

  // Households: draw sizes until the population is exhausted; the last
  // household takes whatever remains.
  const auto& probs = config.household_size_probs;
  int next = 0;
  while (next < n_agents) {
    const double u = rng.uniform01();
    double acc = 0.0;
    int size = static_cast<int>(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) {
        size = static_cast<int>(k) + 1;
        break;
      }
    }
    size = std::min(size, n_agents - next);
    std::vector<int> members(size);
    std::iota(members.begin(), members.end(), next);
    const int hid = static_cast<int>(pop.households.size());
    for (int m : members) pop.agents[m].household = hid;
    pop.households.push_back(std::move(members));
    next += size;
  }

  // Venues fill to capacity in id order, then a new one opens.
  auto fill_venues = [&](AgeClass cls, VenueKind kind, int capacity,
                         std::vector<std::vector<int>>& groups) {
    for (const Agent& a : pop.agents) {
      if (a.age_class != cls) continue;
      if (groups.empty() ||
          static_cast<int>(groups.back().size()) >= capacity)
        groups.emplace_back();
      groups.back().push_back(a.id);
      Agent& mut = pop.agents[a.id];
      mut.venue_kind = kind;
      mut.venue = static_cast<int>(groups.size()) - 1;
    }
  };
  fill_venues(AgeClass::Child, VenueKind::School, config.school_capacity,
              pop.schools);
  fill_venues(AgeClass::Adult, VenueKind::Company, config.company_capacity,
              pop.companies);

  return pop;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

AgeClass parse_age_class(const std::string& s, int line) {
  if (s == "child") return AgeClass::Child;
  if (s == "adult") return AgeClass::Adult;
  if (s == "retired") return AgeClass::Retired;
  throw ParseError("population file line " + std::to_string(line) +
                   ": unknown age class '" + s + "'");
}

VenueKind parse_venue_kind(const std::string& s, int line) {
  if (s == "none") return VenueKind::None;
  if (s == "school") return VenueKind::School;
  if (s == "company") return VenueKind::Company;
  throw ParseError("population file line " + std::to_string(line) +
                   ": unknown venue kind '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

long parse_long(const std::string& s, int line, const char* what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("population file line " + std::to_string(line) +
                     ": bad " + std::string(what) + " '" + s + "'");
  }
}

double parse_double(const std::string& s, int line, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("population file line " + std::to_string(line) +
                     ": bad " + std::string(what) + " '" + s + "'");
  }
}

}  // namespace

void save(const Population& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "epigvi-population v1\n";
  out << "n_agents " << p.size() << "\n";
  out << "seed " << p.seed << "\n";
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(p.config_hash));
  out << "config_hash " << hash_buf << "\n";
  out << "households " << p.households.size() << "\n";
  out << "schools " << p.schools.size() << "\n";
  out << "companies " << p.companies.size() << "\n";
  out << "id,age_class,susceptibility,household_id,venue_kind,venue_id\n";
  for (const Agent& a : p.agents) {
    out << a.id << ',' << to_string(a.age_class) << ','
        << format_double(a.susceptibility) << ',' << a.household << ','
        << to_string(a.venue_kind) << ',' << a.venue << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

Population load_population(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  auto next_line = [&in](int& line) -> std::string {
    std::string s;
    if (!std::getline(in, s))
      throw ParseError("population file line " + std::to_string(line + 1) +
                       ": unexpected end of file");
    ++line;
    return s;
  };

  int line = 0;
  if (next_line(line) != "epigvi-population v1")
    throw ParseError("population file line 1: bad or missing header");

  auto header_value = [&](const char* key) -> std::string {
    const std::string s = next_line(line);
    const std::string prefix = std::string(key) + " ";
    if (s.rfind(prefix, 0) != 0)
      throw ParseError("population file line " + std::to_string(line) +
                       ": expected '" + key + "'");
    return s.substr(prefix.size());
  };

  Population p;
  const long n_agents = parse_long(header_value("n_agents"), line, "n_agents");
  p.seed = static_cast<std::uint64_t>(
      std::stoull(header_value("seed"), nullptr, 10));
  p.config_hash = std::stoull(header_value("config_hash"), nullptr, 16);
  const long n_households =
      parse_long(header_value("households"), line, "household count");
  const long n_schools =
      parse_long(header_value("schools"), line, "school count");
  const long n_companies =
      parse_long(header_value("companies"), line, "company count");
  if (n_agents <= 0)
    throw ParseError("population file: n_agents must be positive");
  if (next_line(line) !=
      "id,age_class,susceptibility,household_id,venue_kind,venue_id")
    throw ParseError("population file line " + std::to_string(line) +
                     ": bad column header");

  p.agents.resize(n_agents);
  p.households.resize(n_households);
  p.schools.resize(n_schools);
  p.companies.resize(n_companies);

  for (long i = 0; i < n_agents; ++i) {
    const std::string row = next_line(line);
    const auto f = split(row, ',');
    if (f.size() != 6)
      throw ParseError("population file line " + std::to_string(line) +
                       ": expected 6 fields, got " + std::to_string(f.size()));
    Agent a;
    a.id = static_cast<int>(parse_long(f[0], line, "agent id"));
    if (a.id != i)
      throw ParseError("population file line " + std::to_string(line) +
                       ": agent ids must be dense and ascending");
    a.age_class = parse_age_class(f[1], line);
    a.susceptibility = parse_double(f[2], line, "susceptibility");
    if (!(a.susceptibility >= 0.0))
      throw ParseError("population file line " + std::to_string(line) +
                       ": susceptibility must be non-negative");
    a.household = static_cast<int>(parse_long(f[3], line, "household id"));
    a.venue_kind = parse_venue_kind(f[4], line);
    a.venue = static_cast<int>(parse_long(f[5], line, "venue id"));

    if (a.household < 0 || a.household >= n_households)
      throw ParseError("population file line " + std::to_string(line) +
                       ": agent references missing household " +
                       std::to_string(a.household));
    const bool child = a.age_class == AgeClass::Child;
    const bool adult = a.age_class == AgeClass::Adult;
    if (child && a.venue_kind != VenueKind::School)
      throw ParseError("population file line " + std::to_string(line) +
                       ": children must attend a school");
    if (adult && a.venue_kind != VenueKind::Company)
      throw ParseError("population file line " + std::to_string(line) +
                       ": adults must attend a company");
    if (!child && !adult && a.venue_kind != VenueKind::None)
      throw ParseError("population file line " + std::to_string(line) +
                       ": retired agents have no venue");
    if (a.venue_kind == VenueKind::School &&
        (a.venue < 0 || a.venue >= n_schools))
      throw ParseError("population file line " + std::to_string(line) +
                       ": agent references missing school " +
                       std::to_string(a.venue));
    if (a.venue_kind == VenueKind::Company &&
        (a.venue < 0 || a.venue >= n_companies))
      throw ParseError("population file line " + std::to_string(line) +
                       ": agent references missing company " +
                       std::to_string(a.venue));
    if (a.venue_kind == VenueKind::None && a.venue != -1)
      throw ParseError("population file line " + std::to_string(line) +
                       ": venue id must be -1 when venue kind is none");

    p.households[a.household].push_back(a.id);
    if (a.venue_kind == VenueKind::School) p.schools[a.venue].push_back(a.id);
    if (a.venue_kind == VenueKind::Company)
      p.companies[a.venue].push_back(a.id);
    p.agents[i] = a;
  }
  std::string extra;
  if (std::getline(in, extra) && !extra.empty())
    throw ParseError("population file line " + std::to_string(line + 1) +
                     ": trailing data after the last agent record");

  auto check_nonempty = [](const std::vector<std::vector<int>>& groups,
                           const char* kind) {
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (groups[g].empty())
        throw ParseError(std::string("population file: ") + kind + " " +
                         std::to_string(g) + " has no members");
  };
  check_nonempty(p.households, "household");
  check_nonempty(p.schools, "school");
  check_nonempty(p.companies, "company");
  // Membership was appended in ascending id order, so lists are sorted.
  return p;
}

}  // namespace epigvi
