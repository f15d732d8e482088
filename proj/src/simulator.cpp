#include "epigvi/simulator.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "epigvi/rng.hpp"

namespace epigvi {

namespace {

using ad::ArrayXXd;
using ad::Index;
using ad::Var;

constexpr double kProbClamp = 1e-7;
constexpr std::uint64_t kSeedChoiceStream = 0x5eed;
constexpr std::uint64_t kDayNoiseStream = 0xda11;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void SimConfig::validate() const {
  if (!(dt_household > 0.0) || !(dt_school > 0.0) || !(dt_company > 0.0))
    throw ConfigError("simulator.dt: interaction durations must be positive");
  if (!(profile_peak_day > 0.0) || !(profile_peak_day <= infectious_days))
    throw ConfigError(
        "simulator.profile_peak_day: need 0 < peak <= infectious_days");
  if (!(temperature > 0.0))
    throw ConfigError("simulator.temperature: must be positive");
  if (!(initial_seed_fraction > 0.0) || !(initial_seed_fraction < 1.0))
    throw ConfigError(
        "simulator.initial_seed_fraction: must lie strictly in (0, 1)");
  if (horizon < 1) throw ConfigError("simulator.horizon: must be at least 1");
}

double infectious_profile(double s, const SimConfig& cfg) {
  if (s <= 0.0 || s > cfg.infectious_days) return 0.0;
  const double r = s / cfg.profile_peak_day;
  return r * std::exp(1.0 - r);
}

ad::Var hazard_to_probability(const ad::Var& hazard) {
  return ad::sub(ad::constant(1.0), ad::exp(ad::neg(hazard)));
}

ad::Var infection_probability(const ad::Var& susceptibility,
                              const ad::Var& beta, const ad::Var& dt,
                              const ad::Var& load) {
  for (const Var* v : {&susceptibility, &beta, &dt, &load})
    if ((v->value() < 0.0).any())
      throw DomainError("infection_probability: inputs must be non-negative");
  return hazard_to_probability(
      ad::mul(ad::mul(ad::mul(susceptibility, beta), dt), load));
}

ad::Var relaxed_bernoulli(const ad::Var& p, const Eigen::ArrayXd& noise,
                          double temperature, RelaxationMode mode) {
  if (!(temperature > 0.0))
    throw ConfigError("relaxed_bernoulli: temperature must be positive");
  if (p.cols() != 1 || noise.size() != p.rows())
    throw ShapeError("relaxed_bernoulli: one noise value per probability");
  if ((noise <= 0.0).any() || (noise >= 1.0).any())
    throw ContractError("relaxed_bernoulli: noise must lie in (0, 1)");

  const Var one = ad::constant(1.0);
  const Var lo = ad::clamp_min(p, kProbClamp);
  const Var pc = ad::sub(one, ad::clamp_min(ad::sub(one, lo), kProbClamp));
  const Var logit_p = ad::sub(ad::log(pc), ad::log(ad::sub(one, pc)));

  ArrayXXd logit_u(noise.size(), 1);
  for (Index i = 0; i < noise.size(); ++i)
    logit_u(i, 0) = std::log(noise[i]) - std::log1p(-noise[i]);

  const Var y = ad::sigmoid(ad::mul(ad::add(logit_p, ad::constant(logit_u)),
                                    ad::constant(1.0 / temperature)));
  if (mode == RelaxationMode::Soft) return y;
  return ad::binarize_straight_through(y, 0.5);
}

Theta Theta::from_beta(const Eigen::Array3d& beta) {
  Theta t;
  for (int i = 0; i < 3; ++i) {
    if (!(beta[i] > 0.0) || !(beta[i] < kBetaMax))
      throw DomainError("theta: beta components must lie strictly in (0, " +
                        std::to_string(kBetaMax) + ")");
    t.unconstrained[i] = std::log(beta[i] / (kBetaMax - beta[i]));
  }
  t.beta = beta;
  return t;
}

Theta Theta::from_unconstrained(const Eigen::Array3d& u) {
  Theta t;
  t.unconstrained = u;
  for (int i = 0; i < 3; ++i) t.beta[i] = kBetaMax * stable_sigmoid(u[i]);
  return t;
}

namespace {

struct LocationGroups {
  const char* name;
  double dt;
  int beta_index;
  std::vector<int> members;       // agent ids, ascending
  std::vector<int> member_group;  // group id per member
  int n_groups = 0;
  ArrayXXd member_psi;            // (m, 1)
};

LocationGroups build_location(const char* name, double dt, int beta_index,
                              const std::vector<std::vector<int>>& groups,
                              const Population& pop) {
  LocationGroups loc;
  loc.name = name;
  loc.dt = dt;
  loc.beta_index = beta_index;
  loc.n_groups = static_cast<int>(groups.size());
  std::size_t total = 0;
  for (const auto& g : groups) total += g.size();
  loc.members.reserve(total);
  loc.member_group.reserve(total);
  for (int g = 0; g < loc.n_groups; ++g)
    for (int id : groups[g]) {
      loc.members.push_back(id);
      loc.member_group.push_back(g);
    }
  loc.member_psi.resize(static_cast<Index>(total), 1);
  for (std::size_t i = 0; i < total; ++i)
    loc.member_psi(static_cast<Index>(i), 0) =
        pop.agents[loc.members[i]].susceptibility;
  return loc;
}

}  // namespace

SimOutput simulate(const Population& pop, const ad::Var& beta,
                   const SimConfig& cfg, std::uint64_t noise_seed) {
  cfg.validate();
  if (beta.rows() != 3 || beta.cols() != 1)
    throw ShapeError("simulate: beta must be a (3, 1) tensor");
  for (int i = 0; i < 3; ++i) {
    const double b = beta.value()(i, 0);
    if (!(b > 0.0) || !(b < kBetaMax))
      throw DomainError(
          "simulate: beta components must lie strictly in (0, " +
          std::to_string(kBetaMax) + ")");
  }

  const int n = pop.size();
  const int T = cfg.horizon;

  std::vector<LocationGroups> locations;
  locations.push_back(
      build_location("household", cfg.dt_household, 0, pop.households, pop));
  if (!pop.schools.empty())
    locations.push_back(
        build_location("school", cfg.dt_school, 1, pop.schools, pop));
  if (!pop.companies.empty())
    locations.push_back(
        build_location("company", cfg.dt_company, 2, pop.companies, pop));

  Var beta_by_location[3] = {ad::index_select(beta, {0}),
                             ad::index_select(beta, {1}),
                             ad::index_select(beta, {2})};

  // Seeding: exactly ceil(f0 * n) agents, chosen by a seeded shuffle. Seeds
  // are initial state; the reported series counts transmission events only.
  const int n_seeds = static_cast<int>(
      std::ceil(cfg.initial_seed_fraction * static_cast<double>(n)));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng seed_rng(derive_seed(noise_seed, kSeedChoiceStream));
  seed_rng.shuffle(order);

  ArrayXXd seeded = ArrayXXd::Zero(n, 1);
  for (int i = 0; i < n_seeds && i < n; ++i) seeded(order[i], 0) = 1.0;

  // increments[t]: differentiable new-infection indicator per agent at day t
  // (day 0 holds the seeds). An empty Var marks an all-zero day.
  std::vector<Var> increments(static_cast<std::size_t>(T) + 1);
  increments[0] = ad::constant(seeded);

  Var susceptible = ad::constant(ArrayXXd(1.0 - seeded));

  // Profile lookup by integer day offset.
  std::vector<double> profile(static_cast<std::size_t>(T) + 1, 0.0);
  for (int s = 1; s <= T; ++s)
    profile[s] = infectious_profile(static_cast<double>(s), cfg);

  std::vector<Var> count_per_day;
  std::vector<Var> log_per_day;
  count_per_day.reserve(T);
  log_per_day.reserve(T);

  const Var zero_scalar = ad::constant(0.0);
  const Var one = ad::constant(1.0);

  for (int t = 1; t <= T; ++t) {
    // Infectious load per agent from the increment history.
    Var load;
    bool any_load = false;
    for (int s = 1; s <= t; ++s) {
      if (profile[s] == 0.0) continue;
      const Var& inc = increments[t - s];
      if (inc.value_ptr() == nullptr) continue;
      Var term = ad::mul(inc, ad::constant(profile[s]));
      load = any_load ? ad::add(load, term) : term;
      any_load = true;
    }
    if (any_load && (load.value() == 0.0).all() && load.is_const())
      any_load = false;

    Var lambda;
    bool any_hazard = false;
    if (any_load) {
      for (const LocationGroups& loc : locations) {
        Var member_load = ad::index_select(load, loc.members);
        Var group_load =
            ad::segment_sum(member_load, loc.member_group, loc.n_groups);
        const ArrayXXd& gl = group_load.value();
        for (Index g = 0; g < gl.rows(); ++g)
          if (!std::isfinite(gl(g, 0)))
            throw NumericError("simulate: non-finite infectious load at day " +
                               std::to_string(t) + " in " + loc.name +
                               " group " + std::to_string(g));
        // Contacts exclude the agent itself.
        Var contact =
            ad::sub(ad::index_select(group_load, loc.member_group),
                    member_load);
        Var hazard = ad::mul(
            ad::mul(ad::mul(contact, ad::constant(loc.member_psi)),
                    beta_by_location[loc.beta_index]),
            ad::constant(loc.dt));
        Var full = ad::segment_sum(hazard, loc.members, n);
        lambda = any_hazard ? ad::add(lambda, full) : full;
        any_hazard = true;
      }
    }

    if (!any_hazard) {
      count_per_day.push_back(zero_scalar);
      log_per_day.push_back(zero_scalar);
      continue;
    }

    // Only agents with positive hazard and remaining susceptibility draw;
    // everyone else has an exactly-zero infection probability and gradient.
    const ArrayXXd& lam_v = lambda.value();
    const ArrayXXd& sus_v = susceptible.value();
    std::vector<int> active;
    active.reserve(n);
    for (int i = 0; i < n; ++i) {
      if (!(lam_v(i, 0) >= 0.0))
        throw NumericError("simulate: non-finite hazard at day " +
                           std::to_string(t) + " for agent " +
                           std::to_string(i));
      if (lam_v(i, 0) > 0.0 && sus_v(i, 0) > 0.0) active.push_back(i);
    }
    if (active.empty()) {
      count_per_day.push_back(zero_scalar);
      log_per_day.push_back(zero_scalar);
      continue;
    }

    // Common random numbers: one uniform per (agent, day) regardless of the
    // active set, so trajectories are coupled across nearby parameters.
    Rng day_rng(derive_seed(noise_seed, kDayNoiseStream,
                            static_cast<std::uint64_t>(t)));
    const Eigen::ArrayXd u_all = day_rng.uniform_vec(n);
    Eigen::ArrayXd u_active(static_cast<Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k)
      u_active[static_cast<Index>(k)] = u_all[active[k]];

    Var p = hazard_to_probability(ad::index_select(lambda, active));
    Var draw = relaxed_bernoulli(p, u_active, cfg.temperature, cfg.mode);
    Var inc_active = ad::mul(ad::index_select(susceptible, active), draw);
    Var inc = ad::segment_sum(inc_active, active, n);
    susceptible = ad::sub(susceptible, inc);
    increments[t] = inc;

    Var c_t = ad::sum(inc_active);
    count_per_day.push_back(c_t);
    log_per_day.push_back(ad::log(ad::add(c_t, one)));
  }

  SimOutput out;
  out.n_seeded = n_seeds;
  out.daily_counts = ad::concat(count_per_day, 0);
  out.log_series = ad::concat(log_per_day, 0);
  out.trajectory.new_infections = out.daily_counts.value().col(0);
  out.trajectory.log_new_infections = out.log_series.value().col(0);
  return out;
}

Trajectory simulate_trajectory(const Population& pop, const Theta& theta,
                               const SimConfig& cfg,
                               std::uint64_t noise_seed) {
  ArrayXXd b(3, 1);
  b << theta.beta[0], theta.beta[1], theta.beta[2];
  return simulate(pop, ad::constant(std::move(b)), cfg, noise_seed).trajectory;
}

}  // namespace epigvi
