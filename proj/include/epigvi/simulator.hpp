#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "epigvi/autodiff.hpp"
#include "epigvi/population.hpp"
#include "epigvi/trajectory.hpp"

namespace epigvi {

/// Upper bound of the transmission-intensity support; constrained values
/// are beta_max * sigmoid(unconstrained).
inline constexpr double kBetaMax = 2.0;

enum class RelaxationMode : std::uint8_t {
  Hard,  ///< binary forward dynamics, straight-through gradients
  Soft   ///< fully continuous relaxation (used for gradient checks)
};

struct SimConfig {
  double dt_household = 0.5;  ///< interaction duration, fraction of a day
  double dt_school = 0.33;
  double dt_company = 0.33;
  double profile_peak_day = 2.0;   ///< peak of the infectiousness profile
  double infectious_days = 14.0;   ///< profile support (0, D]
  double temperature = 0.1;        ///< relaxed-Bernoulli temperature
  double initial_seed_fraction = 0.001;
  int horizon = 30;  ///< days simulated after the seeding day
  std::uint64_t seed = 0;
  RelaxationMode mode = RelaxationMode::Hard;

  void validate() const;
};

/// Relative infectiousness s days after infection:
/// (s/a) * exp(1 - s/a) on (0, D], zero elsewhere; peaks at 1 when s = a.
double infectious_profile(double days_since_infection, const SimConfig& cfg);

/// p = 1 - exp(-hazard), differentiable in the hazard.
ad::Var hazard_to_probability(const ad::Var& hazard);

/// p = 1 - exp(-psi * beta * dt * load); all inputs must be non-negative.
/// Differentiable in beta and load.
ad::Var infection_probability(const ad::Var& susceptibility,
                              const ad::Var& beta, const ad::Var& dt,
                              const ad::Var& load);

/// Reparameterized Bernoulli draw. Probabilities are clamped to
/// [1e-7, 1 - 1e-7]; the soft value is sigmoid((logit(p) + logit(u)) / tau).
/// Hard mode returns the binarized value with a straight-through gradient;
/// the marginal of the hard draw over u ~ U(0,1) is Bernoulli(p) wherever
/// the clamp is inactive. Soft mode returns the sigmoid value itself.
ad::Var relaxed_bernoulli(const ad::Var& p, const Eigen::ArrayXd& noise,
                          double temperature, RelaxationMode mode);

/// Transmission intensities per location kind with their unconstrained
/// representation (beta = kBetaMax * sigmoid(unconstrained)).
struct Theta {
  Eigen::Array3d beta;           // (household, school, company)
  Eigen::Array3d unconstrained;

  static Theta from_beta(const Eigen::Array3d& beta);
  static Theta from_unconstrained(const Eigen::Array3d& u);
};

struct SimOutput {
  Trajectory trajectory;  // forward values
  ad::Var daily_counts;   // (T, 1)
  ad::Var log_series;     // (T, 1), log(c_t + 1)
  int n_seeded = 0;       // agents infected at day 0
};

/// Runs the epidemic for cfg.horizon days after seeding ceil(f0 * n) agents
/// at day 0 (seeds chosen by a seeded shuffle; they are initial state, not
/// part of the reported new-infection series). Per day each susceptible
/// agent accumulates one hazard over its locations and performs one
/// relaxed-Bernoulli draw with common random numbers indexed by (agent, day).
/// `beta` is a (3, 1) tensor (household, school, company); gradients of the
/// outputs with respect to it flow through the draws.
SimOutput simulate(const Population& pop, const ad::Var& beta,
                   const SimConfig& cfg, std::uint64_t noise_seed);

/// Value-only convenience wrapper; bit-identical to the graph version.
Trajectory simulate_trajectory(const Population& pop, const Theta& theta,
                               const SimConfig& cfg, std::uint64_t noise_seed);

}  // namespace epigvi
