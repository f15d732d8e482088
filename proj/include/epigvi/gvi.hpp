#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epigvi/autodiff.hpp"
#include "epigvi/flow.hpp"
#include "epigvi/population.hpp"
#include "epigvi/simulator.hpp"
#include "epigvi/trajectory.hpp"

namespace epigvi {

struct ScoringRuleConfig {
  double weight = 0.01;  ///< w; the squared error is divided by it
  int horizon = 30;      ///< T, must match the observed series
  int replicates = 1;    ///< M simulations per theta sample
  int window = 0;        ///< score only the first `window` days (0 = all)

  void validate() const;
};

struct KlConfig {
  int samples = 10000;  ///< R, Monte-Carlo sample count

  void validate() const;
};

struct TrainConfig {
  int theta_batch = 10;       ///< B theta samples per epoch
  int validation_batch = 10;  ///< fresh theta samples for the validation loss
  int max_epochs = 125;
  double learning_rate = 1e-3;
  double clip_norm = 10.0;  ///< global gradient norm bound
  int early_stop_window = 10;
  double early_stop_rel_tol = 0.01;
  long budget = 2500;  ///< total simulation budget (train + validation)
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  long sims_per_epoch(int replicates) const {
    return static_cast<long>(theta_batch + validation_batch) * replicates;
  }
};

/// Forward model hook: simulates at one constrained theta (a (3,1) tensor,
/// possibly on a tape) and returns the differentiable log-series. Lets the
/// trainer and tests swap the epidemic simulator for stubs.
using SimulateLogSeries =
    std::function<ad::Var(const ad::Var& beta, std::uint64_t seed)>;

SimulateLogSeries make_simulator_fn(const Population& pop,
                                    const SimConfig& cfg);

/// Expected scoring rule at one theta:
/// (1/M) sum_m sum_t ||x_t - x~_t^(m)||^2 / w, with x~ the simulated
/// log-series. Differentiable through the simulator hook.
ad::Var score(const ad::Var& beta, const Trajectory& observed,
              const ScoringRuleConfig& cfg, const SimulateLogSeries& simulate,
              std::uint64_t seed_base);

struct KlEstimate {
  ad::Var value;     // scalar, differentiable when sampled with vars
  double mean = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo KL core: mean over samples of (log q - log prior), given
/// per-sample quantities. Exposed for closed-form test harnesses.
KlEstimate kl_from_terms(const ad::Var& log_q,
                         const Eigen::ArrayXd& log_prior);

/// KL(q_phi || pi) over R reparameterized samples. Throws DomainError if any
/// sample escapes the prior support (a broken squash).
KlEstimate kl_divergence_estimate(const FlowModel& flow,
                                  const UniformPrior& prior, int samples,
                                  std::uint64_t seed,
                                  const FlowVars* vars = nullptr);

struct LossBreakdown {
  ad::Var total;      // scalar on the sampling tape (constant when value-only)
  double score_term = 0.0;
  double kl_term = 0.0;
  double total_value = 0.0;
};

/// Full objective: (1/B) sum_b score(x, theta_b) + KL estimate, with theta_b
/// reparameterized flow samples. Scores are differentiated on per-replicate
/// tapes (parallel across `threads`) and grafted onto the sampling tape, so
/// backward on `total` yields exact chain-rule gradients for the flow
/// parameters. Pass vars == nullptr for a value-only evaluation.
LossBreakdown gvi_loss(const FlowModel& flow, const Trajectory& observed,
                       const ScoringRuleConfig& scoring, const KlConfig& kl,
                       const UniformPrior& prior,
                       const SimulateLogSeries& simulate, int theta_batch,
                       std::uint64_t seed, const FlowVars* vars = nullptr,
                       int threads = 1);

struct EpochLog {
  int epoch = 0;  // 1-based
  double score_term = 0.0;
  double kl_term = 0.0;
  double total_loss = 0.0;
  double val_loss = 0.0;
  long sims_used = 0;  // simulations consumed by this epoch
};

struct TrainResult {
  FlowModel best;
  FlowModel final;
  std::vector<EpochLog> log;
  int best_epoch = 0;  // 1-based; 0 when no epoch ran
  double best_val_loss = 0.0;
  long total_sims = 0;
  std::string stop_reason;  // max_epochs | early_stop | budget_exhausted
};

/// Minimises the objective by clipped adaptive-moment descent on the flow
/// parameters. Each epoch consumes (B + validation B) * M simulations; the
/// run stops at the epoch limit, when the windowed-mean validation loss
/// stops moving, or when the next epoch would exceed the budget.
/// `on_epoch`, when set, observes each log row as it is produced.
TrainResult train(FlowModel flow, const Trajectory& observed,
                  const TrainConfig& cfg, const ScoringRuleConfig& scoring,
                  const KlConfig& kl, const UniformPrior& prior,
                  const SimulateLogSeries& simulate,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// CSV with header `epoch,score_term,kl_term,total_loss,val_loss,sims_used`.
void write_training_log_csv(const std::vector<EpochLog>& log,
                            const std::string& path);

/// Compares the analytic gradient of the full objective with central finite
/// differences on `n_coords` randomly chosen flow parameters (common random
/// numbers; use a soft-relaxation simulator hook). Returns the maximum of
/// |analytic - numeric| / max(1, |analytic|).
double loss_gradient_check(const FlowModel& flow, const Trajectory& observed,
                           const ScoringRuleConfig& scoring, const KlConfig& kl,
                           const UniformPrior& prior,
                           const SimulateLogSeries& simulate, int theta_batch,
                           std::uint64_t loss_seed, int n_coords, double eps,
                           std::uint64_t pick_seed);

// -- optimizer ---------------------------------------------------------------

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// pre-clip norm.
double clip_global_norm(std::vector<ad::ArrayXXd>& grads, double max_norm);

/// Adaptive-moment estimation with bias correction.
class Adam {
 public:
  Adam(double learning_rate, const std::vector<ad::ArrayXXd>& shapes,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::vector<ad::ArrayXXd>& params,
            const std::vector<ad::ArrayXXd>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<ad::ArrayXXd> m_, v_;
};

}  // namespace epigvi
