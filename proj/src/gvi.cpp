#include "epigvi/gvi.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <thread>

#include "epigvi/rng.hpp"

namespace epigvi {

using ad::ArrayXXd;
using ad::Index;
using ad::Var;

void ScoringRuleConfig::validate() const {
  if (!(weight > 0.0)) throw ConfigError("scoring.weight: must be positive");
  if (horizon < 1) throw ConfigError("scoring.horizon: must be at least 1");
  if (replicates < 1)
    throw ConfigError("scoring.replicates: must be at least 1");
  if (window < 0 || window > horizon)
    throw ConfigError("scoring.window: must lie in [0, horizon]");
}

void KlConfig::validate() const {
  if (samples < 1) throw ConfigError("kl.samples: must be at least 1");
}

void TrainConfig::validate() const {
  if (theta_batch < 1) throw ConfigError("training.theta_batch: must be >= 1");
  if (validation_batch < 1)
    throw ConfigError("training.validation_batch: must be >= 1");
  if (max_epochs < 0) throw ConfigError("training.max_epochs: must be >= 0");
  if (!(learning_rate >= 0.0))
    throw ConfigError("training.learning_rate: must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("training.clip_norm: must be > 0");
  if (early_stop_window < 1)
    throw ConfigError("training.early_stop_window: must be >= 1");
  if (!(early_stop_rel_tol > 0.0))
    throw ConfigError("training.early_stop_rel_tol: must be > 0");
  if (budget < theta_batch)
    throw ConfigError("training.budget: must cover at least one theta batch");
  if (threads < 1) throw ConfigError("training.threads: must be >= 1");
}

SimulateLogSeries make_simulator_fn(const Population& pop,
                                    const SimConfig& cfg) {
  auto shared = std::make_shared<const Population>(pop);
  return [shared, cfg](const Var& beta, std::uint64_t seed) {
    return simulate(*shared, beta, cfg, seed).log_series;
  };
}

ad::Var score(const ad::Var& beta, const Trajectory& observed,
              const ScoringRuleConfig& cfg, const SimulateLogSeries& simulate,
              std::uint64_t seed_base) {
  cfg.validate();
  if (observed.days() != cfg.horizon)
    throw ContractError("score: observed series has " +
                        std::to_string(observed.days()) +
                        " days, config expects " + std::to_string(cfg.horizon));

  const int days = cfg.window > 0 ? cfg.window : cfg.horizon;
  std::vector<int> head(days);
  for (int i = 0; i < days; ++i) head[i] = i;
  ArrayXXd target(days, 1);
  for (int i = 0; i < days; ++i) target(i, 0) = observed.log_new_infections[i];
  const Var target_c = ad::constant(std::move(target));

  Var acc;
  for (int m = 0; m < cfg.replicates; ++m) {
    Var series = simulate(beta, derive_seed(seed_base, 0x5c0e, m));
    if (series.rows() != cfg.horizon || series.cols() != 1)
      throw ContractError("score: simulator returned a series of " +
                          std::to_string(series.rows()) + " days");
    if (days < cfg.horizon) series = ad::index_select(series, head);
    Var diff = ad::sub(series, target_c);
    Var total = ad::sum(ad::mul(diff, diff));
    acc = (m == 0) ? total : ad::add(acc, total);
  }
  return ad::mul(acc, ad::constant(1.0 / (cfg.weight *
                                          static_cast<double>(cfg.replicates))));
}

KlEstimate kl_from_terms(const ad::Var& log_q,
                         const Eigen::ArrayXd& log_prior) {
  if (log_q.cols() != 1 || log_q.rows() != log_prior.size())
    throw ShapeError("kl_from_terms: one prior density per sample required");
  const Index n = log_q.rows();
  ArrayXXd lp(n, 1);
  lp.col(0) = log_prior;

  KlEstimate est;
  est.value = ad::mean(ad::sub(log_q, ad::constant(std::move(lp))));
  const Eigen::ArrayXd diffs = log_q.value().col(0) - log_prior;
  est.mean = diffs.mean();
  const double var =
      n > 1 ? (diffs - est.mean).square().sum() / static_cast<double>(n - 1)
            : 0.0;
  est.std_error = std::sqrt(var / static_cast<double>(n));
  return est;
}

KlEstimate kl_divergence_estimate(const FlowModel& flow,
                                  const UniformPrior& prior, int samples,
                                  std::uint64_t seed, const FlowVars* vars) {
  KlConfig{samples}.validate();
  const FlowSample s = sample(flow, samples, seed, vars);
  Eigen::ArrayXd log_prior(samples);
  for (int i = 0; i < samples; ++i) {
    const Eigen::Array3d b{s.beta(i, 0), s.beta(i, 1), s.beta(i, 2)};
    if (!prior.contains(b))
      throw DomainError(
          "kl_divergence_estimate: sample outside the prior support "
          "(squash violation)");
    log_prior[i] = prior.log_density(b);
  }
  return kl_from_terms(s.log_q_var, log_prior);
}

LossBreakdown gvi_loss(const FlowModel& flow, const Trajectory& observed,
                       const ScoringRuleConfig& scoring, const KlConfig& kl,
                       const UniformPrior& prior,
                       const SimulateLogSeries& simulate, int theta_batch,
                       std::uint64_t seed, const FlowVars* vars, int threads) {
  scoring.validate();
  kl.validate();
  if (theta_batch < 1) throw ContractError("gvi_loss: theta_batch must be >= 1");

  const FlowSample thetas =
      sample(flow, theta_batch, derive_seed(seed, 0x7e7a), vars);

  // Per-theta scores run on their own tapes (parallel when asked) and are
  // grafted back with their beta-gradients, keeping the chain rule exact.
  std::vector<double> values(theta_batch, 0.0);
  ArrayXXd grads = ArrayXXd::Zero(theta_batch, 3);
  const bool need_grad = vars != nullptr;

  auto run_slot = [&](int b) {
    ArrayXXd beta_b(3, 1);
    for (int j = 0; j < 3; ++j) beta_b(j, 0) = thetas.beta(b, j);
    const std::uint64_t sim_seed = derive_seed(seed, 0x51a0, b);
    if (need_grad) {
      ad::Tape tape;
      Var leaf = tape.leaf(beta_b);
      Var sc = score(leaf, observed, scoring, simulate, sim_seed);
      values[b] = sc.scalar();
      // A score that ignores theta (stubbed simulators) folds to a
      // constant; its beta-gradient is zero.
      if (!sc.is_const()) {
        tape.backward(sc);
        const ArrayXXd g = tape.adjoint(leaf);
        for (int j = 0; j < 3; ++j) grads(b, j) = g(j, 0);
      }
    } else {
      values[b] =
          score(ad::constant(beta_b), observed, scoring, simulate, sim_seed)
              .scalar();
    }
  };

  const int workers = std::max(1, std::min(threads, theta_batch));
  if (workers == 1) {
    for (int b = 0; b < theta_batch; ++b) run_slot(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int b = next.fetch_add(1); b < theta_batch;
             b = next.fetch_add(1))
          run_slot(b);
      });
    for (auto& th : pool) th.join();
  }

  double mean_score = 0.0;
  for (int b = 0; b < theta_batch; ++b) mean_score += values[b];
  mean_score /= static_cast<double>(theta_batch);
  grads /= static_cast<double>(theta_batch);

  const Var score_term = ad::graft(thetas.beta_var, mean_score, grads);
  const KlEstimate kl_est = kl_divergence_estimate(
      flow, prior, kl.samples, derive_seed(seed, 0x6b1e), vars);

  LossBreakdown out;
  out.total = ad::add(score_term, kl_est.value);
  out.score_term = mean_score;
  out.kl_term = kl_est.value.scalar();
  out.total_value = out.total.scalar();
  return out;
}

double clip_global_norm(std::vector<ArrayXXd>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.square().sum();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& g : grads) g *= scale;
  }
  return norm;
}

Adam::Adam(double learning_rate, const std::vector<ArrayXXd>& shapes,
           double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(shapes.size());
  v_.reserve(shapes.size());
  for (const auto& s : shapes) {
    m_.push_back(ArrayXXd::Zero(s.rows(), s.cols()));
    v_.push_back(ArrayXXd::Zero(s.rows(), s.cols()));
  }
}

void Adam::step(std::vector<ArrayXXd>& params,
                const std::vector<ArrayXXd>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ContractError("Adam::step: tensor count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].square();
    params[i] -= lr_ * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
  }
}

TrainResult train(FlowModel flow, const Trajectory& observed,
                  const TrainConfig& cfg, const ScoringRuleConfig& scoring,
                  const KlConfig& kl, const UniformPrior& prior,
                  const SimulateLogSeries& simulate,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  scoring.validate();
  kl.validate();

  TrainResult res;
  res.best = flow;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  Adam opt(cfg.learning_rate, flow.parameters());
  const long per_epoch = cfg.sims_per_epoch(scoring.replicates);

  std::string stop = "max_epochs";
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (res.total_sims + per_epoch > cfg.budget) {
      stop = "budget_exhausted";
      break;
    }

    ad::Tape tape;
    FlowVars vars = bind(flow, tape);
    const LossBreakdown loss = gvi_loss(
        flow, observed, scoring, kl, prior, simulate, cfg.theta_batch,
        derive_seed(cfg.seed, 0x7a11, epoch), &vars, cfg.threads);
    if (!std::isfinite(loss.total_value))
      throw NumericError("train: non-finite loss at epoch " +
                         std::to_string(epoch));
    tape.backward(loss.total);

    std::vector<ArrayXXd> grads;
    grads.reserve(vars.params.size());
    for (const Var& p : vars.params) grads.push_back(tape.adjoint(p));
    clip_global_norm(grads, cfg.clip_norm);
    opt.step(flow.parameters(), grads);

    // Validate the updated parameters on fresh theta draws and fresh
    // simulator noise; this consumes budget like the training pass.
    const LossBreakdown val = gvi_loss(
        flow, observed, scoring, kl, prior, simulate, cfg.validation_batch,
        derive_seed(cfg.seed, 0xa11d, epoch), nullptr, cfg.threads);
    if (!std::isfinite(val.total_value))
      throw NumericError("train: non-finite validation loss at epoch " +
                         std::to_string(epoch));

    res.total_sims += per_epoch;
    res.log.push_back({epoch, loss.score_term, loss.kl_term, loss.total_value,
                       val.total_value, per_epoch});
    if (on_epoch) on_epoch(res.log.back());

    if (val.total_value < res.best_val_loss) {
      res.best_val_loss = val.total_value;
      res.best = flow;
      res.best_epoch = epoch;
    }

    // Early stop once the windowed mean of the validation loss stalls.
    const int w = cfg.early_stop_window;
    if (static_cast<int>(res.log.size()) >= 2 * w) {
      double recent = 0.0, previous = 0.0;
      const std::size_t e = res.log.size();
      for (int i = 0; i < w; ++i) {
        recent += res.log[e - 1 - i].val_loss;
        previous += res.log[e - 1 - w - i].val_loss;
      }
      recent /= w;
      previous /= w;
      const double denom = std::max(std::abs(previous), 1e-12);
      if (std::abs(recent - previous) / denom < cfg.early_stop_rel_tol) {
        stop = "early_stop";
        break;
      }
    }
  }
  if (res.log.empty()) res.best = flow;
  res.final = std::move(flow);
  res.stop_reason = stop;
  return res;
}

void write_training_log_csv(const std::vector<EpochLog>& log,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "epoch,score_term,kl_term,total_loss,val_loss,sims_used\n";
  char buf[192];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%ld\n", e.epoch,
                  e.score_term, e.kl_term, e.total_loss, e.val_loss,
                  e.sims_used);
    out << buf;
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

double loss_gradient_check(const FlowModel& flow, const Trajectory& observed,
                           const ScoringRuleConfig& scoring, const KlConfig& kl,
                           const UniformPrior& prior,
                           const SimulateLogSeries& simulate, int theta_batch,
                           std::uint64_t loss_seed, int n_coords, double eps,
                           std::uint64_t pick_seed) {
  ad::Tape tape;
  FlowVars vars = bind(flow, tape);
  const LossBreakdown loss =
      gvi_loss(flow, observed, scoring, kl, prior, simulate, theta_batch,
               loss_seed, &vars, 1);
  tape.backward(loss.total);
  std::vector<ArrayXXd> analytic;
  analytic.reserve(vars.params.size());
  for (const Var& p : vars.params) analytic.push_back(tape.adjoint(p));

  // Random coordinates of phi, skipping masked-out weight entries whose
  // gradient is identically zero.
  Rng rng(pick_seed);
  struct Coord {
    std::size_t tensor;
    Index r, c;
  };
  std::vector<Coord> coords;
  while (static_cast<int>(coords.size()) < n_coords) {
    const std::size_t ti = rng.bounded(flow.parameters().size());
    const auto& p = flow.parameters()[ti];
    const Index r = static_cast<Index>(rng.bounded(p.rows()));
    const Index c = static_cast<Index>(rng.bounded(p.cols()));
    if (flow.masks()[ti](r, c) == 0.0) continue;
    coords.push_back({ti, r, c});
  }

  double worst = 0.0;
  for (const Coord& cd : coords) {
    auto value_at = [&](double delta) {
      FlowModel probe = flow;
      probe.parameters()[cd.tensor](cd.r, cd.c) += delta;
      return gvi_loss(probe, observed, scoring, kl, prior, simulate,
                      theta_batch, loss_seed, nullptr, 1)
          .total_value;
    };
    const double numeric = (value_at(eps) - value_at(-eps)) / (2.0 * eps);
    const double a = analytic[cd.tensor](cd.r, cd.c);
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace epigvi
