// Command-line pipeline: population synthesis, ground-truth generation,
// flow calibration, posterior sampling and posterior-predictive simulation.
// Exit codes: 0 success, 2 input/config error, 3 numeric failure.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "epigvi/checkpoint.hpp"
#include "epigvi/gvi.hpp"
#include "epigvi/run_config.hpp"
#include "epigvi/rng.hpp"

namespace fs = std::filesystem;
using namespace epigvi;

namespace {

constexpr const char* kOutDirEnv = "EPIGVI_OUT_DIR";

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = 0;  // 0 = machine parallelism
};

int effective_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

RunConfig load_config(const GlobalArgs& g) {
  const std::uint64_t* ov = g.seed ? &*g.seed : nullptr;
  RunConfig cfg = parse_run_config(g.config_path, ov);
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env)
    cfg.output_dir = env;
  cfg.training.threads = effective_threads(g.threads > 0 ? g.threads
                                                         : cfg.training.threads);
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "'");
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

Population population_from(const RunConfig& cfg, const std::string& pop_path) {
  if (!pop_path.empty()) return load_population(pop_path);
  return synthesize(cfg.n_agents, cfg.population_seed, cfg.population);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

// -- subcommand bodies -------------------------------------------------------

int cmd_synth_pop(const GlobalArgs& g, std::string out_path) {
  const RunConfig cfg = load_config(g);
  if (out_path.empty()) {
    ensure_dir(cfg.output_dir);
    out_path = join(cfg.output_dir, "population.txt");
  }
  const Population pop =
      synthesize(cfg.n_agents, cfg.population_seed, cfg.population);
  save(pop, out_path);
  std::printf("agents %d households %zu schools %zu companies %zu -> %s\n",
              pop.size(), pop.households.size(), pop.schools.size(),
              pop.companies.size(), out_path.c_str());
  return 0;
}

int cmd_gen_truth(const GlobalArgs& g, const std::vector<double>& beta,
                  std::string out_path, const std::string& pop_path) {
  const RunConfig cfg = load_config(g);
  if (out_path.empty()) {
    ensure_dir(cfg.output_dir);
    out_path = join(cfg.output_dir, "truth.csv");
  }
  const Theta theta = Theta::from_beta({beta[0], beta[1], beta[2]});
  const Population pop = population_from(cfg, pop_path);
  const Trajectory t =
      simulate_trajectory(pop, theta, cfg.simulator, cfg.simulator.seed);
  write_trajectory_csv(t, out_path);
  std::fprintf(stderr, "gen-truth: %lld days, %.0f infections -> %s\n",
               static_cast<long long>(t.days()), t.new_infections.sum(),
               out_path.c_str());
  return 0;
}

int cmd_calibrate(const GlobalArgs& g, const std::string& data_path,
                  std::string out_dir, const std::string& pop_path,
                  bool quiet) {
  const RunConfig cfg = load_config(g);
  if (out_dir.empty()) out_dir = cfg.output_dir;
  ensure_dir(out_dir);

  const Trajectory observed = read_trajectory_csv(data_path);
  if (observed.days() != cfg.scoring.horizon)
    throw ParseError("calibrate: data has " + std::to_string(observed.days()) +
                     " days but scoring.horizon is " +
                     std::to_string(cfg.scoring.horizon));

  const Population pop = population_from(cfg, pop_path);
  const SimulateLogSeries sim = make_simulator_fn(pop, cfg.simulator);
  const UniformPrior prior{cfg.flow.beta_max};
  FlowModel flow(cfg.flow, cfg.flow_init_seed);

  write_text(join(out_dir, "effective_config.json"), run_config_to_json(cfg));

  const auto progress = [&](const EpochLog& e) {
    if (quiet) return;
    std::fprintf(stderr,
                 "epoch %3d  score %12.4f  kl %8.4f  val %12.4f  sims %ld\n",
                 e.epoch, e.score_term, e.kl_term, e.val_loss, e.sims_used);
  };
  const TrainResult res = train(std::move(flow), observed, cfg.training,
                                cfg.scoring, cfg.kl, prior, sim, progress);

  write_training_log_csv(res.log, join(out_dir, "training_log.csv"));

  TrainMeta best_meta;
  best_meta.epoch = res.best_epoch;
  best_meta.val_loss = res.best_val_loss;
  best_meta.sims_used = res.total_sims;
  best_meta.stop_reason = res.stop_reason;
  save_checkpoint(res.best, best_meta, join(out_dir, "checkpoint_best.json"));

  TrainMeta final_meta = best_meta;
  final_meta.epoch = static_cast<int>(res.log.size());
  if (!res.log.empty()) {
    final_meta.train_loss = res.log.back().total_loss;
    final_meta.val_loss = res.log.back().val_loss;
  }
  save_checkpoint(res.final, final_meta,
                  join(out_dir, "checkpoint_final.json"));

  // Posterior summary from 10^4 samples of the best flow.
  const int n_summary = 10000;
  const FlowSample s =
      sample(res.best, n_summary, derive_seed(cfg.training.seed, 0x50b3));
  Eigen::Array3d mean, stddev;
  for (int c = 0; c < 3; ++c) {
    mean[c] = s.beta.col(c).mean();
    stddev[c] = std::sqrt((s.beta.col(c) - mean[c]).square().sum() /
                          (n_summary - 1));
  }
  char buf[1024];
  std::snprintf(
      buf, sizeof(buf),
      "{\n"
      "  \"posterior_mean\": {\"beta_household\": %.6f, \"beta_school\": "
      "%.6f, \"beta_company\": %.6f},\n"
      "  \"posterior_std\": {\"beta_household\": %.6f, \"beta_school\": "
      "%.6f, \"beta_company\": %.6f},\n"
      "  \"sample_count\": %d,\n"
      "  \"sims_used\": %ld,\n"
      "  \"epochs\": %zu,\n"
      "  \"best_epoch\": %d,\n"
      "  \"best_val_loss\": %.6f,\n"
      "  \"stop_reason\": \"%s\"\n"
      "}\n",
      mean[0], mean[1], mean[2], stddev[0], stddev[1], stddev[2], n_summary,
      res.total_sims, res.log.size(), res.best_epoch, res.best_val_loss,
      res.stop_reason.c_str());
  write_text(join(out_dir, "summary.json"), buf);
  std::fprintf(stderr,
               "calibrate: %zu epochs, %ld sims, stop=%s, best val %.4f\n",
               res.log.size(), res.total_sims, res.stop_reason.c_str(),
               res.best_val_loss);
  return 0;
}

int cmd_sample(const std::string& checkpoint, int n, std::uint64_t seed,
               const std::string& out_path) {
  const FlowModel flow = load_checkpoint(checkpoint);
  const FlowSample s = sample(flow, n, seed);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + out_path + "' for writing");
  out << "beta_household,beta_school,beta_company,log_q\n";
  char buf[160];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f\n", s.beta(i, 0),
                  s.beta(i, 1), s.beta(i, 2), s.log_q[i]);
    out << buf;
  }
  if (!out) throw IoError("failed writing '" + out_path + "'");
  return 0;
}

int cmd_predictive(const GlobalArgs& g, const std::string& checkpoint, int n,
                   const std::string& source, const std::string& out_path,
                   const std::string& pop_path) {
  const RunConfig cfg = load_config(g);
  const Population pop = population_from(cfg, pop_path);

  Eigen::ArrayXXd thetas(n, 3);
  const std::uint64_t draw_seed = derive_seed(cfg.seed, 0xd4a3);
  if (source == "flow") {
    const FlowModel flow = load_checkpoint(checkpoint);
    thetas = sample(flow, n, draw_seed).beta;
  } else if (source == "prior") {
    Rng rng(draw_seed);
    const double bmax = cfg.flow.beta_max;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) thetas(i, c) = bmax * rng.uniform01();
  } else {
    throw ConfigError("predictive: source must be \"flow\" or \"prior\"");
  }

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + out_path + "' for writing");
  out << "replicate,day,new_infections,log_new_infections\n";
  char buf[160];
  for (int r = 0; r < n; ++r) {
    const Theta theta =
        Theta::from_beta({thetas(r, 0), thetas(r, 1), thetas(r, 2)});
    const Trajectory t =
        simulate_trajectory(pop, theta, cfg.simulator,
                            derive_seed(cfg.simulator.seed, 0x9d1c, r));
    for (Eigen::Index d = 0; d < t.days(); ++d) {
      std::snprintf(buf, sizeof(buf), "%d,%lld,%.6f,%.6f\n", r,
                    static_cast<long long>(d + 1), t.new_infections[d],
                    t.log_new_infections[d]);
      out << buf;
    }
  }
  if (!out) throw IoError("failed writing '" + out_path + "'");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Variational calibration of a differentiable agent-based epidemic "
      "model"};
  app.require_subcommand(1);

  GlobalArgs g;
  std::uint64_t seed_value = 0;
  auto* seed_opt =
      app.add_option("--seed", seed_value, "Override the config's global seed")
          ->expected(1);
  app.add_option("--threads", g.threads,
                 "Worker threads for training (default: machine parallelism)");

  auto* synth = app.add_subcommand("synth-pop", "Generate a population file");
  synth->add_option("--config", g.config_path, "Run configuration (JSON)")
      ->required();
  std::string synth_out;
  synth->add_option("--out", synth_out, "Population file path");

  auto* gen = app.add_subcommand("gen-truth",
                                 "Simulate one trajectory at a fixed theta");
  gen->add_option("--config", g.config_path, "Run configuration (JSON)")
      ->required();
  std::vector<double> beta;
  gen->add_option("--beta", beta,
                  "Transmission intensities: household school company")
      ->expected(3)
      ->required();
  std::string gen_out, gen_pop;
  gen->add_option("--out", gen_out, "Trajectory CSV path");
  gen->add_option("--pop", gen_pop, "Load the population from this file");

  auto* cal = app.add_subcommand("calibrate",
                                 "Train the posterior flow on a trajectory");
  cal->add_option("--config", g.config_path, "Run configuration (JSON)")
      ->required();
  std::string cal_data, cal_out, cal_pop;
  bool cal_quiet = false;
  cal->add_option("--data", cal_data, "Observed trajectory CSV")->required();
  cal->add_option("--out-dir", cal_out, "Output directory");
  cal->add_option("--pop", cal_pop, "Load the population from this file");
  cal->add_flag("--quiet", cal_quiet, "Suppress per-epoch progress");

  auto* smp = app.add_subcommand("sample", "Draw posterior samples");
  std::string smp_ckpt, smp_out;
  int smp_n = 10000;
  std::uint64_t smp_seed = 1;
  smp->add_option("--checkpoint", smp_ckpt, "Flow checkpoint")->required();
  smp->add_option("-n,--num", smp_n, "Number of samples")
      ->check(CLI::PositiveNumber);
  smp->add_option("--sample-seed", smp_seed, "Sampling seed");
  smp->add_option("--out", smp_out, "Output CSV")->required();

  auto* pred = app.add_subcommand(
      "predictive", "Simulate trajectories at sampled parameters");
  pred->add_option("--config", g.config_path, "Run configuration (JSON)")
      ->required();
  std::string pred_ckpt, pred_out, pred_src = "flow", pred_pop;
  int pred_n = 100;
  pred->add_option("--checkpoint", pred_ckpt,
                   "Flow checkpoint (required for --source flow)");
  pred->add_option("-n,--num", pred_n, "Number of replicates")
      ->check(CLI::PositiveNumber);
  pred->add_option("--source", pred_src, "Parameter source: flow | prior");
  pred->add_option("--out", pred_out, "Output CSV")->required();
  pred->add_option("--pop", pred_pop, "Load the population from this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (synth->parsed()) return cmd_synth_pop(g, synth_out);
    if (gen->parsed()) return cmd_gen_truth(g, beta, gen_out, gen_pop);
    if (cal->parsed())
      return cmd_calibrate(g, cal_data, cal_out, cal_pop, cal_quiet);
    if (smp->parsed()) {
      const std::uint64_t s = g.seed ? *g.seed : smp_seed;
      return cmd_sample(smp_ckpt, smp_n, s, smp_out);
    }
    if (pred->parsed()) {
      if (pred_src == "flow" && pred_ckpt.empty())
        throw ConfigError(
            "predictive: --checkpoint required with --source flow");
      return cmd_predictive(g, pred_ckpt, pred_n, pred_src, pred_out,
                            pred_pop);
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
  return 2;
}
