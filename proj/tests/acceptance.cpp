// Acceptance suite: exercises the shipped pipeline end to end and prints one
// pass/fail line per criterion. Usage:
//   acceptance <cli-binary> <work-dir> <reference-config> [criteria]
// where [criteria] is an optional comma-separated subset like "3,4,5".

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "epigvi/flow.hpp"
#include "epigvi/gvi.hpp"
#include "epigvi/rng.hpp"
#include "epigvi/run_config.hpp"
#include "epigvi/simulator.hpp"
#include "epigvi/trajectory.hpp"

namespace fs = std::filesystem;
using namespace epigvi;

namespace {

struct Context {
  std::string cli;
  std::string work;
  std::string config_path;
  RunConfig cfg;
  int failures = 0;
};

void report(Context& ctx, int criterion, bool pass, const std::string& note) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion,
              note.c_str());
  std::fflush(stdout);
  if (!pass) ++ctx.failures;
}

int run(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc;
}

std::string q(const std::string& s) { return "\"" + s + "\""; }

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (h - lo);
}

double json_number(const std::string& text, const std::string& key) {
  const auto kp = text.find("\"" + key + "\"");
  if (kp == std::string::npos)
    throw ParseError("summary: missing key " + key);
  const auto colon = text.find(':', kp);
  return std::strtod(text.c_str() + colon + 1, nullptr);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// -- criterion 1 & 2 & 7: the desk-scale end-to-end reproduction -------------

struct CalibrationArtifacts {
  bool ok = false;
  std::string out_dir;
  std::string truth_csv;
};

CalibrationArtifacts run_calibration(Context& ctx) {
  CalibrationArtifacts art;
  art.out_dir = (fs::path(ctx.work) / "calibration").string();
  art.truth_csv = (fs::path(ctx.work) / "truth.csv").string();
  fs::create_directories(art.out_dir);

  std::string cmd = q(ctx.cli) + " gen-truth --config " + q(ctx.config_path) +
                    " --beta 0.9 0.6 0.3 --out " + q(art.truth_csv) +
                    " 2>" + q(art.out_dir + "/gen.log");
  if (run(cmd) != 0) return art;
  cmd = q(ctx.cli) + " calibrate --config " + q(ctx.config_path) + " --data " +
        q(art.truth_csv) + " --out-dir " + q(art.out_dir) + " --quiet 2>" +
        q(art.out_dir + "/cal.log");
  if (run(cmd) != 0) return art;
  art.ok = true;
  return art;
}

void criterion_1_and_2_and_7(Context& ctx) {
  const CalibrationArtifacts art = run_calibration(ctx);
  if (!art.ok) {
    report(ctx, 1, false, "pipeline commands failed (see logs)");
    report(ctx, 2, false, "no calibration output");
    report(ctx, 7, false, "no training log");
    return;
  }

  // Criterion 1a: posterior means within +-0.25 of theta*. The first
  // occurrence of each key sits in the posterior_mean object.
  const std::string summary = slurp(art.out_dir + "/summary.json");
  const double mh = json_number(summary, "beta_household");
  const double ms = json_number(summary, "beta_school");
  const double mc = json_number(summary, "beta_company");
  const double sims = json_number(summary, "sims_used");
  const bool means_ok = std::abs(mh - 0.9) <= 0.25 &&
                        std::abs(ms - 0.6) <= 0.25 &&
                        std::abs(mc - 0.3) <= 0.25;

  // Criterion 1b: truth inside the pointwise 5-95% predictive band on at
  // least 80% of days, from 100 trained-flow replicates.
  const std::string pred_csv = art.out_dir + "/predictive.csv";
  std::string cmd = q(ctx.cli) + " predictive --config " + q(ctx.config_path) +
                    " --checkpoint " + q(art.out_dir + "/checkpoint_best.json") +
                    " -n 100 --source flow --out " + q(pred_csv) + " 2>" +
                    q(art.out_dir + "/pred.log");
  bool band_ok = false;
  double coverage = 0.0;
  if (run(cmd) == 0) {
    const Trajectory truth = read_trajectory_csv(art.truth_csv);
    const int days = static_cast<int>(truth.days());
    std::vector<std::vector<double>> by_day(days);
    std::ifstream in(pred_csv);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      int rep = 0, day = 0;
      double c = 0, lc = 0;
      if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &rep, &day, &c, &lc) == 4)
        by_day[day - 1].push_back(lc);
    }
    int inside = 0;
    for (int d = 0; d < days; ++d) {
      const double lo = percentile(by_day[d], 0.05);
      const double hi = percentile(by_day[d], 0.95);
      const double x = truth.log_new_infections[d];
      if (x >= lo && x <= hi) ++inside;
    }
    coverage = static_cast<double>(inside) / days;
    band_ok = coverage >= 0.8;
  }

  char note[256];
  std::snprintf(note, sizeof(note),
                "posterior means (%.3f, %.3f, %.3f) vs (0.9, 0.6, 0.3), "
                "band coverage %.0f%%, sims %.0f <= 2500",
                mh, ms, mc, 100.0 * coverage, sims);
  report(ctx, 1, means_ok && band_ok && sims <= 2500.0, note);

  // Criterion 2: negative household-company sample correlation.
  const std::string samples_csv = art.out_dir + "/samples.csv";
  cmd = q(ctx.cli) + " sample --checkpoint " +
        q(art.out_dir + "/checkpoint_best.json") + " -n 10000 --out " +
        q(samples_csv) + " 2>" + q(art.out_dir + "/sample.log");
  bool corr_ok = false;
  double corr = 0.0;
  if (run(cmd) == 0) {
    std::vector<double> h, c;
    std::ifstream in(samples_csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      double a, b, cc, lq;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &a, &b, &cc, &lq) == 4) {
        h.push_back(a);
        c.push_back(cc);
      }
    }
    const double n = static_cast<double>(h.size());
    double mh2 = 0, mc2 = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      mh2 += h[i];
      mc2 += c[i];
    }
    mh2 /= n;
    mc2 /= n;
    double num = 0, dh = 0, dc = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      num += (h[i] - mh2) * (c[i] - mc2);
      dh += (h[i] - mh2) * (h[i] - mh2);
      dc += (c[i] - mc2) * (c[i] - mc2);
    }
    corr = num / std::sqrt(dh * dc);
    corr_ok = corr < -0.05;
  }
  std::snprintf(note, sizeof(note),
                "corr(beta_household, beta_company) = %.3f < -0.05", corr);
  report(ctx, 2, corr_ok, note);

  // Criterion 7: the log's sims_used column sums to B*(train+val)*M*epochs
  // and never exceeds the budget.
  std::ifstream in(art.out_dir + "/training_log.csv");
  std::string line;
  std::getline(in, line);
  long total = 0, rows = 0;
  bool per_epoch_ok = true;
  const long expected_per_epoch =
      ctx.cfg.training.sims_per_epoch(ctx.cfg.scoring.replicates);
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    const long used = std::strtol(line.c_str() + last + 1, nullptr, 10);
    if (used != expected_per_epoch) per_epoch_ok = false;
    total += used;
    ++rows;
  }
  const bool budget_ok = per_epoch_ok && rows > 0 &&
                         total == expected_per_epoch * rows &&
                         total <= ctx.cfg.training.budget &&
                         total == static_cast<long>(sims);
  std::snprintf(note, sizeof(note),
                "sims column: %ld rows x %ld = %ld <= budget %ld", rows,
                expected_per_epoch, total, ctx.cfg.training.budget);
  report(ctx, 7, budget_ok, note);
}

// -- criterion 3: gradient correctness ---------------------------------------

void criterion_3(Context& ctx) {
  PopulationConfig pc;
  pc.school_capacity = 25;
  pc.company_capacity = 10;
  const Population pop = synthesize(100, 1, pc);
  SimConfig sim;
  sim.horizon = 5;
  sim.initial_seed_fraction = 0.02;
  sim.dt_household = 0.2;
  sim.dt_school = 0.06;
  sim.dt_company = 0.15;
  sim.mode = RelaxationMode::Soft;

  const Trajectory x = simulate_trajectory(
      pop, Theta::from_beta({0.9, 0.6, 0.3}), sim, 2024);

  ScoringRuleConfig scoring;
  scoring.horizon = 5;
  const KlConfig kl{2000};
  const UniformPrior prior;
  const FlowModel flow(FlowConfig{}, 6);

  const double err = loss_gradient_check(
      flow, x, scoring, kl, prior, make_simulator_fn(pop, sim),
      /*theta_batch=*/10, /*loss_seed=*/515, /*n_coords=*/10, /*eps=*/1e-5,
      /*pick_seed=*/99);
  char note[160];
  std::snprintf(note, sizeof(note),
                "max relative gradient error %.2e < 1e-3 (10 coordinates, "
                "eps 1e-5)", err);
  report(ctx, 3, err < 1e-3, note);
}

// -- criterion 4: KL estimator calibration ------------------------------------

void criterion_4(Context& ctx) {
  // Closed-form pair: KL(N(0,1) || N(1,1)) = 0.5.
  const int r = 10000;
  Rng rng(314159);
  ad::ArrayXXd log_q(r, 1);
  Eigen::ArrayXd log_pi(r);
  const double c = -0.5 * std::log(2.0 * M_PI);
  for (int i = 0; i < r; ++i) {
    const double z = rng.normal();
    log_q(i, 0) = c - 0.5 * z * z;
    log_pi[i] = c - 0.5 * (z - 1.0) * (z - 1.0);
  }
  const KlEstimate gauss = kl_from_terms(ad::constant(log_q), log_pi);
  const bool gauss_ok = std::abs(gauss.mean - 0.5) < 3.0 * gauss.std_error;

  // q = pi: every term is exactly zero.
  const double logp = -3.0 * std::log(2.0);
  const KlEstimate self = kl_from_terms(
      ad::constant(ad::ArrayXXd::Constant(r, 1, logp)),
      Eigen::ArrayXd::Constant(r, logp));
  const bool self_ok = std::abs(self.mean) <= 3.0 * self.std_error;

  char note[200];
  std::snprintf(note, sizeof(note),
                "Gaussian pair %.4f (se %.4f) vs 0.5; q=pi gives %.1e",
                gauss.mean, gauss.std_error, self.mean);
  report(ctx, 4, gauss_ok && self_ok, note);
}

// -- criterion 5: flow validity ------------------------------------------------

void criterion_5(Context& ctx) {
  FlowConfig cfg;
  Rng rng(7117);
  const int n = 1000;
  Eigen::ArrayXd x(n);
  ad::ArrayXXd raw(n, cfg.params_per_coordinate());
  for (int i = 0; i < n; ++i) {
    x[i] = 12.0 * rng.uniform01() - 6.0;
    for (int j = 0; j < raw.cols(); ++j)
      raw(i, j) = 2.0 * rng.uniform01() - 1.0;
  }
  const SplineEval fwd = rq_spline(x, raw, cfg, false);
  const SplineEval inv = rq_spline(fwd.outputs, raw, cfg, true);
  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    worst = std::max(worst, std::abs(inv.outputs[i] - x[i]));
  const bool roundtrip_ok = worst < 1e-8;

  // Identity-flow normalization via midpoint quadrature on (0,2)^3.
  const FlowModel identity;
  const int g = 40;
  const double h = 2.0 / g;
  ad::ArrayXXd pts(g * g * g, 3);
  Eigen::Index rrow = 0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      for (int k = 0; k < g; ++k) {
        pts(rrow, 0) = (i + 0.5) * h;
        pts(rrow, 1) = (j + 0.5) * h;
        pts(rrow, 2) = (k + 0.5) * h;
        ++rrow;
      }
  const double integral = log_prob_batch(identity, pts).exp().sum() * h * h * h;
  const bool quad_ok = std::abs(integral - 1.0) <= 0.02;

  // Support: samples strictly inside (0, 2)^3.
  bool support_ok = true;
  for (std::uint64_t seed : {1ull, 9ull}) {
    FlowModel m(FlowConfig{}, seed);
    auto& params = m.parameters();
    Rng prng(seed);
    for (auto& p : params)
      for (Eigen::Index rr = 0; rr < p.rows(); ++rr)
        for (Eigen::Index cc = 0; cc < p.cols(); ++cc)
          p(rr, cc) += 0.05 * (2.0 * prng.uniform01() - 1.0);
    const FlowSample s = sample(m, 5000, seed + 3);
    support_ok = support_ok && (s.beta > 0.0).all() && (s.beta < 2.0).all();
  }

  char note[200];
  std::snprintf(note, sizeof(note),
                "round-trip %.1e < 1e-8, quadrature %.4f in 1 +- 0.02, "
                "samples inside (0,2)^3: %s",
                worst, integral, support_ok ? "yes" : "no");
  report(ctx, 5, roundtrip_ok && quad_ok && support_ok, note);
}

// -- criterion 6: simulator invariants ----------------------------------------

void criterion_6(Context& ctx) {
  // Relaxed-Bernoulli marginal frequencies.
  bool marginal_ok = true;
  double worst_dev = 0.0;
  for (double p : {0.1, 0.5, 0.9}) {
    const int n = 100000;
    Rng rng(derive_seed(5150, static_cast<std::uint64_t>(p * 100)));
    const Eigen::ArrayXd u = rng.uniform_vec(n);
    const ad::Var draws = relaxed_bernoulli(
        ad::constant(ad::ArrayXXd::Constant(n, 1, p)), u, 0.1,
        RelaxationMode::Hard);
    const double freq = draws.value().mean();
    const double dev = std::abs(freq - p) / std::sqrt(p * (1 - p) / n);
    worst_dev = std::max(worst_dev, dev);
    if (dev >= 3.0) marginal_ok = false;
  }

  // Conservation across 1,000 random configurations.
  bool conservation_ok = true;
  Rng rng(8080);
  for (int trial = 0; trial < 1000 && conservation_ok; ++trial) {
    const int n = 60 + static_cast<int>(rng.bounded(240));
    PopulationConfig pc;
    pc.school_capacity = 10 + static_cast<int>(rng.bounded(60));
    pc.company_capacity = 5 + static_cast<int>(rng.bounded(40));
    const Population pop = synthesize(n, derive_seed(1, trial), pc);
    SimConfig sim;
    sim.horizon = 3 + static_cast<int>(rng.bounded(8));
    sim.initial_seed_fraction = 0.01 + 0.2 * rng.uniform01();
    sim.dt_household = 0.05 + rng.uniform01();
    sim.dt_school = 0.05 + rng.uniform01();
    sim.dt_company = 0.05 + rng.uniform01();
    const Eigen::Array3d b{0.05 + 1.9 * rng.uniform01(),
                           0.05 + 1.9 * rng.uniform01(),
                           0.05 + 1.9 * rng.uniform01()};
    ad::ArrayXXd bc(3, 1);
    bc << b[0], b[1], b[2];
    const SimOutput out =
        simulate(pop, ad::constant(bc), sim, derive_seed(2, trial));
    const double total = out.trajectory.new_infections.sum();
    if (!(total <= n - out.n_seeded) || (out.trajectory.new_infections < 0.0).any())
      conservation_ok = false;
  }

  // Vanishing transmission: zero infections after the seeding day.
  const Population pop = synthesize(1000, 5);
  SimConfig sim;
  sim.horizon = 30;
  const Trajectory eps_t = simulate_trajectory(
      pop, Theta::from_beta({1e-12, 1e-12, 1e-12}), sim, 123);
  const bool eps_ok = (eps_t.new_infections == 0.0).all();

  // Bit-reproducibility.
  const Theta theta = Theta::from_beta({0.9, 0.6, 0.3});
  const Trajectory t1 = simulate_trajectory(pop, theta, sim, 777);
  const Trajectory t2 = simulate_trajectory(pop, theta, sim, 777);
  const bool repro_ok = (t1.new_infections == t2.new_infections).all() &&
                        (t1.log_new_infections == t2.log_new_infections).all();

  char note[220];
  std::snprintf(note, sizeof(note),
                "marginals within %.2f se, conservation %s, eps-beta zero %s, "
                "bit-reproducible %s",
                worst_dev, conservation_ok ? "ok" : "violated",
                eps_ok ? "ok" : "violated", repro_ok ? "ok" : "violated");
  report(ctx, 6, marginal_ok && conservation_ok && eps_ok && repro_ok, note);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 4) {
    std::fprintf(stderr,
                 "usage: acceptance <cli-binary> <work-dir> <reference-config> "
                 "[criteria]\n");
    return 2;
  }
  Context ctx;
  ctx.cli = argv[1];
  ctx.work = argv[2];
  ctx.config_path = argv[3];
  fs::create_directories(ctx.work);
  ctx.cfg = parse_run_config(ctx.config_path);

  std::string which = argc > 4 ? argv[4] : "1,2,3,4,5,6,7";
  auto wants = [&](int c) {
    return which.find(std::to_string(c)) != std::string::npos;
  };

  try {
    if (wants(3)) criterion_3(ctx);
    if (wants(4)) criterion_4(ctx);
    if (wants(5)) criterion_5(ctx);
    if (wants(6)) criterion_6(ctx);
    if (wants(1) || wants(2) || wants(7)) criterion_1_and_2_and_7(ctx);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance: unexpected error: %s\n", e.what());
    return 1 + ctx.failures;
  }
  return ctx.failures;
}
