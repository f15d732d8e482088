#include "epigvi/run_config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

#include "epigvi/rng.hpp"

namespace epigvi {

namespace {

using nlohmann::json;

/// Strict section reader: typed getters plus an unknown-key sweep.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const char* key, T& out, const char* what) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": expected " + what);
    }
  }

  void get_number(const char* key, double& out) { get(key, out, "a number"); }
  void get_int(const char* key, int& out) { get(key, out, "an integer"); }
  void get_long(const char* key, long& out) { get(key, out, "an integer"); }
  void get_seed(const char* key, std::uint64_t& out, bool& explicit_flag) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<std::uint64_t>();
      explicit_flag = true;
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key +
                        ": expected a non-negative integer");
    }
  }

  json sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : json::object();
  }

  /// Must be called last: rejects keys that no getter claimed.
  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (seen_.find(it.key()) == seen_.end())
        throw ConfigError(path_ + "." + it.key() + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  if (n_agents < 10)
    throw ConfigError("population.n_agents: at least 10 agents required");
  population.validate();
  simulator.validate();
  flow.validate();
  scoring.validate();
  kl.validate();
  training.validate();
  if (scoring.horizon != simulator.horizon)
    throw ConfigError(
        "scoring.horizon: must equal simulator.horizon (" +
        std::to_string(scoring.horizon) + " vs " +
        std::to_string(simulator.horizon) + ")");
}

RunConfig parse_run_config_text(const std::string& text,
                                const std::uint64_t* seed_override) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }

  RunConfig cfg;
  bool pop_seed_explicit = false, sim_seed_explicit = false,
       flow_seed_explicit = false, train_seed_explicit = false;
  bool scoring_horizon_explicit = false;

  Section root(j, "config");
  bool dummy = false;
  root.get_seed("seed", cfg.seed, dummy);
  root.get("output_dir", cfg.output_dir, "a string");

  {
    json pj = root.sub("population");
    Section p(pj, "population");
    p.get_int("n_agents", cfg.n_agents);
    p.get_seed("seed", cfg.population_seed, pop_seed_explicit);
    if (p.has("age_shares")) {
      Section a(pj.at("age_shares"), "population.age_shares");
      a.get_number("child", cfg.population.child_share);
      a.get_number("adult", cfg.population.adult_share);
      a.get_number("retired", cfg.population.retired_share);
      a.finish();
    }
    if (p.has("susceptibility")) {
      Section s(pj.at("susceptibility"), "population.susceptibility");
      s.get_number("child", cfg.population.child_susceptibility);
      s.get_number("adult", cfg.population.adult_susceptibility);
      s.get_number("retired", cfg.population.retired_susceptibility);
      s.finish();
    }
    p.get("household_size_probs", cfg.population.household_size_probs,
          "an array of numbers");
    p.get_int("school_capacity", cfg.population.school_capacity);
    p.get_int("company_capacity", cfg.population.company_capacity);
    p.finish();
  }

  {
    json sj = root.sub("simulator");
    Section s(sj, "simulator");
    s.get_number("dt_household", cfg.simulator.dt_household);
    s.get_number("dt_school", cfg.simulator.dt_school);
    s.get_number("dt_company", cfg.simulator.dt_company);
    s.get_number("profile_peak_day", cfg.simulator.profile_peak_day);
    s.get_number("infectious_days", cfg.simulator.infectious_days);
    s.get_number("temperature", cfg.simulator.temperature);
    s.get_number("initial_seed_fraction",
                 cfg.simulator.initial_seed_fraction);
    s.get_int("horizon", cfg.simulator.horizon);
    s.get_seed("seed", cfg.simulator.seed, sim_seed_explicit);
    if (s.has("mode")) {
      std::string mode;
      s.get("mode", mode, "a string");
      if (mode == "hard")
        cfg.simulator.mode = RelaxationMode::Hard;
      else if (mode == "soft")
        cfg.simulator.mode = RelaxationMode::Soft;
      else
        throw ConfigError("simulator.mode: expected \"hard\" or \"soft\"");
    }
    s.finish();
  }

  {
    json fj = root.sub("flow");
    Section f(fj, "flow");
    f.get_int("transforms", cfg.flow.transforms);
    f.get_int("hidden_layers", cfg.flow.hidden_layers);
    f.get_int("hidden_units", cfg.flow.hidden_units);
    f.get_int("bins", cfg.flow.bins);
    f.get_number("tail_bound", cfg.flow.tail_bound);
    f.get_number("beta_max", cfg.flow.beta_max);
    f.get_number("min_bin_fraction", cfg.flow.min_bin_fraction);
    f.get_number("min_derivative", cfg.flow.min_derivative);
    f.get_seed("init_seed", cfg.flow_init_seed, flow_seed_explicit);
    f.finish();
  }

  {
    json sj = root.sub("scoring");
    Section s(sj, "scoring");
    s.get_number("weight", cfg.scoring.weight);
    if (s.has("horizon")) {
      scoring_horizon_explicit = true;
      s.get_int("horizon", cfg.scoring.horizon);
    }
    s.get_int("replicates", cfg.scoring.replicates);
    s.get_int("window", cfg.scoring.window);
    s.finish();
  }

  {
    json kj = root.sub("kl");
    Section k(kj, "kl");
    k.get_int("samples", cfg.kl.samples);
    k.finish();
  }

  {
    json tj = root.sub("training");
    Section t(tj, "training");
    t.get_int("theta_batch", cfg.training.theta_batch);
    t.get_int("validation_batch", cfg.training.validation_batch);
    t.get_int("max_epochs", cfg.training.max_epochs);
    t.get_number("learning_rate", cfg.training.learning_rate);
    t.get_number("clip_norm", cfg.training.clip_norm);
    t.get_int("early_stop_window", cfg.training.early_stop_window);
    t.get_number("early_stop_rel_tol", cfg.training.early_stop_rel_tol);
    t.get_long("budget", cfg.training.budget);
    t.get_seed("seed", cfg.training.seed, train_seed_explicit);
    t.get_int("threads", cfg.training.threads);
    t.finish();
  }

  root.finish();

  if (seed_override != nullptr) cfg.seed = *seed_override;
  if (!pop_seed_explicit) cfg.population_seed = derive_seed(cfg.seed, 0x01);
  if (!sim_seed_explicit) cfg.simulator.seed = derive_seed(cfg.seed, 0x02);
  if (!flow_seed_explicit) cfg.flow_init_seed = derive_seed(cfg.seed, 0x03);
  if (!train_seed_explicit) cfg.training.seed = derive_seed(cfg.seed, 0x04);
  if (!scoring_horizon_explicit) cfg.scoring.horizon = cfg.simulator.horizon;

  cfg.validate();
  return cfg;
}

RunConfig parse_run_config(const std::string& path,
                           const std::uint64_t* seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config_text(text, seed_override);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["population"] = {
      {"n_agents", cfg.n_agents},
      {"seed", cfg.population_seed},
      {"age_shares",
       {{"child", cfg.population.child_share},
        {"adult", cfg.population.adult_share},
        {"retired", cfg.population.retired_share}}},
      {"susceptibility",
       {{"child", cfg.population.child_susceptibility},
        {"adult", cfg.population.adult_susceptibility},
        {"retired", cfg.population.retired_susceptibility}}},
      {"household_size_probs", cfg.population.household_size_probs},
      {"school_capacity", cfg.population.school_capacity},
      {"company_capacity", cfg.population.company_capacity},
  };
  j["simulator"] = {
      {"dt_household", cfg.simulator.dt_household},
      {"dt_school", cfg.simulator.dt_school},
      {"dt_company", cfg.simulator.dt_company},
      {"profile_peak_day", cfg.simulator.profile_peak_day},
      {"infectious_days", cfg.simulator.infectious_days},
      {"temperature", cfg.simulator.temperature},
      {"initial_seed_fraction", cfg.simulator.initial_seed_fraction},
      {"horizon", cfg.simulator.horizon},
      {"seed", cfg.simulator.seed},
      {"mode", cfg.simulator.mode == RelaxationMode::Hard ? "hard" : "soft"},
  };
  j["flow"] = {
      {"transforms", cfg.flow.transforms},
      {"hidden_layers", cfg.flow.hidden_layers},
      {"hidden_units", cfg.flow.hidden_units},
      {"bins", cfg.flow.bins},
      {"tail_bound", cfg.flow.tail_bound},
      {"beta_max", cfg.flow.beta_max},
      {"min_bin_fraction", cfg.flow.min_bin_fraction},
      {"min_derivative", cfg.flow.min_derivative},
      {"init_seed", cfg.flow_init_seed},
  };
  j["scoring"] = {
      {"weight", cfg.scoring.weight},
      {"horizon", cfg.scoring.horizon},
      {"replicates", cfg.scoring.replicates},
      {"window", cfg.scoring.window},
  };
  j["kl"] = {{"samples", cfg.kl.samples}};
  j["training"] = {
      {"theta_batch", cfg.training.theta_batch},
      {"validation_batch", cfg.training.validation_batch},
      {"max_epochs", cfg.training.max_epochs},
      {"learning_rate", cfg.training.learning_rate},
      {"clip_norm", cfg.training.clip_norm},
      {"early_stop_window", cfg.training.early_stop_window},
      {"early_stop_rel_tol", cfg.training.early_stop_rel_tol},
      {"budget", cfg.training.budget},
      {"seed", cfg.training.seed},
      {"threads", cfg.training.threads},
  };
  return j.dump(2) + "\n";
}

}  // namespace epigvi
