// Drives the installed binary through every subcommand at desk scale.
// The binary path arrives via the EPIGVI_BIN environment variable.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* b = std::getenv("EPIGVI_BIN");
  REQUIRE_MESSAGE(b != nullptr, "EPIGVI_BIN must point at the cli binary");
  return b;
}

std::string work_dir() {
  static const std::string dir = [] {
    const auto d = fs::temp_directory_path() / "epigvi_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd =
      "\"" + bin() + "\" " + args + " >/dev/null 2>" + work_dir() + "/err.log";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string stderr_text() {
  std::ifstream in(work_dir() + "/err.log");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string write_config(const std::string& name, const std::string& extra) {
  const std::string path = work_dir() + "/" + name;
  std::ofstream out(path);
  out << R"({
  "seed": 5,
  "output_dir": ")" << work_dir() << R"(/out",
  "population": {"n_agents": 300, "school_capacity": 25, "company_capacity": 10},
  "simulator": {"horizon": 5, "dt_household": 0.2, "dt_school": 0.06,
                "dt_company": 0.15, "initial_seed_fraction": 0.02},
  "flow": {"hidden_units": 32},
  "kl": {"samples": 200},
  "training": {"theta_batch": 2, "validation_batch": 2, "max_epochs": 2,
               "budget": 50})" << extra << "\n}\n";
  return path;
}

int line_count(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("synth-pop writes the requested record count deterministically") {
  const std::string cfg = write_config("cfg.json", "");
  const std::string p1 = work_dir() + "/pop1.txt";
  const std::string p2 = work_dir() + "/pop2.txt";
  CHECK(run("synth-pop --config " + cfg + " --out " + p1) == 0);
  CHECK(run("synth-pop --config " + cfg + " --out " + p2) == 0);
  CHECK(line_count(p1) == 300 + 8);  // header block + one row per agent
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("config validation failures exit 2 and name the field") {
  const std::string bad = write_config(
      "bad.json",
      R"(, "unexpected_section": {"x": 1})");
  CHECK(run("synth-pop --config " + bad) == 2);
  CHECK(stderr_text().find("unexpected_section") != std::string::npos);

  const std::string path = work_dir() + "/bad_share.json";
  std::ofstream(path) << R"({"population": {"n_agents": 100,
    "age_shares": {"child": 1.5, "adult": 0.6, "retired": 0.2}}})";
  CHECK(run("synth-pop --config " + path) == 2);
  CHECK(stderr_text().find("age_shares") != std::string::npos);
}

TEST_CASE("gen-truth writes one row per day and is seed-reproducible") {
  const std::string cfg = write_config("cfg.json", "");
  const std::string t1 = work_dir() + "/t1.csv";
  const std::string t2 = work_dir() + "/t2.csv";
  CHECK(run("--seed 9 gen-truth --config " + cfg +
            " --beta 0.9 0.6 0.3 --out " + t1) == 0);
  CHECK(run("--seed 9 gen-truth --config " + cfg +
            " --beta 0.9 0.6 0.3 --out " + t2) == 0);
  CHECK(line_count(t1) == 6);  // header + 5 days
  CHECK(slurp(t1) == slurp(t2));

  CHECK(run("gen-truth --config " + cfg + " --beta 2.5 0.6 0.3 --out " + t1) ==
        2);
}

TEST_CASE("calibrate produces checkpoints, log, summary; reruns match") {
  const std::string cfg = write_config("cfg.json", "");
  const std::string truth = work_dir() + "/truth.csv";
  REQUIRE(run("gen-truth --config " + cfg + " --beta 0.9 0.6 0.3 --out " +
              truth) == 0);

  const std::string out1 = work_dir() + "/cal1";
  const std::string out2 = work_dir() + "/cal2";
  CHECK(run("calibrate --config " + cfg + " --data " + truth + " --out-dir " +
            out1 + " --quiet") == 0);
  CHECK(run("calibrate --config " + cfg + " --data " + truth + " --out-dir " +
            out2 + " --quiet") == 0);
  for (const char* f :
       {"checkpoint_best.json", "checkpoint_final.json", "training_log.csv",
        "summary.json", "effective_config.json"})
    CHECK(fs::exists(fs::path(out1) / f));
  CHECK(slurp(out1 + "/training_log.csv") == slurp(out2 + "/training_log.csv"));

  // Data with the wrong horizon is an input error.
  std::ofstream(work_dir() + "/short.csv")
      << "day,new_infections,log_new_infections\n1,1.000000,0.693147\n";
  CHECK(run("calibrate --config " + cfg + " --data " + work_dir() +
            "/short.csv --out-dir " + out1) == 2);
}

TEST_CASE("sample emits support-respecting rows with the pinned header") {
  const std::string cfg = write_config("cfg.json", "");
  const std::string truth = work_dir() + "/truth.csv";
  const std::string cal = work_dir() + "/cal_s";
  REQUIRE(run("gen-truth --config " + cfg + " --beta 0.9 0.6 0.3 --out " +
              truth) == 0);
  REQUIRE(run("calibrate --config " + cfg + " --data " + truth + " --out-dir " +
              cal + " --quiet") == 0);

  const std::string samples = work_dir() + "/samples.csv";
  CHECK(run("sample --checkpoint " + cal + "/checkpoint_best.json -n 500 "
            "--out " + samples) == 0);
  std::ifstream in(samples);
  std::string line;
  std::getline(in, line);
  CHECK(line == "beta_household,beta_school,beta_company,log_q");
  int rows = 0;
  while (std::getline(in, line)) {
    double h, s, c, lq;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &h, &s, &c, &lq) ==
            4);
    CHECK(h > 0.0);
    CHECK(h < 2.0);
    CHECK(s > 0.0);
    CHECK(s < 2.0);
    CHECK(c > 0.0);
    CHECK(c < 2.0);
    ++rows;
  }
  CHECK(rows == 500);

  // Architecture-hash tampering is refused with exit 2.
  const std::string ckpt = slurp(cal + "/checkpoint_best.json");
  const auto pos = ckpt.find("\"bins\": 8");
  REQUIRE(pos != std::string::npos);
  std::string tampered = ckpt;
  tampered.replace(pos, 9, "\"bins\": 4");
  std::ofstream(work_dir() + "/tampered.json") << tampered;
  CHECK(run("sample --checkpoint " + work_dir() +
            "/tampered.json -n 10 --out " + samples) == 2);
}

TEST_CASE("untrained flow samples have median near one per coordinate") {
  // The identity flow squashes a standard normal: the median of
  // 2 sigmoid(z) is exactly 1.
  const std::string cfg = write_config("cfg.json", "");
  const std::string cal = work_dir() + "/cal_u";
  const std::string truth = work_dir() + "/truth.csv";
  REQUIRE(run("gen-truth --config " + cfg + " --beta 0.9 0.6 0.3 --out " +
              truth) == 0);
  // Zero epochs: the written checkpoints carry the identity initialization.
  const std::string cfg0 = write_config(
      "cfg0.json", "");
  std::string text = slurp(cfg0);
  const auto pos = text.find("\"max_epochs\": 2");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 15, "\"max_epochs\": 0");
  std::ofstream(cfg0) << text;
  REQUIRE(run("calibrate --config " + cfg0 + " --data " + truth +
              " --out-dir " + cal + " --quiet") == 0);

  const std::string samples = work_dir() + "/u_samples.csv";
  REQUIRE(run("sample --checkpoint " + cal +
              "/checkpoint_final.json -n 10000 --out " + samples) == 0);
  std::ifstream in(samples);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> cols(3);
  while (std::getline(in, line)) {
    double h, s, c, lq;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &h, &s, &c, &lq) == 4) {
      cols[0].push_back(h);
      cols[1].push_back(s);
      cols[2].push_back(c);
    }
  }
  for (auto& col : cols) {
    std::sort(col.begin(), col.end());
    const double median = col[col.size() / 2];
    CHECK(std::abs(median - 1.0) < 0.03);
  }
}

TEST_CASE("predictive writes long-form rows for each replicate") {
  const std::string cfg = write_config("cfg.json", "");
  const std::string truth = work_dir() + "/truth.csv";
  const std::string cal = work_dir() + "/cal_p";
  REQUIRE(run("gen-truth --config " + cfg + " --beta 0.9 0.6 0.3 --out " +
              truth) == 0);
  REQUIRE(run("calibrate --config " + cfg + " --data " + truth + " --out-dir " +
              cal + " --quiet") == 0);

  const std::string pred = work_dir() + "/pred.csv";
  CHECK(run("predictive --config " + cfg + " --checkpoint " + cal +
            "/checkpoint_best.json -n 1 --out " + pred) == 0);
  std::ifstream in(pred);
  std::string line;
  std::getline(in, line);
  CHECK(line == "replicate,day,new_infections,log_new_infections");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);  // n = 1 -> exactly horizon rows for replicate 0

  CHECK(run("predictive --config " + cfg + " --source prior -n 2 --out " +
            pred) == 0);
  CHECK(line_count(pred) == 11);  // header + 2 replicates x 5 days

  CHECK(run("predictive --config " + cfg + " --source nonsense -n 1 --out " +
            pred) == 2);
}
