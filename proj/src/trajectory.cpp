#include "epigvi/trajectory.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "epigvi/errors.hpp"

namespace epigvi {

Trajectory Trajectory::from_counts(Eigen::ArrayXd counts) {
  Trajectory t;
  t.log_new_infections = (counts + 1.0).log();
  t.new_infections = std::move(counts);
  return t;
}

void write_trajectory_csv(const Trajectory& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "day,new_infections,log_new_infections\n";
  char buf[96];
  for (Eigen::Index i = 0; i < t.days(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f\n",
                  static_cast<long long>(i + 1), t.new_infections[i],
                  t.log_new_infections[i]);
    out << buf;
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line) || line != "day,new_infections,log_new_infections")
    throw ParseError("trajectory csv row 1: bad or missing header");
  std::vector<double> counts, logs;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    long day = 0;
    double c = 0.0, lc = 0.0;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf", &day, &c, &lc) != 3)
      throw ParseError("trajectory csv row " + std::to_string(row) +
                       ": expected day,new_infections,log_new_infections");
    if (day != static_cast<long>(counts.size()) + 1)
      throw ParseError("trajectory csv row " + std::to_string(row) +
                       ": days must be consecutive starting at 1");
    if (!(c >= 0.0) || !std::isfinite(lc))
      throw ParseError("trajectory csv row " + std::to_string(row) +
                       ": values out of range");
    counts.push_back(c);
    logs.push_back(lc);
  }
  if (counts.empty()) throw ParseError("trajectory csv: no data rows");
  Trajectory t;
  t.new_infections = Eigen::Map<Eigen::ArrayXd>(counts.data(), counts.size());
  t.log_new_infections = Eigen::Map<Eigen::ArrayXd>(logs.data(), logs.size());
  return t;
}

}  // namespace epigvi
