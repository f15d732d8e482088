#pragma once

#include <Eigen/Core>
#include <string>

namespace epigvi {

/// Per-day time series of new infections and its offset-log transform
/// x_t = log(c_t + 1). Day indices run 1..T.
struct Trajectory {
  Eigen::ArrayXd new_infections;      // c_t
  Eigen::ArrayXd log_new_infections;  // log(c_t + 1)

  Eigen::Index days() const { return new_infections.size(); }

  static Trajectory from_counts(Eigen::ArrayXd counts);
};

/// CSV with header `day,new_infections,log_new_infections`, one row per day,
/// 6-decimal fixed-point floats, LF line endings.
void write_trajectory_csv(const Trajectory& t, const std::string& path);
Trajectory read_trajectory_csv(const std::string& path);

}  // namespace epigvi
