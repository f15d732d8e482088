#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <vector>

namespace epigvi {

/// splitmix64 finalizer; full-period mixing of a 64-bit word.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent stream seed from a master seed and up to three
/// stream coordinates (purpose tag, epoch, replicate, ...). Deterministic
/// and collision-resistant enough for seed-splitting across replicates.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// Deterministic random source. All distributions are implemented on top of
/// the raw mt19937_64 stream so sequences are reproducible across standard
/// libraries (std::*_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform draw strictly inside (0, 1).
  double uniform01();

  /// Standard normal via Box-Muller (cached spare).
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t bounded(std::uint64_t n);

  Eigen::ArrayXd uniform_vec(Eigen::Index n);
  Eigen::ArrayXXd normal_mat(Eigen::Index rows, Eigen::Index cols);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[bounded(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace epigvi
