#include "epigvi/rng.hpp"

#include <cmath>

#include "epigvi/errors.hpp"

namespace epigvi {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = mix64(master);
  s = mix64(s ^ a);
  s = mix64(s ^ b);
  s = mix64(s ^ c);
  return s;
}

double Rng::uniform01() {
  // 53 significant bits, shifted off the open boundaries.
  return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  const double u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::bounded(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::bounded: n must be positive");
  return gen_() % n;
}

Eigen::ArrayXd Rng::uniform_vec(Eigen::Index n) {
  Eigen::ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = uniform01();
  return out;
}

Eigen::ArrayXXd Rng::normal_mat(Eigen::Index rows, Eigen::Index cols) {
  Eigen::ArrayXXd out(rows, cols);
  // Row-major fill so a (n, k) draw extends a (m, k) draw row by row.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal();
  return out;
}

}  // namespace epigvi
