#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symcov/funcdata.hpp"

namespace testing {

// Small seeded generator for hand-rolled property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double a = 0.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng_); }

  Eigen::MatrixXd matrix(Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }
  Eigen::VectorXd vector(Eigen::Index n) { return matrix(n, 1).col(0); }
  Eigen::MatrixXd symmetric(Eigen::Index n) {
    const Eigen::MatrixXd a = matrix(n, n);
    return (a + a.transpose()) / 2.0;
  }
  std::vector<double> sorted_points(int n, double a = 0.0, double b = 1.0) {
    std::vector<double> t(static_cast<std::size_t>(n));
    for (auto& v : t) v = uniform(a, b);
    std::sort(t.begin(), t.end());
    return t;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Independent curves with random sizes in [dmin, dmax] and noise responses.
inline symcov::ObservationTable random_table(Gen& gen, int n, int dmin, int dmax,
                                             const std::vector<std::string>& groupings = {},
                                             const std::vector<int>& level_counts = {}) {
  symcov::ObservationTable::Builder builder(groupings, {});
  std::vector<std::string> levels(groupings.size());
  for (int i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groupings.size(); ++g) levels[g] = "L" + std::to_string(gen.integer(1, level_counts[g]));
    const int d = gen.integer(dmin, dmax);
    for (double t : gen.sorted_points(d)) builder.add_row("c" + std::to_string(i), t, gen.normal(), levels, {});
  }
  return std::move(builder).build(symcov::Domain{0.0, 1.0});
}

inline double relative_difference(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace testing
