#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symcov/fpca.hpp"
#include "symcov/funcdata.hpp"

namespace symcov {

// One of the eleven Scenario 1 configurations.
struct Scenario1Setting {
  int id = 1;
  bool complex_functions = true;  // {sin 2 pi t, cos 2 pi t} instead of {1, sqrt(3)(2t - 1)}
  bool sparse = false;            // D_i ~ U{3..10} instead of U{40..60}
  double nu1 = 2.0;
  double nu2 = 1.0;
  double sigma2 = 0.05;
};

[[nodiscard]] Scenario1Setting scenario1_setting(int setting);

// Known structure of one random process, normalized to orthonormal
// eigenfunctions on the simulation domain.
struct TruthTerm {
  std::string name;
  Eigen::VectorXd nu;
  std::vector<std::function<double(double)>> phi;
  std::vector<std::string> level_names;
  Eigen::MatrixXd scores;                 // levels x nu.size()
  std::vector<std::size_t> level_of_curve;

  [[nodiscard]] Eigen::MatrixXd functions(std::span<const double> grid) const;  // grid x K
  [[nodiscard]] Eigen::MatrixXd surface(std::span<const double> grid) const;
  [[nodiscard]] Eigen::MatrixXd process(std::span<const double> grid) const;    // levels x grid
};

struct Truth {
  Domain domain;
  std::function<double(double)> mean;
  std::vector<TruthTerm> terms;
  double sigma2 = 0.0;

  // Noise-free curves on the grid, one row per curve.
  [[nodiscard]] Eigen::MatrixXd curves(std::span<const double> grid) const;
};

struct SimulatedData {
  ObservationTable table;
  Truth truth;
  ModelSpec spec;  // estimation settings used for this scenario
};

// Independent curves, mu(t) = sin t + t, n curves on [0, 1].
[[nodiscard]] SimulatedData generate_scenario1(int setting, std::uint64_t seed, std::size_t replicate = 0,
                                               std::size_t n = 100);
// Crossed random intercepts B (9 levels) and C (16 levels), 5 curves per cell.
[[nodiscard]] SimulatedData generate_scenario2(std::uint64_t seed, std::size_t replicate = 0);

// Centers the columns and rotates them so the sample covariance (divisor
// rows - 1) is exactly diag(nu).
void decorrelate_scores(Eigen::MatrixXd& scores, const Eigen::VectorXd& nu);

// sqrt(sum (theta - est)^2 / sum theta^2).
[[nodiscard]] double rrmse(std::span<const double> truth, std::span<const double> estimate);
[[nodiscard]] double rrmse(double truth, double estimate);
[[nodiscard]] double rrmse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate);
// Minimum over the two signs of the estimate.
[[nodiscard]] double rrmse_eigenfunction(std::span<const double> truth, std::span<const double> estimate);
// sqrt(mean (xi - est)^2 / nu).
[[nodiscard]] double rrmse_scores(std::span<const double> truth, std::span<const double> estimate, double nu);

struct ComponentError {
  std::string component;
  double value = 0.0;
};

// rrMSE of every component covered by the truth. Estimated components beyond
// the truncation count as zero.
[[nodiscard]] std::vector<ComponentError> evaluate_fit(const FpcaModel& model, const Truth& truth);

struct BenchmarkConfig {
  int scenario = 1;
  int setting = 1;
  std::vector<Method> methods{Method::TriConstr, Method::TriConstrW, Method::Tri, Method::Whole};
  int reps = 1;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t n = 100;  // Scenario 1 curve count
  int grid_size = 100;
  double pve = 0.95;
  PveBase pve_base = PveBase::Process;
  bool weighted_refit = false;
};

struct RrmseRow {
  int replicate = 0;
  Method method = Method::TriConstr;
  std::string component;
  double value = 0.0;  // NaN when the fit failed
};

struct TimingRow {
  int replicate = 0;
  Method method = Method::TriConstr;
  bool ok = true;
  std::string error;
  std::size_t pairs = 0;
  int iterations = 0;
  bool converged = true;
  double mean_ms = 0.0;
  double covariance_ms = 0.0;
  double fpca_ms = 0.0;
  double total_ms = 0.0;
};

struct TruncationRow {
  int replicate = 0;
  Method method = Method::TriConstr;
  std::string term;
  int level = 0;
};

struct RrmseReport {
  std::vector<RrmseRow> rrmse;
  std::vector<TimingRow> timings;
  std::vector<TruncationRow> truncations;

  [[nodiscard]] std::vector<double> values(Method method, const std::string& component) const;
  [[nodiscard]] double median(Method method, const std::string& component) const;
  [[nodiscard]] std::vector<int> truncation_levels(Method method, const std::string& term) const;
};

[[nodiscard]] SimulatedData generate(const BenchmarkConfig& config, std::size_t replicate);

// Fits every method on the same data per replicate. Failed fits become NaN
// rows; the run continues.
[[nodiscard]] RrmseReport run_benchmark(const BenchmarkConfig& config);

[[nodiscard]] double median(std::vector<double> values);

}  // namespace symcov
