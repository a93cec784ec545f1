#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace symcov {

// Penalty on a contiguous column range. Each component gets its own
// smoothing parameter: S_lambda = sum_c lambda_c * components[c].
struct PenaltyBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<Eigen::MatrixXd> components;
};

// Penalized weighted least squares problem in normal-equation form.
class PenalizedSystem {
 public:
  PenalizedSystem(Eigen::MatrixXd gram, Eigen::VectorXd rhs, double yy, double weight_sum, std::size_t rows,
                  std::vector<PenaltyBlock> blocks);

  // M'WM etc. computed from an explicit design.
  static PenalizedSystem from_dense(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                    const Eigen::VectorXd& weights, std::vector<PenaltyBlock> blocks);

  [[nodiscard]] const Eigen::MatrixXd& gram() const noexcept { return gram_; }
  [[nodiscard]] const Eigen::VectorXd& rhs() const noexcept { return rhs_; }
  [[nodiscard]] double yy() const noexcept { return yy_; }
  [[nodiscard]] double weight_sum() const noexcept { return weight_sum_; }
  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] const std::vector<PenaltyBlock>& blocks() const noexcept { return blocks_; }

  [[nodiscard]] std::size_t coefficient_count() const noexcept { return static_cast<std::size_t>(rhs_.size()); }
  [[nodiscard]] std::size_t lambda_count() const noexcept { return lambda_count_; }
  // Penalty null-space dimensions plus unpenalized columns.
  [[nodiscard]] std::size_t null_space_dimension() const noexcept { return null_dim_; }
  [[nodiscard]] std::vector<std::size_t> unpenalized_columns() const;

  // Adds S_lambda to `a` (p x p).
  void add_penalty(Eigen::MatrixXd& a, std::span<const double> lambda) const;
  // log of the product of positive eigenvalues of S_lambda.
  [[nodiscard]] double log_pdet_penalty(std::span<const double> lambda) const;
  // Typical scale tr(G_k)/tr(S_kc) per smoothing parameter.
  [[nodiscard]] std::vector<double> reference_lambdas() const;

 private:
  struct Spectrum {
    bool joint = true;  // components share an eigenbasis
    std::vector<Eigen::VectorXd> values;  // per component, in the joint basis
    std::vector<bool> range;              // eigen-direction outside the common null space
  };

  Eigen::MatrixXd gram_;
  Eigen::VectorXd rhs_;
  double yy_ = 0.0;
  double weight_sum_ = 0.0;
  std::size_t rows_ = 0;
  std::vector<PenaltyBlock> blocks_;
  std::vector<Spectrum> spectra_;
  std::size_t lambda_count_ = 0;
  std::size_t null_dim_ = 0;
};

struct LstsqResult {
  Eigen::VectorXd coef;
  double rss = 0.0;          // weighted residual sum of squares
  double penalty = 0.0;      // coef' S_lambda coef
  double log_det = 0.0;      // log det(M'WM + S_lambda)
  double ridge = 0.0;        // ridge added to the scaled system, 0 if none
  std::vector<double> edf;   // per block
  double edf_total = 0.0;
};

// Solves (M'WM + S_lambda) coef = M'Wc by a Jacobi-scaled Cholesky
// factorization. If that fails a ridge of 1e-10, 1e-8, then 1e-6 is added to
// the scaled matrix. `with_edf` also computes diag((M'WM + S)^-1 M'WM).
[[nodiscard]] LstsqResult penalized_lstsq(const PenalizedSystem& system, std::span<const double> lambda,
                                          bool with_edf = false);

// -2 restricted log-likelihood with the scale profiled out:
// (N - p0) log(RSS + pen) + log det(M'WM + S) - log det+(S), N = sum of weights.
[[nodiscard]] double reml_criterion(const PenalizedSystem& system, std::span<const double> log_lambda);

struct RemlOptions {
  double lower = -20.0;
  double upper = 20.0;
  int max_iterations = 200;
  double gradient_tolerance = 1e-7;  // relative to 1 + |criterion|
  double value_tolerance = 1e-8;
  double step = 1e-4;
  int grid_points = 5;
  double grid_half_width = 8.0;
  unsigned threads = 1;
};

struct RemlResult {
  std::vector<double> log_lambda;
  std::vector<double> lambda;
  double criterion = 0.0;
  LstsqResult fit;
  double scale = 0.0;  // (RSS + pen) / (N - p0)
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool at_bound = false;
  std::vector<double> history;  // criterion after each accepted step
};

[[nodiscard]] RemlResult optimize_reml(const PenalizedSystem& system, const RemlOptions& options = {});

}  // namespace symcov
