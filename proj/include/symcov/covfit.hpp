#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symcov/crossprod.hpp"
#include "symcov/remlfit.hpp"

namespace symcov {

struct TermFit {
  std::string name;
  Eigen::VectorXd coef;   // fitted columns of this term
  Eigen::MatrixXd theta;  // F x F coefficient matrix
  std::vector<double> lambda;
  double edf = 0.0;
};

// Result of smoothing the cross products of one data set.
struct CovarianceFit {
  CovarianceModel model;
  std::vector<TermFit> terms;
  double sigma2_raw = 0.0;  // coefficient of the same-point indicator, may be negative
  double phi = 0.0;         // working scale of the cross-product regression
  double reml = 0.0;
  std::size_t n_pairs = 0;
  int iterations = 0;
  bool converged = false;
  bool at_bound = false;
  bool weighted_refit = false;
  double assembly_ms = 0.0;
  double optimize_ms = 0.0;
  double total_ms = 0.0;

  [[nodiscard]] std::size_t term_index(const std::string& name) const;
  [[nodiscard]] double evaluate(std::size_t term, double t, double tp) const {
    return model.smooths[term].evaluate(terms[term].theta, t, tp);
  }
  [[nodiscard]] Eigen::MatrixXd surface(std::size_t term, std::span<const double> grid) const {
    return model.smooths[term].surface(terms[term].coef, grid);
  }
  [[nodiscard]] TermKernel kernel() const;
};

// One penalty block per term plus the unpenalized error-variance column.
[[nodiscard]] PenalizedSystem make_penalized_system(const NormalEquations& ne, const CovarianceModel& model);

// Builds the cross-product system for `centered` and selects smoothing
// parameters by REML. With spec.weighted_refit the fit is repeated once with
// inverse cross-product variances as row weights.
[[nodiscard]] CovarianceFit fit_covariance(const ObservationTable& centered, const ModelSpec& spec,
                                           unsigned threads = 1, const RemlOptions& options = {});

}  // namespace symcov
