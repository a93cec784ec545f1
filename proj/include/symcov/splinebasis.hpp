#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "symcov/funcdata.hpp"

namespace symcov {

// Clamped B-spline basis with equidistant interior knots over a domain.
class MarginalBasis {
 public:
  MarginalBasis() = default;
  MarginalBasis(Domain domain, int degree, int dimension);
  explicit MarginalBasis(Domain domain, const MarginalSpec& spec)
      : MarginalBasis(domain, spec.degree, spec.dimension) {}

  [[nodiscard]] int degree() const noexcept { return degree_; }
  [[nodiscard]] int dimension() const noexcept { return dimension_; }
  [[nodiscard]] const Domain& domain() const noexcept { return domain_; }
  [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }

  // Writes the degree+1 basis values that may be nonzero at x into `values`
  // and returns the index of the first one. No allocation.
  int evaluate(double x, std::span<double> values) const;

  // Dense row of length dimension().
  [[nodiscard]] Eigen::RowVectorXd row(double x) const;
  // len(points) x dimension() design matrix.
  [[nodiscard]] Eigen::MatrixXd design(std::span<const double> points) const;

 private:
  Domain domain_;
  int degree_ = 3;
  int dimension_ = 0;
  double spacing_ = 1.0;
  std::vector<double> knots_;
};

enum class PenaltyForm { Marginal, KronSum, KronProd };

struct PenaltyMatrix {
  Eigen::MatrixXd matrix;
  int order = 0;
  PenaltyForm form = PenaltyForm::Marginal;
};

// S = D'D with D the m-th order difference operator on F coefficients.
[[nodiscard]] PenaltyMatrix difference_penalty(int dimension, int order);

// Row-wise Kronecker product: entry b*len(b_row)+b' is a_row[b]*b_row[b'].
[[nodiscard]] Eigen::VectorXd tensor_design_rows(const Eigen::VectorXd& a_row,
                                                 const Eigen::VectorXd& b_row);

[[nodiscard]] Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// (S_t x I) + (I x S_t') or S_t x S_t'. With `symmetric` the two marginals
// must have the same size.
[[nodiscard]] PenaltyMatrix bivariate_penalty(const PenaltyMatrix& s_t, const PenaltyMatrix& s_tp,
                                              PenaltyKind kind, bool symmetric = true);

}  // namespace symcov
