#include "symcov/splinebasis.hpp"

#include <algorithm>
#include <cmath>

#include "symcov/errors.hpp"

namespace symcov {

MarginalBasis::MarginalBasis(Domain domain, int degree, int dimension)
    : domain_(domain), degree_(degree), dimension_(dimension) {
  if (degree < 0 || degree > 30) {
    throw InputError(InputErrorKind::InvalidArgument, "spline degree must be in [0, 30]");
  }
  if (dimension <= degree) {
    throw InputError(InputErrorKind::InvalidArgument, "spline dimension must exceed the degree");
  }
  if (!(domain.upper > domain.lower)) {
    throw InputError(InputErrorKind::Domain, "spline domain must have upper > lower");
  }
  const int interior = dimension - degree - 1;
  spacing_ = domain.length() / (interior + 1);
  knots_.reserve(static_cast<std::size_t>(dimension + degree + 1));
  for (int k = 0; k <= degree; ++k) knots_.push_back(domain.lower);
  for (int k = 1; k <= interior; ++k) knots_.push_back(domain.lower + k * spacing_);
  for (int k = 0; k <= degree; ++k) knots_.push_back(domain.upper);
}

int MarginalBasis::evaluate(double x, std::span<double> values) const {
  if (!(x >= domain_.lower && x <= domain_.upper)) {
    throw InputError(InputErrorKind::Domain, "spline evaluated outside its domain at x=" + format_double(x));
  }
  const int d = degree_;
  // knot span mu with knots[mu] <= x < knots[mu+1]
  int mu = d + static_cast<int>(std::floor((x - domain_.lower) / spacing_));
  mu = std::clamp(mu, d, dimension_ - 1);
  while (mu > d && x < knots_[mu]) --mu;
  while (mu < dimension_ - 1 && x >= knots_[mu + 1]) ++mu;

  double left[32];
  double right[32];
  values[0] = 1.0;
  for (int j = 1; j <= d; ++j) {
    left[j] = x - knots_[mu + 1 - j];
    right[j] = knots_[mu + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = values[r] / (right[r + 1] + left[j - r]);
      values[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    values[j] = saved;
  }
  return mu - d;
}

Eigen::RowVectorXd MarginalBasis::row(double x) const {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(dimension_);
  double vals[32];
  const int first = evaluate(x, std::span<double>(vals, degree_ + 1));
  for (int k = 0; k <= degree_; ++k) out[first + k] = vals[k];
  return out;
}

Eigen::MatrixXd MarginalBasis::design(std::span<const double> points) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), dimension_);
  double vals[32];
  for (std::size_t r = 0; r < points.size(); ++r) {
    const int first = evaluate(points[r], std::span<double>(vals, degree_ + 1));
    for (int k = 0; k <= degree_; ++k) out(static_cast<Eigen::Index>(r), first + k) = vals[k];
  }
  return out;
}

PenaltyMatrix difference_penalty(int dimension, int order) {
  if (order < 1 || order >= dimension) {
    throw InputError(InputErrorKind::InvalidArgument, "difference penalty order must be in [1, F)");
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(dimension, dimension);
  for (int k = 0; k < order; ++k) {
    const Eigen::Index rows = d.rows() - 1;
    d = (d.bottomRows(rows) - d.topRows(rows)).eval();
  }
  return {d.transpose() * d, order, PenaltyForm::Marginal};
}

Eigen::VectorXd tensor_design_rows(const Eigen::VectorXd& a_row, const Eigen::VectorXd& b_row) {
  Eigen::VectorXd out(a_row.size() * b_row.size());
  for (Eigen::Index b = 0; b < a_row.size(); ++b) {
    out.segment(b * b_row.size(), b_row.size()) = a_row[b] * b_row;
  }
  return out;
}

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

PenaltyMatrix bivariate_penalty(const PenaltyMatrix& s_t, const PenaltyMatrix& s_tp, PenaltyKind kind,
                                bool symmetric) {
  if (s_t.matrix.rows() != s_t.matrix.cols() || s_tp.matrix.rows() != s_tp.matrix.cols()) {
    throw InputError(InputErrorKind::Dimension, "marginal penalties must be square");
  }
  if (symmetric && s_t.matrix.rows() != s_tp.matrix.rows()) {
    throw InputError(InputErrorKind::Dimension, "symmetric smooth needs equal marginal dimensions");
  }
  const Eigen::Index ft = s_t.matrix.rows();
  const Eigen::Index ftp = s_tp.matrix.rows();
  if (kind == PenaltyKind::KronProd) {
    return {kronecker(s_t.matrix, s_tp.matrix), s_t.order, PenaltyForm::KronProd};
  }
  Eigen::MatrixXd sum = kronecker(s_t.matrix, Eigen::MatrixXd::Identity(ftp, ftp)) +
                        kronecker(Eigen::MatrixXd::Identity(ft, ft), s_tp.matrix);
  return {std::move(sum), s_t.order, PenaltyForm::KronSum};
}

}  // namespace symcov
