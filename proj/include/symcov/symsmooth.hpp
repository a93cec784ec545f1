#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "symcov/splinebasis.hpp"

namespace symcov {

// Partition ordering of an F_t x F_t' coefficient matrix: entries with b<b'
// (column-major), then the diagonal, then entries with b>b' (row-major). For
// square layouts a mirror pair (b,b'), (b',b) has the same index within the
// first and last partitions.
class CoefficientLayout {
 public:
  CoefficientLayout() = default;
  CoefficientLayout(int rows, int cols);

  [[nodiscard]] int rows() const noexcept { return rows_; }
  [[nodiscard]] int cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t upper_count() const noexcept { return upper_; }
  [[nodiscard]] std::size_t diagonal_count() const noexcept { return diagonal_; }
  [[nodiscard]] std::size_t lower_count() const noexcept { return lower_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

  // Partition position of matrix entry (b, b').
  [[nodiscard]] std::size_t position(int b, int bp) const {
    return position_[static_cast<std::size_t>(b) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(bp)];
  }
  [[nodiscard]] std::pair<int, int> entry(std::size_t position) const { return entries_[position]; }

  // Reorders a row-major (tensor order) vector into partition order and back.
  [[nodiscard]] Eigen::VectorXd to_partition(const Eigen::VectorXd& tensor) const;
  [[nodiscard]] Eigen::VectorXd to_tensor(const Eigen::VectorXd& partition) const;
  // rows x cols coefficient matrix from a partition-ordered vector.
  [[nodiscard]] Eigen::MatrixXd to_matrix(const Eigen::VectorXd& partition) const;
  // P with P * tensor = partition.
  [[nodiscard]] Eigen::MatrixXd permutation() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::size_t upper_ = 0, diagonal_ = 0, lower_ = 0;
  std::vector<std::size_t> position_;
  std::vector<std::pair<int, int>> entries_;
};

enum class ConstraintKind { Auto, Block };

// 0/1 map from reduced to full (partition-ordered) coefficients.
struct ConstraintMatrix {
  Eigen::MatrixXd w;
  std::vector<int> column_of_row;
  ConstraintKind kind = ConstraintKind::Auto;

  [[nodiscard]] Eigen::Index rows() const noexcept { return w.rows(); }
  [[nodiscard]] Eigen::Index cols() const noexcept { return w.cols(); }
};

[[nodiscard]] ConstraintMatrix build_auto_constraint(int dimension);

// `layouts` holds rho*rho layouts for blocks (s, s') in row-major order.
// Block rows follow that order; block columns cover s <= s' in row-major order.
[[nodiscard]] ConstraintMatrix build_block_constraint(int rho, const std::vector<CoefficientLayout>& layouts);

[[nodiscard]] Eigen::MatrixXd reduce_design(const Eigen::MatrixXd& m, const ConstraintMatrix& w);
[[nodiscard]] Eigen::MatrixXd reduce_penalty(const Eigen::MatrixXd& s, const ConstraintMatrix& w);
[[nodiscard]] Eigen::VectorXd expand_coefficients(const Eigen::VectorXd& reduced, const ConstraintMatrix& w);

// Surface B(t_d)' Theta B(t_e) on grid x grid, computed for d <= e and mirrored.
[[nodiscard]] Eigen::MatrixXd evaluate_surface(const Eigen::VectorXd& full, const CoefficientLayout& layout,
                                               const MarginalBasis& basis_t, const MarginalBasis& basis_tp,
                                               std::span<const double> grid);

enum class SmoothMode { Constrained, Full };

// Bivariate smooth for one auto-covariance: basis, coefficient map, penalties.
class SymmetricSmooth {
 public:
  SymmetricSmooth() = default;
  // `split_penalty` gives the Kronecker sum two components (one per direction).
  SymmetricSmooth(MarginalBasis basis, int penalty_order, PenaltyKind kind, SmoothMode mode, bool split_penalty);

  [[nodiscard]] const MarginalBasis& basis() const noexcept { return basis_; }
  [[nodiscard]] const CoefficientLayout& layout() const noexcept { return layout_; }
  [[nodiscard]] SmoothMode mode() const noexcept { return mode_; }
  [[nodiscard]] std::size_t coefficient_count() const noexcept { return count_; }
  [[nodiscard]] int dimension() const noexcept { return basis_.dimension(); }

  // Column of the tensor entry (b, b') among this smooth's coefficients.
  [[nodiscard]] int column_for(int b, int bp) const noexcept {
    return column_map_[static_cast<std::size_t>(b * basis_.dimension() + bp)];
  }
  [[nodiscard]] const std::vector<Eigen::MatrixXd>& penalty_components() const noexcept { return penalties_; }
  [[nodiscard]] const ConstraintMatrix& constraint() const noexcept { return constraint_; }

  // Full partition-ordered coefficients.
  [[nodiscard]] Eigen::VectorXd expand(const Eigen::VectorXd& coef) const;
  // F x F coefficient matrix Theta.
  [[nodiscard]] Eigen::MatrixXd coefficient_matrix(const Eigen::VectorXd& coef) const;
  // f(min(t,t'), max(t,t')) with f(s,u) = B(s)' Theta B(u).
  [[nodiscard]] double evaluate(const Eigen::MatrixXd& theta, double t, double tp) const;
  [[nodiscard]] Eigen::MatrixXd surface(const Eigen::VectorXd& coef, std::span<const double> grid) const;

 private:
  MarginalBasis basis_;
  CoefficientLayout layout_;
  SmoothMode mode_ = SmoothMode::Constrained;
  std::size_t count_ = 0;
  std::vector<int> column_map_;
  std::vector<Eigen::MatrixXd> penalties_;
  ConstraintMatrix constraint_;
};

}  // namespace symcov
