#include "symcov/symsmooth.hpp"

#include <algorithm>

#include "symcov/errors.hpp"

namespace symcov {

CoefficientLayout::CoefficientLayout(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) throw InputError(InputErrorKind::Dimension, "layout dimensions must be positive");
  position_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0);
  entries_.reserve(position_.size());
  auto push = [&](int b, int bp) {
    position_[static_cast<std::size_t>(b) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(bp)] =
        entries_.size();
    entries_.emplace_back(b, bp);
  };
  for (int bp = 0; bp < cols; ++bp) {
    for (int b = 0; b < std::min(bp, rows); ++b) push(b, bp);
  }
  upper_ = entries_.size();
  for (int b = 0; b < std::min(rows, cols); ++b) push(b, b);
  diagonal_ = entries_.size() - upper_;
  for (int b = 0; b < rows; ++b) {
    for (int bp = 0; bp < std::min(b, cols); ++bp) push(b, bp);
  }
  lower_ = entries_.size() - upper_ - diagonal_;
}

Eigen::VectorXd CoefficientLayout::to_partition(const Eigen::VectorXd& tensor) const {
  if (static_cast<std::size_t>(tensor.size()) != size()) {
    throw InputError(InputErrorKind::Dimension, "coefficient vector does not match layout");
  }
  Eigen::VectorXd out(tensor.size());
  for (std::size_t k = 0; k < size(); ++k) {
    const auto [b, bp] = entries_[k];
    out[static_cast<Eigen::Index>(k)] = tensor[b * cols_ + bp];
  }
  return out;
}

Eigen::VectorXd CoefficientLayout::to_tensor(const Eigen::VectorXd& partition) const {
  if (static_cast<std::size_t>(partition.size()) != size()) {
    throw InputError(InputErrorKind::Dimension, "coefficient vector does not match layout");
  }
  Eigen::VectorXd out(partition.size());
  for (std::size_t k = 0; k < size(); ++k) {
    const auto [b, bp] = entries_[k];
    out[b * cols_ + bp] = partition[static_cast<Eigen::Index>(k)];
  }
  return out;
}

Eigen::MatrixXd CoefficientLayout::to_matrix(const Eigen::VectorXd& partition) const {
  if (static_cast<std::size_t>(partition.size()) != size()) {
    throw InputError(InputErrorKind::Dimension, "coefficient vector does not match layout");
  }
  Eigen::MatrixXd out(rows_, cols_);
  for (std::size_t k = 0; k < size(); ++k) {
    const auto [b, bp] = entries_[k];
    out(b, bp) = partition[static_cast<Eigen::Index>(k)];
  }
  return out;
}

Eigen::MatrixXd CoefficientLayout::permutation() const {
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < size(); ++k) {
    const auto [b, bp] = entries_[k];
    p(static_cast<Eigen::Index>(k), b * cols_ + bp) = 1.0;
  }
  return p;
}

namespace {

ConstraintMatrix from_column_map(std::vector<int> column_of_row, Eigen::Index cols, ConstraintKind kind) {
  ConstraintMatrix c;
  c.kind = kind;
  c.w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(column_of_row.size()), cols);
  for (std::size_t r = 0; r < column_of_row.size(); ++r) c.w(static_cast<Eigen::Index>(r), column_of_row[r]) = 1.0;
  c.column_of_row = std::move(column_of_row);
  return c;
}

// Column offsets (within the auto block) of each partition position.
void append_auto_rows(const CoefficientLayout& layout, int offset, std::vector<int>& rows) {
  const auto upper = static_cast<int>(layout.upper_count());
  for (std::size_t k = 0; k < layout.upper_count(); ++k) rows.push_back(offset + static_cast<int>(k));
  for (std::size_t k = 0; k < layout.diagonal_count(); ++k) rows.push_back(offset + upper + static_cast<int>(k));
  for (std::size_t k = 0; k < layout.lower_count(); ++k) rows.push_back(offset + static_cast<int>(k));
}

}  // namespace

ConstraintMatrix build_auto_constraint(int dimension) {
  const CoefficientLayout layout(dimension, dimension);
  std::vector<int> rows;
  append_auto_rows(layout, 0, rows);
  return from_column_map(std::move(rows), static_cast<Eigen::Index>(layout.upper_count() + layout.diagonal_count()),
                         ConstraintKind::Auto);
}

ConstraintMatrix build_block_constraint(int rho, const std::vector<CoefficientLayout>& layouts) {
  if (rho < 1 || layouts.size() != static_cast<std::size_t>(rho * rho)) {
    throw InputError(InputErrorKind::Dimension, "block constraint needs rho*rho layouts");
  }
  auto at = [&](int s, int sp) -> const CoefficientLayout& { return layouts[static_cast<std::size_t>(s * rho + sp)]; };
  for (int s = 0; s < rho; ++s) {
    if (at(s, s).rows() != at(s, s).cols()) {
      throw InputError(InputErrorKind::Dimension, "auto-covariance blocks must be square");
    }
    for (int sp = s + 1; sp < rho; ++sp) {
      if (at(s, sp).rows() != at(sp, s).cols() || at(s, sp).cols() != at(sp, s).rows()) {
        throw InputError(InputErrorKind::Dimension, "inconsistent cross-covariance block layouts");
      }
    }
  }
  // column groups over the upper triangle s <= s'
  std::vector<int> group_offset(static_cast<std::size_t>(rho * rho), -1);
  int cols = 0;
  for (int s = 0; s < rho; ++s) {
    for (int sp = s; sp < rho; ++sp) {
      group_offset[static_cast<std::size_t>(s * rho + sp)] = cols;
      const auto& l = at(s, sp);
      cols += static_cast<int>(s == sp ? l.upper_count() + l.diagonal_count() : l.size());
    }
  }
  std::vector<int> rows;
  for (int s = 0; s < rho; ++s) {
    for (int sp = 0; sp < rho; ++sp) {
      const auto& l = at(s, sp);
      if (s == sp) {
        append_auto_rows(l, group_offset[static_cast<std::size_t>(s * rho + s)], rows);
      } else if (s < sp) {
        const int off = group_offset[static_cast<std::size_t>(s * rho + sp)];
        for (std::size_t k = 0; k < l.size(); ++k) rows.push_back(off + static_cast<int>(k));
      } else {
        // anti-diagonal: (U, D, L) of this block tie to (L, D, U) of block (s', s)
        const auto& g = at(sp, s);
        const int off = group_offset[static_cast<std::size_t>(sp * rho + s)];
        for (std::size_t k = 0; k < l.size(); ++k) {
          const auto [b, bp] = l.entry(k);
          rows.push_back(off + static_cast<int>(g.position(bp, b)));
        }
      }
    }
  }
  return from_column_map(std::move(rows), cols, rho == 1 ? ConstraintKind::Auto : ConstraintKind::Block);
}

Eigen::MatrixXd reduce_design(const Eigen::MatrixXd& m, const ConstraintMatrix& w) {
  if (m.cols() != w.rows()) throw InputError(InputErrorKind::Dimension, "design columns do not match W rows");
  return m * w.w;
}

Eigen::MatrixXd reduce_penalty(const Eigen::MatrixXd& s, const ConstraintMatrix& w) {
  if (s.rows() != w.rows() || s.cols() != w.rows()) {
    throw InputError(InputErrorKind::Dimension, "penalty size does not match W rows");
  }
  return w.w.transpose() * s * w.w;
}

Eigen::VectorXd expand_coefficients(const Eigen::VectorXd& reduced, const ConstraintMatrix& w) {
  if (reduced.size() != w.cols()) {
    throw InputError(InputErrorKind::Dimension, "reduced coefficients do not match W columns");
  }
  return w.w * reduced;
}

Eigen::MatrixXd evaluate_surface(const Eigen::VectorXd& full, const CoefficientLayout& layout,
                                 const MarginalBasis& basis_t, const MarginalBasis& basis_tp,
                                 std::span<const double> grid) {
  if (layout.rows() != basis_t.dimension() || layout.cols() != basis_tp.dimension()) {
    throw InputError(InputErrorKind::Dimension, "layout does not match the marginal bases");
  }
  const Eigen::MatrixXd theta = layout.to_matrix(full);
  const Eigen::MatrixXd bt = basis_t.design(grid);
  const Eigen::MatrixXd btp = basis_tp.design(grid);
  const Eigen::MatrixXd left = bt * theta;
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index d = 0; d < n; ++d) {
    for (Eigen::Index e = d; e < n; ++e) {
      out(d, e) = grid[static_cast<std::size_t>(d)] <= grid[static_cast<std::size_t>(e)]
                      ? left.row(d).dot(btp.row(e))
                      : left.row(e).dot(btp.row(d));
      out(e, d) = out(d, e);
    }
  }
  return out;
}

SymmetricSmooth::SymmetricSmooth(MarginalBasis basis, int penalty_order, PenaltyKind kind, SmoothMode mode,
                                 bool split_penalty)
    : basis_(std::move(basis)), mode_(mode) {
  const int f = basis_.dimension();
  layout_ = CoefficientLayout(f, f);
  column_map_.resize(static_cast<std::size_t>(f * f));
  const Eigen::MatrixXd perm = layout_.permutation();
  if (mode == SmoothMode::Constrained) {
    constraint_ = build_auto_constraint(f);
    count_ = static_cast<std::size_t>(constraint_.cols());
  } else {
    std::vector<int> identity(static_cast<std::size_t>(f * f));
    for (std::size_t k = 0; k < identity.size(); ++k) identity[k] = static_cast<int>(k);
    constraint_ = from_column_map(std::move(identity), f * f, ConstraintKind::Auto);
    count_ = static_cast<std::size_t>(f * f);
  }
  for (int b = 0; b < f; ++b) {
    for (int bp = 0; bp < f; ++bp) {
      column_map_[static_cast<std::size_t>(b * f + bp)] = constraint_.column_of_row[layout_.position(b, bp)];
    }
  }

  const PenaltyMatrix marginal = difference_penalty(f, penalty_order);
  std::vector<Eigen::MatrixXd> tensor_parts;
  if (kind == PenaltyKind::KronSum && split_penalty) {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(f, f);
    tensor_parts.push_back(kronecker(marginal.matrix, eye));
    tensor_parts.push_back(kronecker(eye, marginal.matrix));
  } else {
    tensor_parts.push_back(bivariate_penalty(marginal, marginal, kind).matrix);
  }
  for (const auto& part : tensor_parts) {
    const Eigen::MatrixXd partition = perm * part * perm.transpose();
    penalties_.push_back(mode == SmoothMode::Constrained ? reduce_penalty(partition, constraint_) : partition);
  }
}

Eigen::VectorXd SymmetricSmooth::expand(const Eigen::VectorXd& coef) const {
  return expand_coefficients(coef, constraint_);
}

Eigen::MatrixXd SymmetricSmooth::coefficient_matrix(const Eigen::VectorXd& coef) const {
  return layout_.to_matrix(expand(coef));
}

double SymmetricSmooth::evaluate(const Eigen::MatrixXd& theta, double t, double tp) const {
  const double lo = std::min(t, tp);
  const double hi = std::max(t, tp);
  const int deg = basis_.degree();
  double va[32], vb[32];
  const int fa = basis_.evaluate(lo, std::span<double>(va, deg + 1));
  const int fb = basis_.evaluate(hi, std::span<double>(vb, deg + 1));
  double sum = 0.0;
  for (int a = 0; a <= deg; ++a) {
    double inner = 0.0;
    for (int b = 0; b <= deg; ++b) inner += theta(fa + a, fb + b) * vb[b];
    sum += va[a] * inner;
  }
  return sum;
}

Eigen::MatrixXd SymmetricSmooth::surface(const Eigen::VectorXd& coef, std::span<const double> grid) const {
  return evaluate_surface(expand(coef), layout_, basis_, basis_, grid);
}

}  // namespace symcov
