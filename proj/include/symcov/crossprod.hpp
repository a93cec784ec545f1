#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "symcov/funcdata.hpp"
#include "symcov/symsmooth.hpp"

namespace symcov {

enum class TermScope { Curve, Grouped, Shared };

// A random-effect term bound to a table: level and slope multiplier per curve.
struct ResolvedTerm {
  std::string name;
  TermScope scope = TermScope::Curve;
  std::vector<std::uint32_t> level_of_curve;
  std::vector<std::string> level_names;
  std::vector<double> multiplier;  // omega per curve, 1 for intercepts

  [[nodiscard]] std::size_t level_count() const noexcept { return level_names.size(); }
};

[[nodiscard]] std::vector<ResolvedTerm> resolve_terms(const ObservationTable& table, const ModelSpec& spec);

// Bit g set when curves i and i' share the level of term g.
[[nodiscard]] std::uint32_t shared_term_mask(const std::vector<ResolvedTerm>& terms, std::size_t i, std::size_t ip);

// One cross product between observation (i, j) and (i', j'), oriented so that
// (t, curve, j) of the first is not larger than that of the second. `row` and
// `row_p` are the table rows of the two observations.
struct PairIndex {
  std::uint32_t i = 0, j = 0, ip = 0, jp = 0;
  std::uint32_t row = 0, row_p = 0;
  std::uint32_t term_mask = 0;
  bool same_curve = false;
  bool same_point = false;

  [[nodiscard]] bool same_level(std::size_t term) const noexcept { return (term_mask >> term) & 1U; }
};

// Pairs with nonzero model expectation, generated curve by curve. Chunk i
// holds pairs whose first curve (in unordered form) is i; within a chunk the
// order is (i', j, j'). With both orientations every off-diagonal pair is
// followed by its mirror.
class PairEnumerator {
 public:
  PairEnumerator(const ObservationTable& table, const std::vector<ResolvedTerm>& terms, bool both_orientations);

  [[nodiscard]] std::size_t curve_count() const noexcept { return partners_.size(); }
  [[nodiscard]] std::size_t pair_count() const noexcept { return pair_count_; }
  [[nodiscard]] const std::vector<std::uint32_t>& partners(std::size_t i) const { return partners_[i]; }

  template <class Fn>
  void for_each_in_curve(std::size_t i, Fn&& fn) const;

  [[nodiscard]] std::vector<PairIndex> all() const;

 private:
  const ObservationTable* table_;
  const std::vector<ResolvedTerm>* terms_;
  bool both_;
  std::vector<std::vector<std::uint32_t>> partners_;
  std::size_t pair_count_ = 0;
};

[[nodiscard]] std::vector<PairIndex> enumerate_pairs(const ObservationTable& table, const ModelSpec& spec);

// Term smooths and the column layout of the additive cross-product design.
struct CovarianceModel {
  std::vector<ResolvedTerm> terms;
  std::vector<SymmetricSmooth> smooths;
  std::vector<std::size_t> offsets;
  std::size_t sigma_column = 0;
  std::size_t column_count = 0;
  Method method = Method::TriConstr;
  double diag_weight = 0.5;

  [[nodiscard]] bool both_orientations() const noexcept { return method == Method::Whole; }
  // Base row weight before any variance weighting.
  [[nodiscard]] double base_weight(const PairIndex& pair) const noexcept {
    return method == Method::TriConstrW && pair.same_point ? diag_weight : 1.0;
  }
};

[[nodiscard]] CovarianceModel build_covariance_model(const ObservationTable& table, const ModelSpec& spec);

// Materialized system; used for small problems, tests and matrix dumps.
struct CrossProductSystem {
  Eigen::VectorXd c;
  Eigen::VectorXd w;
  Eigen::SparseMatrix<double, Eigen::RowMajor> design;
  std::vector<PairIndex> pairs;
  std::vector<std::size_t> offsets;
  std::size_t sigma_column = 0;
};

[[nodiscard]] CrossProductSystem assemble_system(const ObservationTable& centered, const CovarianceModel& model);

// Weighted sufficient statistics of the cross-product regression.
struct NormalEquations {
  Eigen::MatrixXd gram;  // M'WM
  Eigen::VectorXd rhs;   // M'Wc
  double yy = 0.0;       // c'Wc
  double weight_sum = 0.0;
  std::size_t rows = 0;
};

[[nodiscard]] NormalEquations normal_equations(const CrossProductSystem& system);

using PairWeight = std::function<double(const PairIndex&)>;

// Streams every pair into M'WM without materializing the design. Work is
// split into blocks of curves that depend only on the data size, and block
// partial sums are added in a fixed order, so the result does not depend on
// `threads`. `extra` multiplies the base row weights when given.
[[nodiscard]] NormalEquations accumulate_normal_equations(const ObservationTable& centered,
                                                          const CovarianceModel& model, unsigned threads,
                                                          const PairWeight& extra = {});

// kernel(term, t, t') evaluates the covariance of term `term`.
using TermKernel = std::function<double(std::size_t, double, double)>;

// Cov(Y_a, Y_b) of two table rows under the additive model.
[[nodiscard]] double observation_covariance(const ObservationTable& table, const std::vector<ResolvedTerm>& terms,
                                            std::size_t row_a, std::size_t row_b, const TermKernel& kernel,
                                            double sigma2);

// Var(y_p * y_q) = Cov(p,p) Cov(q,q) + Cov(p,q)^2 for centered Gaussian data.
[[nodiscard]] double crossprod_variance(const ObservationTable& table, const std::vector<ResolvedTerm>& terms,
                                        const PairIndex& pair, const TermKernel& kernel, double sigma2);
[[nodiscard]] std::vector<double> crossprod_variance(const ObservationTable& table,
                                                     const std::vector<ResolvedTerm>& terms,
                                                     std::span<const PairIndex> pairs, const TermKernel& kernel,
                                                     double sigma2);

// ---------------------------------------------------------------------------

template <class Fn>
void PairEnumerator::for_each_in_curve(std::size_t i, Fn&& fn) const {
  const auto& table = *table_;
  const auto t = table.t();
  const std::size_t begin_i = table.curve_begin(i);
  const std::size_t size_i = table.curve_size(i);
  PairIndex pair;
  auto emit = [&](std::uint32_t ci, std::uint32_t j, std::uint32_t ri, std::uint32_t cp, std::uint32_t jp,
                  std::uint32_t rp, bool keep_order) {
    if (keep_order) {
      pair.i = ci, pair.j = j, pair.row = ri, pair.ip = cp, pair.jp = jp, pair.row_p = rp;
    } else {
      pair.i = cp, pair.j = jp, pair.row = rp, pair.ip = ci, pair.jp = j, pair.row_p = ri;
    }
    fn(static_cast<const PairIndex&>(pair));
    if (both_ && !pair.same_point) {
      std::swap(pair.i, pair.ip);
      std::swap(pair.j, pair.jp);
      std::swap(pair.row, pair.row_p);
      fn(static_cast<const PairIndex&>(pair));
    }
  };
  const auto ci = static_cast<std::uint32_t>(i);
  for (const std::uint32_t ip : partners_[i]) {
    pair.term_mask = shared_term_mask(*terms_, i, ip);
    pair.same_curve = ip == i;
    const std::size_t begin_p = table.curve_begin(ip);
    const std::size_t size_p = table.curve_size(ip);
    for (std::size_t j = 0; j < size_i; ++j) {
      const auto rj = static_cast<std::uint32_t>(begin_i + j);
      const double tj = t[rj];
      const std::size_t jp0 = ip == i ? j : 0;
      for (std::size_t jp = jp0; jp < size_p; ++jp) {
        const auto rjp = static_cast<std::uint32_t>(begin_p + jp);
        const double tjp = t[rjp];
        pair.same_point = pair.same_curve && jp == j;
        // (i, j) precedes (i', j') here, so ties in t keep this order
        emit(ci, static_cast<std::uint32_t>(j), rj, ip, static_cast<std::uint32_t>(jp), rjp, tj <= tjp);
      }
    }
  }
}

}  // namespace symcov
