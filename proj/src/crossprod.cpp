#include "symcov/crossprod.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "symcov/errors.hpp"
#include "symcov/parallel.hpp"

namespace symcov {

std::vector<ResolvedTerm> resolve_terms(const ObservationTable& table, const ModelSpec& spec) {
  if (spec.terms.size() > 32) throw InputError(InputErrorKind::InvalidArgument, "at most 32 terms are supported");
  std::vector<ResolvedTerm> out;
  const std::size_t n = table.curve_count();
  for (const auto& term : spec.terms) {
    if (term.rho() != 1) {
      throw InputError(InputErrorKind::InvalidArgument,
                       "term '" + term.name + "': only single-component terms can be fitted");
    }
    ResolvedTerm r;
    r.name = term.name;
    if (term.grouping == kCurveGrouping) {
      r.scope = TermScope::Curve;
      r.level_names = table.curve_ids();
      r.level_of_curve.resize(n);
      for (std::size_t i = 0; i < n; ++i) r.level_of_curve[i] = static_cast<std::uint32_t>(i);
    } else if (term.grouping == kNoGrouping) {
      r.scope = TermScope::Shared;
      r.level_names = {"all"};
      r.level_of_curve.assign(n, 0);
    } else {
      const auto g = table.grouping_index(term.grouping);
      if (!g) {
        throw InputError(InputErrorKind::Schema,
                         "term '" + term.name + "' references unknown grouping '" + term.grouping + "'");
      }
      r.scope = TermScope::Grouped;
      r.level_names = table.level_names(*g);
      const auto levels = table.levels(*g);
      r.level_of_curve.assign(levels.begin(), levels.end());
    }
    const auto& comp = term.components.front();
    if (comp.kind == ComponentKind::Slope) {
      const auto s = table.slope_index(comp.covariate);
      if (!s) {
        throw InputError(InputErrorKind::Schema,
                         "term '" + term.name + "' references unknown slope covariate '" + comp.covariate + "'");
      }
      const auto values = table.slope(*s);
      r.multiplier.assign(values.begin(), values.end());
    } else {
      r.multiplier.assign(n, 1.0);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::uint32_t shared_term_mask(const std::vector<ResolvedTerm>& terms, std::size_t i, std::size_t ip) {
  std::uint32_t mask = 0;
  for (std::size_t g = 0; g < terms.size(); ++g) {
    const bool same = terms[g].scope == TermScope::Shared ||
                      terms[g].level_of_curve[i] == terms[g].level_of_curve[ip];
    if (same) mask |= 1U << g;
  }
  return mask;
}

PairEnumerator::PairEnumerator(const ObservationTable& table, const std::vector<ResolvedTerm>& terms,
                               bool both_orientations)
    : table_(&table), terms_(&terms), both_(both_orientations) {
  const std::size_t n = table.curve_count();
  partners_.resize(n);
  const bool shared = std::any_of(terms.begin(), terms.end(),
                                  [](const auto& t) { return t.scope == TermScope::Shared; });
  std::vector<std::vector<std::vector<std::uint32_t>>> members;
  for (const auto& term : terms) {
    if (term.scope != TermScope::Grouped) continue;
    std::vector<std::vector<std::uint32_t>> by_level(term.level_count());
    for (std::size_t i = 0; i < n; ++i) by_level[term.level_of_curve[i]].push_back(static_cast<std::uint32_t>(i));
    members.push_back(std::move(by_level));
  }
  std::vector<std::size_t> grouped_term;
  for (std::size_t g = 0; g < terms.size(); ++g) {
    if (terms[g].scope == TermScope::Grouped) grouped_term.push_back(g);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& list = partners_[i];
    if (shared) {
      for (std::size_t ip = i; ip < n; ++ip) list.push_back(static_cast<std::uint32_t>(ip));
    } else {
      list.push_back(static_cast<std::uint32_t>(i));
      for (std::size_t k = 0; k < members.size(); ++k) {
        const auto& same = members[k][terms[grouped_term[k]].level_of_curve[i]];
        for (const auto ip : same) {
          if (ip > i) list.push_back(ip);
        }
      }
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    const std::size_t di = table.curve_size(i);
    for (const auto ip : list) {
      const std::size_t pairs = ip == i ? di * (di + 1) / 2 : di * table.curve_size(ip);
      const std::size_t diagonal = ip == i ? di : 0;
      pair_count_ += both_ ? 2 * pairs - diagonal : pairs;
    }
  }
}

std::vector<PairIndex> PairEnumerator::all() const {
  std::vector<PairIndex> out;
  out.reserve(pair_count_);
  for (std::size_t i = 0; i < curve_count(); ++i) {
    for_each_in_curve(i, [&](const PairIndex& p) { out.push_back(p); });
  }
  return out;
}

std::vector<PairIndex> enumerate_pairs(const ObservationTable& table, const ModelSpec& spec) {
  const auto terms = resolve_terms(table, spec);
  return PairEnumerator(table, terms, spec.method == Method::Whole).all();
}

CovarianceModel build_covariance_model(const ObservationTable& table, const ModelSpec& spec) {
  spec.validate();
  CovarianceModel model;
  model.terms = resolve_terms(table, spec);
  model.method = spec.method;
  model.diag_weight = spec.diag_weight;
  const Domain domain = spec.domain.value_or(table.domain());
  SmoothMode mode = SmoothMode::Constrained;
  bool split = false;
  switch (spec.method) {
    case Method::TriConstr:
    case Method::TriConstrW:
      break;
    case Method::Tri:
      mode = SmoothMode::Full;
      split = true;
      break;
    case Method::Whole:
      mode = spec.whole_constrained ? SmoothMode::Constrained : SmoothMode::Full;
      split = true;
      break;
  }
  std::size_t offset = 0;
  for (const auto& term : spec.terms) {
    MarginalBasis basis(domain, term.marginal_basis);
    model.smooths.emplace_back(std::move(basis), term.marginal_basis.penalty_order, term.penalty_kind, mode, split);
    model.offsets.push_back(offset);
    offset += model.smooths.back().coefficient_count();
  }
  model.sigma_column = offset;
  model.column_count = offset + 1;
  return model;
}

namespace {

// Builds merged sparse design rows for pairs; basis values are cached per row.
class RowBuilder {
 public:
  RowBuilder(const ObservationTable& table, const CovarianceModel& model) : model_(model) {
    const auto t = table.t();
    for (const auto& smooth : model.smooths) {
      const int width = smooth.basis().degree() + 1;
      Cache cache;
      cache.width = width;
      cache.first.resize(t.size());
      cache.values.resize(t.size() * static_cast<std::size_t>(width));
      for (std::size_t r = 0; r < t.size(); ++r) {
        cache.first[r] = smooth.basis().evaluate(
            t[r], std::span<double>(cache.values.data() + r * static_cast<std::size_t>(width),
                                    static_cast<std::size_t>(width)));
      }
      caches_.push_back(std::move(cache));
    }
  }

  [[nodiscard]] std::size_t max_row_nonzeros() const {
    std::size_t n = 1;
    for (const auto& c : caches_) n += static_cast<std::size_t>(c.width * c.width);
    return n;
  }

  struct Scratch {
    std::vector<double> dense;
    std::vector<std::uint32_t> stamp;
    std::uint32_t current = 0;
    std::vector<int> cols;
    std::vector<double> vals;
  };

  [[nodiscard]] Scratch make_scratch() const {
    Scratch s;
    s.dense.assign(model_.column_count, 0.0);
    s.stamp.assign(model_.column_count, 0);
    s.cols.reserve(max_row_nonzeros());
    s.vals.reserve(max_row_nonzeros());
    return s;
  }

  // Leaves the merged row, sorted by column, in s.cols / s.vals.
  void build(const PairIndex& pair, Scratch& s) const {
    ++s.current;
    s.cols.clear();
    auto add = [&](int col, double v) {
      if (s.stamp[static_cast<std::size_t>(col)] != s.current) {
        s.stamp[static_cast<std::size_t>(col)] = s.current;
        s.dense[static_cast<std::size_t>(col)] = v;
        s.cols.push_back(col);
      } else {
        s.dense[static_cast<std::size_t>(col)] += v;
      }
    };
    for (std::size_t g = 0; g < caches_.size(); ++g) {
      if (!pair.same_level(g)) continue;
      const auto& term = model_.terms[g];
      const double mult = term.multiplier[pair.i] * term.multiplier[pair.ip];
      if (mult == 0.0) continue;
      const auto& cache = caches_[g];
      const auto& smooth = model_.smooths[g];
      const int off = static_cast<int>(model_.offsets[g]);
      const int fa = cache.first[pair.row];
      const int fb = cache.first[pair.row_p];
      const double* va = cache.values.data() + static_cast<std::size_t>(pair.row) * cache.width;
      const double* vb = cache.values.data() + static_cast<std::size_t>(pair.row_p) * cache.width;
      for (int a = 0; a < cache.width; ++a) {
        const double wa = mult * va[a];
        for (int b = 0; b < cache.width; ++b) add(off + smooth.column_for(fa + a, fb + b), wa * vb[b]);
      }
    }
    if (pair.same_point) add(static_cast<int>(model_.sigma_column), 1.0);
    std::sort(s.cols.begin(), s.cols.end());
    s.vals.resize(s.cols.size());
    for (std::size_t k = 0; k < s.cols.size(); ++k) s.vals[k] = s.dense[static_cast<std::size_t>(s.cols[k])];
  }

 private:
  struct Cache {
    int width = 0;
    std::vector<int> first;
    std::vector<double> values;
  };
  const CovarianceModel& model_;
  std::vector<Cache> caches_;
};

}  // namespace

CrossProductSystem assemble_system(const ObservationTable& centered, const CovarianceModel& model) {
  CrossProductSystem sys;
  const PairEnumerator pairs(centered, model.terms, model.both_orientations());
  sys.pairs = pairs.all();
  sys.offsets = model.offsets;
  sys.sigma_column = model.sigma_column;
  const auto rows = static_cast<Eigen::Index>(sys.pairs.size());
  sys.c.resize(rows);
  sys.w.resize(rows);
  const RowBuilder builder(centered, model);
  auto scratch = builder.make_scratch();
  std::vector<Eigen::Triplet<double>> triplets;
  const auto y = centered.y();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& p = sys.pairs[static_cast<std::size_t>(r)];
    sys.c[r] = y[p.row] * y[p.row_p];
    sys.w[r] = model.base_weight(p);
    builder.build(p, scratch);
    for (std::size_t k = 0; k < scratch.cols.size(); ++k) triplets.emplace_back(r, scratch.cols[k], scratch.vals[k]);
  }
  sys.design.resize(rows, static_cast<Eigen::Index>(model.column_count));
  sys.design.setFromTriplets(triplets.begin(), triplets.end());
  return sys;
}

NormalEquations normal_equations(const CrossProductSystem& system) {
  NormalEquations ne;
  const Eigen::SparseMatrix<double, Eigen::RowMajor> weighted = system.w.asDiagonal() * system.design;
  ne.gram = Eigen::MatrixXd(system.design.transpose() * weighted);
  ne.rhs = weighted.transpose() * system.c;
  ne.yy = system.c.dot(system.w.cwiseProduct(system.c));
  ne.weight_sum = system.w.sum();
  ne.rows = static_cast<std::size_t>(system.c.size());
  return ne;
}

NormalEquations accumulate_normal_equations(const ObservationTable& centered, const CovarianceModel& model,
                                            unsigned threads, const PairWeight& extra) {
  const PairEnumerator pairs(centered, model.terms, model.both_orientations());
  const RowBuilder builder(centered, model);
  const std::size_t n = centered.curve_count();
  const std::size_t p = model.column_count;

  std::size_t blocks = std::min<std::size_t>(n, 64);
  while (blocks > 1 && blocks * p * p * sizeof(double) > (std::size_t{256} << 20)) blocks /= 2;

  struct Partial {
    std::vector<double> gram;
    std::vector<double> rhs;
    double yy = 0.0, weight_sum = 0.0;
    std::size_t rows = 0;
  };
  std::vector<Partial> partials(blocks);
  const auto y = centered.y();

  parallel_for(blocks, threads, [&](std::size_t blk) {
    Partial& part = partials[blk];
    part.gram.assign(p * p, 0.0);
    part.rhs.assign(p, 0.0);
    auto scratch = builder.make_scratch();
    const std::size_t first = blk * n / blocks;
    const std::size_t last = (blk + 1) * n / blocks;
    double* g = part.gram.data();
    for (std::size_t i = first; i < last; ++i) {
      pairs.for_each_in_curve(i, [&](const PairIndex& pair) {
        double w = model.base_weight(pair);
        if (extra) w *= extra(pair);
        const double c = y[pair.row] * y[pair.row_p];
        ++part.rows;
        part.weight_sum += w;
        part.yy += w * c * c;
        builder.build(pair, scratch);
        const std::size_t nnz = scratch.cols.size();
        const int* cols = scratch.cols.data();
        const double* vals = scratch.vals.data();
        for (std::size_t a = 0; a < nnz; ++a) {
          const double wa = w * vals[a];
          const auto ca = static_cast<std::size_t>(cols[a]);
          part.rhs[ca] += wa * c;
          double* row = g + ca * p;
          for (std::size_t b = a; b < nnz; ++b) row[cols[b]] += wa * vals[b];
        }
      });
    }
  });

  NormalEquations ne;
  ne.gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  ne.rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (const auto& part : partials) {
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = a; b < p; ++b) {
        ne.gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += part.gram[a * p + b];
      }
      ne.rhs[static_cast<Eigen::Index>(a)] += part.rhs[a];
    }
    ne.yy += part.yy;
    ne.weight_sum += part.weight_sum;
    ne.rows += part.rows;
  }
  ne.gram.triangularView<Eigen::StrictlyLower>() = ne.gram.transpose().triangularView<Eigen::StrictlyLower>();
  return ne;
}

double observation_covariance(const ObservationTable& table, const std::vector<ResolvedTerm>& terms,
                              std::size_t row_a, std::size_t row_b, const TermKernel& kernel, double sigma2) {
  const std::size_t i = table.curve_of_row(row_a);
  const std::size_t ip = table.curve_of_row(row_b);
  const std::uint32_t mask = shared_term_mask(terms, i, ip);
  const double ta = table.t()[row_a];
  const double tb = table.t()[row_b];
  double cov = row_a == row_b ? sigma2 : 0.0;
  for (std::size_t g = 0; g < terms.size(); ++g) {
    if (!((mask >> g) & 1U)) continue;
    const double mult = terms[g].multiplier[i] * terms[g].multiplier[ip];
    if (mult != 0.0) cov += mult * kernel(g, ta, tb);
  }
  if (!std::isfinite(cov)) throw NumericalError("non-finite covariance evaluation");
  return cov;
}

double crossprod_variance(const ObservationTable& table, const std::vector<ResolvedTerm>& terms,
                          const PairIndex& pair, const TermKernel& kernel, double sigma2) {
  const double pp = observation_covariance(table, terms, pair.row, pair.row, kernel, sigma2);
  const double qq = observation_covariance(table, terms, pair.row_p, pair.row_p, kernel, sigma2);
  const double pq = observation_covariance(table, terms, pair.row, pair.row_p, kernel, sigma2);
  return pp * qq + pq * pq;
}

std::vector<double> crossprod_variance(const ObservationTable& table, const std::vector<ResolvedTerm>& terms,
                                       std::span<const PairIndex> pairs, const TermKernel& kernel, double sigma2) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) out.push_back(crossprod_variance(table, terms, pair, kernel, sigma2));
  return out;
}

}  // namespace symcov
