#include "symcov/fpca.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <tuple>

#include <Eigen/SparseCholesky>

#include "symcov/errors.hpp"

namespace symcov {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

double MeanFit::evaluate(double t) const { return basis.row(t).dot(coef); }

std::vector<double> MeanFit::evaluate(std::span<const double> t) const {
  std::vector<double> out(t.size());
  double vals[32];
  const int width = basis.degree() + 1;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const int first = basis.evaluate(t[r], std::span<double>(vals, static_cast<std::size_t>(width)));
    double s = 0.0;
    for (int k = 0; k < width; ++k) s += vals[k] * coef[first + k];
    out[r] = s;
  }
  return out;
}

MeanFit fit_mean(const ObservationTable& table, const MarginalSpec& spec, std::optional<Domain> domain,
                 unsigned threads) {
  MeanFit fit;
  fit.basis = MarginalBasis(domain.value_or(table.domain()), spec);
  const Eigen::MatrixXd design = fit.basis.design(table.t());
  const Eigen::Map<const Eigen::VectorXd> y(table.y().data(), static_cast<Eigen::Index>(table.row_count()));
  PenaltyBlock block;
  block.name = "mean";
  block.size = static_cast<std::size_t>(spec.dimension);
  block.components.push_back(difference_penalty(spec.dimension, spec.penalty_order).matrix);
  const auto system = PenalizedSystem::from_dense(design, y, Eigen::VectorXd::Ones(y.size()), {block});
  RemlOptions options;
  options.threads = threads;
  const RemlResult reml = optimize_reml(system, options);
  fit.coef = reml.fit.coef;
  fit.lambda = reml.lambda.front();
  fit.converged = reml.converged;
  return fit;
}

ObservationTable center_responses(const ObservationTable& table, const MeanFit& mean) {
  const Domain& d = mean.basis.domain();
  for (double t : table.t()) {
    if (!d.contains(t)) {
      throw InputError(InputErrorKind::Domain,
                       "extrapolation: t=" + format_double(t) + " lies outside the mean fit's domain");
    }
  }
  const auto mu = mean.evaluate(table.t());
  return center_responses(table, std::span<const double>(mu));
}

std::vector<double> midpoint_grid(const Domain& domain, int size) {
  if (size < 2) throw InputError(InputErrorKind::InvalidArgument, "grid size must be >= 2");
  std::vector<double> grid(static_cast<std::size_t>(size));
  const double h = domain.length() / size;
  for (int d = 0; d < size; ++d) grid[static_cast<std::size_t>(d)] = domain.lower + (d + 0.5) * h;
  return grid;
}

int EigenSystem::positive_count() const {
  return static_cast<int>((values.array() > 0.0).count());
}

EigenSystem eigendecompose(const Eigen::MatrixXd& surface, std::vector<double> grid, double weight) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (surface.rows() != n || surface.cols() != n) {
    throw InputError(InputErrorKind::Dimension, "surface does not match the grid");
  }
  if (!surface.allFinite()) throw NumericalError("non-finite covariance surface values");
  if (!(weight > 0.0)) throw InputError(InputErrorKind::InvalidArgument, "quadrature weight must be positive");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(weight * surface);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  EigenSystem es;
  es.grid = std::move(grid);
  es.weight = weight;
  es.values.resize(n);
  es.functions.resize(n, n);
  const double scale = 1.0 / std::sqrt(weight);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = n - 1 - k;
    es.values[k] = std::max(eig.eigenvalues()[src], 0.0);
    Eigen::VectorXd v = eig.eigenvectors().col(src) * scale;
    const double total = v.sum();
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    const bool flip = std::abs(total) > 1e-10 * v.cwiseAbs().sum() ? total < 0.0 : v[big] < 0.0;
    es.functions.col(k) = flip ? Eigen::VectorXd(-v) : v;
  }
  return es;
}

EigenSystem eigendecompose(const CovarianceFit& fit, std::size_t term, const Domain& domain, int grid_size) {
  auto grid = midpoint_grid(domain, grid_size);
  const Eigen::MatrixXd surface = fit.surface(term, grid);
  EigenSystem es = eigendecompose(surface, std::move(grid), domain.length() / grid_size);
  es.term = fit.terms[term].name;
  return es;
}

Eigen::MatrixXd kernel_rows(const CovarianceFit& fit, std::size_t term, std::span<const double> points,
                            std::span<const double> grid) {
  const auto& smooth = fit.model.smooths[term];
  const Eigen::MatrixXd& theta = fit.terms[term].theta;
  const Eigen::MatrixXd bg = smooth.basis().design(grid);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t r = 0; r < points.size(); ++r) {
    const Eigen::RowVectorXd b = smooth.basis().row(points[r]);
    // K(t, s) = B(min)' Theta B(max)
    const Eigen::RowVectorXd left = b * theta;                   // t <= s
    const Eigen::RowVectorXd right = b * theta.transpose();      // t > s
    for (std::size_t d = 0; d < grid.size(); ++d) {
      const auto di = static_cast<Eigen::Index>(d);
      out(static_cast<Eigen::Index>(r), di) = points[r] <= grid[d] ? left.dot(bg.row(di)) : right.dot(bg.row(di));
    }
  }
  return out;
}

Eigen::MatrixXd nystrom(const EigenSystem& system, int count, const Eigen::MatrixXd& rows) {
  if (count > system.positive_count()) {
    throw InputError(InputErrorKind::InvalidArgument, "cannot extend eigenfunctions with zero eigenvalues");
  }
  if (rows.cols() != static_cast<Eigen::Index>(system.grid.size())) {
    throw InputError(InputErrorKind::Dimension, "kernel rows do not match the grid");
  }
  Eigen::VectorXd factor(count);
  for (int k = 0; k < count; ++k) factor[k] = system.weight / system.values[k];
  return rows * system.functions.leftCols(count) * factor.asDiagonal();
}

Truncation truncate_pve(const std::vector<EigenSystem>& systems, double sigma2, double target, PveBase base,
                        double domain_length) {
  if (!(target > 0.0 && target <= 1.0)) throw InputError(InputErrorKind::InvalidArgument, "PVE target must be in (0, 1]");
  std::vector<std::tuple<double, std::size_t, Eigen::Index>> all;
  double explained_total = 0.0;
  for (std::size_t g = 0; g < systems.size(); ++g) {
    for (Eigen::Index k = 0; k < systems[g].values.size(); ++k) {
      const double v = systems[g].values[k];
      if (v > 0.0) {
        all.emplace_back(v, g, k);
        explained_total += v;
      }
    }
  }
  if (!(explained_total > 0.0)) throw NumericalError("degenerate model: all eigenvalues are zero");
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  double total = explained_total;
  if (base == PveBase::Observation) total += std::max(sigma2, 0.0) * domain_length;

  Truncation out;
  out.levels.assign(systems.size(), 0);
  double cum = 0.0;
  const bool reachable = explained_total >= target * total * (1.0 - 1e-12);
  for (const auto& [v, g, k] : all) {
    if (reachable && cum >= target * total * (1.0 - 1e-12)) break;
    cum += v;
    ++out.levels[g];
  }
  out.pve = cum / total;
  return out;
}

ScoreResult predict_scores(const ObservationTable& centered, const std::vector<ResolvedTerm>& terms,
                           const std::vector<Eigen::MatrixXd>& phi_rows, const std::vector<Eigen::VectorXd>& eigenvalues,
                           double sigma2) {
  if (phi_rows.size() != terms.size() || eigenvalues.size() != terms.size()) {
    throw InputError(InputErrorKind::Dimension, "one eigen basis per term is required");
  }
  ScoreResult result;
  std::vector<std::size_t> offset(terms.size());
  std::vector<Eigen::Index> count(terms.size());
  std::size_t unknowns = 0;
  double nu_sum = 0.0;
  std::size_t nu_count = 0;
  for (std::size_t g = 0; g < terms.size(); ++g) {
    count[g] = eigenvalues[g].size();
    if (phi_rows[g].cols() != count[g] || (count[g] > 0 && phi_rows[g].rows() != static_cast<Eigen::Index>(centered.row_count()))) {
      throw InputError(InputErrorKind::Dimension, "eigenfunction evaluations do not match term '" + terms[g].name + "'");
    }
    for (Eigen::Index k = 0; k < count[g]; ++k) {
      if (!(eigenvalues[g][k] > 0.0)) {
        throw InputError(InputErrorKind::InvalidArgument,
                         "zero eigenvalue retained for term '" + terms[g].name + "'; clip before truncating");
      }
      nu_sum += eigenvalues[g][k];
      ++nu_count;
    }
    offset[g] = unknowns;
    unknowns += terms[g].level_count() * static_cast<std::size_t>(count[g]);
  }
  result.sigma2_used = sigma2;
  if (!(sigma2 > 0.0)) {
    result.ridge = true;
    result.sigma2_used = nu_count ? 1e-8 * nu_sum / static_cast<double>(nu_count) : 1e-8;
  }
  for (std::size_t g = 0; g < terms.size(); ++g) {
    ScoreSet set;
    set.term = terms[g].name;
    set.level_names = terms[g].level_names;
    set.scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(terms[g].level_count()), count[g]);
    result.sets.push_back(std::move(set));
  }
  if (unknowns == 0) return result;

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns));
  for (std::size_t g = 0; g < terms.size(); ++g) {
    for (std::size_t l = 0; l < terms[g].level_count(); ++l) {
      for (Eigen::Index k = 0; k < count[g]; ++k) {
        const auto idx = static_cast<Eigen::Index>(offset[g] + l * static_cast<std::size_t>(count[g])) + k;
        triplets.emplace_back(idx, idx, result.sigma2_used / eigenvalues[g][k]);
      }
    }
  }
  const auto y = centered.y();
  std::vector<Eigen::Index> index;
  for (std::size_t i = 0; i < centered.curve_count(); ++i) {
    index.clear();
    std::vector<std::pair<std::size_t, double>> term_mult;  // (term, omega)
    for (std::size_t g = 0; g < terms.size(); ++g) {
      const std::size_t level = terms[g].level_of_curve[i];
      for (Eigen::Index k = 0; k < count[g]; ++k) {
        index.push_back(static_cast<Eigen::Index>(offset[g] + level * static_cast<std::size_t>(count[g])) + k);
      }
      term_mult.emplace_back(g, terms[g].multiplier[i]);
    }
    const auto m = static_cast<Eigen::Index>(index.size());
    const std::size_t begin = centered.curve_begin(i);
    const auto rows = static_cast<Eigen::Index>(centered.curve_size(i));
    Eigen::MatrixXd z(rows, m);
    Eigen::Index col = 0;
    for (const auto& [g, omega] : term_mult) {
      if (count[g] == 0) continue;
      z.middleCols(col, count[g]) = omega * phi_rows[g].middleRows(static_cast<Eigen::Index>(begin), rows);
      col += count[g];
    }
    const Eigen::Map<const Eigen::VectorXd> yi(y.data() + begin, rows);
    const Eigen::MatrixXd ztz = z.transpose() * z;
    const Eigen::VectorXd zty = z.transpose() * yi;
    for (Eigen::Index a = 0; a < m; ++a) {
      rhs[index[static_cast<std::size_t>(a)]] += zty[a];
      for (Eigen::Index b = 0; b < m; ++b) {
        if (ztz(a, b) != 0.0) triplets.emplace_back(index[static_cast<std::size_t>(a)], index[static_cast<std::size_t>(b)], ztz(a, b));
      }
    }
  }
  Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(unknowns), static_cast<Eigen::Index>(unknowns));
  a.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw NumericalError("score system factorization failed");
  const Eigen::VectorXd xi = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !xi.allFinite()) throw NumericalError("score system solve failed");
  for (std::size_t g = 0; g < terms.size(); ++g) {
    for (std::size_t l = 0; l < terms[g].level_count(); ++l) {
      for (Eigen::Index k = 0; k < count[g]; ++k) {
        result.sets[g].scores(static_cast<Eigen::Index>(l), k) =
            xi[static_cast<Eigen::Index>(offset[g] + l * static_cast<std::size_t>(count[g])) + k];
      }
    }
  }
  return result;
}

ScoreResult predict_scores(const FpcaModel& model, const ObservationTable& centered) {
  const auto& terms = model.cov.model.terms;
  std::vector<Eigen::MatrixXd> phi(terms.size());
  std::vector<Eigen::VectorXd> nu(terms.size());
  for (std::size_t g = 0; g < terms.size(); ++g) {
    const auto& es = model.eigen[g];
    const int n = es.truncation;
    nu[g] = es.values.head(n);
    if (n > 0) {
      phi[g] = nystrom(es, n, kernel_rows(model.cov, g, centered.t(), es.grid));
    } else {
      phi[g].resize(static_cast<Eigen::Index>(centered.row_count()), 0);
    }
  }
  return predict_scores(centered, terms, phi, nu, model.sigma2);
}

Eigen::MatrixXd FpcaModel::process_curves(std::size_t term) const {
  const auto& es = eigen[term];
  const Eigen::MatrixXd& xi = scores.sets[term].scores;
  if (es.truncation == 0) return Eigen::MatrixXd::Zero(xi.rows(), static_cast<Eigen::Index>(grid.size()));
  return xi * es.functions.leftCols(es.truncation).transpose();
}

Eigen::MatrixXd reconstruct(const FpcaModel& model, const std::vector<ResolvedTerm>& terms, const ScoreResult& scores) {
  const auto d = static_cast<Eigen::Index>(model.grid.size());
  const std::vector<double> mu = model.mean.evaluate(model.grid);
  const std::size_t n = terms.empty() ? 0 : terms.front().level_of_curve.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index e = 0; e < d; ++e) out(static_cast<Eigen::Index>(i), e) = mu[static_cast<std::size_t>(e)];
  }
  for (std::size_t g = 0; g < terms.size(); ++g) {
    const auto& es = model.eigen[g];
    if (es.truncation == 0) continue;
    const Eigen::MatrixXd proc = scores.sets[g].scores * es.functions.leftCols(es.truncation).transpose();
    for (std::size_t i = 0; i < n; ++i) {
      out.row(static_cast<Eigen::Index>(i)) += terms[g].multiplier[i] * proc.row(terms[g].level_of_curve[i]);
    }
  }
  return out;
}

FpcaModel run_fpca(const ObservationTable& table, const ModelSpec& spec, unsigned threads) {
  spec.validate();
  const auto start = std::chrono::steady_clock::now();
  FpcaModel model;
  model.spec = spec;
  model.domain = spec.domain.value_or(table.domain());
  model.curve_ids = table.curve_ids();

  auto t0 = std::chrono::steady_clock::now();
  model.mean = fit_mean(table, spec.mean_spec, model.domain, threads);
  const ObservationTable centered = center_responses(table, model.mean);
  model.mean_ms = elapsed_ms(t0);

  ModelSpec cov_spec = spec;
  cov_spec.domain = model.domain;
  t0 = std::chrono::steady_clock::now();
  model.cov = fit_covariance(centered, cov_spec, threads);
  model.covariance_ms = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  model.sigma2 = std::max(model.cov.sigma2_raw, 0.0);
  model.grid = midpoint_grid(model.domain, spec.grid_size);
  for (std::size_t g = 0; g < model.cov.terms.size(); ++g) {
    model.eigen.push_back(eigendecompose(model.cov, g, model.domain, spec.grid_size));
  }
  const Truncation trunc = truncate_pve(model.eigen, model.sigma2, spec.pve, spec.pve_base, model.domain.length());
  double kept = 0.0, total = 0.0;
  for (std::size_t g = 0; g < model.eigen.size(); ++g) {
    auto& es = model.eigen[g];
    es.truncation = trunc.levels[g];
    const auto fixed = spec.truncation.find(es.term);
    if (fixed != spec.truncation.end()) es.truncation = std::min(fixed->second, es.positive_count());
    kept += es.values.head(es.truncation).sum();
    total += es.values.sum();
  }
  if (spec.pve_base == PveBase::Observation) total += model.sigma2 * model.domain.length();
  model.pve = total > 0.0 ? kept / total : 0.0;
  model.scores = predict_scores(model, centered);
  model.fitted = reconstruct(model, model.cov.model.terms, model.scores);
  model.fpca_ms = elapsed_ms(t0);
  model.total_ms = elapsed_ms(start);
  return model;
}

}  // namespace symcov
