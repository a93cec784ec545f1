#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symcov/covfit.hpp"
#include "symcov/funcdata.hpp"
#include "symcov/splinebasis.hpp"

namespace symcov {

// Penalized spline fit of the mean under working independence.
struct MeanFit {
  MarginalBasis basis;
  Eigen::VectorXd coef;
  double lambda = 0.0;
  bool converged = true;

  [[nodiscard]] double evaluate(double t) const;
  [[nodiscard]] std::vector<double> evaluate(std::span<const double> t) const;
};

[[nodiscard]] MeanFit fit_mean(const ObservationTable& table, const MarginalSpec& spec,
                               std::optional<Domain> domain = std::nullopt, unsigned threads = 1);

// y - mu(t); observations outside the mean's domain are an extrapolation error.
[[nodiscard]] ObservationTable center_responses(const ObservationTable& table, const MeanFit& mean);

// Midpoints lower + (d - 1/2)|T|/D, d = 1..D.
[[nodiscard]] std::vector<double> midpoint_grid(const Domain& domain, int size);

struct EigenSystem {
  std::string term;
  std::vector<double> grid;
  double weight = 0.0;         // quadrature weight |T|/D
  Eigen::VectorXd values;      // clipped at 0, descending
  Eigen::MatrixXd functions;   // grid x values.size(); column k is phi_k on the grid
  int truncation = 0;

  [[nodiscard]] int positive_count() const;
};

// Mercer decomposition of a symmetric surface on a midpoint grid.
[[nodiscard]] EigenSystem eigendecompose(const Eigen::MatrixXd& surface, std::vector<double> grid, double weight);
[[nodiscard]] EigenSystem eigendecompose(const CovarianceFit& fit, std::size_t term, const Domain& domain,
                                         int grid_size);

// Rows K(point, grid_d) of a fitted term surface.
[[nodiscard]] Eigen::MatrixXd kernel_rows(const CovarianceFit& fit, std::size_t term, std::span<const double> points,
                                          std::span<const double> grid);

// Nystrom extension phi_k(t) = (w / nu_k) sum_d K(t, s_d) phi_k(s_d) for the
// first `count` eigenfunctions; `rows` holds K(t, s_d) for every point t.
[[nodiscard]] Eigen::MatrixXd nystrom(const EigenSystem& system, int count, const Eigen::MatrixXd& rows);

struct Truncation {
  std::vector<int> levels;
  double pve = 0.0;
};

// Smallest counts reaching `target`, adding eigenvalues of all terms in
// globally descending order. The observation base adds sigma2 * |T| to the
// total; if the target is then out of reach every positive eigenvalue is kept.
[[nodiscard]] Truncation truncate_pve(const std::vector<EigenSystem>& systems, double sigma2, double target,
                                      PveBase base = PveBase::Process, double domain_length = 1.0);

struct ScoreSet {
  std::string term;
  std::vector<std::string> level_names;
  Eigen::MatrixXd scores;  // levels x truncation
};

struct ScoreResult {
  std::vector<ScoreSet> sets;
  double sigma2_used = 0.0;
  bool ridge = false;  // sigma2 was zero and a small ridge was used instead
};

// EBLUP of all basis weights from one sparse solve of
// (Z'Z + sigma2 G^-1) xi = Z'y. phi_rows[g] holds the retained eigenfunctions
// of term g at every table row, eigenvalues[g] the matching eigenvalues.
[[nodiscard]] ScoreResult predict_scores(const ObservationTable& centered, const std::vector<ResolvedTerm>& terms,
                                         const std::vector<Eigen::MatrixXd>& phi_rows,
                                         const std::vector<Eigen::VectorXd>& eigenvalues, double sigma2);

struct FpcaModel {
  ModelSpec spec;
  Domain domain;
  MeanFit mean;
  CovarianceFit cov;
  std::vector<double> grid;
  std::vector<EigenSystem> eigen;
  double sigma2 = 0.0;  // max(raw, 0)
  double pve = 0.0;
  ScoreResult scores;
  std::vector<std::string> curve_ids;
  Eigen::MatrixXd fitted;  // curves x grid
  double mean_ms = 0.0, covariance_ms = 0.0, fpca_ms = 0.0, total_ms = 0.0;

  // sum_k xi_lk phi_k on the grid for every level of term g (levels x grid).
  [[nodiscard]] Eigen::MatrixXd process_curves(std::size_t term) const;
};

// Scores for (possibly new) centered data from the eigen systems of `model`.
[[nodiscard]] ScoreResult predict_scores(const FpcaModel& model, const ObservationTable& centered);

// mu + sum over terms of omega * process on the grid, one row per curve.
[[nodiscard]] Eigen::MatrixXd reconstruct(const FpcaModel& model, const std::vector<ResolvedTerm>& terms,
                                          const ScoreResult& scores);

// Mean, covariance smoothing, eigen decomposition, truncation, scores.
[[nodiscard]] FpcaModel run_fpca(const ObservationTable& table, const ModelSpec& spec, unsigned threads = 1);

}  // namespace symcov
