#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "symcov/fpca.hpp"
#include "symcov/simlab.hpp"

namespace symcov {

// Row-major CSV of a matrix with an optional header line.
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const std::string& header = {});

// Truncations, PVE, sigma2, smoothing parameters, convergence and timings.
[[nodiscard]] nlohmann::json summary_json(const FpcaModel& model);

// Everything needed to score new data: spec, mean, term coefficients and
// retained eigenfunctions.
[[nodiscard]] nlohmann::json model_to_json(const FpcaModel& model);
// Rebuilds a model for `table`; term levels are resolved against that table.
[[nodiscard]] FpcaModel model_from_json(const nlohmann::json& doc, const ObservationTable& table);

// Files of a fit: summary.json, model.json, eigen_<term>.csv,
// scores_<term>.csv, surface_<term>.csv, fitted.csv; with `dump_matrices`
// also matrices/ with marginal designs, penalties and constraint matrices.
void write_fit_outputs(const FpcaModel& model, const std::filesystem::path& dir, bool dump_matrices = false);

void write_scores_csv(std::ostream& out, const ScoreSet& set);
void write_fitted_csv(std::ostream& out, const std::vector<std::string>& curve_ids, std::span<const double> grid,
                      const Eigen::MatrixXd& fitted);

// rrmse_report.csv, timings.csv, truncation.csv and summary.json with medians.
void write_benchmark_outputs(const RrmseReport& report, const BenchmarkConfig& config,
                             const std::filesystem::path& dir);

// data.csv, spec.json and truth.json of one simulated replicate.
void write_simulation_outputs(const SimulatedData& data, const std::filesystem::path& dir);

}  // namespace symcov
