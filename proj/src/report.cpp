#include "symcov/report.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include "symcov/errors.hpp"

namespace symcov {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(InputErrorKind::InvalidArgument, "cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
}

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd json_vector(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string csv_value(double v) { return std::isnan(v) ? std::string("NA") : format_double(v); }

// Keeps term names usable in file names.
std::string file_token(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return out;
}

}  // namespace

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const std::string& header) {
  if (!header.empty()) out << header << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

json summary_json(const FpcaModel& model) {
  json terms = json::array();
  for (std::size_t g = 0; g < model.eigen.size(); ++g) {
    const auto& es = model.eigen[g];
    const auto& tf = model.cov.terms[g];
    terms.push_back({{"name", es.term},
                     {"levels", model.cov.model.terms[g].level_count()},
                     {"truncation", es.truncation},
                     {"eigenvalues", vector_json(es.values.head(es.truncation))},
                     {"lambda", tf.lambda},
                     {"edf", tf.edf}});
  }
  return {{"method", to_string(model.spec.method)},
          {"curves", model.curve_ids.size()},
          {"pairs", model.cov.n_pairs},
          {"terms", terms},
          {"sigma2", model.sigma2},
          {"sigma2_raw", model.cov.sigma2_raw},
          {"score_ridge", model.scores.ridge},
          {"pve", model.pve},
          {"pve_target", model.spec.pve},
          {"pve_base", to_string(model.spec.pve_base)},
          {"mean_lambda", model.mean.lambda},
          {"reml", model.cov.reml},
          {"iterations", model.cov.iterations},
          {"converged", model.cov.converged && model.mean.converged},
          {"at_bound", model.cov.at_bound},
          {"weighted_refit", model.cov.weighted_refit},
          {"timings_ms",
           {{"mean", model.mean_ms},
            {"covariance", model.covariance_ms},
            {"assembly", model.cov.assembly_ms},
            {"optimize", model.cov.optimize_ms},
            {"fpca", model.fpca_ms},
            {"total", model.total_ms}}}};
}

json model_to_json(const FpcaModel& model) {
  json terms = json::array();
  for (std::size_t g = 0; g < model.eigen.size(); ++g) {
    const auto& es = model.eigen[g];
    json functions = json::array();
    for (int k = 0; k < es.truncation; ++k) functions.push_back(vector_json(es.functions.col(k)));
    terms.push_back({{"name", es.term},
                     {"coef", vector_json(model.cov.terms[g].coef)},
                     {"lambda", model.cov.terms[g].lambda},
                     {"eigenvalues", vector_json(es.values)},
                     {"truncation", es.truncation},
                     {"functions", functions}});
  }
  return {{"format", "symcov-model"},
          {"version", 1},
          {"spec", json::parse(model_spec_to_json(model.spec))},
          {"domain", {model.domain.lower, model.domain.upper}},
          {"mean",
           {{"degree", model.mean.basis.degree()},
            {"dimension", model.mean.basis.dimension()},
            {"lambda", model.mean.lambda},
            {"coef", vector_json(model.mean.coef)}}},
          {"sigma2", model.sigma2},
          {"sigma2_raw", model.cov.sigma2_raw},
          {"pve", model.pve},
          {"grid", model.grid},
          {"terms", terms}};
}

FpcaModel model_from_json(const json& doc, const ObservationTable& table) {
  try {
    if (doc.value("format", std::string()) != "symcov-model") {
      throw InputError(InputErrorKind::Schema, "not a saved model (format field missing)");
    }
    FpcaModel model;
    model.spec = parse_model_spec(doc.at("spec").dump());
    const auto domain = doc.at("domain").get<std::vector<double>>();
    if (domain.size() != 2) throw InputError(InputErrorKind::Schema, "model domain must have two entries");
    model.domain = Domain{domain[0], domain[1]};
    model.spec.domain = model.domain;
    const auto& mean = doc.at("mean");
    model.mean.basis = MarginalBasis(model.domain, mean.at("degree").get<int>(), mean.at("dimension").get<int>());
    model.mean.coef = json_vector(mean.at("coef"));
    model.mean.lambda = mean.at("lambda").get<double>();
    if (model.mean.coef.size() != model.mean.basis.dimension()) {
      throw InputError(InputErrorKind::Dimension, "mean coefficients do not match the basis");
    }
    model.sigma2 = doc.at("sigma2").get<double>();
    model.cov.sigma2_raw = doc.value("sigma2_raw", model.sigma2);
    model.pve = doc.value("pve", 0.0);
    model.grid = doc.at("grid").get<std::vector<double>>();
    if (model.grid.size() < 2) throw InputError(InputErrorKind::Schema, "model grid is too small");
    model.curve_ids = table.curve_ids();
    model.cov.model = build_covariance_model(table, model.spec);

    const auto& terms = doc.at("terms");
    if (terms.size() != model.spec.terms.size()) {
      throw InputError(InputErrorKind::Dimension, "saved terms do not match the model spec");
    }
    const double weight = model.domain.length() / static_cast<double>(model.grid.size());
    for (std::size_t g = 0; g < terms.size(); ++g) {
      const auto& tj = terms[g];
      const auto& smooth = model.cov.model.smooths[g];
      TermFit tf;
      tf.name = tj.at("name").get<std::string>();
      if (tf.name != model.spec.terms[g].name) throw InputError(InputErrorKind::Schema, "term order differs from the spec");
      tf.coef = json_vector(tj.at("coef"));
      if (static_cast<std::size_t>(tf.coef.size()) != smooth.coefficient_count()) {
        throw InputError(InputErrorKind::Dimension, "coefficients of term '" + tf.name + "' do not match its basis");
      }
      tf.theta = smooth.coefficient_matrix(tf.coef);
      tf.lambda = tj.value("lambda", std::vector<double>{});
      model.cov.terms.push_back(std::move(tf));

      EigenSystem es;
      es.term = model.cov.terms.back().name;
      es.grid = model.grid;
      es.weight = weight;
      es.values = json_vector(tj.at("eigenvalues"));
      es.truncation = tj.at("truncation").get<int>();
      const auto& functions = tj.at("functions");
      if (es.truncation < 0 || static_cast<std::size_t>(es.truncation) != functions.size() ||
          es.truncation > es.values.size()) {
        throw InputError(InputErrorKind::Dimension, "eigenfunctions of term '" + es.term + "' do not match its truncation");
      }
      es.functions.resize(static_cast<Eigen::Index>(model.grid.size()), es.truncation);
      for (int k = 0; k < es.truncation; ++k) {
        const Eigen::VectorXd col = json_vector(functions[static_cast<std::size_t>(k)]);
        if (col.size() != es.functions.rows()) throw InputError(InputErrorKind::Dimension, "eigenfunction length differs from the grid");
        es.functions.col(k) = col;
      }
      model.eigen.push_back(std::move(es));
    }
    return model;
  } catch (const json::exception& e) {
    throw InputError(InputErrorKind::Schema, std::string("saved model: ") + e.what());
  }
}

void write_scores_csv(std::ostream& out, const ScoreSet& set) {
  out << "level,k,xi\n";
  for (Eigen::Index l = 0; l < set.scores.rows(); ++l) {
    for (Eigen::Index k = 0; k < set.scores.cols(); ++k) {
      out << set.level_names[static_cast<std::size_t>(l)] << ',' << k + 1 << ',' << format_double(set.scores(l, k)) << '\n';
    }
  }
}

void write_fitted_csv(std::ostream& out, const std::vector<std::string>& curve_ids, std::span<const double> grid,
                      const Eigen::MatrixXd& fitted) {
  out << "curve_id,t,yhat\n";
  for (Eigen::Index i = 0; i < fitted.rows(); ++i) {
    for (std::size_t d = 0; d < grid.size(); ++d) {
      out << curve_ids[static_cast<std::size_t>(i)] << ',' << format_double(grid[d]) << ','
          << format_double(fitted(i, static_cast<Eigen::Index>(d))) << '\n';
    }
  }
}

void write_fit_outputs(const FpcaModel& model, const fs::path& dir, bool dump_matrices) {
  fs::create_directories(dir);
  write_json(dir / "summary.json", summary_json(model));
  write_json(dir / "model.json", model_to_json(model));
  for (std::size_t g = 0; g < model.eigen.size(); ++g) {
    const auto& es = model.eigen[g];
    const std::string token = file_token(es.term);
    {
      auto out = open_output(dir / ("eigen_" + token + ".csv"));
      out << "k,nu,t,phi\n";
      for (int k = 0; k < es.truncation; ++k) {
        for (std::size_t d = 0; d < es.grid.size(); ++d) {
          out << k + 1 << ',' << format_double(es.values[k]) << ',' << format_double(es.grid[d]) << ','
              << format_double(es.functions(static_cast<Eigen::Index>(d), k)) << '\n';
        }
      }
    }
    {
      auto out = open_output(dir / ("scores_" + token + ".csv"));
      write_scores_csv(out, model.scores.sets[g]);
    }
    {
      auto out = open_output(dir / ("surface_" + token + ".csv"));
      const Eigen::MatrixXd surface = model.cov.surface(g, model.grid);
      out << "t,tprime,value\n";
      for (std::size_t a = 0; a < model.grid.size(); ++a) {
        for (std::size_t b = 0; b < model.grid.size(); ++b) {
          out << format_double(model.grid[a]) << ',' << format_double(model.grid[b]) << ','
              << format_double(surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) << '\n';
        }
      }
    }
  }
  {
    auto out = open_output(dir / "fitted.csv");
    write_fitted_csv(out, model.curve_ids, model.grid, model.fitted);
  }
  if (dump_matrices) {
    const fs::path mdir = dir / "matrices";
    fs::create_directories(mdir);
    {
      auto out = open_output(mdir / "mean_design.csv");
      write_matrix_csv(out, model.mean.basis.design(model.grid));
    }
    for (std::size_t g = 0; g < model.cov.model.smooths.size(); ++g) {
      const auto& smooth = model.cov.model.smooths[g];
      const std::string token = file_token(model.cov.terms[g].name);
      {
        auto out = open_output(mdir / (token + "_marginal_design.csv"));
        write_matrix_csv(out, smooth.basis().design(model.grid));
      }
      const auto& penalties = smooth.penalty_components();
      for (std::size_t c = 0; c < penalties.size(); ++c) {
        auto out = open_output(mdir / (token + "_penalty_" + std::to_string(c + 1) + ".csv"));
        write_matrix_csv(out, penalties[c]);
      }
      if (smooth.mode() == SmoothMode::Constrained) {
        auto out = open_output(mdir / (token + "_constraint.csv"));
        write_matrix_csv(out, smooth.constraint().w);
      }
    }
  }
}

void write_benchmark_outputs(const RrmseReport& report, const BenchmarkConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_output(dir / "rrmse_report.csv");
    out << "replicate,method,component,value\n";
    for (const auto& row : report.rrmse) {
      out << row.replicate << ',' << to_string(row.method) << ',' << row.component << ',' << csv_value(row.value) << '\n';
    }
  }
  {
    auto out = open_output(dir / "timings.csv");
    out << "replicate,method,ok,pairs,iterations,converged,mean_ms,covariance_ms,fpca_ms,total_ms,error\n";
    for (const auto& row : report.timings) {
      std::string error = row.error;
      for (char& c : error) {
        if (c == ',' || c == '\n' || c == '"') c = ' ';
      }
      out << row.replicate << ',' << to_string(row.method) << ',' << (row.ok ? 1 : 0) << ',' << row.pairs << ','
          << row.iterations << ',' << (row.converged ? 1 : 0) << ',' << format_double(row.mean_ms) << ','
          << format_double(row.covariance_ms) << ',' << format_double(row.fpca_ms) << ','
          << format_double(row.total_ms) << ',' << error << '\n';
    }
  }
  {
    auto out = open_output(dir / "truncation.csv");
    out << "replicate,method,term,level\n";
    for (const auto& row : report.truncations) {
      out << row.replicate << ',' << to_string(row.method) << ',' << row.term << ',' << row.level << '\n';
    }
  }
  json medians = json::object();
  for (Method m : config.methods) {
    std::map<std::string, double> per;
    for (const auto& row : report.rrmse) {
      if (row.method == m && !per.count(row.component)) per[row.component] = report.median(m, row.component);
    }
    json entry = json::object();
    for (const auto& [component, value] : per) entry[component] = std::isnan(value) ? json(nullptr) : json(value);
    medians[std::string(to_string(m))] = entry;
  }
  std::vector<std::string> methods;
  for (Method m : config.methods) methods.emplace_back(to_string(m));
  write_json(dir / "summary.json", {{"scenario", config.scenario},
                                    {"setting", config.setting},
                                    {"reps", config.reps},
                                    {"seed", config.seed},
                                    {"methods", methods},
                                    {"median_rrmse", medians}});
}

void write_simulation_outputs(const SimulatedData& data, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_output(dir / "data.csv");
    write_long_table(out, data.table);
  }
  write_json(dir / "spec.json", json::parse(model_spec_to_json(data.spec)));
  json terms = json::array();
  for (const auto& term : data.truth.terms) {
    json scores = json::object();
    for (std::size_t l = 0; l < term.level_names.size(); ++l) {
      scores[term.level_names[l]] = vector_json(term.scores.row(static_cast<Eigen::Index>(l)).transpose());
    }
    terms.push_back({{"name", term.name}, {"eigenvalues", vector_json(term.nu)}, {"scores", scores}});
  }
  write_json(dir / "truth.json", {{"domain", {data.truth.domain.lower, data.truth.domain.upper}},
                                  {"sigma2", data.truth.sigma2},
                                  {"terms", terms}});
}

}  // namespace symcov
