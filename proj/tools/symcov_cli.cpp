#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "symcov/errors.hpp"
#include "symcov/fpca.hpp"
#include "symcov/parallel.hpp"
#include "symcov/report.hpp"
#include "symcov/simlab.hpp"

namespace fs = std::filesystem;
using namespace symcov;

namespace {

constexpr int kInputExit = 2;
constexpr int kNumericalExit = 3;
constexpr int kConvergenceExit = 4;

struct FitFlags {
  std::string data;
  std::string model;
  std::string out = "out";
  std::string method;
  std::optional<double> pve;
  std::optional<int> grid;
  std::optional<double> diag_weight;
  std::string pve_base;
  int threads = 0;
  bool dump_matrices = false;
  bool weighted_refit = false;
};

struct SimFlags {
  int scenario = 1;
  int setting = 1;
  std::uint64_t seed = 1;
  int reps = 1;
  int replicate = 0;
  std::string methods = "tri-constr,tri-constr-w,tri,whole";
  std::string out = "out";
  std::optional<double> pve;
  std::optional<int> grid;
  std::string pve_base;
  int threads = 0;
  bool weighted_refit = false;
};

void print_error(const std::string& kind, const std::string& message, int code) {
  const nlohmann::json err = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << err.dump() << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(InputErrorKind::InvalidArgument, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Method m = parse_method(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) throw InputError(InputErrorKind::InvalidArgument, "no methods given");
  return out;
}

// Command-line flags override the JSON spec.
void apply_overrides(ModelSpec& spec, const FitFlags& f) {
  if (!f.method.empty()) spec.method = parse_method(f.method);
  if (f.pve) spec.pve = *f.pve;
  if (f.grid) spec.grid_size = *f.grid;
  if (f.diag_weight) spec.diag_weight = *f.diag_weight;
  if (!f.pve_base.empty()) spec.pve_base = parse_pve_base(f.pve_base);
  if (f.weighted_refit) spec.weighted_refit = true;
  spec.validate();
}

int cmd_fit(const FitFlags& f) {
  ModelSpec spec = f.model.empty() ? ModelSpec::independent() : parse_model_spec(read_file(f.model));
  apply_overrides(spec, f);
  const ObservationTable table = load_long_table_file(f.data, spec.domain);
  const FpcaModel model = run_fpca(table, spec, resolve_threads(f.threads));
  write_fit_outputs(model, f.out, f.dump_matrices);
  if (!model.cov.converged || !model.mean.converged) {
    print_error("convergence", "smoothing parameter search did not converge; results written and flagged",
                kConvergenceExit);
    return kConvergenceExit;
  }
  return 0;
}

int cmd_predict(const FitFlags& f) {
  if (f.model.empty()) throw InputError(InputErrorKind::InvalidArgument, "--model must name a saved model.json");
  const auto doc = nlohmann::json::parse(read_file(f.model), nullptr, false);
  if (doc.is_discarded()) throw InputError(InputErrorKind::Parse, "'" + f.model + "' is not valid JSON");
  const auto domain = doc.at("domain").get<std::vector<double>>();
  const ObservationTable table = load_long_table_file(f.data, Domain{domain.at(0), domain.at(1)});
  FpcaModel model = model_from_json(doc, table);
  const ObservationTable centered = center_responses(table, model.mean);
  model.scores = predict_scores(model, centered);
  const Eigen::MatrixXd fitted = reconstruct(model, model.cov.model.terms, model.scores);
  fs::create_directories(f.out);
  for (const auto& set : model.scores.sets) {
    std::ofstream out(fs::path(f.out) / ("scores_" + set.term + ".csv"), std::ios::binary);
    write_scores_csv(out, set);
  }
  std::ofstream out(fs::path(f.out) / "fitted.csv", std::ios::binary);
  write_fitted_csv(out, table.curve_ids(), model.grid, fitted);
  return 0;
}

BenchmarkConfig bench_config(const SimFlags& f) {
  BenchmarkConfig c;
  c.scenario = f.scenario;
  c.setting = f.setting;
  c.seed = f.seed;
  c.reps = f.reps;
  c.methods = parse_methods(f.methods);
  c.threads = resolve_threads(f.threads);
  if (f.pve) c.pve = *f.pve;
  if (f.grid) c.grid_size = *f.grid;
  if (!f.pve_base.empty()) c.pve_base = parse_pve_base(f.pve_base);
  c.weighted_refit = f.weighted_refit;
  return c;
}

int cmd_simulate(const SimFlags& f) {
  if (f.replicate < 0) throw InputError(InputErrorKind::InvalidArgument, "--replicate must be >= 0");
  const SimulatedData data = generate(bench_config(f), static_cast<std::size_t>(f.replicate));
  write_simulation_outputs(data, f.out);
  return 0;
}

int cmd_bench(const SimFlags& f) {
  const BenchmarkConfig config = bench_config(f);
  const RrmseReport report = run_benchmark(config);
  write_benchmark_outputs(report, config, f.out);
  for (const auto& row : report.timings) {
    if (!row.ok) std::cerr << "replicate " << row.replicate << " " << to_string(row.method) << " failed: " << row.error << '\n';
  }
  return 0;
}

void add_fit_flags(CLI::App* app, FitFlags& f, bool predict) {
  app->add_option("--data", f.data, "long-format CSV (curve_id,t,y[,g_*][,w_*])")->required();
  app->add_option("--model", f.model, predict ? "saved model.json from fit" : "model spec JSON");
  app->add_option("--out", f.out, "output directory");
  if (predict) return;
  app->add_option("--method", f.method, "tri-constr | tri-constr-w | tri | whole");
  app->add_option("--pve", f.pve, "proportion of variance explained for truncation");
  app->add_option("--grid", f.grid, "evaluation grid size");
  app->add_option("--diag-weight", f.diag_weight, "weight of same-point pairs for tri-constr-w");
  app->add_option("--pve-base", f.pve_base, "process | observation");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  app->add_flag("--dump-matrices", f.dump_matrices, "write designs, penalties and constraints to CSV");
  app->add_flag("--weighted-refit", f.weighted_refit, "refit with inverse cross-product variance weights");
}

void add_sim_flags(CLI::App* app, SimFlags& f, bool bench) {
  app->add_option("--scenario", f.scenario, "1 (independent curves) or 2 (crossed)");
  app->add_option("--setting", f.setting, "scenario 1 setting, 1..11");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--out", f.out, "output directory");
  if (!bench) {
    app->add_option("--replicate", f.replicate, "replicate index of the generated data set");
    return;
  }
  app->add_option("--reps", f.reps, "replicates");
  app->add_option("--methods", f.methods, "comma-separated methods");
  app->add_option("--pve", f.pve, "proportion of variance explained for truncation");
  app->add_option("--grid", f.grid, "evaluation grid size");
  app->add_option("--pve-base", f.pve_base, "process | observation");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  app->add_flag("--weighted-refit", f.weighted_refit, "refit with inverse cross-product variance weights");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symmetric additive covariance smoothing and FPCA"};
  app.require_subcommand(1);
  FitFlags fit_flags, predict_flags;
  SimFlags sim_flags, bench_flags;
  auto* fit = app.add_subcommand("fit", "estimate mean, covariances, eigenfunctions and scores");
  auto* predict = app.add_subcommand("predict", "scores and curves for new data from a saved model");
  auto* simulate = app.add_subcommand("simulate", "write one simulated data set with its truth");
  auto* bench = app.add_subcommand("bench", "compare smoothing methods on simulated replicates");
  add_fit_flags(fit, fit_flags, false);
  add_fit_flags(predict, predict_flags, true);
  add_sim_flags(simulate, sim_flags, false);
  add_sim_flags(bench, bench_flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what(), kInputExit);
    return kInputExit;
  }

  try {
    if (fit->parsed()) return cmd_fit(fit_flags);
    if (predict->parsed()) return cmd_predict(predict_flags);
    if (simulate->parsed()) return cmd_simulate(sim_flags);
    return cmd_bench(bench_flags);
  } catch (const InputError& e) {
    print_error(to_string(e.kind()), e.what(), kInputExit);
    return kInputExit;
  } catch (const NumericalError& e) {
    print_error("numerical", e.what(), kNumericalExit);
    return kNumericalExit;
  } catch (const nlohmann::json::exception& e) {
    print_error("schema", e.what(), kInputExit);
    return kInputExit;
  } catch (const fs::filesystem_error& e) {
    print_error("io", e.what(), kInputExit);
    return kInputExit;
  } catch (const std::exception& e) {
    print_error("internal", e.what(), 1);
    return 1;
  }
}
