#include "symcov/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "symcov/errors.hpp"
#include "symcov/parallel.hpp"

namespace symcov {

namespace {

constexpr double kPi = std::numbers::pi;

std::mt19937_64 make_stream(std::uint64_t seed, std::size_t replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32)};
  return std::mt19937_64(seq);
}

Eigen::MatrixXd draw_scores(std::mt19937_64& rng, std::size_t rows, const Eigen::VectorXd& nu) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), nu.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) = std::sqrt(nu[k]) * normal(rng);
  }
  return x;
}

std::map<std::string, std::size_t> name_index(const std::vector<std::string>& names) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], i);
  return out;
}

}  // namespace

Scenario1Setting scenario1_setting(int setting) {
  if (setting < 1 || setting > 11) throw InputError(InputErrorKind::InvalidArgument, "setting must be in 1..11");
  Scenario1Setting s;
  s.id = setting;
  s.complex_functions = setting == 1 || setting == 2 || setting == 7 || setting == 8 || setting == 11;
  s.sparse = setting == 5 || setting == 6;
  if (setting >= 7 && setting <= 10) {
    s.nu1 = 0.15;
    s.nu2 = 0.075;
  }
  if (setting == 11) {
    s.sigma2 = 0.01;
  } else {
    s.sigma2 = setting % 2 == 1 ? 0.05 : 0.5;
  }
  return s;
}

Eigen::MatrixXd TruthTerm::functions(std::span<const double> grid) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(phi.size()));
  for (std::size_t d = 0; d < grid.size(); ++d) {
    for (std::size_t k = 0; k < phi.size(); ++k) {
      out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = phi[k](grid[d]);
    }
  }
  return out;
}

Eigen::MatrixXd TruthTerm::surface(std::span<const double> grid) const {
  const Eigen::MatrixXd f = functions(grid);
  return f * nu.asDiagonal() * f.transpose();
}

Eigen::MatrixXd TruthTerm::process(std::span<const double> grid) const {
  return scores * functions(grid).transpose();
}

Eigen::MatrixXd Truth::curves(std::span<const double> grid) const {
  const std::size_t n = terms.empty() ? 0 : terms.front().level_of_curve.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t d = 0; d < grid.size(); ++d) out.col(static_cast<Eigen::Index>(d)).setConstant(mean(grid[d]));
  for (const auto& term : terms) {
    const Eigen::MatrixXd proc = term.process(grid);
    for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) += proc.row(static_cast<Eigen::Index>(term.level_of_curve[i]));
  }
  return out;
}

void decorrelate_scores(Eigen::MatrixXd& scores, const Eigen::VectorXd& nu) {
  const Eigen::Index n = scores.rows();
  if (n < 2 || scores.cols() != nu.size()) {
    throw InputError(InputErrorKind::Dimension, "decorrelation needs at least two rows and one eigenvalue per column");
  }
  scores.rowwise() -= scores.colwise().mean();
  const Eigen::MatrixXd cov = scores.transpose() * scores / static_cast<double>(n - 1);
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("score sample covariance is singular");
  // X L^-T has identity sample covariance
  const Eigen::MatrixXd white = llt.matrixL().solve(scores.transpose()).transpose();
  scores = white * nu.cwiseSqrt().asDiagonal();
}

SimulatedData generate_scenario1(int setting, std::uint64_t seed, std::size_t replicate, std::size_t n) {
  const Scenario1Setting s = scenario1_setting(setting);
  if (n < 3) throw InputError(InputErrorKind::InvalidArgument, "at least three curves are required");
  auto rng = make_stream(seed, replicate);
  std::uniform_int_distribution<int> count(s.sparse ? 3 : 40, s.sparse ? 10 : 60);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, std::sqrt(s.sigma2));

  std::vector<int> sizes(n);
  for (auto& d : sizes) d = count(rng);
  std::vector<std::vector<double>> times(n);
  for (std::size_t i = 0; i < n; ++i) {
    times[i].resize(static_cast<std::size_t>(sizes[i]));
    for (auto& t : times[i]) t = unit(rng);
    std::sort(times[i].begin(), times[i].end());
  }

  // raw generating functions; complex ones have squared norm 1/2
  std::vector<std::function<double(double)>> raw;
  if (s.complex_functions) {
    raw = {[](double t) { return std::sin(2 * kPi * t); }, [](double t) { return std::cos(2 * kPi * t); }};
  } else {
    raw = {[](double) { return 1.0; }, [](double t) { return std::sqrt(3.0) * (2 * t - 1); }};
  }
  const Eigen::Vector2d nu(s.nu1, s.nu2);
  Eigen::MatrixXd xi = draw_scores(rng, n, nu);
  decorrelate_scores(xi, nu);

  ObservationTable::Builder builder({}, {});
  const auto mu = [](double t) { return std::sin(t) + t; };
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = std::to_string(i + 1);
    for (double t : times[i]) {
      const double e = xi(static_cast<Eigen::Index>(i), 0) * raw[0](t) + xi(static_cast<Eigen::Index>(i), 1) * raw[1](t);
      builder.add_row(ids[i], t, mu(t) + e + noise(rng), {}, {});
    }
  }

  SimulatedData out{std::move(builder).build(Domain{0.0, 1.0}), {}, ModelSpec::independent({3, 10, 3}, {3, 10, 2})};
  out.spec.domain = Domain{0.0, 1.0};
  out.truth.domain = Domain{0.0, 1.0};
  out.truth.mean = mu;
  out.truth.sigma2 = s.sigma2;
  TruthTerm e;
  e.name = out.spec.terms.front().name;
  const double scale = s.complex_functions ? std::sqrt(2.0) : 1.0;
  e.nu = nu / (scale * scale);
  for (const auto& f : raw) e.phi.push_back([f, scale](double t) { return scale * f(t); });
  e.scores = xi / scale;
  e.level_names = ids;
  e.level_of_curve.resize(n);
  for (std::size_t i = 0; i < n; ++i) e.level_of_curve[i] = i;
  out.truth.terms.push_back(std::move(e));
  return out;
}

SimulatedData generate_scenario2(std::uint64_t seed, std::size_t replicate) {
  constexpr std::size_t kB = 9, kC = 16, kRep = 5;
  constexpr std::size_t n = kB * kC * kRep;
  auto rng = make_stream(seed, replicate);
  std::uniform_int_distribution<int> count(22, 57);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double sigma2 = 5.62e-3;
  std::normal_distribution<double> noise(0.0, std::sqrt(sigma2));

  TruthTerm b, c, e;
  b.name = "B";
  b.nu = Eigen::Vector2d(5.86e-3, 2.71e-3);
  b.phi = {[](double) { return 1.0; }, [](double t) { return std::sqrt(3.0) * (2 * t - 1); }};
  c.name = "C";
  c.nu = Eigen::VectorXd::Constant(1, 8.89e-3);
  c.phi = {[](double t) { return std::sqrt(2.0) * std::sin(2 * kPi * t); }};
  e.name = "E";
  e.nu = Eigen::Vector3d(19.05e-3, 7.53e-3, 2.66e-3);
  e.phi = {[](double t) { return std::sqrt(3.0) * (2 * t - 1); },
           [](double t) { return std::sqrt(5.0) * (6 * t * t - 6 * t + 1); },
           [](double t) { return std::sqrt(7.0) * (20 * t * t * t - 30 * t * t + 12 * t - 1); }};

  std::vector<int> sizes(n);
  for (auto& d : sizes) d = count(rng);
  std::vector<std::vector<double>> times(n);
  for (std::size_t i = 0; i < n; ++i) {
    times[i].resize(static_cast<std::size_t>(sizes[i]));
    for (auto& t : times[i]) t = unit(rng);
    std::sort(times[i].begin(), times[i].end());
  }
  for (TruthTerm* term : {&b, &c, &e}) {
    const std::size_t levels = term == &b ? kB : term == &c ? kC : n;
    term->scores = draw_scores(rng, levels, term->nu);
    decorrelate_scores(term->scores, term->nu);
    term->level_of_curve.resize(n);
  }
  for (std::size_t l = 0; l < kB; ++l) b.level_names.push_back("B" + std::to_string(l + 1));
  for (std::size_t l = 0; l < kC; ++l) c.level_names.push_back("C" + std::to_string(l + 1));

  ObservationTable::Builder builder({"B", "C"}, {});
  const auto mu = [](double t) { return 0.4 * std::cos(kPi * t); };
  std::size_t i = 0;
  for (std::size_t lb = 0; lb < kB; ++lb) {
    for (std::size_t lc = 0; lc < kC; ++lc) {
      for (std::size_t r = 0; r < kRep; ++r, ++i) {
        const std::string id = std::to_string(i + 1);
        e.level_names.push_back(id);
        b.level_of_curve[i] = lb;
        c.level_of_curve[i] = lc;
        e.level_of_curve[i] = i;
        const std::string levels[2] = {b.level_names[lb], c.level_names[lc]};
        for (double t : times[i]) {
          double y = mu(t);
          for (const TruthTerm* term : {&b, &c, &e}) {
            const auto row = static_cast<Eigen::Index>(term->level_of_curve[i]);
            for (std::size_t k = 0; k < term->phi.size(); ++k) {
              y += term->scores(row, static_cast<Eigen::Index>(k)) * term->phi[k](t);
            }
          }
          builder.add_row(id, t, y + noise(rng), levels, {});
        }
      }
    }
  }

  SimulatedData out;
  out.table = std::move(builder).build(Domain{0.0, 1.0});
  out.spec.domain = Domain{0.0, 1.0};
  out.spec.mean_spec = {3, 8, 2};
  for (const char* name : {"B", "C", "E"}) {
    RandomEffectTermSpec term;
    term.name = name;
    term.grouping = std::string(name) == "E" ? std::string(kCurveGrouping) : std::string(name);
    term.marginal_basis = {3, 5, 3};
    out.spec.terms.push_back(std::move(term));
  }
  out.spec.truncation = {{"B", 2}, {"C", 1}, {"E", 3}};
  out.truth.domain = Domain{0.0, 1.0};
  out.truth.mean = mu;
  out.truth.sigma2 = sigma2;
  out.truth.terms = {std::move(b), std::move(c), std::move(e)};
  return out;
}

double rrmse(std::span<const double> truth, std::span<const double> estimate) {
  if (truth.size() != estimate.size()) throw InputError(InputErrorKind::Dimension, "rrMSE needs matching shapes");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - estimate[i]) * (truth[i] - estimate[i]);
    den += truth[i] * truth[i];
  }
  if (!(den > 0.0)) throw InputError(InputErrorKind::Domain, "rrMSE is undefined for a zero truth");
  return std::sqrt(num / den);
}

double rrmse(double truth, double estimate) {
  return rrmse(std::span<const double>(&truth, 1), std::span<const double>(&estimate, 1));
}

double rrmse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) {
    throw InputError(InputErrorKind::Dimension, "rrMSE needs matching shapes");
  }
  return rrmse(std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())),
               std::span<const double>(estimate.data(), static_cast<std::size_t>(estimate.size())));
}

double rrmse_eigenfunction(std::span<const double> truth, std::span<const double> estimate) {
  std::vector<double> flipped(estimate.begin(), estimate.end());
  for (double& v : flipped) v = -v;
  return std::min(rrmse(truth, estimate), rrmse(truth, std::span<const double>(flipped)));
}

double rrmse_scores(std::span<const double> truth, std::span<const double> estimate, double nu) {
  if (truth.size() != estimate.size() || truth.empty()) {
    throw InputError(InputErrorKind::Dimension, "rrMSE needs matching non-empty shapes");
  }
  if (!(nu > 0.0)) throw InputError(InputErrorKind::Domain, "rrMSE is undefined for a zero eigenvalue");
  double num = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) num += (truth[i] - estimate[i]) * (truth[i] - estimate[i]);
  return std::sqrt(num / static_cast<double>(truth.size()) / nu);
}

std::vector<ComponentError> evaluate_fit(const FpcaModel& model, const Truth& truth) {
  std::vector<ComponentError> out;
  const auto& grid = model.grid;
  const auto d = static_cast<Eigen::Index>(grid.size());
  for (const TruthTerm& tt : truth.terms) {
    const std::size_t g = model.cov.term_index(tt.name);
    const EigenSystem& es = model.eigen[g];
    const int kept = es.truncation;
    const Eigen::MatrixXd phi_hat = es.functions.leftCols(kept);
    const Eigen::MatrixXd k_hat = phi_hat * es.values.head(kept).asDiagonal() * phi_hat.transpose();
    out.push_back({"K_" + tt.name, rrmse(tt.surface(grid), k_hat)});

    const Eigen::MatrixXd phi = tt.functions(grid);
    const auto& set = model.scores.sets[g];
    const auto est_level = name_index(set.level_names);
    std::vector<double> signs(tt.phi.size(), 1.0);
    for (std::size_t k = 0; k < tt.phi.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      Eigen::VectorXd est = Eigen::VectorXd::Zero(d);
      if (kk < kept) est = phi_hat.col(kk);
      const Eigen::VectorXd truth_k = phi.col(kk);
      const double plus = (truth_k - est).squaredNorm(), minus = (truth_k + est).squaredNorm();
      signs[k] = minus < plus ? -1.0 : 1.0;
      out.push_back({"phi_" + tt.name + "_" + std::to_string(k + 1),
                     rrmse_eigenfunction({truth_k.data(), static_cast<std::size_t>(d)}, {est.data(), static_cast<std::size_t>(d)})});
    }
    for (std::size_t k = 0; k < tt.phi.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      out.push_back({"nu_" + tt.name + "_" + std::to_string(k + 1), rrmse(tt.nu[kk], kk < kept ? es.values[kk] : 0.0)});
    }
    std::vector<std::size_t> row_of_level(tt.level_names.size());
    for (std::size_t l = 0; l < tt.level_names.size(); ++l) {
      const auto it = est_level.find(tt.level_names[l]);
      if (it == est_level.end()) throw InputError(InputErrorKind::Schema, "level '" + tt.level_names[l] + "' was not fitted");
      row_of_level[l] = it->second;
    }
    for (std::size_t k = 0; k < tt.phi.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      std::vector<double> truth_xi(tt.level_names.size()), est_xi(tt.level_names.size(), 0.0);
      for (std::size_t l = 0; l < tt.level_names.size(); ++l) {
        truth_xi[l] = tt.scores(static_cast<Eigen::Index>(l), kk);
        if (kk < kept) est_xi[l] = signs[k] * set.scores(static_cast<Eigen::Index>(row_of_level[l]), kk);
      }
      out.push_back({"xi_" + tt.name + "_" + std::to_string(k + 1), rrmse_scores(truth_xi, est_xi, tt.nu[kk])});
    }
    const Eigen::MatrixXd proc_hat = model.process_curves(g);
    Eigen::MatrixXd aligned(static_cast<Eigen::Index>(tt.level_names.size()), d);
    for (std::size_t l = 0; l < tt.level_names.size(); ++l) {
      aligned.row(static_cast<Eigen::Index>(l)) = proc_hat.row(static_cast<Eigen::Index>(row_of_level[l]));
    }
    out.push_back({tt.name, rrmse(tt.process(grid), aligned)});
  }
  out.push_back({"sigma2", rrmse(truth.sigma2, model.sigma2)});
  out.push_back({"Y", rrmse(truth.curves(grid), model.fitted)});
  return out;
}

std::vector<double> RrmseReport::values(Method method, const std::string& component) const {
  std::vector<double> out;
  for (const auto& row : rrmse) {
    if (row.method == method && row.component == component) out.push_back(row.value);
  }
  return out;
}

double RrmseReport::median(Method method, const std::string& component) const {
  return symcov::median(values(method, component));
}

std::vector<int> RrmseReport::truncation_levels(Method method, const std::string& term) const {
  std::vector<int> out;
  for (const auto& row : truncations) {
    if (row.method == method && row.term == term) out.push_back(row.level);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end(), [](double a, double b) {
    // NaN sorts last
    if (std::isnan(a)) return false;
    if (std::isnan(b)) return true;
    return a < b;
  });
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

SimulatedData generate(const BenchmarkConfig& config, std::size_t replicate) {
  if (config.scenario == 1) return generate_scenario1(config.setting, config.seed, replicate, config.n);
  if (config.scenario == 2) return generate_scenario2(config.seed, replicate);
  throw InputError(InputErrorKind::InvalidArgument, "scenario must be 1 or 2");
}

RrmseReport run_benchmark(const BenchmarkConfig& config) {
  if (config.reps < 1) throw InputError(InputErrorKind::InvalidArgument, "reps must be >= 1");
  if (config.methods.empty()) throw InputError(InputErrorKind::InvalidArgument, "no methods selected");
  if (config.scenario == 1) (void)scenario1_setting(config.setting);
  const auto reps = static_cast<std::size_t>(config.reps);
  const unsigned threads = std::max(config.threads, 1u);
  // replicates in parallel when there are enough of them, otherwise threads go to each fit
  const unsigned outer = reps > 1 ? std::min<unsigned>(threads, static_cast<unsigned>(reps)) : 1;
  const unsigned inner = outer > 1 ? 1 : threads;

  std::vector<RrmseReport> parts(reps);
  parallel_for(reps, outer, [&](std::size_t r) {
    RrmseReport& part = parts[r];
    const int rep = static_cast<int>(r);
    SimulatedData data = generate(config, r);
    for (Method method : config.methods) {
      ModelSpec spec = data.spec;
      spec.method = method;
      spec.pve = config.pve;
      spec.grid_size = config.grid_size;
      spec.pve_base = config.pve_base;
      spec.weighted_refit = config.weighted_refit;
      TimingRow timing;
      timing.replicate = rep;
      timing.method = method;
      try {
        const FpcaModel model = run_fpca(data.table, spec, inner);
        timing.pairs = model.cov.n_pairs;
        timing.iterations = model.cov.iterations;
        timing.converged = model.cov.converged && model.mean.converged;
        timing.mean_ms = model.mean_ms;
        timing.covariance_ms = model.covariance_ms;
        timing.fpca_ms = model.fpca_ms;
        timing.total_ms = model.total_ms;
        for (const auto& ce : evaluate_fit(model, data.truth)) part.rrmse.push_back({rep, method, ce.component, ce.value});
        for (const auto& es : model.eigen) part.truncations.push_back({rep, method, es.term, es.truncation});
      } catch (const std::exception& ex) {
        timing.ok = false;
        timing.error = ex.what();
        for (const auto& tt : data.truth.terms) {
          part.rrmse.push_back({rep, method, "K_" + tt.name, std::numeric_limits<double>::quiet_NaN()});
        }
        part.rrmse.push_back({rep, method, "sigma2", std::numeric_limits<double>::quiet_NaN()});
      }
      part.timings.push_back(std::move(timing));
    }
  });

  RrmseReport report;
  for (auto& part : parts) {
    report.rrmse.insert(report.rrmse.end(), part.rrmse.begin(), part.rrmse.end());
    report.timings.insert(report.timings.end(), part.timings.begin(), part.timings.end());
    report.truncations.insert(report.truncations.end(), part.truncations.begin(), part.truncations.end());
  }
  return report;
}

}  // namespace symcov
