#include "symcov/covfit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "symcov/errors.hpp"

namespace symcov {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

CovarianceFit solve(CovarianceModel model, const NormalEquations& ne, const RemlOptions& options) {
  const PenalizedSystem system = make_penalized_system(ne, model);
  const auto start = std::chrono::steady_clock::now();
  const RemlResult reml = optimize_reml(system, options);
  CovarianceFit fit;
  fit.optimize_ms = elapsed_ms(start);
  fit.n_pairs = ne.rows;
  fit.reml = reml.criterion;
  fit.phi = reml.scale;
  fit.iterations = reml.iterations;
  fit.converged = reml.converged;
  fit.at_bound = reml.at_bound;
  std::size_t k = 0;
  for (std::size_t g = 0; g < model.smooths.size(); ++g) {
    const auto& smooth = model.smooths[g];
    TermFit tf;
    tf.name = model.terms[g].name;
    tf.coef = reml.fit.coef.segment(static_cast<Eigen::Index>(model.offsets[g]),
                                    static_cast<Eigen::Index>(smooth.coefficient_count()));
    tf.theta = smooth.coefficient_matrix(tf.coef);
    const std::size_t nc = smooth.penalty_components().size();
    tf.lambda.assign(reml.lambda.begin() + static_cast<std::ptrdiff_t>(k),
                     reml.lambda.begin() + static_cast<std::ptrdiff_t>(k + nc));
    k += nc;
    tf.edf = reml.fit.edf[g];
    fit.terms.push_back(std::move(tf));
  }
  fit.sigma2_raw = reml.fit.coef[static_cast<Eigen::Index>(model.sigma_column)];
  fit.model = std::move(model);
  return fit;
}

}  // namespace

std::size_t CovarianceFit::term_index(const std::string& name) const {
  for (std::size_t g = 0; g < terms.size(); ++g) {
    if (terms[g].name == name) return g;
  }
  throw InputError(InputErrorKind::InvalidArgument, "unknown term '" + name + "'");
}

TermKernel CovarianceFit::kernel() const {
  return [this](std::size_t term, double t, double tp) { return evaluate(term, t, tp); };
}

PenalizedSystem make_penalized_system(const NormalEquations& ne, const CovarianceModel& model) {
  std::vector<PenaltyBlock> blocks;
  for (std::size_t g = 0; g < model.smooths.size(); ++g) {
    PenaltyBlock b;
    b.name = model.terms[g].name;
    b.offset = model.offsets[g];
    b.size = model.smooths[g].coefficient_count();
    b.components = model.smooths[g].penalty_components();
    blocks.push_back(std::move(b));
  }
  return PenalizedSystem(ne.gram, ne.rhs, ne.yy, ne.weight_sum, ne.rows, std::move(blocks));
}

CovarianceFit fit_covariance(const ObservationTable& centered, const ModelSpec& spec, unsigned threads,
                             const RemlOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  CovarianceModel model = build_covariance_model(centered, spec);
  RemlOptions opts = options;
  opts.threads = threads;

  auto t0 = std::chrono::steady_clock::now();
  const NormalEquations ne = accumulate_normal_equations(centered, model, threads);
  double assembly = elapsed_ms(t0);
  CovarianceFit fit = solve(model, ne, opts);
  double optimize = fit.optimize_ms;

  if (spec.weighted_refit) {
    const auto& terms = fit.model.terms;
    const double sigma2 = std::max(fit.sigma2_raw, 0.0);
    const auto t = centered.t();
    std::vector<double> marginal(centered.row_count());
    double mean_marginal = 0.0;
    for (std::size_t r = 0; r < marginal.size(); ++r) {
      marginal[r] = observation_covariance(centered, terms, r, r, fit.kernel(), sigma2);
      mean_marginal += std::abs(marginal[r]);
    }
    mean_marginal /= static_cast<double>(std::max<std::size_t>(marginal.size(), 1));
    const double floor = std::max(1e-8 * mean_marginal, 1e-300);
    for (double& v : marginal) v = std::max(v, floor);
    const CovarianceFit& first = fit;
    const PairWeight weight = [&](const PairIndex& pair) {
      double pq = pair.same_point ? sigma2 : 0.0;
      for (std::size_t g = 0; g < terms.size(); ++g) {
        if (!pair.same_level(g)) continue;
        const double mult = terms[g].multiplier[pair.i] * terms[g].multiplier[pair.ip];
        if (mult != 0.0) pq += mult * first.evaluate(g, t[pair.row], t[pair.row_p]);
      }
      return 1.0 / (marginal[pair.row] * marginal[pair.row_p] + pq * pq);
    };
    t0 = std::chrono::steady_clock::now();
    NormalEquations weighted = accumulate_normal_equations(centered, model, threads, weight);
    // rescale so the total weight matches the unweighted fit
    const double scale = ne.weight_sum / weighted.weight_sum;
    weighted.gram *= scale;
    weighted.rhs *= scale;
    weighted.yy *= scale;
    weighted.weight_sum = ne.weight_sum;
    assembly += elapsed_ms(t0);
    fit = solve(model, weighted, opts);
    fit.weighted_refit = true;
    optimize += fit.optimize_ms;
  }
  fit.assembly_ms = assembly;
  fit.optimize_ms = optimize;
  fit.total_ms = elapsed_ms(start);
  return fit;
}

}  // namespace symcov
