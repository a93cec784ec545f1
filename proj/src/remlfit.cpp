#include "symcov/remlfit.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>

#include "symcov/errors.hpp"
#include "symcov/parallel.hpp"

namespace symcov {

namespace {

constexpr double kRangeTolerance = 1e-9;

}  // namespace

PenalizedSystem::PenalizedSystem(Eigen::MatrixXd gram, Eigen::VectorXd rhs, double yy, double weight_sum,
                                 std::size_t rows, std::vector<PenaltyBlock> blocks)
    : gram_(std::move(gram)),
      rhs_(std::move(rhs)),
      yy_(yy),
      weight_sum_(weight_sum),
      rows_(rows),
      blocks_(std::move(blocks)) {
  const auto p = static_cast<std::size_t>(rhs_.size());
  if (gram_.rows() != rhs_.size() || gram_.cols() != rhs_.size()) {
    throw InputError(InputErrorKind::Dimension, "Gram matrix does not match the right-hand side");
  }
  std::vector<bool> covered(p, false);
  for (const auto& block : blocks_) {
    if (block.offset + block.size > p || block.size == 0) {
      throw InputError(InputErrorKind::Dimension, "penalty block '" + block.name + "' is out of range");
    }
    if (block.components.empty()) {
      throw InputError(InputErrorKind::InvalidArgument, "penalty block '" + block.name + "' has no components");
    }
    for (std::size_t c = block.offset; c < block.offset + block.size; ++c) {
      if (covered[c]) throw InputError(InputErrorKind::Dimension, "penalty blocks overlap");
      covered[c] = true;
    }
    const auto n = static_cast<Eigen::Index>(block.size);
    Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t c = 0; c < block.components.size(); ++c) {
      const auto& s = block.components[c];
      if (s.rows() != n || s.cols() != n) {
        throw InputError(InputErrorKind::Dimension, "penalty of block '" + block.name + "' has the wrong size");
      }
      const double tr = s.trace();
      if (!(tr > 0.0)) throw InputError(InputErrorKind::InvalidArgument, "penalty of '" + block.name + "' is zero");
      // generic positive combination; its eigenbasis diagonalizes commuting components
      mix += (1.0 + 0.6180339887 * static_cast<double>(c)) / tr * s;
    }
    ++lambda_count_;
    lambda_count_ += block.components.size() - 1;

    Spectrum spec;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mix);
    const Eigen::MatrixXd& q = eig.eigenvectors();
    const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    spec.range.resize(block.size);
    for (Eigen::Index i = 0; i < n; ++i) spec.range[static_cast<std::size_t>(i)] = eig.eigenvalues()[i] > kRangeTolerance * top;
    for (const auto& s : block.components) {
      const Eigen::MatrixXd d = q.transpose() * s * q;
      const double scale = std::max(d.diagonal().cwiseAbs().maxCoeff(), DBL_MIN);
      Eigen::MatrixXd off = d;
      off.diagonal().setZero();
      if (off.cwiseAbs().maxCoeff() > 1e-8 * scale) spec.joint = false;
      spec.values.push_back(d.diagonal().cwiseMax(0.0));
    }
    null_dim_ += static_cast<std::size_t>(std::count(spec.range.begin(), spec.range.end(), false));
    spectra_.push_back(std::move(spec));
  }
  null_dim_ += static_cast<std::size_t>(std::count(covered.begin(), covered.end(), false));
}

PenalizedSystem PenalizedSystem::from_dense(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                            const Eigen::VectorXd& weights, std::vector<PenaltyBlock> blocks) {
  if (design.rows() != response.size() || weights.size() != response.size()) {
    throw InputError(InputErrorKind::Dimension, "design, response and weights must have equal row counts");
  }
  const Eigen::MatrixXd wm = weights.asDiagonal() * design;
  return PenalizedSystem(design.transpose() * wm, wm.transpose() * response,
                         response.dot(weights.cwiseProduct(response)), weights.sum(),
                         static_cast<std::size_t>(response.size()), std::move(blocks));
}

std::vector<std::size_t> PenalizedSystem::unpenalized_columns() const {
  std::vector<bool> covered(coefficient_count(), false);
  for (const auto& b : blocks_) {
    for (std::size_t c = b.offset; c < b.offset + b.size; ++c) covered[c] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < covered.size(); ++c) {
    if (!covered[c]) out.push_back(c);
  }
  return out;
}

void PenalizedSystem::add_penalty(Eigen::MatrixXd& a, std::span<const double> lambda) const {
  if (lambda.size() != lambda_count_) throw InputError(InputErrorKind::Dimension, "wrong number of lambdas");
  std::size_t k = 0;
  for (const auto& block : blocks_) {
    const auto off = static_cast<Eigen::Index>(block.offset);
    const auto n = static_cast<Eigen::Index>(block.size);
    for (const auto& s : block.components) a.block(off, off, n, n) += lambda[k++] * s;
  }
}

double PenalizedSystem::log_pdet_penalty(std::span<const double> lambda) const {
  double total = 0.0;
  std::size_t k = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& block = blocks_[b];
    const auto& spec = spectra_[b];
    const std::size_t nc = block.components.size();
    if (spec.joint) {
      for (std::size_t i = 0; i < block.size; ++i) {
        if (!spec.range[i]) continue;
        double v = 0.0;
        for (std::size_t c = 0; c < nc; ++c) v += lambda[k + c] * spec.values[c][static_cast<Eigen::Index>(i)];
        total += std::log(std::max(v, DBL_MIN));
      }
    } else {
      const auto n = static_cast<Eigen::Index>(block.size);
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
      for (std::size_t c = 0; c < nc; ++c) s += lambda[k + c] * block.components[c];
      const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s, Eigen::EigenvaluesOnly).eigenvalues();
      const auto rank = static_cast<Eigen::Index>(std::count(spec.range.begin(), spec.range.end(), true));
      for (Eigen::Index i = n - rank; i < n; ++i) total += std::log(std::max(ev[i], DBL_MIN));
    }
    k += nc;
  }
  return total;
}

std::vector<double> PenalizedSystem::reference_lambdas() const {
  std::vector<double> out;
  for (const auto& block : blocks_) {
    const auto off = static_cast<Eigen::Index>(block.offset);
    const auto n = static_cast<Eigen::Index>(block.size);
    const double tg = gram_.block(off, off, n, n).trace();
    for (const auto& s : block.components) out.push_back(tg > 0.0 ? tg / s.trace() : 1.0);
  }
  return out;
}

LstsqResult penalized_lstsq(const PenalizedSystem& system, std::span<const double> lambda, bool with_edf) {
  for (double l : lambda) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InputError(InputErrorKind::InvalidArgument, "lambda must be finite and >= 0");
  }
  const Eigen::Index p = system.gram().rows();
  Eigen::MatrixXd a = system.gram();
  system.add_penalty(a, lambda);
  Eigen::VectorXd d(p);
  for (Eigen::Index i = 0; i < p; ++i) d[i] = a(i, i) > 0.0 ? 1.0 / std::sqrt(a(i, i)) : 1.0;
  const Eigen::MatrixXd scaled = d.asDiagonal() * a * d.asDiagonal();

  LstsqResult res;
  Eigen::LLT<Eigen::MatrixXd> llt(scaled);
  for (const double ridge : {1e-10, 1e-8, 1e-6}) {
    if (llt.info() == Eigen::Success) break;
    res.ridge = ridge;
    llt.compute(scaled + ridge * Eigen::MatrixXd::Identity(p, p));
  }
  if (llt.info() != Eigen::Success) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    Eigen::Index worst = 0;
    eig.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
    std::string where = "an unpenalized column";
    for (const auto& block : system.blocks()) {
      if (static_cast<std::size_t>(worst) >= block.offset && static_cast<std::size_t>(worst) < block.offset + block.size) {
        where = "term '" + block.name + "'";
      }
    }
    throw NumericalError("rank-deficient penalized system in " + where);
  }
  res.coef = d.asDiagonal() * llt.solve(d.asDiagonal() * system.rhs());
  const Eigen::MatrixXd& l = llt.matrixLLT();
  res.log_det = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) res.log_det += 2.0 * (std::log(l(i, i)) - std::log(d[i]));

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  system.add_penalty(s, lambda);
  res.penalty = res.coef.dot(s * res.coef);
  const double rss_pen = system.yy() - system.rhs().dot(res.coef);
  res.rss = rss_pen - res.penalty;

  if (with_edf) {
    const Eigen::MatrixXd x = d.asDiagonal() * llt.solve(d.asDiagonal() * system.gram());
    const Eigen::VectorXd diag = x.diagonal();
    res.edf_total = diag.sum();
    for (const auto& block : system.blocks()) {
      res.edf.push_back(diag.segment(static_cast<Eigen::Index>(block.offset), static_cast<Eigen::Index>(block.size)).sum());
    }
  }
  return res;
}

namespace {

struct Evaluation {
  double criterion;
  LstsqResult fit;
};

Evaluation evaluate_reml(const PenalizedSystem& system, std::span<const double> log_lambda) {
  std::vector<double> lambda(log_lambda.size());
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    if (!std::isfinite(log_lambda[k])) throw NumericalError("non-finite log smoothing parameter");
    lambda[k] = std::exp(log_lambda[k]);
  }
  const double dof = system.weight_sum() - static_cast<double>(system.null_space_dimension());
  if (!(dof > 0.0)) throw NumericalError("not enough data for the penalty null space");
  Evaluation ev{0.0, penalized_lstsq(system, lambda)};
  double rss_pen = ev.fit.rss + ev.fit.penalty;
  rss_pen = std::max(rss_pen, std::max(1e-13 * std::abs(system.yy()), DBL_MIN));
  ev.criterion = dof * std::log(rss_pen) + ev.fit.log_det - system.log_pdet_penalty(lambda);
  if (!std::isfinite(ev.criterion)) throw NumericalError("non-finite REML criterion");
  return ev;
}

}  // namespace

double reml_criterion(const PenalizedSystem& system, std::span<const double> log_lambda) {
  return evaluate_reml(system, log_lambda).criterion;
}

RemlResult optimize_reml(const PenalizedSystem& system, const RemlOptions& options) {
  const std::size_t k = system.lambda_count();
  RemlResult result;
  const double inf = std::numeric_limits<double>::infinity();
  auto f = [&](const std::vector<double>& x) {
    ++result.evaluations;
    try {
      return evaluate_reml(system, x).criterion;
    } catch (const NumericalError&) {
      return inf;
    }
  };
  auto clamp = [&](double v) { return std::clamp(v, options.lower, options.upper); };

  std::vector<double> x(k);
  const auto ref = system.reference_lambdas();
  for (std::size_t i = 0; i < k; ++i) x[i] = clamp(std::log(ref[i]));

  // coarse initialization
  const int gp = std::max(options.grid_points, 1);
  std::vector<double> offsets(static_cast<std::size_t>(gp));
  for (int g = 0; g < gp; ++g) {
    offsets[static_cast<std::size_t>(g)] = gp == 1 ? 0.0 : -options.grid_half_width + 2.0 * options.grid_half_width * g / (gp - 1);
  }
  double fx = inf;
  if (k > 0) {
    double full = 1.0;
    for (std::size_t i = 0; i < k; ++i) full *= gp;
    if (full <= 625.0) {
      const auto count = static_cast<std::size_t>(full);
      std::vector<std::vector<double>> points(count, x);
      for (std::size_t idx = 0; idx < count; ++idx) {
        std::size_t rem = idx;
        for (std::size_t i = 0; i < k; ++i) {
          points[idx][i] = clamp(x[i] + offsets[rem % static_cast<std::size_t>(gp)]);
          rem /= static_cast<std::size_t>(gp);
        }
      }
      std::vector<double> values(count, inf);
      parallel_for(count, options.threads, [&](std::size_t idx) {
        try {
          values[idx] = evaluate_reml(system, points[idx]).criterion;
        } catch (const NumericalError&) {
        }
      });
      result.evaluations += static_cast<int>(count);
      const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
      x = points[best];
      fx = values[best];
    } else {
      fx = f(x);
      for (std::size_t i = 0; i < k; ++i) {
        const double centre = x[i];
        for (double off : offsets) {
          std::vector<double> trial = x;
          trial[i] = clamp(centre + off);
          const double ft = f(trial);
          if (ft < fx) {
            fx = ft;
            x = trial;
          }
        }
      }
    }
  } else {
    fx = f(x);
  }
  if (!std::isfinite(fx)) throw NumericalError("REML criterion is not finite at any starting point");

  auto gradient = [&](const std::vector<double>& at, double f_at) {
    std::vector<double> g(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> hi = at, lo = at;
      hi[i] = clamp(at[i] + options.step);
      lo[i] = clamp(at[i] - options.step);
      double fh = f(hi);
      double fl = f(lo);
      if (!std::isfinite(fh)) hi[i] = at[i], fh = f_at;
      if (!std::isfinite(fl)) lo[i] = at[i], fl = f_at;
      g[i] = hi[i] > lo[i] ? (fh - fl) / (hi[i] - lo[i]) : 0.0;
    }
    return g;
  };
  auto free_coord = [&](const std::vector<double>& at, const std::vector<double>& g, std::size_t i) {
    if (at[i] <= options.lower && g[i] > 0.0) return false;
    if (at[i] >= options.upper && g[i] < 0.0) return false;
    return true;
  };
  auto projected_norm = [&](const std::vector<double>& at, const std::vector<double>& g) {
    double m = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (free_coord(at, g, i)) m = std::max(m, std::abs(g[i]));
    }
    return m;
  };

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  bool fresh_h = true;
  std::vector<double> g = gradient(x, fx);
  double last_change = inf;
  if (k == 0 || projected_norm(x, g) < options.gradient_tolerance * (1.0 + std::abs(fx))) result.converged = true;

  while (!result.converged && result.iterations < options.max_iterations) {
    ++result.iterations;
    Eigen::VectorXd gv(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) gv[static_cast<Eigen::Index>(i)] = free_coord(x, g, i) ? g[i] : 0.0;
    Eigen::VectorXd dir = -(h * gv);
    for (std::size_t i = 0; i < k; ++i) {
      if (!free_coord(x, g, i)) dir[static_cast<Eigen::Index>(i)] = 0.0;
    }
    if (dir.dot(gv) >= 0.0) {
      h.setIdentity();
      fresh_h = true;
      dir = -gv;
    }
    const double longest = dir.cwiseAbs().maxCoeff();
    double alpha = longest > 5.0 ? 5.0 / longest : 1.0;

    bool accepted = false;
    std::vector<double> xn(k);
    double fn = inf;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      double decrease = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        xn[i] = clamp(x[i] + alpha * dir[static_cast<Eigen::Index>(i)]);
        decrease += g[i] * (xn[i] - x[i]);
      }
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * decrease && fn <= fx) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!fresh_h) {
        h.setIdentity();
        fresh_h = true;
        continue;
      }
      break;
    }
    std::vector<double> gn = gradient(xn, fn);
    Eigen::VectorXd s(static_cast<Eigen::Index>(k)), yv(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
      s[static_cast<Eigen::Index>(i)] = xn[i] - x[i];
      yv[static_cast<Eigen::Index>(i)] = gn[i] - g[i];
    }
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      if (fresh_h) h *= sy / yv.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(h.rows(), h.cols());
      h = (eye - rho * s * yv.transpose()) * h * (eye - rho * yv * s.transpose()) + rho * s * s.transpose();
      fresh_h = false;
    }
    last_change = fx - fn;
    x = std::move(xn);
    fx = fn;
    g = std::move(gn);
    result.history.push_back(fx);
    if (projected_norm(x, g) < options.gradient_tolerance * (1.0 + std::abs(fx)) &&
        std::abs(last_change) < options.value_tolerance * (1.0 + std::abs(fx))) {
      result.converged = true;
    }
  }
  if (!result.converged && projected_norm(x, g) < options.gradient_tolerance * (1.0 + std::abs(fx))) result.converged = true;

  // the criterion flattens as a smoothing parameter diverges; move coordinates
  // still sloping toward a bound onto it when that does not increase it
  for (std::size_t i = 0; i < k; ++i) {
    const double bound = g[i] < 0.0 ? options.upper : g[i] > 0.0 ? options.lower : x[i];
    if (bound == x[i]) continue;
    std::vector<double> xb = x;
    xb[i] = bound;
    const double fb = f(xb);
    if (std::isfinite(fb) && fb <= fx) {
      x = std::move(xb);
      fx = fb;
      result.history.push_back(fx);
    }
  }

  result.log_lambda = x;
  result.lambda.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    result.lambda[i] = std::exp(x[i]);
    if (x[i] <= options.lower + 1e-9 || x[i] >= options.upper - 1e-9) result.at_bound = true;
  }
  result.criterion = fx;
  result.fit = penalized_lstsq(system, result.lambda, true);
  const double dof = system.weight_sum() - static_cast<double>(system.null_space_dimension());
  result.scale = (result.fit.rss + result.fit.penalty) / dof;
  return result;
}

}  // namespace symcov
