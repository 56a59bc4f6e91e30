#include "cesn/penalized.hpp"

#include <cmath>
#include <numeric>

#include "cesn/error.hpp"
#include "cesn/parallel.hpp"

namespace cesn {

namespace {

Eigen::VectorXd as_vector(std::span<const std::int64_t> y) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(y.size()));
  for (std::size_t t = 0; t < y.size(); ++t) out(static_cast<Eigen::Index>(t)) = static_cast<double>(y[t]);
  return out;
}

// Negative Poisson log-likelihood (up to the log y! constant).
double smooth_loss(const Eigen::MatrixXd& H, const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  const Eigen::VectorXd theta = H * eta;
  return theta.array().exp().sum() - y.dot(theta);
}

Eigen::VectorXd smooth_gradient(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& eta) {
  const Eigen::VectorXd theta = H * eta;
  return H.transpose() * (theta.array().exp().matrix() - y);
}

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double k) {
  return v.unaryExpr([k](double x) { return x > k ? x - k : (x < -k ? x + k : 0.0); });
}

void check_inputs(const Eigen::MatrixXd& H, std::span<const std::int64_t> y, double tau) {
  if (static_cast<std::size_t>(H.rows()) != y.size()) throw ConfigError("design rows and counts differ");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("penalty tau must be finite and non-negative");
  if (!H.allFinite()) throw ConfigError("design has non-finite entries");
  for (auto v : y)
    if (v < 0) throw DataError("negative count in penalized fit");
}

}  // namespace

double penalized_poisson_objective(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                                   const Eigen::VectorXd& eta, double tau) {
  return -smooth_loss(H, as_vector(y), eta) - tau * eta.lpNorm<1>();
}

namespace {

double kkt_violation(const Eigen::MatrixXd& H, const Eigen::VectorXd& y, const Eigen::VectorXd& eta, double tau) {
  // Ascent direction of the log-likelihood.
  const Eigen::VectorXd grad = -smooth_gradient(H, y, eta);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    const double v = eta(j) == 0.0 ? std::max(0.0, std::abs(grad(j)) - tau)
                                   : std::abs(grad(j) - tau * (eta(j) > 0 ? 1.0 : -1.0));
    worst = std::max(worst, v);
  }
  return worst;
}

/// Newton steps on the active set with signs held fixed. Objective comparisons
/// stop resolving progress near the optimum, so steps are accepted on a
/// decrease of the optimality violation instead.
Eigen::VectorXd polish_active_set(const Eigen::MatrixXd& H, const Eigen::VectorXd& y, Eigen::VectorXd x, double tau) {
  double violation = kkt_violation(H, y, x, tau);
  for (int it = 0; it < 20; ++it) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < x.size(); ++j)
      if (x(j) != 0.0) active.push_back(j);
    if (active.empty()) break;
    const Eigen::VectorXd mu = (H * x).array().exp();
    const Eigen::VectorXd grad = H.transpose() * (mu - y);
    const auto n = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Ha(H.rows(), n);
    Eigen::VectorXd ga(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      Ha.col(a) = H.col(active[a]);
      ga(a) = grad(active[a]) + tau * (x(active[a]) > 0 ? 1.0 : -1.0);
    }
    const Eigen::MatrixXd hess = Ha.transpose() * mu.asDiagonal() * Ha;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success) break;
    const Eigen::VectorXd d = ldlt.solve(-ga);
    Eigen::VectorXd next = x;
    bool flipped = false;
    for (Eigen::Index a = 0; a < n; ++a) {
      next(active[a]) += d(a);
      flipped = flipped || (next(active[a]) > 0) != (x(active[a]) > 0) || next(active[a]) == 0.0;
    }
    if (flipped || !next.allFinite()) break;
    const double next_violation = kkt_violation(H, y, next, tau);
    if (!(next_violation < violation)) break;
    x = std::move(next);
    violation = next_violation;
  }
  return x;
}

}  // namespace

double lasso_kkt_violation(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                           const Eigen::VectorXd& eta, double tau) {
  return kkt_violation(H, as_vector(y), eta, tau);
}

PenalizedFit fit_penalized_poisson(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                                   double tau, const PenalizedOptions& options) {
  check_inputs(H, y, tau);
  const Eigen::VectorXd yv = as_vector(y);
  const auto k = H.cols();
  const double grad_tol = options.grad_tol * std::max(1.0, yv.sum());

  auto total = [&](const Eigen::VectorXd& eta) {
    return smooth_loss(H, yv, eta) + tau * eta.lpNorm<1>();
  };

  PenalizedFit fit;
  fit.tau = tau;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd x_prev = x;
  double fx = total(x);
  if (!std::isfinite(fx)) throw NumericalError("penalized objective is not finite at the start point");
  fit.objective_trace.push_back(-fx);

  double step = 1.0;
  double momentum = 1.0;
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    fit.iterations = iter;
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    const double beta = (momentum - 1.0) / next_momentum;

    Eigen::VectorXd y_pt = x + beta * (x - x_prev);
    bool restarted = beta == 0.0;
    Eigen::VectorXd candidate;
    double f_candidate = 0.0;
    for (;;) {
      const double g_y = smooth_loss(H, yv, y_pt);
      const Eigen::VectorXd grad = smooth_gradient(H, yv, y_pt);
      step *= 1.25;
      for (int ls = 0;; ++ls) {
        candidate = soft_threshold(y_pt - step * grad, step * tau);
        const Eigen::VectorXd diff = candidate - y_pt;
        const double g_c = smooth_loss(H, yv, candidate);
        if (std::isfinite(g_c) && g_c <= g_y + grad.dot(diff) + diff.squaredNorm() / (2.0 * step)) break;
        step *= 0.5;
        if (ls > 200) throw NumericalError("penalized fit: backtracking failed to find a step");
      }
      f_candidate = total(candidate);
      if (f_candidate <= fx || restarted) break;
      // Non-monotone momentum step: drop the momentum and retry from x.
      y_pt = x;
      restarted = true;
      momentum = 1.0;
    }
    if (!std::isfinite(f_candidate)) throw NumericalError("penalized fit diverged (non-finite objective)");
    x_prev = x;
    const double change = fx - f_candidate;
    const bool moved = f_candidate <= fx;
    if (moved) {
      x = candidate;
      fx = f_candidate;
    }
    momentum = restarted ? 1.0 : next_momentum;
    fit.objective_trace.push_back(-fx);
    if (std::abs(change) < options.tol) {
      if (kkt_violation(H, yv, x, tau) >= grad_tol) {
        const Eigen::VectorXd polished = polish_active_set(H, yv, x, tau);
        const double f_polished = total(polished);
        if (kkt_violation(H, yv, polished, tau) < grad_tol && f_polished <= fx + options.tol) {
          // One more proximal step from the polished point confirms convergence.
          x = polished;
          x_prev = x;
          momentum = 1.0;
          fx = std::min(fx, f_polished);
          fit.objective_trace.push_back(-fx);
          continue;
        }
      }
      if (kkt_violation(H, yv, x, tau) < grad_tol) {
        fit.converged = true;
        break;
      }
      if (!moved) break;  // stalled at rounding level; flagged as not converged
    }
  }
  fit.eta = x;
  return fit;
}

double SingleEsnFit::mean(int i, const Eigen::VectorXd& h) const {
  return std::exp(h.dot(schools.at(static_cast<std::size_t>(i)).eta));
}

SingleEsnFit fit_single_esn(const PanelSeries& panel, const ReservoirSpec& spec, double tau,
                            const PenalizedOptions& options, int workers) {
  SingleEsnFit out;
  out.weights = gen_weights(spec);
  const HiddenStateMatrix states = run_states(panel, out.weights, spec.nu);
  out.schools.resize(static_cast<std::size_t>(panel.n_schools()));
  parallel_for(panel.n_schools(), workers, [&](int i) {
    const Eigen::MatrixXd H = states.school_design(i);
    out.schools[static_cast<std::size_t>(i)] = fit_penalized_poisson(H, panel.series(i), tau, options);
  });
  return out;
}

EnsembleFit fit_ensemble_esn(const PanelSeries& panel, const ReservoirSpec& spec, double tau,
                             int M, std::uint64_t base_seed, const PenalizedOptions& options,
                             int workers) {
  if (M < 2) throw ConfigError("ensemble needs at least two members");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(M));
  std::iota(seeds.begin(), seeds.end(), base_seed);
  return fit_ensemble_esn(panel, spec, tau, seeds, options, workers);
}

EnsembleFit fit_ensemble_esn(const PanelSeries& panel, const ReservoirSpec& spec, double tau,
                             std::span<const std::uint64_t> seeds, const PenalizedOptions& options,
                             int workers) {
  if (seeds.size() < 2) throw ConfigError("ensemble needs at least two members");
  EnsembleFit out;
  out.members.resize(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), workers, [&](int m) {
    ReservoirSpec member_spec = spec;
    member_spec.seed = seeds[static_cast<std::size_t>(m)];
    out.members[static_cast<std::size_t>(m)] = fit_single_esn(panel, member_spec, tau, options, 1);
  });
  return out;
}

}  // namespace cesn
