#include "cesn/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <boost/math/special_functions/gamma.hpp>

#include "cesn/error.hpp"

namespace cesn {

double fit_intercept(std::span<const std::int64_t> y) {
  if (y.empty()) throw ConfigError("intercept fit needs at least one observation");
  double s = 0.0;
  for (auto v : y) s += static_cast<double>(v);
  return s / static_cast<double>(y.size());
}

namespace {

struct Filtered {
  double loglik;
  double lambda_last;
};

Filtered filter(std::span<const std::int64_t> y, double beta0, double alpha1, double beta1) {
  double lambda = fit_intercept(y);
  double ll = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t > 0) lambda = beta0 + alpha1 * lambda + beta1 * static_cast<double>(y[t - 1]);
    const double yt = static_cast<double>(y[t]);
    if (!(lambda > 0.0)) {
      if (lambda == 0.0 && yt == 0.0) continue;
      return {-std::numeric_limits<double>::infinity(), lambda};
    }
    ll += yt * std::log(lambda) - lambda - std::lgamma(yt + 1.0);
  }
  return {ll, lambda};
}

// Unconstrained parameterisation: beta0 = e^u0; (alpha1, beta1, slack) = softmax(u1, u2, 0).
struct Params {
  double beta0, alpha1, beta1;
};

Params decode(const Eigen::Vector3d& u) {
  const double m = std::max({u(1), u(2), 0.0});
  const double e1 = std::exp(u(1) - m);
  const double e2 = std::exp(u(2) - m);
  const double e0 = std::exp(-m);
  const double z = e0 + e1 + e2;
  return {std::exp(u(0)), e1 / z, e2 / z};
}

double neg_objective(std::span<const std::int64_t> y, const Eigen::Vector3d& u) {
  const Params p = decode(u);
  const double ll = filter(y, p.beta0, p.alpha1, p.beta1).loglik;
  return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
}

Eigen::Vector3d numeric_gradient(std::span<const std::int64_t> y, const Eigen::Vector3d& u, double f0) {
  Eigen::Vector3d g;
  for (int j = 0; j < 3; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(u(j)));
    Eigen::Vector3d up = u, dn = u;
    up(j) += h;
    dn(j) -= h;
    const double fu = neg_objective(y, up);
    const double fd = neg_objective(y, dn);
    if (std::isfinite(fu) && std::isfinite(fd)) g(j) = (fu - fd) / (2.0 * h);
    else if (std::isfinite(fu)) g(j) = (fu - f0) / h;
    else g(j) = (f0 - fd) / h;
  }
  return g;
}

struct BfgsResult {
  Eigen::Vector3d u;
  double f;
  bool converged;
};

BfgsResult bfgs(std::span<const std::int64_t> y, Eigen::Vector3d u) {
  constexpr double kTol = 1e-8;
  constexpr int kMaxIter = 500;
  double f = neg_objective(y, u);
  Eigen::Vector3d g = numeric_gradient(y, u, f);
  Eigen::Matrix3d Hinv = Eigen::Matrix3d::Identity();
  for (int iter = 0; iter < kMaxIter; ++iter) {
    Eigen::Vector3d dir = -Hinv * g;
    if (g.dot(dir) >= 0.0) {
      Hinv.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    Eigen::Vector3d u_new;
    double f_new = f;
    bool found = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      u_new = u + step * dir;
      f_new = neg_objective(y, u_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * g.dot(dir)) {
        found = true;
        break;
      }
    }
    if (!found) return {u, f, g.lpNorm<Eigen::Infinity>() < 1e-4 * std::max(1.0, std::abs(f))};
    const Eigen::Vector3d g_new = numeric_gradient(y, u_new, f_new);
    const Eigen::Vector3d s = u_new - u;
    const Eigen::Vector3d yk = g_new - g;
    const double change = f - f_new;
    u = u_new;
    f = f_new;
    g = g_new;
    if (change < kTol * std::max(1.0, std::abs(f)) && g.lpNorm<Eigen::Infinity>() < 1e-3) return {u, f, true};
    const double sy = s.dot(yk);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
      Hinv = (I - rho * s * yk.transpose()) * Hinv * (I - rho * yk * s.transpose()) + rho * s * s.transpose();
    }
  }
  return {u, f, false};
}

}  // namespace

double ingarch_loglik(std::span<const std::int64_t> y, double beta0, double alpha1, double beta1) {
  if (y.empty()) throw ConfigError("INGARCH likelihood needs at least one observation");
  return filter(y, beta0, alpha1, beta1).loglik;
}

IngarchFit fit_ingarch11(std::span<const std::int64_t> y) {
  IngarchFit fit;
  const double mean = fit_intercept(y);
  fit.y_last = y.back();
  const bool constant = std::all_of(y.begin(), y.end(), [&](auto v) { return v == y.front(); });
  if (y.size() < static_cast<std::size_t>(kIngarchMinLength) || constant) {
    fit.beta0 = mean;
    fit.intercept_fallback = true;
    fit.converged = true;
    fit.loglik = filter(y, mean, 0.0, 0.0).loglik;
    fit.lambda_last = mean;
    return fit;
  }

  // Multi-start over a few persistence patterns; keep the best optimum.
  const double starts[][2] = {{0.1, 0.1}, {0.5, 0.3}, {0.1, 0.7}, {0.7, 0.1}};
  BfgsResult best{Eigen::Vector3d::Zero(), std::numeric_limits<double>::infinity(), false};
  for (const auto& s : starts) {
    const double slack = 1.0 - s[0] - s[1];
    Eigen::Vector3d u(std::log(mean * slack), std::log(s[0] / slack), std::log(s[1] / slack));
    const BfgsResult r = bfgs(y, u);
    if (r.f < best.f) best = r;
  }
  const Params p = decode(best.u);
  fit.beta0 = p.beta0;
  fit.alpha1 = p.alpha1;
  fit.beta1 = p.beta1;
  const Filtered flt = filter(y, p.beta0, p.alpha1, p.beta1);
  fit.loglik = flt.loglik;
  fit.lambda_last = flt.lambda_last;
  fit.converged = best.converged;
  constexpr double kEdge = 1e-4;
  fit.at_boundary = p.alpha1 < kEdge || p.beta1 < kEdge || p.alpha1 + p.beta1 > 1.0 - kEdge;
  // The intercept model is nested (alpha1 = beta1 = 0); never return something worse.
  const double ll0 = filter(y, mean, 0.0, 0.0).loglik;
  if (!(fit.loglik >= ll0)) {
    fit.beta0 = mean;
    fit.alpha1 = fit.beta1 = 0.0;
    fit.loglik = ll0;
    fit.lambda_last = mean;
    fit.at_boundary = true;
  }
  return fit;
}

std::int64_t poisson_quantile(double lambda, double p) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("Poisson quantile needs a finite mean >= 0");
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("Poisson quantile level must lie in (0, 1)");
  if (lambda == 0.0) return 0;
  // P(X <= k) = Q(k + 1, lambda), the regularised upper incomplete gamma.
  auto cdf = [&](std::int64_t k) { return boost::math::gamma_q(static_cast<double>(k) + 1.0, lambda); };
  std::int64_t lo = 0;
  std::int64_t hi = static_cast<std::int64_t>(lambda + 10.0 * std::sqrt(lambda) + 10.0);
  while (cdf(hi) < p) hi *= 2;
  if (cdf(lo) >= p) return 0;
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (cdf(mid) >= p) hi = mid;
    else lo = mid;
  }
  return hi;
}

std::pair<std::int64_t, std::int64_t> ingarch_interval(double lambda, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
  return {poisson_quantile(lambda, 0.5 * (1.0 - level)), poisson_quantile(lambda, 0.5 * (1.0 + level))};
}

}  // namespace cesn
