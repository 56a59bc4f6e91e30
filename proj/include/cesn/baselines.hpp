#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace cesn {

/// Poisson MLE of a constant mean: the sample mean. Throws for empty input.
double fit_intercept(std::span<const std::int64_t> y);

/// Poisson INGARCH(1,1) with identity link:
/// lambda_t = beta0 + alpha1 lambda_{t-1} + beta1 y_{t-1}, lambda_1 = mean(y).
struct IngarchFit {
  double beta0 = 0.0;
  double alpha1 = 0.0;
  double beta1 = 0.0;
  double loglik = 0.0;
  bool converged = false;
  /// Too-short or constant series: the intercept model was used instead
  /// (beta0 = mean, alpha1 = beta1 = 0).
  bool intercept_fallback = false;
  /// Optimum pressed against a constraint (alpha1 or beta1 near 0, or
  /// alpha1 + beta1 near 1).
  bool at_boundary = false;
  /// lambda_T, the filtered mean for the last observed year.
  double lambda_last = 0.0;
  std::int64_t y_last = 0;

  /// lambda_{T+1} = beta0 + alpha1 lambda_T + beta1 y_T.
  double forecast() const { return beta0 + alpha1 * lambda_last + beta1 * static_cast<double>(y_last); }
};

inline constexpr int kIngarchMinLength = 10;

/// Conditional Poisson log-likelihood sum_t [y_t ln lambda_t - lambda_t - ln y_t!]
/// along the recursion; -inf if any lambda_t <= 0.
double ingarch_loglik(std::span<const std::int64_t> y, double beta0, double alpha1, double beta1);

IngarchFit fit_ingarch11(std::span<const std::int64_t> y);

/// Equal-tail Poisson interval at mean lambda: the (1-level)/2 and (1+level)/2 quantiles.
std::pair<std::int64_t, std::int64_t> ingarch_interval(double lambda, double level);

/// Smallest k with P(Poisson(lambda) <= k) >= p.
std::int64_t poisson_quantile(double lambda, double p);

}  // namespace cesn
