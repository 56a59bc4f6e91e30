#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "cesn/rng.hpp"

namespace cesn {

/// Shape used wherever the multivariate log-gamma prior stands in for a
/// Gaussian (MLG(c, alpha^{1/2} V, alpha 1, alpha 1) -> N(c, V V') as alpha grows).
inline constexpr double kDefaultMlgAlpha = 1000.0;
/// Number of gamma terms kept in the Polya-Gamma series for non-integer b.
inline constexpr int kDefaultPgTruncation = 200;
/// Condition-number ceiling for invertibility / rank checks.
inline constexpr double kMaxConditionNumber = 1e12;

double sample_normal(Rng& rng);
double sample_exponential(Rng& rng);
/// Gamma(shape, rate = 1) by Marsaglia-Tsang.
double sample_gamma(double shape, Rng& rng);
/// log of a Gamma(shape, 1) draw, computed in log space so that tiny shapes do
/// not underflow.
double sample_log_gamma_unit(double shape, Rng& rng);
std::int64_t sample_poisson(double mean, Rng& rng);
/// Negative binomial with pmf Gamma(y+r)/(Gamma(r) y!) p^y (1-p)^r, logit(p) = psi.
std::int64_t sample_negative_binomial(double r, double psi, Rng& rng);

/// Log-gamma LG(alpha, kappa): log of a Gamma(shape alpha, rate kappa) variable,
/// density kappa^alpha / Gamma(alpha) exp(alpha w - kappa e^w).
double sample_lg(double alpha, double kappa, Rng& rng);

/// MLG(mu, V, alpha, kappa): q = mu + V w with independent w_i ~ LG(alpha_i, kappa_i).
struct MLGParams {
  Eigen::VectorXd mu;
  Eigen::MatrixXd V;
  Eigen::VectorXd alpha;
  Eigen::VectorXd kappa;

  int dim() const noexcept { return static_cast<int>(mu.size()); }
  /// Throws ConfigError on size mismatch, non-positive shapes/scales or a
  /// V whose condition number exceeds kMaxConditionNumber.
  void validate() const;
};

/// n_draws x m matrix, one draw per row.
Eigen::MatrixXd sample_mlg(const MLGParams& params, int n_draws, Rng& rng);
double mlg_log_density(const Eigen::VectorXd& q, const MLGParams& params);

/// Conditional MLG with kernel exp(xi' L eta - psi' exp(L eta)); L is n x k.
struct CMLGParams {
  Eigen::MatrixXd L;
  Eigen::VectorXd xi;
  Eigen::VectorXd psi;

  int dim() const noexcept { return static_cast<int>(L.cols()); }
  void validate() const;
};

/// Shape floor applied to zero shapes (zero counts) by the projection recipe,
/// whose log-gamma draw is otherwise -infinity.
inline constexpr double kProjectionShapeFloor = 1e-3;

/// Two-step projection draw: w ~ MLG(0, I_n, xi, psi), return (L'L)^{-1} L' w.
/// Exact when L is square; for tall L it samples the marginal of the
/// discrepancy-augmented model rather than the cMLG density itself.
Eigen::VectorXd sample_cmlg(const CMLGParams& params, Rng& rng);

double cmlg_log_kernel(const CMLGParams& params, const Eigen::VectorXd& eta);

/// Mode and negative-Hessian Cholesky factor of the (log-concave) cMLG kernel.
struct CmlgLaplace {
  Eigen::VectorXd mode;
  Eigen::MatrixXd precision_chol;  // lower factor of -Hessian at the mode
  double log_kernel_at_mode = 0.0;
  int newton_iterations = 0;
};

CmlgLaplace cmlg_laplace(const CMLGParams& params, const Eigen::VectorXd& start);

/// One independence Metropolis-Hastings step targeting the exact cMLG density.
/// The proposal is centred at the Laplace mode with scale from the negative
/// Hessian: mostly Gaussian, with a small multivariate-t share so that the
/// importance weights stay bounded in the (exponential) tails of the kernel.
Eigen::VectorXd cmlg_independence_step(const CMLGParams& params, const CmlgLaplace& laplace,
                                       const Eigen::VectorXd& current, Rng& rng,
                                       bool* accepted = nullptr);

struct CmlgChainStats {
  int accepted = 0;
  int proposed = 0;
  double acceptance_rate() const { return proposed ? double(accepted) / proposed : 0.0; }
};

/// n_draws x k exact cMLG draws: a Laplace-proposal independence chain started at
/// the mode, one proposal per saved draw.
Eigen::MatrixXd sample_cmlg_exact(const CMLGParams& params, int n_draws, Rng& rng,
                                  CmlgChainStats* stats = nullptr);

/// Polya-Gamma PG(b, c). Integer b uses sums of exact PG(1, c) draws
/// (Devroye-type alternating-series sampler); other b use the gamma-series
/// representation truncated at `truncation` terms plus the exact mean of the
/// discarded tail.
double sample_pg(double b, double c, Rng& rng, int truncation = kDefaultPgTruncation);
double sample_pg1(double c, Rng& rng);
/// E[PG(b, c)] = b / (2c) tanh(c / 2), with the c -> 0 limit b / 4.
double pg_mean(double b, double c);

double sample_half_cauchy(double scale, Rng& rng);
/// Inverse gamma, rate parameterisation: density proportional to x^{-shape-1} e^{-rate/x}.
double sample_inv_gamma(double shape, double rate, Rng& rng);

}  // namespace cesn
