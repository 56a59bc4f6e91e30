#include "cesn/dists.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <boost/random/normal_distribution.hpp>

#include "cesn/error.hpp"

namespace cesn {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPi2 = kPi * kPi;
constexpr double kTwoOverPi = 2.0 / kPi;  // truncation point of the PG(1) mixture
constexpr double kLogPi = 1.1447298858494002;
constexpr double kLogTwoOverPi = -0.45158270528945486;

double log_std_normal_cdf(double x) {
  return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be positive");
}

double condition_number(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 1.0;
  const double smin = sv(sv.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

}  // namespace

double sample_normal(Rng& rng) {
  // Ziggurat; the distribution object holds no cached state between calls.
  return boost::random::normal_distribution<double>(0.0, 1.0)(rng);
}

double sample_exponential(Rng& rng) { return -std::log(uniform_open01(rng)); }

double sample_gamma(double shape, Rng& rng) {
  require_positive(shape, "gamma shape");
  if (shape < 1.0) {
    return sample_gamma(shape + 1.0, rng) * std::pow(uniform_open01(rng), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_log_gamma_unit(double shape, Rng& rng) {
  require_positive(shape, "log-gamma shape");
  if (shape >= 1.0) return std::log(sample_gamma(shape, rng));
  // Gamma(a) = Gamma(a + 1) * U^{1/a}
  const double g = sample_gamma(shape + 1.0, rng);
  return std::log(g) + std::log(uniform_open01(rng)) / shape;
}

std::int64_t sample_poisson(double mean, Rng& rng) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) throw NumericalError("invalid Poisson mean");
  if (mean == 0.0) return 0;
  std::poisson_distribution<std::int64_t> dist(mean);
  return dist(rng);
}

std::int64_t sample_negative_binomial(double r, double psi, Rng& rng) {
  require_positive(r, "negative binomial r");
  // Gamma-Poisson mixture with mean r e^psi.
  const double lambda = sample_gamma(r, rng) * std::exp(psi);
  return sample_poisson(lambda, rng);
}

double sample_lg(double alpha, double kappa, Rng& rng) {
  require_positive(alpha, "LG alpha");
  require_positive(kappa, "LG kappa");
  return sample_log_gamma_unit(alpha, rng) - std::log(kappa);
}

void MLGParams::validate() const {
  const auto m = mu.size();
  if (m == 0) throw ConfigError("MLG dimension must be positive");
  if (V.rows() != m || V.cols() != m || alpha.size() != m || kappa.size() != m)
    throw ConfigError("MLG parameter sizes disagree");
  if (!(alpha.array() > 0.0).all() || !(kappa.array() > 0.0).all())
    throw ConfigError("MLG alpha and kappa must be strictly positive");
  if (!V.allFinite() || condition_number(V) > kMaxConditionNumber)
    throw ConfigError("MLG matrix V is singular or ill-conditioned");
}

Eigen::MatrixXd sample_mlg(const MLGParams& params, int n_draws, Rng& rng) {
  params.validate();
  if (n_draws < 0) throw ConfigError("number of draws must be non-negative");
  const int m = params.dim();
  Eigen::MatrixXd out(n_draws, m);
  Eigen::VectorXd w(m);
  for (int d = 0; d < n_draws; ++d) {
    for (int j = 0; j < m; ++j) w(j) = sample_lg(params.alpha(j), params.kappa(j), rng);
    out.row(d) = (params.mu + params.V * w).transpose();
  }
  return out;
}

double mlg_log_density(const Eigen::VectorXd& q, const MLGParams& params) {
  params.validate();
  if (q.size() != params.mu.size()) throw ConfigError("MLG density argument has wrong length");
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(params.V);
  const Eigen::VectorXd z = lu.solve(q - params.mu);
  // log det(V V')^{1/2} = log |det V|
  const double log_abs_det = lu.matrixLU().diagonal().cwiseAbs().array().log().sum();
  double out = -log_abs_det;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double a = params.alpha(j);
    const double k = params.kappa(j);
    out += a * std::log(k) - std::lgamma(a) + a * z(j) - k * std::exp(z(j));
  }
  return out;
}

void CMLGParams::validate() const {
  const auto n = L.rows();
  const auto k = L.cols();
  if (k == 0 || n < k) throw ConfigError("cMLG needs an n x k matrix L with 0 < k <= n");
  if (xi.size() != n || psi.size() != n) throw ConfigError("cMLG xi/psi must have length n");
  if (!(psi.array() > 0.0).all()) throw ConfigError("cMLG psi must be strictly positive");
  if (!(xi.array() >= 0.0).all()) throw ConfigError("cMLG xi must be non-negative");
  if (!L.allFinite()) throw ConfigError("cMLG matrix L has non-finite entries");
  const double cond = condition_number(L);
  if (!(cond * cond <= kMaxConditionNumber)) throw ConfigError("cMLG matrix L is rank deficient");
}

Eigen::VectorXd sample_cmlg(const CMLGParams& params, Rng& rng) {
  params.validate();
  const auto n = params.L.rows();
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double shape = std::max(params.xi(j), kProjectionShapeFloor);
    w(j) = sample_log_gamma_unit(shape, rng) - std::log(params.psi(j));
  }
  if (n == params.L.cols()) return params.L.partialPivLu().solve(w);
  return params.L.householderQr().solve(w);
}

double cmlg_log_kernel(const CMLGParams& params, const Eigen::VectorXd& eta) {
  const Eigen::VectorXd lin = params.L * eta;
  return params.xi.dot(lin) - params.psi.dot(lin.array().exp().matrix());
}

CmlgLaplace cmlg_laplace(const CMLGParams& params, const Eigen::VectorXd& start) {
  const auto k = params.L.cols();
  if (start.size() != k) throw ConfigError("cMLG starting point has wrong length");
  CmlgLaplace out;
  Eigen::VectorXd eta = start;
  double value = cmlg_log_kernel(params, eta);
  if (!std::isfinite(value)) {
    eta.setZero();
    value = cmlg_log_kernel(params, eta);
  }
  Eigen::LLT<Eigen::MatrixXd> llt;
  constexpr int kMaxNewton = 200;
  for (int iter = 0; iter < kMaxNewton; ++iter) {
    const Eigen::VectorXd lin = params.L * eta;
    const Eigen::VectorXd rate = params.psi.array() * lin.array().exp();
    const Eigen::VectorXd grad = params.L.transpose() * (params.xi - rate);
    const Eigen::MatrixXd hess =
        params.L.transpose() * rate.asDiagonal() * params.L;  // negative Hessian
    llt.compute(hess);
    if (llt.info() != Eigen::Success) throw NumericalError("cMLG Hessian is not positive definite");
    const Eigen::VectorXd step = llt.solve(grad);
    const double decrement = grad.dot(step);
    out.newton_iterations = iter + 1;
    if (decrement < 1e-12) break;
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Eigen::VectorXd cand = eta + t * step;
      const double cv = cmlg_log_kernel(params, cand);
      if (std::isfinite(cv) && cv >= value + 0.25 * t * decrement) {
        eta = cand;
        value = cv;
        break;
      }
      if (ls == 59) throw NumericalError("cMLG Newton line search failed");
    }
  }
  const Eigen::VectorXd rate = params.psi.array() * (params.L * eta).array().exp();
  llt.compute(params.L.transpose() * rate.asDiagonal() * params.L);
  if (llt.info() != Eigen::Success) throw NumericalError("cMLG Hessian is not positive definite");
  out.mode = eta;
  out.precision_chol = llt.matrixL();
  out.log_kernel_at_mode = value;
  return out;
}

namespace {

constexpr double kDefensiveWeight = 0.05;  // share of multivariate-t proposals
constexpr double kDefensiveDf = 4.0;

// Log density (up to the shared log|C| term) of the defensive mixture
// (1 - w) N(mode, P^{-1}) + w t_df(mode, P^{-1}) at x.
double laplace_log_proposal(const CmlgLaplace& laplace, const Eigen::VectorXd& x) {
  const double d = static_cast<double>(x.size());
  const double q = (laplace.precision_chol.transpose() * (x - laplace.mode)).squaredNorm();
  const double log_gauss = std::log1p(-kDefensiveWeight) - 0.5 * d * std::log(2.0 * kPi) - 0.5 * q;
  const double log_t = std::log(kDefensiveWeight) + std::lgamma(0.5 * (kDefensiveDf + d)) -
                       std::lgamma(0.5 * kDefensiveDf) - 0.5 * d * std::log(kDefensiveDf * kPi) -
                       0.5 * (kDefensiveDf + d) * std::log1p(q / kDefensiveDf);
  const double m = std::max(log_gauss, log_t);
  return m + std::log(std::exp(log_gauss - m) + std::exp(log_t - m));
}

Eigen::VectorXd laplace_draw(const CmlgLaplace& laplace, Rng& rng) {
  Eigen::VectorXd z(laplace.mode.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = sample_normal(rng);
  if (uniform01(rng) < kDefensiveWeight) {
    const double chi2 = 2.0 * sample_gamma(0.5 * kDefensiveDf, rng);
    z *= std::sqrt(kDefensiveDf / chi2);
  }
  // x = mode + C'^{-1} z has scale matrix (C C')^{-1}
  return laplace.mode +
         laplace.precision_chol.transpose().triangularView<Eigen::Upper>().solve(z);
}

}  // namespace

Eigen::VectorXd cmlg_independence_step(const CMLGParams& params, const CmlgLaplace& laplace,
                                       const Eigen::VectorXd& current, Rng& rng,
                                       bool* accepted) {
  const Eigen::VectorXd proposal = laplace_draw(laplace, rng);
  const double log_ratio = (cmlg_log_kernel(params, proposal) - laplace_log_proposal(laplace, proposal)) -
                           (cmlg_log_kernel(params, current) - laplace_log_proposal(laplace, current));
  const bool accept = std::isfinite(log_ratio) ? std::log(uniform_open01(rng)) < log_ratio
                                               : log_ratio > 0.0;
  if (accepted) *accepted = accept;
  return accept ? proposal : current;
}

Eigen::MatrixXd sample_cmlg_exact(const CMLGParams& params, int n_draws, Rng& rng,
                                  CmlgChainStats* stats) {
  params.validate();
  const CmlgLaplace laplace = cmlg_laplace(params, Eigen::VectorXd::Zero(params.dim()));
  Eigen::MatrixXd out(n_draws, params.dim());
  Eigen::VectorXd current = laplace.mode;
  CmlgChainStats local;
  for (int d = 0; d < n_draws; ++d) {
    bool acc = false;
    current = cmlg_independence_step(params, laplace, current, rng, &acc);
    local.accepted += acc ? 1 : 0;
    ++local.proposed;
    out.row(d) = current.transpose();
  }
  if (stats) *stats = local;
  return out;
}

namespace {

// Piecewise coefficient a_n(x) of the alternating series for J*(1, z).
double pg_series_coef(int n, double x) {
  const double np = n + 0.5;
  if (x <= kTwoOverPi) {
    return std::exp(kLogPi + std::log(np) + 1.5 * (kLogTwoOverPi - std::log(x)) - 2.0 * np * np / x);
  }
  return std::exp(kLogPi + std::log(np) - x * kPi2 * 0.5 * np * np);
}

double truncated_gamma_tail(Rng& rng) {
  constexpr double c = kPi / 2.0;
  const double sqrt_half_pi = std::sqrt(kPi / 2.0);
  for (;;) {
    const double x = sample_exponential(rng) * 2.0 + c;
    if (uniform01(rng) <= sqrt_half_pi / std::sqrt(x)) return x;
  }
}

double inverse_gaussian(double mu, Rng& rng) {
  const double u = sample_normal(rng);
  const double v = u * u;
  double out = mu + 0.5 * mu * (mu * v - std::sqrt(4.0 * mu * v + mu * mu * v * v));
  if (uniform01(rng) > mu / (mu + out)) out = mu * mu / out;
  return out;
}

// Inverse Gaussian IG(1/z, 1) truncated to (0, t).
double truncated_inverse_gaussian(double z, double t, Rng& rng) {
  const double mu = z > 0.0 ? 1.0 / z : std::numeric_limits<double>::infinity();
  if (mu > t) {
    for (;;) {
      const double x = 1.0 / truncated_gamma_tail(rng);
      if (std::log(uniform_open01(rng)) < -0.5 * z * z * x) return x;
    }
  }
  double x = t + 1.0;
  while (x >= t) x = inverse_gaussian(mu, rng);
  return x;
}

}  // namespace

double sample_pg1(double c, Rng& rng) {
  const double z = 0.5 * std::abs(c);
  const double t = kTwoOverPi;
  const double k = 0.5 * z * z + kPi2 / 8.0;
  const double log_a = std::log(4.0) - kLogPi - z;
  const double w = std::sqrt(kPi / 2.0);
  const double log_f1 = log_a + log_std_normal_cdf(w * (t * z - 1.0)) + std::log(k) + k * t;
  const double log_f2 = log_a + 2.0 * z + log_std_normal_cdf(-w * (t * z + 1.0)) + std::log(k) + k * t;
  const double mix = 1.0 / (1.0 + std::exp(log_f1) + std::exp(log_f2));

  for (;;) {
    const double x = uniform01(rng) < mix ? t + sample_exponential(rng) / k
                                          : truncated_inverse_gaussian(z, t, rng);
    double s = pg_series_coef(0, x);
    const double y = uniform01(rng) * s;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= pg_series_coef(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += pg_series_coef(n, x);
        if (y > s) break;
      }
    }
  }
}

double pg_mean(double b, double c) {
  const double ac = std::abs(c);
  if (ac < 1e-8) return b / 4.0;
  return b / (2.0 * ac) * std::tanh(ac / 2.0);
}

double sample_pg(double b, double c, Rng& rng, int truncation) {
  require_positive(b, "Polya-Gamma b");
  if (truncation < 1) throw ConfigError("Polya-Gamma truncation must be at least 1");
  const double rounded = std::round(b);
  if (std::abs(b - rounded) < 1e-12 && rounded <= 1e6) {
    double sum = 0.0;
    for (std::int64_t k = 0; k < static_cast<std::int64_t>(rounded); ++k) sum += sample_pg1(c, rng);
    return sum;
  }
  const double d2 = c * c / (4.0 * kPi2);
  double draw = 0.0;
  double head_weight = 0.0;
  for (int k = 1; k <= truncation; ++k) {
    const double km = k - 0.5;
    const double weight = 1.0 / (km * km + d2);
    head_weight += weight;
    draw += sample_gamma(b, rng) * weight;
  }
  draw /= 2.0 * kPi2;
  const double tail_mean = pg_mean(b, c) - b * head_weight / (2.0 * kPi2);
  return draw + std::max(tail_mean, 0.0);
}

double sample_half_cauchy(double scale, Rng& rng) {
  require_positive(scale, "half-Cauchy scale");
  return scale * std::tan(0.5 * kPi * uniform_open01(rng));
}

double sample_inv_gamma(double shape, double rate, Rng& rng) {
  require_positive(shape, "inverse-gamma shape");
  require_positive(rate, "inverse-gamma rate");
  return rate / sample_gamma(shape, rng);
}

}  // namespace cesn
