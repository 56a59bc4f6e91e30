#include "cesn/simulate.hpp"

#include <cmath>
#include <cstdio>

#include "cesn/dists.hpp"
#include "cesn/error.hpp"

namespace cesn {

void SimulationSpec::validate() const {
  if (dgp != "hier-poisson-esn" && dgp != "hier-nb-esn" && dgp != "ingarch" && dgp != "iid-poisson")
    throw ConfigError("unknown dgp '" + dgp + "' (expected hier-poisson-esn, hier-nb-esn, ingarch or iid-poisson)");
  if (n_states < 1 || schools_per_state < 1 || n_years < 1) throw ConfigError("simulation dimensions must be positive");
  if (dgp == "iid-poisson" && !(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (dgp == "ingarch" && (!(beta0 > 0.0) || alpha1 < 0.0 || beta1 < 0.0 || alpha1 + beta1 >= 1.0))
    throw ConfigError("ingarch parameters need beta0 > 0, alpha1, beta1 >= 0 and alpha1 + beta1 < 1");
  if (dgp == "hier-nb-esn" && !(dispersion > 0.0)) throw ConfigError("dispersion must be positive");
  if ((dgp == "hier-nb-esn" || dgp == "hier-poisson-esn") && (n_years < 2))
    throw ConfigError("ESN generators need at least two years");
}

namespace {

std::string label(const char* prefix, int k, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, k + 1);
  return buf;
}

struct Skeleton {
  std::vector<std::string> ids;
  std::vector<std::string> states;
  std::vector<int> years;
  std::vector<double> covariates;
};

Skeleton skeleton(const SimulationSpec& spec) {
  Skeleton s;
  const int N = spec.n_states * spec.schools_per_state;
  for (int st = 0; st < spec.n_states; ++st)
    for (int k = 0; k < spec.schools_per_state; ++k) {
      s.ids.push_back(label("U", st * spec.schools_per_state + k, 4));
      s.states.push_back(label("S", st, 2));
    }
  for (int t = 0; t < spec.n_years; ++t) s.years.push_back(spec.first_year + t);
  s.covariates.reserve(static_cast<std::size_t>(N) * spec.n_years * 2);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < spec.n_years; ++t) {
      s.covariates.push_back(1.0);
      s.covariates.push_back(spec.n_years > 1 ? static_cast<double>(t) / (spec.n_years - 1) : 0.0);
    }
  return s;
}

SimulationResult simulate_esn(const SimulationSpec& spec, Skeleton sk) {
  const bool nb = spec.dgp == "hier-nb-esn";
  SimulationTruth truth;
  truth.dgp = spec.dgp;
  ReservoirSpec rs = spec.reservoir;
  rs.r = 2;
  rs.seed = derive_seed(spec.seed, "sim-reservoir", 0);
  const ReservoirWeights w = gen_weights(rs);
  const int n_h = w.n_h();
  const int n_s = spec.n_states;

  Rng prng(derive_seed(spec.seed, "sim-params", 0));
  Eigen::VectorXd eta_tilde(static_cast<Eigen::Index>(n_h + 1) * n_s);
  const double root = std::sqrt(spec.alpha);
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n_h) * n_s; ++j)
    eta_tilde(j) = nb ? spec.sigma_eta * sample_normal(prng)
                      : root * spec.sigma_eta * sample_lg(spec.alpha, spec.alpha, prng);
  for (int s = 0; s < n_s; ++s)
    eta_tilde(static_cast<Eigen::Index>(n_h) * n_s + s) =
        spec.mu_delta + (nb ? spec.sigma_delta * sample_normal(prng)
                            : root * spec.sigma_delta * sample_lg(spec.alpha, spec.alpha, prng));
  const Eigen::VectorXd u = w.U_Y.row(0).transpose();
  if (u.squaredNorm() > 0.0 && spec.feedback != 0.0) {
    truth.feedback_applied = spec.feedback;
    for (int s = 0; s < n_s; ++s)
      eta_tilde.segment(static_cast<Eigen::Index>(s) * n_h, n_h) += spec.feedback * u / u.squaredNorm();
  }

  const int N = static_cast<int>(sk.ids.size());
  const int T = spec.n_years;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(N) * T);
  truth.dispersion.assign(static_cast<std::size_t>(N), nb ? spec.dispersion : 0.0);
  Rng crng(derive_seed(spec.seed, "sim-counts", 0));
  for (int i = 0; i < N; ++i) {
    const int s = i / spec.schools_per_state;
    const Eigen::VectorXd eta = eta_tilde.segment(static_cast<Eigen::Index>(s) * n_h, n_h);
    const double delta = eta_tilde(static_cast<Eigen::Index>(n_h) * n_s + s);
    Eigen::VectorXd h;
    for (int t = 0; t < T; ++t) {
      const std::span<const double> x(sk.covariates.data() + (static_cast<std::size_t>(i) * T + t) * 2, 2);
      h = t == 0 ? initial_state(x, w) : advance(h, counts[static_cast<std::size_t>(i) * T + t - 1], x, w, rs.nu);
      const double psi = h.dot(eta) + delta;
      if (!std::isfinite(psi) || psi > 30.0)
        throw NumericalError("simulated linear predictor overflowed; lower feedback or mu_delta");
      counts[static_cast<std::size_t>(i) * T + t] =
          nb ? sample_negative_binomial(spec.dispersion, psi, crng) : sample_poisson(std::exp(psi), crng);
    }
  }
  truth.weights = w;
  truth.eta_tilde = eta_tilde;
  truth.sigma_eta = spec.sigma_eta;
  truth.sigma_delta = spec.sigma_delta;
  PanelSeries panel(std::move(sk.ids), std::move(sk.states), std::move(sk.years), std::move(counts),
                    std::move(sk.covariates), 2);
  return {std::move(panel), std::move(truth)};
}

}  // namespace

SimulationResult simulate_panel(const SimulationSpec& spec) {
  spec.validate();
  Skeleton sk = skeleton(spec);
  if (spec.dgp == "hier-nb-esn" || spec.dgp == "hier-poisson-esn") return simulate_esn(spec, std::move(sk));

  const int N = static_cast<int>(sk.ids.size());
  const int T = spec.n_years;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(N) * T);
  SimulationTruth truth;
  truth.dgp = spec.dgp;
  Rng prng(derive_seed(spec.seed, "sim-params", 0));
  Rng crng(derive_seed(spec.seed, "sim-counts", 0));
  if (spec.dgp == "iid-poisson") {
    for (int i = 0; i < N; ++i) {
      const double lam = spec.lambda_spread > 0.0 ? spec.lambda * std::exp(spec.lambda_spread * sample_normal(prng))
                                                  : spec.lambda;
      truth.school_lambda.push_back(lam);
      for (int t = 0; t < T; ++t) counts[static_cast<std::size_t>(i) * T + t] = sample_poisson(lam, crng);
    }
  } else {
    truth.beta0 = spec.beta0;
    truth.alpha1 = spec.alpha1;
    truth.beta1 = spec.beta1;
    for (int i = 0; i < N; ++i) {
      double lam = spec.beta0 / (1.0 - spec.alpha1 - spec.beta1);
      std::int64_t prev = 0;
      for (int t = 0; t < T; ++t) {
        if (t > 0) lam = spec.beta0 + spec.alpha1 * lam + spec.beta1 * static_cast<double>(prev);
        prev = sample_poisson(lam, crng);
        counts[static_cast<std::size_t>(i) * T + t] = prev;
      }
    }
  }
  PanelSeries panel(std::move(sk.ids), std::move(sk.states), std::move(sk.years), std::move(counts),
                    std::move(sk.covariates), 2);
  return {std::move(panel), std::move(truth)};
}

}  // namespace cesn
